//! Stratified k-fold splitting with a nested stratified validation split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset};

/// Stratum a pair belongs to when splitting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StratumKey {
    Label(String),
    Infeasible,
    /// Labels with fewer members than folds, merged together.
    Rare,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub(crate) fn strata(ds: &Dataset, k: usize) -> BTreeMap<StratumKey, Vec<usize>> {
    let mut raw: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in ds.pairs().iter().enumerate() {
        let key = match &p.doctor_response_id {
            Some(id) => StratumKey::Label(id.clone()),
            None => StratumKey::Infeasible,
        };
        raw.entry(key).or_default().push(i);
    }
    let mut merged: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (key, members) in raw {
        let key = match key {
            StratumKey::Label(_) if members.len() < k => StratumKey::Rare,
            other => other,
        };
        merged.entry(key).or_default().extend(members);
    }
    for members in merged.values_mut() {
        members.sort_unstable();
    }
    merged
}

/// Each fold is the test set once; the remaining data is split into
/// training and validation with `val_fraction` of every stratum held out.
pub fn stratified_kfold(
    ds: &Dataset,
    k: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<Fold>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::BadFoldCount(k));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CorpusError::BadValidationFraction(val_fraction));
    }
    if ds.len() < k {
        return Err(CorpusError::TooFewInstances { n: ds.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = strata(ds, k);

    // Deal each shuffled stratum round-robin, continuing the offset so fold
    // sizes stay within one of each other as well.
    let mut fold_of = vec![0usize; ds.len()];
    let mut offset = 0usize;
    let mut shuffled: Vec<(StratumKey, Vec<usize>)> = Vec::with_capacity(strata.len());
    for (key, members) in strata {
        let mut members = members;
        members.shuffle(&mut rng);
        for (pos, &idx) in members.iter().enumerate() {
            fold_of[idx] = (offset + pos) % k;
        }
        offset = (offset + members.len()) % k;
        shuffled.push((key, members));
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = Vec::new();
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (_, members) in &shuffled {
            let rest: Vec<usize> = members.iter().copied().filter(|&i| fold_of[i] != f).collect();
            test.extend(members.iter().copied().filter(|&i| fold_of[i] == f));
            let n_val = (rest.len() as f64 * val_fraction).round() as usize;
            let n_val = n_val.min(rest.len().saturating_sub(1));
            validation.extend_from_slice(&rest[..n_val]);
            train.extend_from_slice(&rest[n_val..]);
        }
        test.sort_unstable();
        train.sort_unstable();
        validation.sort_unstable();
        folds.push(Fold { train, validation, test });
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MessagePair;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn dataset(labels: &[Option<&str>]) -> Dataset {
        Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| match l {
                    Some(id) => MessagePair::labeled(format!("m{i}"), *id),
                    None => MessagePair::infeasible(format!("m{i}")),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn balanced_two_labels() {
        let labels: Vec<Option<&str>> = (0..10).map(|i| Some(if i % 2 == 0 { "a" } else { "b" })).collect();
        let ds = dataset(&labels);
        let folds = stratified_kfold(&ds, 5, 0.2, 1).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            let got: BTreeSet<_> = f.test.iter().map(|&i| labels[i].unwrap()).collect();
            assert_eq!(got, BTreeSet::from(["a", "b"]));
        }
    }

    #[test]
    fn full_scale_fold_size() {
        // 31,407 pairs with 23.1% infeasible, 5 folds
        let n = 31_407;
        let labels: Vec<Option<String>> = (0..n)
            .map(|i| if i * 1000 % 1_000_000 < 231_000 { None } else { Some(format!("r{}", i % 150)) })
            .collect();
        let ds = Dataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| match l {
                    Some(id) => MessagePair::labeled(format!("m{i}"), id.clone()),
                    None => MessagePair::infeasible(format!("m{i}")),
                })
                .collect(),
        )
        .unwrap();
        for f in stratified_kfold(&ds, 5, 0.2, 3).unwrap() {
            assert!(f.test.len().abs_diff(6281) <= 1, "{}", f.test.len());
        }
    }

    #[test]
    fn deterministic_and_errors() {
        let ds = dataset(&[Some("a"), Some("b"), None, Some("a"), None, Some("b")]);
        assert_eq!(
            stratified_kfold(&ds, 2, 0.2, 9).unwrap(),
            stratified_kfold(&ds, 2, 0.2, 9).unwrap()
        );
        assert!(matches!(
            stratified_kfold(&ds, 7, 0.2, 9),
            Err(CorpusError::TooFewInstances { n: 6, k: 7 })
        ));
        assert!(matches!(stratified_kfold(&ds, 1, 0.2, 9), Err(CorpusError::BadFoldCount(1))));
    }

    #[test]
    fn rare_labels_are_merged() {
        let ds = dataset(&[Some("a"), Some("a"), Some("a"), Some("z"), Some("y"), None, None, None]);
        let s = strata(&ds, 3);
        assert_eq!(s[&StratumKey::Rare], vec![3, 4]);
        assert!(!s.contains_key(&StratumKey::Label("z".into())));
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            labels in prop::collection::vec(prop::option::of(0u8..6), 10..120),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let names: Vec<Option<String>> = labels.iter().map(|l| l.map(|x| format!("r{x}"))).collect();
            let refs: Vec<Option<&str>> = names.iter().map(|l| l.as_deref()).collect();
            let ds = dataset(&refs);
            let folds = stratified_kfold(&ds, k, 0.2, seed).unwrap();

            let mut seen = vec![0usize; ds.len()];
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                }
                let mut all: Vec<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));

            for members in strata(&ds, k).values() {
                let counts: Vec<usize> = folds
                    .iter()
                    .map(|f| f.test.iter().filter(|i| members.binary_search(i).is_ok()).count())
                    .collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }
    }
}
