//! Average-linkage agglomerative clustering under cosine distance, silhouette
//! width and cluster density.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::CannedError;
use crate::embed::cosine_unchecked;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub member_indices: Vec<usize>,
    pub centroid: Vec<f64>,
    pub density: f64,
}

impl Cluster {
    /// Computes centroid and density for the given members (sorted).
    pub fn from_members<V: AsRef<[f64]>>(id: usize, mut members: Vec<usize>, vectors: &[V]) -> Self {
        assert!(!members.is_empty(), "cluster needs at least one member");
        members.sort_unstable();
        let dim = vectors[members[0]].as_ref().len();
        let mut centroid = vec![0.0; dim];
        for &m in &members {
            for (c, x) in centroid.iter_mut().zip(vectors[m].as_ref()) {
                *c += x;
            }
        }
        let n = members.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);
        let density = density(&members, vectors);
        Self {
            id,
            member_indices: members,
            centroid,
            density,
        }
    }

    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// Mean pairwise cosine similarity among members; 1 for a singleton.
pub fn density<V: AsRef<[f64]>>(members: &[usize], vectors: &[V]) -> f64 {
    if members.len() < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            sum += cosine_unchecked(vectors[i].as_ref(), vectors[j].as_ref());
            pairs += 1;
        }
    }
    sum / pairs as f64
}

/// Condensed symmetric distance matrix (`1 − cosine`).
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine<V: AsRef<[f64]>>(vectors: &[V]) -> Self {
        let n = vectors.len();
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                data.push(1.0 - cosine_unchecked(vectors[i].as_ref(), vectors[j].as_ref()));
            }
        }
        Self { n, data }
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// One merge step. `a < b` are the slots merged; the result keeps slot `a`,
/// which is always the lowest member index of the merged cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

/// Orders candidate pairs by distance, then by the lower slot, then the
/// higher slot.
fn pair_key_less(d1: f64, i1: usize, j1: usize, d2: f64, i2: usize, j2: usize) -> bool {
    let (i1, j1) = (i1.min(j1), i1.max(j1));
    let (i2, j2) = (i2.min(j2), i2.max(j2));
    match d1.partial_cmp(&d2).unwrap_or(Ordering::Equal) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (i1, j1) < (i2, j2),
    }
}

impl Dendrogram {
    /// Full average-linkage merge sequence. Each row caches its nearest
    /// active neighbour; the global minimum is taken over the row minima.
    pub fn average_linkage(mut dist: DistanceMatrix) -> Self {
        let n = dist.len();
        let mut active = vec![true; n];
        let mut size = vec![1usize; n];
        let mut nn: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];

        let nearest = |dist: &DistanceMatrix, active: &[bool], i: usize| -> (f64, usize) {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, _) in active.iter().enumerate().take(dist.len()).filter(|&(j, &a)| a && j != i) {
                let d = dist.get(i, j);
                if best.1 == usize::MAX || pair_key_less(d, i, j, best.0, i, best.1) {
                    best = (d, j);
                }
            }
            best
        };

        for (i, slot) in nn.iter_mut().enumerate() {
            *slot = nearest(&dist, &active, i);
        }

        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in (0..n).filter(|&i| active[i]) {
                let (d, j) = nn[i];
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => pair_key_less(d, i, j, bd, bi, bj),
                };
                if better {
                    best = Some((d, i, j));
                }
            }
            let (d, x, y) = best.expect("at least two active clusters");
            let (a, b) = (x.min(y), x.max(y));
            let (sa, sb) = (size[a] as f64, size[b] as f64);
            active[b] = false;
            for c in (0..n).filter(|&c| active[c] && c != a) {
                let merged = (sa * dist.get(a, c) + sb * dist.get(b, c)) / (sa + sb);
                dist.set(a, c, merged);
            }
            size[a] += size[b];
            merges.push(Merge {
                a,
                b,
                distance: d,
                size: size[a],
            });

            nn[a] = nearest(&dist, &active, a);
            for c in (0..n).filter(|&c| active[c] && c != a) {
                if nn[c].1 == a || nn[c].1 == b {
                    nn[c] = nearest(&dist, &active, c);
                } else {
                    let dc = dist.get(a, c);
                    if pair_key_less(dc, c, a, nn[c].0, c, nn[c].1) {
                        nn[c] = (dc, a);
                    }
                }
            }
        }
        Self { n, merges }
    }

    /// Cluster label per point after applying the first `n − k` merges.
    /// Labels are numbered by lowest member index.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let k = k.clamp(1, self.n.max(1));
        self.labels_after(self.n - k)
    }

    /// Applies merges while their linkage distance stays below `max_distance`.
    pub fn cut_at_distance(&self, max_distance: f64) -> Vec<usize> {
        let steps = self
            .merges
            .iter()
            .take_while(|m| m.distance < max_distance)
            .count();
        self.labels_after(steps)
    }

    fn labels_after(&self, steps: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in &self.merges[..steps] {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[rb] = ra;
        }
        let mut label_of_root = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut labels = vec![0; self.n];
        for (i, label) in labels.iter_mut().enumerate() {
            let r = find(&mut parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            *label = label_of_root[r];
        }
        labels
    }
}

pub fn labels_to_clusters<V: AsRef<[f64]>>(labels: &[usize], vectors: &[V]) -> Vec<Cluster> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(id, m)| Cluster::from_members(id, m, vectors))
        .collect()
}

/// Average-linkage clustering cut at `k` clusters.
pub fn agglomerative_cluster<V: AsRef<[f64]>>(vectors: &[V], k: usize) -> Result<Vec<Cluster>, CannedError> {
    if k < 2 || k > vectors.len() {
        return Err(CannedError::BadK { k, n: vectors.len() });
    }
    let dendrogram = Dendrogram::average_linkage(DistanceMatrix::cosine(vectors));
    Ok(labels_to_clusters(&dendrogram.cut(k), vectors))
}

/// Mean silhouette width for a labelling; singleton clusters contribute 0.
pub fn mean_silhouette(dist: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if sizes[labels[i]] < 2 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist.get(i, j);
            }
        }
        let own = labels[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteSelection {
    pub k: usize,
    pub score: f64,
    /// `(k, mean silhouette)` for every k evaluated.
    pub scores: Vec<(usize, f64)>,
}

/// Picks the cluster count in `[k_min, k_max]` with the highest mean
/// silhouette; ties go to the smaller k.
pub fn silhouette_select_k<V: AsRef<[f64]>>(
    vectors: &[V],
    k_min: usize,
    k_max: usize,
) -> Result<SilhouetteSelection, CannedError> {
    let n = vectors.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(CannedError::BadRange { k_min, k_max, n });
    }
    let dist = DistanceMatrix::cosine(vectors);
    let dendrogram = Dendrogram::average_linkage(dist.clone());
    Ok(select_from_dendrogram(&dist, &dendrogram, k_min, k_max))
}

pub(crate) fn select_from_dendrogram(
    dist: &DistanceMatrix,
    dendrogram: &Dendrogram,
    k_min: usize,
    k_max: usize,
) -> SilhouetteSelection {
    let scores: Vec<(usize, f64)> = (k_min..=k_max)
        .map(|k| (k, mean_silhouette(dist, &dendrogram.cut(k))))
        .collect();
    let (k, score) = scores
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, (k, s)| match best {
            Some((_, bs)) if s <= bs => best,
            _ => Some((k, s)),
        })
        .expect("non-empty range");
    SilhouetteSelection { k, score, scores }
}

/// Keeps clusters whose density exceeds `threshold`.
pub fn density_filter(clusters: &[Cluster], threshold: f64) -> Vec<Cluster> {
    clusters.iter().filter(|c| c.density > threshold).cloned().collect()
}
