//! Canned-response set: clustering of doctor replies, cluster-count
//! selection, density filtering, representatives, diversification rules and
//! cluster-unique top-k selection.

mod cluster;
mod rules;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::MessagePair;
use crate::embed::{cosine_unchecked, TextEncoder};
use crate::textprep::tokenize;

pub use cluster::{
    agglomerative_cluster, density, density_filter, labels_to_clusters, mean_silhouette, silhouette_select_k,
    Cluster, Dendrogram, DistanceMatrix, Merge, SilhouetteSelection,
};
pub use rules::{apply_diversity_rules, closing_rules, Condition, DiversityRule};

pub const DEFAULT_DENSITY_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum CannedError {
    #[error("cluster count {k} must lie in [2, {n}]")]
    BadK { k: usize, n: usize },
    #[error("bad silhouette range [{k_min}, {k_max}] for {n} points")]
    BadRange { k_min: usize, k_max: usize, n: usize },
    #[error("only {available} distinct clusters for top-{k}")]
    InsufficientDiversity { k: usize, available: usize },
    #[error("invalid canned set: {0}")]
    Invalid(String),
    #[error("invalid rule regex: {0}")]
    BadRegex(String),
    #[error("no dense cluster survived filtering")]
    NothingKept,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub rule_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedResponse {
    pub id: String,
    pub text: String,
    pub cluster_id: usize,
    #[serde(default)]
    pub variants: Vec<Variant>,
}

impl CannedResponse {
    pub fn new(id: impl Into<String>, text: impl Into<String>, cluster_id: usize) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            cluster_id,
            variants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedSet {
    pub responses: Vec<CannedResponse>,
    #[serde(default)]
    pub rules: Vec<DiversityRule>,
    pub k_selected: usize,
    pub density_threshold: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl CannedSet {
    /// Validates the set, compiles rule regexes and fills each response's
    /// variant list from the rules.
    pub fn new(
        responses: Vec<CannedResponse>,
        rules: Vec<DiversityRule>,
        k_selected: usize,
        density_threshold: f64,
    ) -> Result<Self, CannedError> {
        let mut set = Self {
            responses,
            rules,
            k_selected,
            density_threshold,
            index: HashMap::new(),
        };
        for r in &mut set.responses {
            r.variants = set
                .rules
                .iter()
                .filter(|rule| rule.base_response_id == r.id)
                .map(|rule| Variant {
                    rule_id: rule.rule_id.clone(),
                    text: rule.variant_text.clone(),
                })
                .collect();
        }
        set.prepare()?;
        Ok(set)
    }

    fn prepare(&mut self) -> Result<(), CannedError> {
        let invalid = |m: String| Err(CannedError::Invalid(m));
        if self.k_selected < 2 {
            return invalid(format!("k_selected {} below 2", self.k_selected));
        }
        self.index.clear();
        for (i, r) in self.responses.iter().enumerate() {
            if r.text.trim().is_empty() {
                return invalid(format!("response {} has empty text", r.id));
            }
            if r.variants.iter().any(|v| v.text.trim().is_empty()) {
                return invalid(format!("response {} has an empty variant", r.id));
            }
            if self.index.insert(r.id.clone(), i).is_some() {
                return invalid(format!("duplicate response id {}", r.id));
            }
        }
        let mut seen = BTreeSet::new();
        for rule in &mut self.rules {
            if !self.index.contains_key(&rule.base_response_id) {
                return invalid(format!("rule {} targets unknown response {}", rule.rule_id, rule.base_response_id));
            }
            if rule.variant_text.trim().is_empty() {
                return invalid(format!("rule {} has empty variant text", rule.rule_id));
            }
            if !seen.insert((rule.base_response_id.clone(), rule.rule_id.clone())) {
                return invalid(format!("duplicate rule {} for {}", rule.rule_id, rule.base_response_id));
            }
            rule.condition.compile()?;
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, CannedError> {
        let mut set: Self = serde_json::from_str(json)?;
        set.prepare()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CannedError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("canned set serializes")
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&CannedResponse> {
        self.index.get(id).map(|&i| &self.responses[i])
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.responses.iter().map(|r| r.cluster_id).collect::<BTreeSet<_>>().len()
    }

    /// Display text for a response given the patient message.
    pub fn display_text(&self, response: &CannedResponse, patient_text: &str) -> String {
        apply_diversity_rules(response, patient_text, &self.rules)
    }

    pub fn fingerprint(&self) -> String {
        crate::io::fingerprint(self.to_json().as_bytes())
    }

    /// Adds `rules`, rebuilding variants.
    pub fn with_rules(self, rules: Vec<DiversityRule>) -> Result<Self, CannedError> {
        let mut all = self.rules;
        all.extend(rules);
        Self::new(self.responses, all, self.k_selected, self.density_threshold)
    }
}

/// Medoid text: the member with the largest summed cosine similarity to the
/// other members; ties go to the shorter, then lexicographically smaller text.
pub fn representative<V: AsRef<[f64]>>(cluster: &Cluster, vectors: &[V], texts: &[String]) -> String {
    let score = |i: usize| -> f64 {
        cluster
            .member_indices
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| cosine_unchecked(vectors[i].as_ref(), vectors[j].as_ref()))
            .sum()
    };
    let best = cluster
        .member_indices
        .iter()
        .map(|&i| (score(i), i))
        .fold(None::<(f64, usize)>, |best, (s, i)| match best {
            None => Some((s, i)),
            Some((bs, bi)) => {
                let (t, bt) = (&texts[i], &texts[bi]);
                let better = s > bs || (s == bs && (t.len(), t) < (bt.len(), bt));
                if better {
                    Some((s, i))
                } else {
                    best
                }
            }
        })
        .expect("cluster is non-empty");
    texts[best.1].clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResponse {
    pub response_id: String,
    pub cluster_id: usize,
    pub score: f64,
}

/// Greedy scan keeping the first response of each cluster until `k` are kept.
pub fn dedupe_topk(candidates: &[RankedResponse], k: usize) -> Result<Vec<RankedResponse>, CannedError> {
    let available = candidates.iter().map(|c| c.cluster_id).collect::<BTreeSet<_>>().len();
    if available < k {
        return Err(CannedError::InsufficientDiversity { k, available });
    }
    let mut seen = BTreeSet::new();
    Ok(candidates
        .iter()
        .filter(|c| seen.insert(c.cluster_id))
        .take(k)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannedBuildConfig {
    pub k_min: usize,
    /// Upper end of the silhouette search; `None` means `min(n − 1, 250)`.
    pub k_max: Option<usize>,
    pub density_threshold: f64,
    /// Clusters smaller than this are dropped as infrequent.
    pub min_cluster_size: usize,
}

impl Default for CannedBuildConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: None,
            density_threshold: DEFAULT_DENSITY_THRESHOLD,
            min_cluster_size: 2,
        }
    }
}

/// Everything the clustering flow produced, for reporting.
#[derive(Debug, Clone)]
pub struct CannedBuild {
    pub set: CannedSet,
    pub selection: SilhouetteSelection,
    pub clusters: Vec<Cluster>,
    /// Response id assigned to each input reply, when its cluster was kept.
    pub assignments: Vec<Option<String>>,
}

pub fn cluster_response_id(cluster_id: usize) -> String {
    format!("resp-{cluster_id:03}")
}

/// Builds a canned set from cleaned doctor replies: embed, cluster, select k
/// by silhouette, keep dense and frequent clusters, take medoids.
pub fn build_canned_set(
    texts: &[String],
    encoder: &TextEncoder,
    cfg: &CannedBuildConfig,
) -> Result<CannedBuild, CannedError> {
    let n = texts.len();
    let k_max = cfg.k_max.unwrap_or(250).min(n.saturating_sub(1));
    let vectors: Vec<Vec<f64>> = texts.iter().map(|t| encoder.embed(&tokenize(t)).values).collect();
    let dist = DistanceMatrix::cosine(&vectors);
    if cfg.k_min < 2 || cfg.k_min > k_max {
        return Err(CannedError::BadRange {
            k_min: cfg.k_min,
            k_max,
            n,
        });
    }
    let dendrogram = Dendrogram::average_linkage(dist.clone());
    let selection = cluster::select_from_dendrogram(&dist, &dendrogram, cfg.k_min, k_max);
    let clusters = labels_to_clusters(&dendrogram.cut(selection.k), &vectors);
    let kept: Vec<Cluster> = density_filter(&clusters, cfg.density_threshold)
        .into_iter()
        .filter(|c| c.len() >= cfg.min_cluster_size)
        .collect();
    if kept.is_empty() {
        return Err(CannedError::NothingKept);
    }
    let mut assignments = vec![None; n];
    let mut responses = Vec::with_capacity(kept.len());
    for c in &kept {
        let id = cluster_response_id(c.id);
        for &m in &c.member_indices {
            assignments[m] = Some(id.clone());
        }
        responses.push(CannedResponse::new(id, representative(c, &vectors, texts), c.id));
    }
    let set = CannedSet::new(responses, Vec::new(), selection.k, cfg.density_threshold)?;
    Ok(CannedBuild {
        set,
        selection,
        clusters,
        assignments,
    })
}

/// Canned set for an already-labeled corpus: one response per label seen in
/// `pairs`, represented by the medoid of its doctor replies (or its id when
/// there are none). Labels whose reply centroids are closer than the density
/// threshold share a cluster id.
pub fn build_from_labeled(
    pairs: &[MessagePair],
    encoder: &TextEncoder,
    density_threshold: f64,
) -> Result<CannedSet, CannedError> {
    let mut replies: BTreeMap<&str, Vec<&MessagePair>> = BTreeMap::new();
    for p in pairs {
        if let Some(id) = p.doctor_response_id.as_deref() {
            replies.entry(id).or_default().push(p);
        }
    }
    let mut centroids = Vec::with_capacity(replies.len());
    let mut texts = Vec::with_capacity(replies.len());
    for (id, members) in &replies {
        let doctor: Vec<String> = members.iter().filter_map(|p| p.raw_doctor_text.clone()).collect();
        let source: Vec<String> = if doctor.is_empty() {
            members.iter().map(|p| p.patient_text.clone()).collect()
        } else {
            doctor.clone()
        };
        let vectors: Vec<Vec<f64>> = source.iter().map(|t| encoder.embed(&tokenize(t)).values).collect();
        let all = Cluster::from_members(0, (0..vectors.len()).collect(), &vectors);
        texts.push(if doctor.is_empty() {
            (*id).to_owned()
        } else {
            representative(&all, &vectors, &doctor)
        });
        centroids.push(all.centroid);
    }
    let labels = if centroids.len() >= 2 {
        Dendrogram::average_linkage(DistanceMatrix::cosine(&centroids)).cut_at_distance(1.0 - density_threshold)
    } else {
        vec![0; centroids.len()]
    };
    let responses = replies
        .keys()
        .zip(texts)
        .zip(&labels)
        .map(|((id, text), &c)| CannedResponse::new(*id, text, c))
        .collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    CannedSet::new(responses, Vec::new(), k, density_threshold)
}
