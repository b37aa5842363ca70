//! Synthetic chat corpus with planted intents, noise and chat structure.
//!
//! Every intent owns a family of synonymous keywords whose vectors share a
//! direction, and intents come in sibling pairs that share part of that
//! direction. Feasible messages mix keywords with common filler words and
//! topical noise; infeasible messages draw from a separate vocabulary.
//! Doctor replies are paraphrases of one canonical reply per intent.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ChatMessage, Conversation, CorpusError, Dataset, MessagePair, Sender};
use crate::embed::EmbeddingTable;
use crate::textprep::{AbbrevDict, SpellLexicon};

const PATIENT_FILLERS: &[&str] = &[
    "i", "my", "the", "is", "have", "doctor", "please", "what", "about", "can", "you", "a", "it", "and", "to", "for",
    "with", "do", "should", "been", "me", "this", "of", "in", "how", "after", "now", "still", "thanks", "before",
    "are",
];

const DOCTOR_FILLERS: &[&str] = &[
    "you", "should", "please", "the", "take", "your", "a", "and", "we", "can", "it", "is", "to", "for", "will", "let",
    "me", "know", "if", "be",
];

const ABBREVIATIONS: &[(&str, &str)] = &[
    ("u", "you"),
    ("pls", "please"),
    ("thx", "thanks"),
    ("abt", "about"),
    ("dr", "doctor"),
    ("b4", "before"),
    ("r", "are"),
];

const KEYWORDS_PER_INTENT: usize = 8;
const REPLY_WORDS_PER_INTENT: usize = 6;
const PATIENT_NOISE_WORDS: usize = 300;
const INFEASIBLE_WORDS: usize = 200;
const CUSTOM_REPLY_WORDS: usize = 120;
/// Spread of keyword vectors around their intent direction.
const KEYWORD_SPREAD: f64 = 0.7;
const REPLY_SPREAD: f64 = 0.5;
/// Weight of the shared sibling direction in an intent direction.
const SIBLING_SHARE: f64 = 0.6;
const CONFUSER_RATE: f64 = 0.4;
const INFEASIBLE_SPREAD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_intents: usize,
    /// Total pairs = `n_intents * pairs_per_intent`, infeasible ones included.
    pub pairs_per_intent: usize,
    pub infeasible_fraction: f64,
    pub typo_rate: f64,
    pub abbreviation_rate: f64,
    pub mean_turns: f64,
    pub sd_turns: f64,
    pub mean_messages: f64,
    pub sd_messages: f64,
    /// Intent `i` gets weight `1 / (i + 1)^label_skew`; 0 is uniform.
    pub label_skew: f64,
    /// Word-vector dimension.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_intents: 20,
            pairs_per_intent: 250,
            infeasible_fraction: 0.231,
            typo_rate: 0.03,
            abbreviation_rate: 0.05,
            mean_turns: 15.5,
            sd_turns: 11.5,
            mean_messages: 23.8,
            sd_messages: 17.0,
            label_skew: 0.5,
            dim: 50,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.n_intents < 2 {
            return bad(format!("n_intents must be at least 2, got {}", self.n_intents));
        }
        if self.pairs_per_intent == 0 {
            return bad("pairs_per_intent must be positive".into());
        }
        for (name, v) in [
            ("infeasible_fraction", self.infeasible_fraction),
            ("typo_rate", self.typo_rate),
            ("abbreviation_rate", self.abbreviation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.infeasible_fraction == 1.0 {
            return bad("infeasible_fraction of 1 leaves no labels".into());
        }
        for (name, v) in [
            ("mean_turns", self.mean_turns),
            ("sd_turns", self.sd_turns),
            ("mean_messages", self.mean_messages),
            ("sd_messages", self.sd_messages),
            ("label_skew", self.label_skew),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        Ok(())
    }

    pub fn total_pairs(&self) -> usize {
        self.n_intents * self.pairs_per_intent
    }
}

/// What the generator planted, aligned with the dataset's pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Intent per pair (`None` for infeasible pairs).
    pub intents: Vec<Option<usize>>,
    /// Patient text per pair before typos and abbreviations.
    pub clean_patient_texts: Vec<String>,
    /// Planted reply cluster per pair (`None` for one-off replies).
    pub reply_clusters: Vec<Option<usize>>,
    /// Response id per intent.
    pub response_ids: Vec<String>,
    /// Canonical doctor reply per intent.
    pub canonical_responses: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    pub embeddings: EmbeddingTable,
    pub abbreviations: AbbrevDict,
    /// Every generated word with its frequency in the noise-free texts.
    pub lexicon: SpellLexicon,
    /// The pairs laid out as chats; pairing them recovers the dataset.
    pub chats: Vec<Conversation>,
}

struct Vocab {
    keywords: Vec<Vec<String>>,
    reply_words: Vec<Vec<String>>,
    patient_noise: Vec<String>,
    infeasible: Vec<String>,
    custom_reply: Vec<String>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `center + spread * noise`, with noise of unit expected norm.
fn around(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + scale * z
        })
        .collect()
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, used: &mut HashSet<String>) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::with_capacity(6);
        for _ in 0..3 {
            w.push(char::from(*CONSONANTS.choose(rng).expect("non-empty")));
            w.push(char::from(*VOWELS.choose(rng).expect("non-empty")));
        }
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// One random edit: substitution, deletion, insertion or transposition.
fn typo(rng: &mut ChaCha8Rng, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let i = rng.random_range(0..chars.len());
    let letter = char::from(b'a' + rng.random_range(0..26u8));
    match rng.random_range(0..4) {
        0 => chars[i] = letter,
        1 => {
            chars.remove(i);
        }
        2 => chars.insert(i, letter),
        _ => {
            let j = if i + 1 < chars.len() { i + 1 } else { i - 1 };
            chars.swap(i, j);
        }
    }
    chars.into_iter().collect()
}

struct Noise<'a> {
    typo_rate: f64,
    abbreviation_rate: f64,
    abbreviate: &'a BTreeMap<&'static str, &'static str>,
}

impl Noise<'_> {
    fn apply(&self, rng: &mut ChaCha8Rng, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                if let Some(short) = self.abbreviate.get(t.as_str()) {
                    if rng.random::<f64>() < self.abbreviation_rate {
                        return (*short).to_owned();
                    }
                }
                if t.len() >= 4 && rng.random::<f64>() < self.typo_rate {
                    typo(rng, t)
                } else {
                    t.clone()
                }
            })
            .collect()
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    words.choose(rng).expect("non-empty vocabulary")
}

fn pick_static(rng: &mut ChaCha8Rng, words: &[&'static str]) -> String {
    (*words.choose(rng).expect("non-empty vocabulary")).to_owned()
}

fn feasible_message(rng: &mut ChaCha8Rng, vocab: &Vocab, intent: usize) -> Vec<String> {
    let mut toks = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        toks.push(pick(rng, &vocab.keywords[intent]).to_owned());
    }
    let sibling = intent ^ 1;
    if sibling < vocab.keywords.len() && rng.random::<f64>() < CONFUSER_RATE {
        toks.push(pick(rng, &vocab.keywords[sibling]).to_owned());
    }
    for _ in 0..rng.random_range(3..=7) {
        toks.push(pick_static(rng, PATIENT_FILLERS));
    }
    for _ in 0..rng.random_range(3..=7) {
        toks.push(pick(rng, &vocab.patient_noise).to_owned());
    }
    toks.shuffle(rng);
    toks
}

fn infeasible_message(rng: &mut ChaCha8Rng, vocab: &Vocab) -> Vec<String> {
    let mut toks = Vec::new();
    for _ in 0..rng.random_range(3..=8) {
        toks.push(pick_static(rng, PATIENT_FILLERS));
    }
    for _ in 0..rng.random_range(3..=10) {
        toks.push(pick(rng, &vocab.infeasible).to_owned());
    }
    // off-script questions still mention a topic now and then
    if rng.random::<f64>() < 0.3 {
        let intent = rng.random_range(0..vocab.keywords.len());
        toks.push(pick(rng, &vocab.keywords[intent]).to_owned());
    }
    toks.shuffle(rng);
    toks
}

fn canonical_reply(rng: &mut ChaCha8Rng, vocab: &Vocab, intent: usize) -> Vec<String> {
    let r = &vocab.reply_words[intent];
    vec![
        pick_static(rng, DOCTOR_FILLERS),
        r[0].clone(),
        pick_static(rng, DOCTOR_FILLERS),
        r[1].clone(),
        r[2].clone(),
        pick_static(rng, DOCTOR_FILLERS),
    ]
}

fn paraphrase(rng: &mut ChaCha8Rng, vocab: &Vocab, intent: usize, canonical: &[String]) -> Vec<String> {
    let reply = &vocab.reply_words[intent];
    canonical
        .iter()
        .map(|t| {
            if reply.contains(t) {
                if rng.random::<f64>() < 0.3 {
                    pick(rng, reply).to_owned()
                } else {
                    t.clone()
                }
            } else if rng.random::<f64>() < 0.2 {
                pick_static(rng, DOCTOR_FILLERS)
            } else {
                t.clone()
            }
        })
        .collect()
}

fn custom_reply(rng: &mut ChaCha8Rng, vocab: &Vocab) -> Vec<String> {
    let mut toks = Vec::new();
    for _ in 0..rng.random_range(2..=4) {
        toks.push(pick_static(rng, DOCTOR_FILLERS));
    }
    for _ in 0..rng.random_range(3..=8) {
        toks.push(pick(rng, &vocab.custom_reply).to_owned());
    }
    toks
}

/// Feasible pair counts per intent, proportional to the skew weights by
/// largest remainder, with every intent present when there is room.
fn allocate(n_feasible: usize, n_intents: usize, skew: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..n_intents).map(|i| 1.0 / ((i + 1) as f64).powf(skew)).collect();
    let total: f64 = weights.iter().sum();
    let base = if n_feasible >= n_intents { 1 } else { 0 };
    let rest = n_feasible - base * n_intents;
    let exact: Vec<f64> = weights.iter().map(|w| rest as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| base + e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_intents).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut missing = n_feasible - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[i] += 1;
        missing -= 1;
    }
    counts
}

fn build_vocab(rng: &mut ChaCha8Rng, spec: &SynthSpec, table: &mut EmbeddingTable) -> Result<Vocab, CorpusError> {
    let mut used: HashSet<String> = PATIENT_FILLERS
        .iter()
        .chain(DOCTOR_FILLERS)
        .map(|s| s.to_string())
        .chain(ABBREVIATIONS.iter().map(|(k, _)| k.to_string()))
        .collect();
    let dim = spec.dim;
    let insert = |table: &mut EmbeddingTable, w: &str, v: &[f64]| {
        table
            .insert(w, v)
            .map(|_| ())
            .map_err(|e| CorpusError::InvalidSpec(e.to_string()))
    };

    let mut fillers: Vec<&str> = PATIENT_FILLERS.iter().chain(DOCTOR_FILLERS).copied().collect();
    fillers.sort_unstable();
    fillers.dedup();
    for w in fillers {
        let v = unit_gaussian(rng, dim);
        insert(table, w, &v)?;
    }

    let n_groups = spec.n_intents.div_ceil(2);
    let groups: Vec<Vec<f64>> = (0..n_groups).map(|_| unit_gaussian(rng, dim)).collect();
    let own = (1.0 - SIBLING_SHARE * SIBLING_SHARE).sqrt();
    let mut keywords = Vec::with_capacity(spec.n_intents);
    let mut reply_words = Vec::with_capacity(spec.n_intents);
    for i in 0..spec.n_intents {
        let r = unit_gaussian(rng, dim);
        let direction: Vec<f64> = groups[i / 2]
            .iter()
            .zip(&r)
            .map(|(g, x)| SIBLING_SHARE * g + own * x)
            .collect();
        let words = pseudo_words(rng, KEYWORDS_PER_INTENT, &mut used);
        for w in &words {
            let v = around(rng, &direction, KEYWORD_SPREAD);
            insert(table, w, &v)?;
        }
        keywords.push(words);

        let reply_dir = unit_gaussian(rng, dim);
        let words = pseudo_words(rng, REPLY_WORDS_PER_INTENT, &mut used);
        for w in &words {
            let v = around(rng, &reply_dir, REPLY_SPREAD);
            insert(table, w, &v)?;
        }
        reply_words.push(words);
    }

    // off-script questions share a theme of their own
    let theme = unit_gaussian(rng, dim);
    let infeasible = pseudo_words(rng, INFEASIBLE_WORDS, &mut used);
    for w in &infeasible {
        let v = around(rng, &theme, INFEASIBLE_SPREAD);
        insert(table, w, &v)?;
    }

    let mut random_pool = |rng: &mut ChaCha8Rng, n: usize, table: &mut EmbeddingTable| -> Result<Vec<String>, CorpusError> {
        let words = pseudo_words(rng, n, &mut used);
        for w in &words {
            let v = unit_gaussian(rng, dim);
            insert(table, w, &v)?;
        }
        Ok(words)
    };
    let patient_noise = random_pool(rng, PATIENT_NOISE_WORDS, table)?;
    let custom_reply = random_pool(rng, CUSTOM_REPLY_WORDS, table)?;
    Ok(Vocab {
        keywords,
        reply_words,
        patient_noise,
        infeasible,
        custom_reply,
    })
}

fn sample_count(rng: &mut ChaCha8Rng, mean: f64, sd: f64, min: usize) -> usize {
    let x = if sd > 0.0 {
        Normal::new(mean, sd).expect("validated parameters").sample(rng)
    } else {
        mean
    };
    (x.round().max(min as f64)) as usize
}

/// Lays pairs out as chats: each chat holds about `turns / 2` pairs, and
/// patient texts are split across consecutive messages to reach the sampled
/// message count.
fn layout_chats(rng: &mut ChaCha8Rng, spec: &SynthSpec, pairs: &mut [MessagePair]) -> Result<Vec<Conversation>, CorpusError> {
    const MAX_PIECES: usize = 4;
    let mut chats = Vec::new();
    let mut start = 0;
    while start < pairs.len() {
        let turns = sample_count(rng, spec.mean_turns, spec.sd_turns, 2);
        let n_pairs = (turns / 2).max(1).min(pairs.len() - start);
        let messages = sample_count(rng, spec.mean_messages, spec.sd_messages, 2 * n_pairs);
        let mut extra = messages - 2 * n_pairs;
        let chat_id = format!("chat-{:05}", chats.len());
        let mut msgs = Vec::new();
        let mut turn = 0u64;
        for pair in &mut pairs[start..start + n_pairs] {
            pair.source_chat_id = Some(chat_id.clone());
            let words: Vec<&str> = pair.patient_text.split(' ').collect();
            let mut pieces = 1;
            while extra > 0 && pieces < MAX_PIECES.min(words.len()) && rng.random::<f64>() < 0.5 {
                pieces += 1;
                extra -= 1;
            }
            let mut cuts: Vec<usize> = (1..words.len()).collect();
            cuts.shuffle(rng);
            let mut cuts: Vec<usize> = cuts.into_iter().take(pieces - 1).collect();
            cuts.sort_unstable();
            let mut prev = 0;
            for cut in cuts.into_iter().chain(std::iter::once(words.len())) {
                msgs.push(ChatMessage::new(&chat_id, Sender::Patient, turn, words[prev..cut].join(" ")));
                turn += 1;
                prev = cut;
            }
            let reply = pair.raw_doctor_text.clone().unwrap_or_default();
            msgs.push(ChatMessage::new(&chat_id, Sender::Doctor, turn, reply));
            turn += 1;
        }
        chats.push(Conversation::new(chat_id, msgs)?);
        start += n_pairs;
    }
    Ok(chats)
}

/// Generates a labeled corpus, its ground truth, word vectors and the
/// dictionaries needed to clean it. Identical specs give identical output.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = EmbeddingTable::new(spec.dim);
    let vocab = build_vocab(&mut rng, spec, &mut table)?;
    let abbreviate: BTreeMap<&'static str, &'static str> = ABBREVIATIONS.iter().map(|(k, v)| (*v, *k)).collect();
    let noise = Noise {
        typo_rate: spec.typo_rate,
        abbreviation_rate: spec.abbreviation_rate,
        abbreviate: &abbreviate,
    };

    let total = spec.total_pairs();
    let n_infeasible = (total as f64 * spec.infeasible_fraction).round() as usize;
    let counts = allocate(total - n_infeasible, spec.n_intents, spec.label_skew);
    let mut slots: Vec<Option<usize>> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(Some(i), c))
        .chain(std::iter::repeat_n(None, n_infeasible))
        .collect();
    slots.shuffle(&mut rng);

    let response_ids: Vec<String> = (0..spec.n_intents).map(|i| format!("intent-{i:02}")).collect();
    let canonical: Vec<Vec<String>> = (0..spec.n_intents)
        .map(|i| canonical_reply(&mut rng, &vocab, i))
        .collect();

    let mut pairs = Vec::with_capacity(total);
    let mut clean_texts = Vec::with_capacity(total);
    let mut reply_clusters = Vec::with_capacity(total);
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for slot in &slots {
        let (patient, reply) = match *slot {
            Some(i) => (
                feasible_message(&mut rng, &vocab, i),
                paraphrase(&mut rng, &vocab, i, &canonical[i]),
            ),
            None => (infeasible_message(&mut rng, &vocab), custom_reply(&mut rng, &vocab)),
        };
        for t in patient.iter().chain(&reply) {
            *word_counts.entry(t.clone()).or_insert(0) += 1;
        }
        let noisy_patient = noise.apply(&mut rng, &patient).join(" ");
        let noisy_reply = noise.apply(&mut rng, &reply).join(" ");
        let pair = match *slot {
            Some(i) => MessagePair::labeled(noisy_patient, response_ids[i].clone()),
            None => MessagePair::infeasible(noisy_patient),
        };
        pairs.push(pair.with_doctor_text(noisy_reply));
        clean_texts.push(patient.join(" "));
        reply_clusters.push(*slot);
    }

    let chats = layout_chats(&mut rng, spec, &mut pairs)?;
    for (w, _) in table.iter() {
        word_counts.entry(w.to_owned()).or_insert(1);
    }
    let lexicon = SpellLexicon::new(word_counts).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    let abbreviations = AbbrevDict::new(ABBREVIATIONS.iter().copied()).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    Ok(SynthCorpus {
        dataset: Dataset::new(pairs)?,
        truth: GroundTruth {
            intents: slots,
            clean_patient_texts: clean_texts,
            reply_clusters,
            response_ids,
            canonical_responses: canonical.iter().map(|c| c.join(" ")).collect(),
        },
        embeddings: table,
        abbreviations,
        lexicon,
        chats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chats_to_jsonl, pair_messages, DEFAULT_MAX_LOOKBACK};

    fn small(n_intents: usize, per: usize, infeasible: f64) -> SynthSpec {
        SynthSpec {
            n_intents,
            pairs_per_intent: per,
            infeasible_fraction: infeasible,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_without_noise_class() {
        let c = synth_generate(&small(2, 3, 0.0)).unwrap();
        assert_eq!(c.dataset.len(), 6);
        assert_eq!(c.dataset.label_space().len(), 2);
        assert_eq!(c.dataset.n_infeasible(), 0);
    }

    #[test]
    fn infeasible_fraction_is_met() {
        let c = synth_generate(&small(4, 25, 0.5)).unwrap();
        assert_eq!(c.dataset.len(), 100);
        assert!((49..=51).contains(&c.dataset.n_infeasible()));
        let full = synth_generate(&SynthSpec::default()).unwrap();
        assert_eq!(full.dataset.len(), 5000);
        assert!((full.dataset.infeasible_fraction() - 0.231).abs() < 1e-3);
        assert_eq!(full.dataset.label_space().len(), 20);
    }

    #[test]
    fn no_noise_means_template_text() {
        let spec = SynthSpec {
            typo_rate: 0.0,
            abbreviation_rate: 0.0,
            ..small(5, 20, 0.2)
        };
        let c = synth_generate(&spec).unwrap();
        for (p, clean) in c.dataset.pairs().iter().zip(&c.truth.clean_patient_texts) {
            assert_eq!(&p.patient_text, clean);
        }
    }

    #[test]
    fn noise_changes_some_texts() {
        let spec = SynthSpec {
            typo_rate: 0.2,
            ..small(5, 20, 0.2)
        };
        let c = synth_generate(&spec).unwrap();
        let changed = c
            .dataset
            .pairs()
            .iter()
            .zip(&c.truth.clean_patient_texts)
            .filter(|(p, clean)| &p.patient_text != *clean)
            .count();
        assert!(changed > 20);
    }

    #[test]
    fn identical_seed_identical_output() {
        let spec = small(5, 20, 0.231);
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.embeddings.to_word2vec(), b.embeddings.to_word2vec());
        assert_eq!(chats_to_jsonl(&a.chats), chats_to_jsonl(&b.chats));
        let c = synth_generate(&SynthSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn chats_pair_back_to_the_dataset() {
        let c = synth_generate(&small(6, 30, 0.231)).unwrap();
        let mut recovered = Vec::new();
        for chat in &c.chats {
            assert!(chat.n_turns() <= chat.n_messages());
            for p in pair_messages(chat, DEFAULT_MAX_LOOKBACK) {
                recovered.push((p.patient_text, p.raw_doctor_text));
            }
        }
        let original: Vec<_> = c
            .dataset
            .pairs()
            .iter()
            .map(|p| (p.patient_text.clone(), p.raw_doctor_text.clone()))
            .collect();
        assert_eq!(recovered, original);
    }

    #[test]
    fn chat_shape_follows_spec() {
        let c = synth_generate(&SynthSpec::default()).unwrap();
        let n = c.chats.len() as f64;
        let mean_msgs = c.chats.iter().map(|ch| ch.n_messages() as f64).sum::<f64>() / n;
        let mean_turns = c.chats.iter().map(|ch| ch.n_turns() as f64).sum::<f64>() / n;
        assert!(mean_turns > 10.0 && mean_turns < 22.0, "{mean_turns}");
        assert!(mean_msgs > mean_turns, "{mean_msgs} vs {mean_turns}");
    }

    #[test]
    fn every_clean_word_has_a_vector() {
        let c = synth_generate(&small(4, 10, 0.3)).unwrap();
        for text in &c.truth.clean_patient_texts {
            for w in text.split(' ') {
                assert!(c.embeddings.contains(w), "{w}");
                assert!(c.lexicon.contains(w));
            }
        }
    }

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(6, 2, 0.5), vec![3, 3]);
        assert_eq!(allocate(10, 2, 1.0), vec![6, 4]);
        assert_eq!(allocate(10, 3, 0.0).iter().sum::<usize>(), 10);
        assert!(allocate(3845, 20, 0.5).iter().all(|&c| c > 0));
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_generate(&small(1, 10, 0.2)).is_err());
        assert!(synth_generate(&SynthSpec { typo_rate: 1.5, ..SynthSpec::default() }).is_err());
        assert!(synth_generate(&SynthSpec { infeasible_fraction: 1.0, ..SynthSpec::default() }).is_err());
    }
}
