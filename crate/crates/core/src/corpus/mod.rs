//! Chat data model, JSONL ingestion, patient/doctor pairing and datasets.

mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::textprep;

pub use split::{stratified_kfold, Fold, StratumKey};
pub use synth::{synth_generate, GroundTruth, SynthCorpus, SynthSpec};

/// Default number of messages a doctor reply may look back for its patient block.
pub const DEFAULT_MAX_LOOKBACK: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("chat {chat_id}: duplicate turn {turn}")]
    DuplicateTurn { chat_id: String, turn: u64 },
    #[error("pair {index}: {reason}")]
    InvalidPair { index: usize, reason: String },
    #[error("need at least {k} instances for {k} folds, got {n}")]
    TooFewInstances { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("validation fraction must lie in [0, 1), got {0}")]
    BadValidationFraction(f64),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sender {
    Patient,
    Doctor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub chat_id: String,
    pub sender: Sender,
    pub turn_index: u64,
    pub text: String,
    pub word_count: usize,
}

impl ChatMessage {
    pub fn new(chat_id: impl Into<String>, sender: Sender, turn_index: u64, text: impl Into<String>) -> Self {
        let text = text.into();
        let word_count = textprep::tokenize(&textprep::normalize(&text)).len();
        Self {
            chat_id: chat_id.into(),
            sender,
            turn_index,
            text,
            word_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub chat_id: String,
    pub messages: Vec<ChatMessage>,
}

impl Conversation {
    /// Sorts messages by turn index; rejects duplicate turns.
    pub fn new(chat_id: impl Into<String>, mut messages: Vec<ChatMessage>) -> Result<Self, CorpusError> {
        let chat_id = chat_id.into();
        messages.sort_by_key(|m| m.turn_index);
        if let Some(w) = messages.windows(2).find(|w| w[0].turn_index == w[1].turn_index) {
            return Err(CorpusError::DuplicateTurn {
                chat_id,
                turn: w[0].turn_index,
            });
        }
        Ok(Self { chat_id, messages })
    }

    pub fn n_messages(&self) -> usize {
        self.messages.len()
    }

    /// Sender alternations + 1; zero for an empty chat.
    pub fn n_turns(&self) -> usize {
        if self.messages.is_empty() {
            return 0;
        }
        1 + self
            .messages
            .windows(2)
            .filter(|w| w[0].sender != w[1].sender)
            .count()
    }
}

/// Wire form of one chat line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRecord {
    chat_id: String,
    sender: Sender,
    turn: u64,
    text: String,
}

pub fn load_chats(path: &Path) -> Result<Vec<Conversation>, CorpusError> {
    read_chats(std::fs::File::open(path)?)
}

/// Groups records by chat id in order of first appearance.
pub fn read_chats<R: Read>(reader: R) -> Result<Vec<Conversation>, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<ChatMessage>> = HashMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ChatRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let msg = ChatMessage::new(rec.chat_id.clone(), rec.sender, rec.turn, rec.text);
        groups
            .entry(rec.chat_id.clone())
            .or_insert_with(|| {
                order.push(rec.chat_id.clone());
                Vec::new()
            })
            .push(msg);
    }
    order
        .into_iter()
        .map(|id| {
            let msgs = groups.remove(&id).unwrap_or_default();
            Conversation::new(id, msgs)
        })
        .collect()
}

pub fn chats_to_jsonl(convs: &[Conversation]) -> String {
    let mut out = String::new();
    for m in convs.iter().flat_map(|c| &c.messages) {
        let rec = ChatRecord {
            chat_id: m.chat_id.clone(),
            sender: m.sender,
            turn: m.turn_index,
            text: m.text.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// One patient message (or block) with its reply label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePair {
    pub patient_text: String,
    pub doctor_response_id: Option<String>,
    pub feasible: bool,
    pub source_chat_id: Option<String>,
    pub raw_doctor_text: Option<String>,
}

impl MessagePair {
    pub fn labeled(patient_text: impl Into<String>, response_id: impl Into<String>) -> Self {
        Self {
            patient_text: patient_text.into(),
            doctor_response_id: Some(response_id.into()),
            feasible: true,
            source_chat_id: None,
            raw_doctor_text: None,
        }
    }

    pub fn infeasible(patient_text: impl Into<String>) -> Self {
        Self {
            patient_text: patient_text.into(),
            doctor_response_id: None,
            feasible: false,
            source_chat_id: None,
            raw_doctor_text: None,
        }
    }

    /// Feasible pair whose response id is assigned later.
    pub fn unlabeled(patient_text: String, raw_doctor_text: Option<String>) -> Self {
        Self {
            patient_text,
            doctor_response_id: None,
            feasible: true,
            source_chat_id: None,
            raw_doctor_text,
        }
    }

    pub fn with_doctor_text(mut self, text: impl Into<String>) -> Self {
        self.raw_doctor_text = Some(text.into());
        self
    }

    fn check(&self, index: usize) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidPair {
            index,
            reason: reason.to_owned(),
        };
        if self.patient_text.trim().is_empty() {
            return Err(bad("empty patient text"));
        }
        if self.feasible != self.doctor_response_id.is_some() {
            return Err(bad("feasible must hold exactly when a response id is set"));
        }
        Ok(())
    }
}

/// Pairs each doctor message with the block of consecutive patient messages
/// closest before it, looking back at most `max_lookback` messages. Doctor
/// messages without such a block are skipped.
pub fn pair_messages(conv: &Conversation, max_lookback: usize) -> Vec<MessagePair> {
    let msgs = &conv.messages;
    let mut pairs = Vec::new();
    for (j, doc) in msgs.iter().enumerate() {
        if doc.sender != Sender::Doctor {
            continue;
        }
        let window_start = j.saturating_sub(max_lookback);
        let Some(last_patient) = (window_start..j).rev().find(|&i| msgs[i].sender == Sender::Patient) else {
            continue;
        };
        let mut first = last_patient;
        while first > window_start && msgs[first - 1].sender == Sender::Patient {
            first -= 1;
        }
        let block: Vec<&str> = msgs[first..=last_patient].iter().map(|m| m.text.as_str()).collect();
        pairs.push(MessagePair {
            patient_text: block.join(" "),
            doctor_response_id: None,
            feasible: true,
            source_chat_id: Some(conv.chat_id.clone()),
            raw_doctor_text: Some(doc.text.clone()),
        });
    }
    pairs
}

/// Wire form of one labeled pair line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub patient_text: String,
    pub response_id: Option<String>,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doctor_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_id: Option<String>,
}

impl From<&MessagePair> for LabeledRecord {
    fn from(p: &MessagePair) -> Self {
        Self {
            patient_text: p.patient_text.clone(),
            response_id: p.doctor_response_id.clone(),
            feasible: p.feasible,
            doctor_text: p.raw_doctor_text.clone(),
            chat_id: p.source_chat_id.clone(),
        }
    }
}

impl From<LabeledRecord> for MessagePair {
    fn from(r: LabeledRecord) -> Self {
        Self {
            patient_text: r.patient_text,
            doctor_response_id: r.response_id,
            feasible: r.feasible,
            source_chat_id: r.chat_id,
            raw_doctor_text: r.doctor_text,
        }
    }
}

pub fn read_pairs<R: Read>(reader: R) -> Result<Vec<MessagePair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        pairs.push(MessagePair::from(rec));
    }
    Ok(pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<MessagePair>, CorpusError> {
    read_pairs(std::fs::File::open(path)?)
}

pub fn pairs_to_jsonl(pairs: &[MessagePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(&LabeledRecord::from(p)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Labeled pairs plus their label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pairs: Vec<MessagePair>,
    label_space: BTreeSet<String>,
}

impl Dataset {
    pub fn new(pairs: Vec<MessagePair>) -> Result<Self, CorpusError> {
        let mut label_space = BTreeSet::new();
        for (i, p) in pairs.iter().enumerate() {
            p.check(i)?;
            if let Some(id) = &p.doctor_response_id {
                label_space.insert(id.clone());
            }
        }
        Ok(Self { pairs, label_space })
    }

    /// Subset by index, keeping the label space of `self`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            label_space: self.label_space.clone(),
        }
    }

    pub fn pairs(&self) -> &[MessagePair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<MessagePair> {
        self.pairs
    }

    pub fn label_space(&self) -> &BTreeSet<String> {
        &self.label_space
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_infeasible(&self) -> usize {
        self.pairs.iter().filter(|p| !p.feasible).count()
    }

    pub fn infeasible_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.n_infeasible() as f64 / self.pairs.len() as f64
        }
    }

    /// Label counts over feasible pairs.
    pub fn label_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for id in self.pairs.iter().filter_map(|p| p.doctor_response_id.as_deref()) {
            *counts.entry(id).or_insert(0) += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(chat: &str, sender: &str, turn: u64, text: &str) -> String {
        format!(r#"{{"chat_id":"{chat}","sender":"{sender}","turn":{turn},"text":"{text}"}}"#)
    }

    fn conv(spec: &[(Sender, &str)]) -> Conversation {
        let msgs = spec
            .iter()
            .enumerate()
            .map(|(i, (s, t))| ChatMessage::new("c", *s, i as u64, *t))
            .collect();
        Conversation::new("c", msgs).unwrap()
    }

    use Sender::{Doctor as D, Patient as P};

    #[test]
    fn load_minimal_chat() {
        let data = [line("c1", "patient", 0, "hi"), line("c1", "doctor", 1, "hello")].join("\n");
        let convs = read_chats(data.as_bytes()).unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].n_messages(), 2);
        assert_eq!(convs[0].n_turns(), 2);
    }

    #[test]
    fn load_empty_and_blocks() {
        assert!(read_chats(&b""[..]).unwrap().is_empty());
        let data = [
            line("c", "patient", 0, "a"),
            line("c", "patient", 1, "b"),
            line("c", "patient", 2, "c"),
            line("c", "doctor", 3, "x"),
        ]
        .join("\n");
        let c = &read_chats(data.as_bytes()).unwrap()[0];
        // hand count: P P P | D → one alternation
        assert_eq!((c.n_messages(), c.n_turns()), (4, 2));
    }

    #[test]
    fn load_sorts_turns_and_reports_errors() {
        let data = [line("c", "doctor", 5, "x"), line("c", "patient", 2, "a")].join("\n");
        let c = &read_chats(data.as_bytes()).unwrap()[0];
        assert_eq!(c.messages[0].turn_index, 2);

        let dup = [line("c", "doctor", 1, "x"), line("c", "patient", 1, "a")].join("\n");
        assert!(matches!(
            read_chats(dup.as_bytes()),
            Err(CorpusError::DuplicateTurn { turn: 1, .. })
        ));

        let bad = [line("c", "doctor", 1, "x"), r#"{"chat_id":"c","sender":"nurse","turn":2,"text":"?"}"#.into()].join("\n");
        assert!(matches!(
            read_chats(bad.as_bytes()),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn pairing_examples() {
        let p = pair_messages(&conv(&[(P, "hi"), (D, "hello")]), DEFAULT_MAX_LOOKBACK);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].patient_text, "hi");
        assert_eq!(p[0].raw_doctor_text.as_deref(), Some("hello"));

        let p = pair_messages(&conv(&[(P, "a"), (P, "b"), (D, "x")]), DEFAULT_MAX_LOOKBACK);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].patient_text, "a b");

        assert!(pair_messages(&conv(&[(D, "x"), (P, "a")]), DEFAULT_MAX_LOOKBACK).is_empty());
    }

    #[test]
    fn consecutive_doctor_messages_pair_independently() {
        let p = pair_messages(&conv(&[(P, "a"), (D, "x"), (D, "y")]), DEFAULT_MAX_LOOKBACK);
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|q| q.patient_text == "a"));
    }

    #[test]
    fn lookback_bounds_block() {
        let c = conv(&[(P, "a"), (P, "b"), (D, "x"), (D, "y"), (D, "z")]);
        let p = pair_messages(&c, 2);
        // x sees a b, y sees only b, z sees nothing within 2
        let texts: Vec<&str> = p.iter().map(|q| q.patient_text.as_str()).collect();
        assert_eq!(texts, ["a b", "b"]);
    }

    #[test]
    fn dataset_invariants() {
        let ds = Dataset::new(vec![
            MessagePair::labeled("hi", "r1"),
            MessagePair::infeasible("long story"),
        ])
        .unwrap();
        assert_eq!(ds.infeasible_fraction(), 0.5);
        assert_eq!(ds.label_space().len(), 1);
        let mut broken = MessagePair::labeled("hi", "r1");
        broken.feasible = false;
        assert!(Dataset::new(vec![broken]).is_err());
        assert!(Dataset::new(vec![MessagePair::labeled("  ", "r1")]).is_err());
    }

    #[test]
    fn labeled_pairs_round_trip() {
        let pairs = vec![
            MessagePair::labeled("thanks bye", "r7").with_doctor_text("you are welcome"),
            MessagePair::infeasible("my whole history"),
        ];
        let back = read_pairs(pairs_to_jsonl(&pairs).as_bytes()).unwrap();
        assert_eq!(back, pairs);
        let minimal = r#"{"patient_text":"x","response_id":null,"feasible":false}"#;
        assert_eq!(read_pairs(minimal.as_bytes()).unwrap()[0], MessagePair::infeasible("x"));
    }

    fn arb_chat() -> impl Strategy<Value = Vec<(bool, String)>> {
        prop::collection::vec((any::<bool>(), "[a-z \"\\\\é]{0,12}"), 0..12)
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(chats in prop::collection::vec(arb_chat(), 0..4)) {
            let convs: Vec<Conversation> = chats
                .iter()
                .enumerate()
                .filter(|(_, m)| !m.is_empty())
                .map(|(ci, msgs)| {
                    let id = format!("chat{ci}");
                    let msgs = msgs
                        .iter()
                        .enumerate()
                        .map(|(t, (p, text))| ChatMessage::new(id.clone(), if *p { P } else { D }, t as u64 * 2, text.clone()))
                        .collect();
                    Conversation::new(id, msgs).unwrap()
                })
                .collect();
            let back = read_chats(chats_to_jsonl(&convs).as_bytes()).unwrap();
            prop_assert_eq!(back, convs);
        }

        #[test]
        fn pairs_never_precede_their_block(senders in prop::collection::vec(any::<bool>(), 1..20), lookback in 1usize..8) {
            let spec: Vec<(Sender, String)> = senders
                .iter()
                .enumerate()
                .map(|(i, p)| (if *p { P } else { D }, format!("m{i}")))
                .collect();
            let c = Conversation::new(
                "c",
                spec.iter().enumerate().map(|(i, (s, t))| ChatMessage::new("c", *s, i as u64, t.clone())).collect(),
            ).unwrap();
            for pair in pair_messages(&c, lookback) {
                let doc_pos: usize = pair.raw_doctor_text.as_ref().unwrap()[1..].parse().unwrap();
                for tok in pair.patient_text.split(' ') {
                    let pos: usize = tok[1..].parse().unwrap();
                    prop_assert!(pos < doc_pos);
                    prop_assert!(doc_pos - pos <= lookback);
                    prop_assert_eq!(c.messages[pos].sender, P);
                }
            }
        }
    }
}
