//! Condition-triggered variants of canned responses.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CannedError, CannedResponse};
use crate::textprep::normalize;

/// Matches when any keyword phrase occurs as whole words in the normalized
/// patient text, or when the optional regex matches it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default)]
    pub any_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl PartialEq for Condition {
    fn eq(&self, other: &Self) -> bool {
        self.any_of == other.any_of && self.regex == other.regex
    }
}

impl Condition {
    pub fn keywords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            any_of: words.into_iter().map(Into::into).collect(),
            regex: None,
            compiled: None,
        }
    }

    pub fn with_regex(mut self, pattern: &str) -> Result<Self, CannedError> {
        self.regex = Some(pattern.to_owned());
        self.compile()?;
        Ok(self)
    }

    pub(crate) fn compile(&mut self) -> Result<(), CannedError> {
        self.compiled = match &self.regex {
            Some(p) => Some(Regex::new(p).map_err(|e| CannedError::BadRegex(e.to_string()))?),
            None => None,
        };
        Ok(())
    }

    /// `normalized` must already be in [`normalize`] form.
    pub fn matches_normalized(&self, normalized: &str) -> bool {
        let padded = format!(" {normalized} ");
        let keyword_hit = self.any_of.iter().any(|k| {
            let k = normalize(k);
            !k.is_empty() && padded.contains(&format!(" {k} "))
        });
        keyword_hit || self.compiled.as_ref().is_some_and(|re| re.is_match(normalized))
    }

    pub fn matches(&self, patient_text: &str) -> bool {
        self.matches_normalized(&normalize(patient_text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRule {
    pub rule_id: String,
    pub base_response_id: String,
    pub condition: Condition,
    pub variant_text: String,
}

/// First rule (in declaration order) for `base` whose condition matches
/// decides the text; otherwise the base text is kept.
pub fn apply_diversity_rules(base: &CannedResponse, patient_text: &str, rules: &[DiversityRule]) -> String {
    let normalized = normalize(patient_text);
    rules
        .iter()
        .filter(|r| r.base_response_id == base.id)
        .find(|r| r.condition.matches_normalized(&normalized))
        .map_or_else(|| base.text.clone(), |r| r.variant_text.clone())
}

/// Variants of "You are welcome." for chat endings: good night, nice day,
/// then a generic goodbye. More specific rules come first.
pub fn closing_rules(base_response_id: &str) -> Vec<DiversityRule> {
    let rule = |id: &str, words: &[&str], text: &str| DiversityRule {
        rule_id: id.to_owned(),
        base_response_id: base_response_id.to_owned(),
        condition: Condition::keywords(words.iter().copied()),
        variant_text: text.to_owned(),
    };
    vec![
        rule(
            "good_night",
            &["good night", "goodnight", "nice night", "great night", "have a good night"],
            "You are welcome. Have a great night.",
        ),
        rule(
            "nice_day",
            &["nice day", "good day", "great day", "have a good one"],
            "You are welcome. Have a great day.",
        ),
        rule(
            "end_of_chat",
            &["bye", "goodbye", "bye bye", "that's all", "that is all", "see you", "take care"],
            "You are welcome. Take care. Bye.",
        ),
    ]
}
