use std::collections::BTreeSet;

use crate::dialogue::{DialogueTranscript, Utterance};
use crate::goal::{normalize_value, UserGoal};

use super::{tokenize, MetricError};

/// Reads intents and `(slot, value)` entities off an utterance.
pub trait Extractor: Send + Sync {
    fn intent(&self, utterance: &Utterance) -> Result<Option<String>, MetricError>;
    fn entities(&self, utterance: &Utterance) -> Result<Vec<(String, String)>, MetricError>;
}

/// Uses the dialogue acts recorded on the utterance.
#[derive(Debug, Clone, Copy, Default)]
pub struct ActsExtractor;

impl Extractor for ActsExtractor {
    fn intent(&self, utterance: &Utterance) -> Result<Option<String>, MetricError> {
        let acts = utterance.acts.as_ref().ok_or(MetricError::NoActsAvailable)?;
        Ok(acts.first().map(|a| a.intent.clone()))
    }

    fn entities(&self, utterance: &Utterance) -> Result<Vec<(String, String)>, MetricError> {
        let acts = utterance.acts.as_ref().ok_or(MetricError::NoActsAvailable)?;
        Ok(acts
            .iter()
            .flat_map(|a| &a.entities)
            .filter(|(_, v)| !v.trim().is_empty())
            .map(|(k, v)| (k.clone(), normalize_value(v)))
            .collect())
    }
}

/// Finds known slot values in the normalized utterance text, longest value
/// first, on word boundaries and without overlaps.
#[derive(Debug, Clone, Default)]
pub struct LexicalExtractor {
    ontology: Vec<(String, String)>,
}

impl LexicalExtractor {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut ontology: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(k, v)| (k, normalize_value(&v)))
            .filter(|(_, v)| !v.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        ontology.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.cmp(b)));
        LexicalExtractor { ontology }
    }

    pub fn from_goal(goal: &UserGoal) -> Self {
        Self::new(goal.entity_set())
    }

    /// Ontology over every inform/book value of a goal suite.
    pub fn from_goals<'a>(goals: impl IntoIterator<Item = &'a UserGoal>) -> Self {
        Self::new(goals.into_iter().flat_map(UserGoal::entity_set))
    }

    pub fn find(&self, text: &str) -> Vec<(String, String)> {
        let text = normalize_value(text);
        let bytes = text.as_bytes();
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut found = Vec::new();
        for (key, value) in &self.ontology {
            let mut start = 0;
            while let Some(rel) = text[start..].find(value.as_str()) {
                let (s, e) = (start + rel, start + rel + value.len());
                let left_ok = s == 0 || !(bytes[s - 1] as char).is_alphanumeric();
                let right_ok = e == bytes.len() || !(bytes[e] as char).is_alphanumeric();
                let free = taken.iter().all(|&(ts, te)| e <= ts || s >= te);
                if left_ok && right_ok && free {
                    taken.push((s, e));
                    found.push((key.clone(), value.clone()));
                    break;
                }
                start = s + text[s..].chars().next().map_or(1, char::len_utf8);
            }
        }
        found
    }
}

const AFFIRM: &[&str] = &["yes", "yeah", "yep", "sure", "correct", "ok", "okay", "right"];
const QUESTION_OPENERS: &[&str] = &["what", "which", "where", "when", "how", "could", "can", "do", "is"];

/// Whether the utterance opens with an affirmation, whatever else it asks.
pub(crate) fn opens_with_affirmation(text: &str) -> bool {
    tokenize(text).first().is_some_and(|t| AFFIRM.contains(&t.as_str()))
}

/// Keyword intent rules shared by the lexical extractor and the mock TOD.
pub(crate) fn lexical_intent(text: &str) -> Option<String> {
    let tokens = tokenize(text);
    let first = tokens.first()?;
    let has = |w: &str| tokens.iter().any(|t| t == w);
    let intent = if tokens.iter().any(|t| t.starts_with("thank")) {
        "thanks"
    } else if has("bye") || has("goodbye") {
        "bye"
    } else if text.contains('?') || QUESTION_OPENERS.contains(&first.as_str()) {
        "request"
    } else if first == "no" {
        "negate"
    } else if AFFIRM.contains(&first.as_str()) {
        "affirm"
    } else {
        "inform"
    };
    Some(intent.to_string())
}

impl Extractor for LexicalExtractor {
    fn intent(&self, utterance: &Utterance) -> Result<Option<String>, MetricError> {
        Ok(lexical_intent(&utterance.text))
    }

    fn entities(&self, utterance: &Utterance) -> Result<Vec<(String, String)>, MetricError> {
        Ok(self.find(&utterance.text))
    }
}

/// Entities expressed by the user over the whole dialogue. Utterances the
/// extractor cannot read (no acts) are skipped; if none can be read the
/// error is returned.
pub fn extract_expressed_entities(
    transcript: &DialogueTranscript,
    extractor: &dyn Extractor,
) -> Result<BTreeSet<(String, String)>, MetricError> {
    let mut expressed = BTreeSet::new();
    let mut readable = 0usize;
    let mut unreadable = None;
    for utt in transcript.user_utterances() {
        match extractor.entities(utt) {
            Ok(entities) => {
                readable += 1;
                expressed.extend(entities);
            }
            Err(MetricError::NoActsAvailable) => unreadable = Some(MetricError::NoActsAvailable),
            Err(e) => return Err(e),
        }
    }
    match (readable, unreadable) {
        (0, Some(e)) => Err(e),
        _ => Ok(expressed),
    }
}
