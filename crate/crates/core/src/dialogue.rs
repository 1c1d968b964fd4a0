//! Dialogue transcripts: alternating system/user utterances, their
//! annotations, and corpus-level statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::tokenize;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("utterance {position} breaks system/user alternation (expected {expected:?})")]
    AlternationViolation { position: usize, expected: Speaker },
    #[error("dialogue already terminated ({0:?})")]
    AlreadyTerminated(Termination),
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("utterance {position} has turn index {found}, expected {expected}")]
    TurnIndexMismatch { position: usize, found: u32, expected: u32 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("transcript parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DialogueError {
    pub fn kind(&self) -> &'static str {
        match self {
            DialogueError::AlternationViolation { .. } => "AlternationViolation",
            DialogueError::AlreadyTerminated(_) => "AlreadyTerminated",
            DialogueError::EmptyUtterance => "EmptyUtterance",
            DialogueError::TurnIndexMismatch { .. } => "TurnIndexMismatch",
            DialogueError::EmptyCorpus => "EmptyCorpus",
            DialogueError::ParseError { .. } => "ParseError",
            DialogueError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

/// An intent with the entities it mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueAct {
    pub intent: String,
    #[serde(default)]
    pub entities: Vec<(String, String)>,
}

impl DialogueAct {
    pub fn new(intent: impl Into<String>) -> Self {
        DialogueAct {
            intent: intent.into(),
            entities: Vec::new(),
        }
    }

    pub fn with_entity(mut self, slot: impl Into<String>, value: impl Into<String>) -> Self {
        self.entities.push((slot.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    /// 1-based; `s_t` and `u_t` share index `t`.
    pub turn_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acts: Option<Vec<DialogueAct>>,
}

impl Utterance {
    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Speaker::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Speaker::User, text)
    }

    fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Utterance {
            speaker,
            text: text.into(),
            turn_index: 0,
            acts: None,
        }
    }

    pub fn with_acts(mut self, acts: Vec<DialogueAct>) -> Self {
        self.acts = Some(acts);
        self
    }

    pub fn intents(&self) -> impl Iterator<Item = &str> {
        self.acts.iter().flatten().map(|a| a.intent.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SystemEnd,
    AgentEnd,
    MaxTurns,
    TransportError,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::SystemEnd => "system_end",
            Termination::AgentEnd => "agent_end",
            Termination::MaxTurns => "max_turns",
            Termination::TransportError => "transport_error",
        }
    }
}

/// `H = [s_1, u_1, ..., s_N, u_N]` plus the reason the run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TranscriptRecord")]
pub struct DialogueTranscript {
    pub dialogue_id: String,
    pub goal_id: String,
    utterances: Vec<Utterance>,
    termination: Option<Termination>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct TranscriptRecord {
    #[serde(default)]
    dialogue_id: String,
    goal_id: String,
    #[serde(default)]
    utterances: Vec<Utterance>,
    #[serde(default)]
    termination: Option<Termination>,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

impl TryFrom<TranscriptRecord> for DialogueTranscript {
    type Error = DialogueError;

    fn try_from(record: TranscriptRecord) -> Result<Self, Self::Error> {
        let transcript = DialogueTranscript {
            dialogue_id: record.dialogue_id,
            goal_id: record.goal_id,
            utterances: record.utterances,
            termination: record.termination,
            metadata: record.metadata,
        };
        transcript.validate()?;
        Ok(transcript)
    }
}

impl DialogueTranscript {
    pub fn new(dialogue_id: impl Into<String>, goal_id: impl Into<String>) -> Self {
        DialogueTranscript {
            dialogue_id: dialogue_id.into(),
            goal_id: goal_id.into(),
            utterances: Vec::new(),
            termination: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Builds a transcript from texts alternating system, user, system, ...
    pub fn from_texts<S: AsRef<str>>(
        dialogue_id: impl Into<String>,
        goal_id: impl Into<String>,
        texts: &[S],
    ) -> Result<Self, DialogueError> {
        let mut t = Self::new(dialogue_id, goal_id);
        for (i, text) in texts.iter().enumerate() {
            let utt = if i % 2 == 0 {
                Utterance::system(text.as_ref())
            } else {
                Utterance::user(text.as_ref())
            };
            t.append(utt)?;
        }
        Ok(t)
    }

    fn expected_next(&self) -> Speaker {
        match self.utterances.last() {
            None
            | Some(Utterance {
                speaker: Speaker::User, ..
            }) => Speaker::System,
            Some(_) => Speaker::User,
        }
    }

    /// Appends an utterance, assigning its turn index. The system speaks
    /// first and speakers strictly alternate.
    pub fn append(&mut self, mut utterance: Utterance) -> Result<&Utterance, DialogueError> {
        if let Some(reason) = self.termination {
            return Err(DialogueError::AlreadyTerminated(reason));
        }
        if utterance.text.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        let expected = self.expected_next();
        if utterance.speaker != expected {
            return Err(DialogueError::AlternationViolation {
                position: self.utterances.len(),
                expected,
            });
        }
        utterance.turn_index = (self.utterances.len() / 2 + 1) as u32;
        self.utterances.push(utterance);
        Ok(self.utterances.last().expect("just pushed"))
    }

    pub fn terminate(&mut self, reason: Termination) -> Result<(), DialogueError> {
        if let Some(existing) = self.termination {
            return Err(DialogueError::AlreadyTerminated(existing));
        }
        self.termination = Some(reason);
        Ok(())
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn is_terminated(&self) -> bool {
        self.termination.is_some()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    /// Attaches acts to the most recent user utterance, if any.
    pub fn annotate_last_user(&mut self, acts: Vec<DialogueAct>) {
        if let Some(u) = self.utterances.iter_mut().rev().find(|u| u.speaker == Speaker::User) {
            u.acts = Some(acts);
        }
    }

    pub fn user_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.speaker == Speaker::User)
    }

    pub fn system_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.speaker == Speaker::System)
    }

    /// Completed system+user exchanges, `N`.
    pub fn exchanges(&self) -> usize {
        self.utterances.len() / 2
    }

    /// True when the last utterance is a system turn nobody answered.
    pub fn has_unanswered_system_turn(&self) -> bool {
        self.utterances.len() % 2 == 1
    }

    /// Prefix of the dialogue ending with `s_t` (1-based).
    pub fn history_through_system(&self, turn: usize) -> DialogueTranscript {
        let mut prefix = DialogueTranscript::new(self.dialogue_id.clone(), self.goal_id.clone());
        prefix.utterances = self.utterances[..(2 * turn - 1).min(self.utterances.len())].to_vec();
        prefix
    }

    pub fn validate(&self) -> Result<(), DialogueError> {
        for (position, utt) in self.utterances.iter().enumerate() {
            let expected = if position % 2 == 0 {
                Speaker::System
            } else {
                Speaker::User
            };
            if utt.speaker != expected {
                return Err(DialogueError::AlternationViolation { position, expected });
            }
            if utt.text.trim().is_empty() {
                return Err(DialogueError::EmptyUtterance);
            }
            let want = (position / 2 + 1) as u32;
            if utt.turn_index != want {
                return Err(DialogueError::TurnIndexMismatch {
                    position,
                    found: utt.turn_index,
                    expected: want,
                });
            }
        }
        Ok(())
    }
}

/// Writes transcripts as JSON lines.
pub fn write_transcripts(path: impl AsRef<Path>, transcripts: &[DialogueTranscript]) -> Result<(), DialogueError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in transcripts {
        serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_transcripts(path: impl AsRef<Path>) -> Result<Vec<DialogueTranscript>, DialogueError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DialogueError::ParseError {
            line: idx + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub avg_turns: f64,
    pub avg_user_words: f64,
    pub avg_system_words: f64,
    pub dialogue_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StatsOptions {
    /// Count a trailing unanswered system utterance as half a turn.
    pub count_unanswered_half: bool,
}

/// Corpus statistics using the shared lexical tokenizer.
pub fn corpus_stats(corpus: &[DialogueTranscript]) -> Result<CorpusStats, DialogueError> {
    corpus_stats_with(corpus, tokenize, StatsOptions::default())
}

pub fn corpus_stats_with<F>(
    corpus: &[DialogueTranscript],
    tokenizer: F,
    options: StatsOptions,
) -> Result<CorpusStats, DialogueError>
where
    F: Fn(&str) -> Vec<String>,
{
    if corpus.is_empty() {
        return Err(DialogueError::EmptyCorpus);
    }
    let mut turns = 0.0;
    let (mut user_words, mut user_utts) = (0usize, 0usize);
    let (mut system_words, mut system_utts) = (0usize, 0usize);
    for dialogue in corpus {
        turns += dialogue.exchanges() as f64;
        if options.count_unanswered_half && dialogue.has_unanswered_system_turn() {
            turns += 0.5;
        }
        for utt in dialogue.utterances() {
            let words = tokenizer(&utt.text).len();
            match utt.speaker {
                Speaker::User => {
                    user_words += words;
                    user_utts += 1;
                }
                Speaker::System => {
                    system_words += words;
                    system_utts += 1;
                }
            }
        }
    }
    let mean = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    Ok(CorpusStats {
        avg_turns: turns / corpus.len() as f64,
        avg_user_words: mean(user_words, user_utts),
        avg_system_words: mean(system_words, system_utts),
        dialogue_count: corpus.len(),
    })
}
