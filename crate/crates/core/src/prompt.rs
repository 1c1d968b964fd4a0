//! Simulator prompt construction and cleanup of generated utterances.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueTranscript, Speaker};
use crate::goal::UserGoal;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("history ends with a user utterance; the system must speak next")]
    NotUserTurn,
    #[error("template asks for {wanted} shots but only {available} are available")]
    InsufficientShots { wanted: usize, available: usize },
    #[error("nothing left of the generated text after cleaning")]
    EmptyAfterCleaning,
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PromptError {
    pub fn kind(&self) -> &'static str {
        match self {
            PromptError::NotUserTurn => "NotUserTurn",
            PromptError::InsufficientShots { .. } => "InsufficientShots",
            PromptError::EmptyAfterCleaning => "EmptyAfterCleaning",
            PromptError::InvalidTemplate(_) => "InvalidTemplate",
            PromptError::ParseError { .. } => "ParseError",
            PromptError::Io(_) => "IoError",
        }
    }
}

pub const DEFAULT_SEPARATOR: &str = "<endturn>";

pub const DEFAULT_TASK_DESCRIPTION: &str = "You are a customer talking to the assistant of a \
task-oriented dialogue system. Pursue the goal below one utterance at a time, give only \
information that the goal contains, and end the conversation once the goal is fulfilled.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_description: String,
    #[serde(default = "default_separator")]
    pub separator: String,
    /// `(system, user)` labels.
    #[serde(default = "default_labels")]
    pub speaker_labels: (String, String),
    #[serde(default)]
    pub shot_count: usize,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

fn default_labels() -> (String, String) {
    ("ASSISTANT:".to_string(), "CUSTOMER:".to_string())
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            task_description: DEFAULT_TASK_DESCRIPTION.to_string(),
            separator: default_separator(),
            speaker_labels: default_labels(),
            shot_count: 0,
        }
    }
}

impl PromptTemplate {
    pub fn with_shots(mut self, shot_count: usize) -> Self {
        self.shot_count = shot_count;
        self
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path)?;
        let template: PromptTemplate = serde_json::from_str(&raw).map_err(|e| PromptError::ParseError {
            line: e.line(),
            reason: e.to_string(),
        })?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.separator.is_empty() {
            return Err(PromptError::InvalidTemplate("separator must not be empty".into()));
        }
        if self.speaker_labels.0.trim().is_empty() || self.speaker_labels.1.trim().is_empty() {
            return Err(PromptError::InvalidTemplate("speaker labels must not be empty".into()));
        }
        Ok(())
    }

    /// The text that ends every prompt, after which the simulator speaks.
    pub fn user_cue(&self) -> String {
        format!("{} ", self.speaker_labels.1)
    }

    fn label(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::System => &self.speaker_labels.0,
            Speaker::User => &self.speaker_labels.1,
        }
    }

    fn push_history(&self, out: &mut String, history: &DialogueTranscript) {
        for utt in history.utterances() {
            out.push_str(self.label(utt.speaker));
            out.push(' ');
            out.push_str(utt.text.trim());
            out.push_str(&self.separator);
            out.push('\n');
        }
    }
}

/// Example dialogues for in-context prompting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub dialogues: Vec<Shot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub goal: UserGoal,
    pub dialogue: DialogueTranscript,
}

impl ShotSet {
    pub fn new(dialogues: Vec<Shot>) -> Self {
        ShotSet { dialogues }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// One `{"goal": ..., "dialogue": ...}` object per line.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let reader = BufReader::new(File::open(path)?);
        let mut dialogues = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            dialogues.push(serde_json::from_str(&line).map_err(|e| PromptError::ParseError {
                line: idx + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(ShotSet { dialogues })
    }
}

/// Task description, shot blocks, goal text and the separated history,
/// ending with the user cue. The first `shot_count` shots are used in order.
pub fn build_prompt(
    template: &PromptTemplate,
    goal: &UserGoal,
    history: &DialogueTranscript,
    shots: &ShotSet,
) -> Result<String, PromptError> {
    if matches!(history.last(), Some(u) if u.speaker == Speaker::User) {
        return Err(PromptError::NotUserTurn);
    }
    if shots.len() < template.shot_count {
        return Err(PromptError::InsufficientShots {
            wanted: template.shot_count,
            available: shots.len(),
        });
    }
    let mut out = String::new();
    out.push_str(template.task_description.trim());
    out.push_str("\n\n");
    for (i, shot) in shots.dialogues.iter().take(template.shot_count).enumerate() {
        out.push_str(&format!("Example {}\nGoal: {}\n", i + 1, shot.goal.text().trim()));
        template.push_history(&mut out, &shot.dialogue);
        out.push('\n');
    }
    out.push_str("Goal: ");
    out.push_str(goal.text().trim());
    out.push('\n');
    template.push_history(&mut out, history);
    out.push_str(&template.user_cue());
    Ok(out)
}

/// Cuts generated text at the first separator or at a new system turn,
/// strips speaker labels and control characters, and trims.
pub fn postprocess_utterance(raw: &str, template: &PromptTemplate) -> Result<String, PromptError> {
    let printable: String = raw
        .chars()
        .filter_map(|c| match c {
            '\n' | '\r' | '\t' => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect();
    let mut text = match printable.find(template.separator.as_str()) {
        Some(pos) => &printable[..pos],
        None => printable.as_str(),
    }
    .trim();
    let (system, user) = (&template.speaker_labels.0, &template.speaker_labels.1);
    loop {
        let stripped = [system, user]
            .iter()
            .find_map(|label| strip_prefix_ignore_case(text, label))
            .map(str::trim_start);
        match stripped {
            Some(rest) => text = rest,
            None => break,
        }
    }
    if let Some(pos) = find_ignore_case(text, system) {
        text = &text[..pos];
    }
    let text = text.trim();
    if text.is_empty() {
        return Err(PromptError::EmptyAfterCleaning);
    }
    Ok(text.to_string())
}

fn strip_prefix_ignore_case<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &text[prefix.len()..])
}

fn find_ignore_case(text: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    text.char_indices().map(|(i, _)| i).find(|&i| {
        text.get(i..i + needle.len())
            .is_some_and(|s| s.eq_ignore_ascii_case(needle))
    })
}
