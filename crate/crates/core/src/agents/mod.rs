//! User agents (remote-model simulator, scripted replay) and the mock TOD
//! system they talk to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialogue::{DialogueAct, DialogueTranscript};
use crate::goal::UserGoal;
use crate::prompt::{PromptError, DEFAULT_SEPARATOR};

mod mock_tod;
mod remote;
mod scripted;
mod simulator;

pub use mock_tod::{mock_tod_respond, FailureInjectionConfig, MockTod, TodPhase, TodResponse, TodSchema, TodState};
pub use remote::{remote_generate, ChatClient, EndpointConfig, Generation};
pub use scripted::{scripted_next, ScriptedAgent};
pub use simulator::LlmUserAgent;

pub const MULTIWOZ_TEMPERATURE: f64 = 0.9;
pub const INTERNAL_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    TransportError { attempts: u32, reason: String },
    #[error("endpoint rejected credentials (HTTP {0})")]
    AuthError(u16),
    #[error("model returned an empty response")]
    ModelRefusal,
    #[error("script exhausted after {0} utterance(s)")]
    ScriptExhausted(usize),
    #[error("dialogue already closed")]
    ClosedDialogue,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AgentError {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentError::TransportError { .. } => "TransportError",
            AgentError::AuthError(_) => "AuthError",
            AgentError::ModelRefusal => "ModelRefusal",
            AgentError::ScriptExhausted(_) => "ScriptExhausted",
            AgentError::ClosedDialogue => "ClosedDialogue",
            AgentError::InvalidParams(_) => "InvalidParams",
            AgentError::InvalidConfig(_) => "InvalidConfig",
            AgentError::Prompt(e) => e.kind(),
            AgentError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_stops")]
    pub stop_sequences: Vec<String>,
}

fn default_temperature() -> f64 {
    MULTIWOZ_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    128
}

fn default_stops() -> Vec<String> {
    vec![DEFAULT_SEPARATOR.to_string()]
}

impl GenerationParams {
    pub fn new(model_id: impl Into<String>) -> Self {
        GenerationParams {
            model_id: model_id.into(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            stop_sequences: default_stops(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self, max_tokens_ceiling: u32) -> Result<(), AgentError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AgentError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 || self.max_tokens > max_tokens_ceiling {
            return Err(AgentError::InvalidParams(format!(
                "max_tokens {} outside 1..={max_tokens_ceiling}",
                self.max_tokens
            )));
        }
        Ok(())
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams::new("scripted")
    }
}

/// The simulated user.
pub trait UserAgent: Send {
    /// Next user utterance given the history, which ends with a system turn.
    fn respond(&mut self, goal: &UserGoal, history: &DialogueTranscript) -> Result<String, AgentError>;

    /// Run metadata gathered so far (retry counts and the like), merged into
    /// the transcript when the dialogue ends.
    fn metadata(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }
}

/// One system turn.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemTurn {
    pub text: String,
    pub acts: Vec<DialogueAct>,
    /// The system's reading of the user utterance it answered.
    pub user_acts: Option<Vec<DialogueAct>>,
    pub terminal: bool,
}

/// The task-oriented dialogue system under test. `user_text` is `None` for
/// the opening turn.
pub trait TodSystem: Send {
    fn respond(&mut self, user_text: Option<&str>) -> Result<SystemTurn, AgentError>;
}
