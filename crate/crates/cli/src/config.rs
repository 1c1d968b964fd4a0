use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use todsim::agents::{EndpointConfig, FailureInjectionConfig};
use todsim::GenerationParams;

fn default_dialogues() -> usize {
    100
}
fn default_max_turns() -> usize {
    20
}
fn default_concurrency() -> usize {
    8
}

/// `simulate --config` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Goal suite; the bundled automotive suite when absent.
    #[serde(default)]
    pub goals: Option<PathBuf>,
    #[serde(default = "default_dialogues")]
    pub dialogues_per_goal: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub terminate_on_thanks_intent: bool,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub failure: FailureInjectionConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum AgentConfig {
    /// Scripted agent answering every goal slot correctly.
    #[default]
    Perfect,
    /// Remote model behind a chat-completions endpoint.
    Llm {
        endpoint: EndpointConfig,
        params: GenerationParams,
        #[serde(default)]
        template: Option<PathBuf>,
        #[serde(default)]
        shots: Option<PathBuf>,
    },
}
