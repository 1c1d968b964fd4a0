//! Goal-conditioned user simulation against task-oriented dialogue systems,
//! with fine-tuning dataset export and evaluation metrics.

pub mod agents;
pub mod annotation;
pub mod dialogue;
pub mod engine;
pub mod goal;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod seed;

pub use agents::{AgentError, GenerationParams, MockTod, ScriptedAgent, TodSystem, UserAgent};
pub use annotation::{AnnotationError, AnnotationRecord, ErrorCategory};
pub use dialogue::{DialogueAct, DialogueError, DialogueTranscript, Speaker, Termination, Utterance};
pub use engine::{run_campaign, run_dialogue, CampaignConfig, CampaignSummary, EngineError, StopPolicy};
pub use goal::{GoalError, GoalTemplates, SlotKind, SlotSpec, Subtask, UserGoal};
pub use metrics::{DiversityReport, FulfillmentReport, MetricError};
pub use pipeline::{PipelineError, TrainingRecord};
pub use prompt::{PromptError, PromptTemplate, ShotSet};
pub use report::{render_report, ReportError, ReportFormat, RunReport};
