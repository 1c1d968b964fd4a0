//! Runs single dialogues and whole campaigns between a user agent and a TOD
//! system.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{AgentError, GenerationParams, TodSystem, UserAgent};
use crate::dialogue::{DialogueTranscript, Speaker, Termination, Utterance};
use crate::goal::UserGoal;
use crate::metrics::extract::lexical_intent;
use crate::seed::derive_seed;

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const MANIFEST_FILE: &str = "campaign.json";
pub const DEFAULT_END_MARKER: &str = "[END]";
const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot write to {path}: {reason}")]
    OutputUnwritable { path: PathBuf, reason: String },
    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),
}

impl EngineError {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::OutputUnwritable { .. } => "OutputUnwritable",
            EngineError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::OutputUnwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopPolicy {
    pub terminate_on_system_goodbye: bool,
    pub terminate_on_thanks_intent: bool,
    pub max_turns: usize,
    /// A user utterance equal to this ends the dialogue as `agent_end`.
    pub agent_end_marker: String,
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy {
            terminate_on_system_goodbye: true,
            terminate_on_thanks_intent: false,
            max_turns: 20,
            agent_end_marker: DEFAULT_END_MARKER.to_string(),
        }
    }
}

impl StopPolicy {
    pub fn with_max_turns(mut self, max_turns: usize) -> Self {
        self.max_turns = max_turns;
        self
    }
}

/// Stop check run after every utterance. `system_terminal` is the flag the
/// TOD attached to its latest turn.
pub fn should_terminate(history: &DialogueTranscript, system_terminal: bool, stop: &StopPolicy) -> Option<Termination> {
    let last = history.last()?;
    match last.speaker {
        Speaker::System => {
            let goodbye = stop.terminate_on_system_goodbye && last.intents().any(|i| i == "bye");
            (system_terminal || goodbye).then_some(Termination::SystemEnd)
        }
        Speaker::User => {
            if last.text.trim() == stop.agent_end_marker {
                return Some(Termination::AgentEnd);
            }
            if stop.terminate_on_thanks_intent {
                let thanks = match &last.acts {
                    Some(acts) => acts.iter().any(|a| a.intent == "thanks"),
                    None => lexical_intent(&last.text).as_deref() == Some("thanks"),
                };
                if thanks {
                    return Some(Termination::AgentEnd);
                }
            }
            (history.exchanges() >= stop.max_turns).then_some(Termination::MaxTurns)
        }
    }
}

fn record_failure(transcript: &mut DialogueTranscript, kind: &str, message: String) {
    tracing::warn!(dialogue = %transcript.dialogue_id, kind, %message, "dialogue aborted");
    transcript.metadata.insert("error_kind".into(), Value::from(kind));
    transcript.metadata.insert("error".into(), Value::from(message));
    transcript.terminate(Termination::TransportError).ok();
}

/// Plays one dialogue: the TOD speaks, stop check, the user replies, stop
/// check. An agent failure ends the dialogue as `transport_error` and keeps
/// what was said so far.
pub fn run_dialogue(
    user: &mut dyn UserAgent,
    tod: &mut dyn TodSystem,
    goal: &UserGoal,
    stop: &StopPolicy,
    dialogue_id: &str,
    seed: u64,
) -> DialogueTranscript {
    let mut transcript = DialogueTranscript::new(dialogue_id, goal.id());
    transcript.metadata.insert("seed".into(), Value::from(seed));
    let mut user_text: Option<String> = None;
    loop {
        let turn = match tod.respond(user_text.as_deref()) {
            Ok(t) => t,
            Err(e) => {
                record_failure(&mut transcript, e.kind(), e.to_string());
                break;
            }
        };
        if let Some(acts) = turn.user_acts {
            transcript.annotate_last_user(acts);
        }
        if let Err(e) = transcript.append(Utterance::system(turn.text).with_acts(turn.acts)) {
            record_failure(&mut transcript, e.kind(), e.to_string());
            break;
        }
        if let Some(reason) = should_terminate(&transcript, turn.terminal, stop) {
            transcript.terminate(reason).ok();
            break;
        }
        let reply = match user.respond(goal, &transcript) {
            Ok(r) => r,
            Err(e) => {
                record_failure(&mut transcript, e.kind(), e.to_string());
                break;
            }
        };
        if let Err(e) = transcript.append(Utterance::user(reply.clone())) {
            record_failure(&mut transcript, e.kind(), e.to_string());
            break;
        }
        if let Some(reason) = should_terminate(&transcript, false, stop) {
            transcript.terminate(reason).ok();
            break;
        }
        user_text = Some(reply);
    }
    transcript.metadata.extend(user.metadata());
    transcript
}

fn default_dialogues_per_goal() -> usize {
    100
}
fn default_max_turns() -> usize {
    20
}
fn default_concurrency() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub goals: Vec<UserGoal>,
    #[serde(default = "default_dialogues_per_goal")]
    pub dialogues_per_goal: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub terminate_on_thanks_intent: bool,
}

impl CampaignConfig {
    pub fn new(goals: Vec<UserGoal>, output_dir: impl Into<PathBuf>) -> Self {
        CampaignConfig {
            goals,
            dialogues_per_goal: default_dialogues_per_goal(),
            max_turns: default_max_turns(),
            params: GenerationParams::default(),
            base_seed: 0,
            output_dir: output_dir.into(),
            concurrency: default_concurrency(),
            terminate_on_thanks_intent: false,
        }
    }

    pub fn stop_policy(&self) -> StopPolicy {
        StopPolicy {
            terminate_on_thanks_intent: self.terminate_on_thanks_intent,
            ..StopPolicy::default().with_max_turns(self.max_turns)
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.dialogues_per_goal == 0 {
            return Err(EngineError::InvalidConfig(
                "dialogues_per_goal must be at least 1".into(),
            ));
        }
        if self.max_turns == 0 {
            return Err(EngineError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(EngineError::InvalidConfig("concurrency must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.goals.iter().find(|g| !seen.insert(g.id())) {
            return Err(EngineError::InvalidConfig(format!("duplicate goal id {}", dup.id())));
        }
        Ok(())
    }

    pub fn dialogue_id(&self, goal_idx: usize, dialogue_idx: usize) -> String {
        format!("{}-{dialogue_idx:04}", self.goals[goal_idx].id())
    }

    /// Seed of dialogue `dialogue_idx` of goal `goal_idx`, independent of
    /// every other dialogue.
    pub fn dialogue_seed(&self, goal_idx: usize, dialogue_idx: usize) -> u64 {
        derive_seed(self.base_seed, &[goal_idx as u64, dialogue_idx as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub total: usize,
    pub generated: usize,
    pub resumed: usize,
    pub per_goal: BTreeMap<String, usize>,
    pub terminations: BTreeMap<String, usize>,
    pub transcripts_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn load_existing(
    path: &Path,
    expected: &BTreeMap<String, (usize, usize)>,
) -> BTreeMap<(usize, usize), DialogueTranscript> {
    let mut done = BTreeMap::new();
    let Ok(file) = File::open(path) else { return done };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let Ok(line) = line else { break };
        match serde_json::from_str::<DialogueTranscript>(&line) {
            Ok(t) if t.is_terminated() => {
                if let Some(&key) = expected.get(&t.dialogue_id) {
                    done.insert(key, t);
                }
            }
            Ok(_) => {}
            Err(e) => tracing::warn!(line = idx + 1, error = %e, "skipping unreadable transcript line"),
        }
    }
    done
}

fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| unwritable(&tmp, e))?;
    let mut out = BufWriter::new(file);
    write(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| unwritable(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| unwritable(path, e))
}

/// Runs `dialogues_per_goal` dialogues for every goal and writes them to
/// `transcripts.jsonl`, sorted by goal order then dialogue index. Dialogues
/// already present in that file are kept and not rerun. Per-dialogue
/// failures are recorded as `transport_error` transcripts.
pub fn run_campaign<U, T>(
    config: &CampaignConfig,
    user_factory: U,
    tod_factory: T,
) -> Result<CampaignSummary, EngineError>
where
    U: Fn(&UserGoal, u64) -> Result<Box<dyn UserAgent>, AgentError> + Sync,
    T: Fn(&UserGoal, u64) -> Result<Box<dyn TodSystem>, AgentError> + Sync,
{
    config.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let transcripts_path = dir.join(TRANSCRIPTS_FILE);
    let manifest_path = dir.join(MANIFEST_FILE);

    let mut expected = BTreeMap::new();
    for gi in 0..config.goals.len() {
        for di in 0..config.dialogues_per_goal {
            expected.insert(config.dialogue_id(gi, di), (gi, di));
        }
    }
    let mut done = load_existing(&transcripts_path, &expected);
    let resumed = done.len();
    let todo: Vec<(usize, usize)> = expected.values().copied().filter(|k| !done.contains_key(k)).collect();
    tracing::info!(total = expected.len(), resumed, todo = todo.len(), "starting campaign");

    // Progress is appended as dialogues finish so an interrupted run can be
    // resumed; the file is rewritten in canonical order at the end.
    let progress = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&transcripts_path)
        .map_err(|e| unwritable(&transcripts_path, e))?;
    let progress = Mutex::new(progress);
    let stop = config.stop_policy();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;

    let run_one = |&(gi, di): &(usize, usize)| -> Result<((usize, usize), DialogueTranscript), EngineError> {
        let goal = &config.goals[gi];
        let seed = config.dialogue_seed(gi, di);
        let id = config.dialogue_id(gi, di);
        let mut transcript = match (user_factory(goal, seed), tod_factory(goal, seed)) {
            (Ok(mut user), Ok(mut tod)) => run_dialogue(user.as_mut(), tod.as_mut(), goal, &stop, &id, seed),
            (Err(e), _) | (_, Err(e)) => {
                let mut t = DialogueTranscript::new(id, goal.id());
                t.metadata.insert("seed".into(), Value::from(seed));
                record_failure(&mut t, e.kind(), e.to_string());
                t
            }
        };
        transcript
            .metadata
            .entry("model_id".into())
            .or_insert_with(|| Value::from(config.params.model_id.clone()));
        transcript
            .metadata
            .entry("temperature".into())
            .or_insert_with(|| Value::from(config.params.temperature));
        let line = serde_json::to_string(&transcript).map_err(|e| unwritable(&transcripts_path, e))?;
        let mut file = progress.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(file, "{line}").map_err(|e| unwritable(&transcripts_path, e))?;
        Ok(((gi, di), transcript))
    };
    let fresh: Vec<_> = pool.install(|| todo.par_iter().map(run_one).collect::<Result<_, _>>())?;
    let generated = fresh.len();
    done.extend(fresh);
    drop(progress);

    write_atomic(&transcripts_path, |out| {
        for t in done.values() {
            serde_json::to_writer(&mut *out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    })?;

    let mut per_goal = BTreeMap::new();
    let mut terminations = BTreeMap::new();
    for t in done.values() {
        *per_goal.entry(t.goal_id.clone()).or_insert(0) += 1;
        let reason = t.termination().map_or("none", Termination::as_str);
        *terminations.entry(reason.to_string()).or_insert(0) += 1;
    }
    let summary = CampaignSummary {
        total: done.len(),
        generated,
        resumed,
        per_goal,
        terminations,
        transcripts_path: transcripts_path.clone(),
        manifest_path: manifest_path.clone(),
    };
    let seeds: Vec<Value> = done
        .keys()
        .map(|&(gi, di)| json!({ "dialogue_id": config.dialogue_id(gi, di), "seed": config.dialogue_seed(gi, di) }))
        .collect();
    let manifest = json!({
        "schema_version": MANIFEST_SCHEMA,
        "harness_version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": seeds,
        "started_at": started_at,
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "summary": summary,
    });
    write_atomic(&manifest_path, |out| {
        serde_json::to_writer_pretty(&mut *out, &manifest)?;
        out.write_all(b"\n")
    })?;
    tracing::info!(total = summary.total, generated, "campaign finished");
    Ok(summary)
}
