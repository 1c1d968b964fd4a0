use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::DialogueAct;
use crate::goal::{normalize_value, UserGoal};
use crate::metrics::extract::{lexical_intent, opens_with_affirmation};
use crate::metrics::LexicalExtractor;
use crate::seed::derive_seed;

use super::{AgentError, SystemTurn, TodSystem};

const OFF_TOPIC: &[&str] = &[
    "Sorry, are you asking about our opening hours?",
    "I'm sorry, did you want to hear about our current promotions?",
    "Sorry, could you say that again? Are you calling about a recall notice?",
];

/// Knobs for the failures the mock system can exhibit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureInjectionConfig {
    #[serde(default)]
    pub loop_probability: f64,
    #[serde(default)]
    pub force_end_after_turn: Option<usize>,
    #[serde(default)]
    pub nlu_error_rate: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl FailureInjectionConfig {
    pub fn none(rng_seed: u64) -> Self {
        FailureInjectionConfig {
            rng_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, p) in [
            ("loop_probability", self.loop_probability),
            ("nlu_error_rate", self.nlu_error_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AgentError::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// What the mock system knows about the task: the slots it must fill (in
/// asking order), what it can answer, and the candidate values its NLU
/// recognizes per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodSchema {
    pub service: String,
    /// `(slot key, spoken phrase)` in asking order.
    pub slots: Vec<(String, String)>,
    pub requestable: Vec<(String, String)>,
    pub candidates: BTreeMap<String, BTreeSet<String>>,
    pub answers: BTreeMap<String, String>,
}

impl TodSchema {
    pub fn from_goal(goal: &UserGoal) -> Self {
        let mut candidates: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for slot in goal.valued_slots() {
            candidates
                .entry(slot.key())
                .or_default()
                .insert(slot.value.clone().unwrap_or_default());
        }
        TodSchema {
            service: goal.domains().first().cloned().unwrap_or_else(|| "customer".into()),
            slots: goal.valued_slots().map(|s| (s.key(), s.phrase())).collect(),
            requestable: goal.request_slots().map(|s| (s.key(), s.phrase())).collect(),
            answers: goal
                .request_slots()
                .map(|s| (s.key(), format!("{} {}", s.name.replace('_', " "), "on file")))
                .collect(),
            candidates,
        }
    }

    /// Adds every value the given goals use for this schema's slots to the
    /// recognized candidates.
    pub fn with_ontology<'a>(mut self, goals: impl IntoIterator<Item = &'a UserGoal>) -> Self {
        for goal in goals {
            for slot in goal.valued_slots() {
                if let Some(values) = self.candidates.get_mut(&slot.key()) {
                    values.insert(slot.value.clone().unwrap_or_default());
                }
            }
        }
        self
    }

    fn phrase<'a>(&'a self, key: &'a str) -> &'a str {
        self.slots
            .iter()
            .chain(&self.requestable)
            .find(|(k, _)| k == key)
            .map_or(key, |(_, p)| p.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TodPhase {
    Greeting,
    SlotFilling,
    Confirm,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodState {
    pub phase: TodPhase,
    /// Slot keys the system still has to ask for.
    pub pending_requests: BTreeSet<String>,
    pub collected: BTreeMap<String, String>,
    pub bookings: Vec<BTreeMap<String, String>>,
    /// System turns emitted so far.
    pub turn: usize,
    pub asked: Option<String>,
    pub last_system: Option<(String, Vec<DialogueAct>)>,
}

impl TodState {
    pub fn new(schema: &TodSchema) -> Self {
        TodState {
            phase: TodPhase::Greeting,
            pending_requests: schema.slots.iter().map(|(k, _)| k.clone()).collect(),
            collected: BTreeMap::new(),
            bookings: Vec::new(),
            turn: 0,
            asked: None,
            last_system: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TodResponse {
    pub text: String,
    pub acts: Vec<DialogueAct>,
    pub user_acts: Option<Vec<DialogueAct>>,
    pub terminal: bool,
    pub state: TodState,
}

fn finish(
    mut state: TodState,
    text: String,
    acts: Vec<DialogueAct>,
    user_acts: Option<Vec<DialogueAct>>,
) -> TodResponse {
    let terminal = state.phase == TodPhase::Closed;
    state.last_system = Some((text.clone(), acts.clone()));
    TodResponse {
        text,
        acts,
        user_acts,
        terminal,
        state,
    }
}

/// Values for pending slots found in the user text, the slot asked last
/// taking precedence. At most one value per slot.
fn parse_pending(schema: &TodSchema, state: &TodState, text: &str) -> Vec<(String, String)> {
    let candidates = |keys: &mut dyn Iterator<Item = &String>| {
        let pairs: Vec<(String, String)> = keys
            .flat_map(|k| {
                schema
                    .candidates
                    .get(k)
                    .into_iter()
                    .flatten()
                    .map(move |v| (k.clone(), v.clone()))
            })
            .collect();
        LexicalExtractor::new(pairs)
    };
    let mut found: Vec<(String, String)> = Vec::new();
    let asked = state.asked.as_ref().filter(|k| state.pending_requests.contains(*k));
    if let Some(asked) = asked {
        found.extend(candidates(&mut std::iter::once(asked)).find(text).into_iter().take(1));
    }
    let others = candidates(&mut state.pending_requests.iter().filter(|k| Some(*k) != asked));
    for (k, v) in others.find(text) {
        if !found.iter().any(|(fk, fv)| fk == &k || fv == &v) {
            found.push((k, v));
        }
    }
    let order = |k: &str| schema.slots.iter().position(|(s, _)| s == k).unwrap_or(usize::MAX);
    found.sort_by_key(|(k, _)| order(k));
    found
}

fn corrupt(schema: &TodSchema, key: &str, value: &str, rng: &mut ChaCha8Rng) -> String {
    let others: Vec<&String> = schema
        .candidates
        .get(key)
        .into_iter()
        .flatten()
        .filter(|v| v.as_str() != value)
        .collect();
    if others.is_empty() {
        "unrecognized".to_string()
    } else {
        others[rng.gen_range(0..others.len())].clone()
    }
}

fn closing(state: &mut TodState, schema: &TodSchema) -> (String, Vec<DialogueAct>) {
    let mut book = DialogueAct::new("book");
    for (key, _) in &schema.slots {
        if let Some(v) = state.collected.get(key) {
            book = book.with_entity(key.clone(), v.clone());
        }
    }
    state.bookings.push(state.collected.clone());
    state.phase = TodPhase::Closed;
    (
        format!(
            "Your {} request is confirmed. Thank you for using our services. Goodbye.",
            schema.service
        ),
        vec![book, DialogueAct::new("bye")],
    )
}

/// One turn of the mock system. Without injected failures it greets, asks
/// for each pending slot in schema order, reads back the collected values,
/// and closes with a booking once the user confirms. Randomness comes only
/// from `failure.rng_seed` and the turn number.
pub fn mock_tod_respond(
    state: &TodState,
    user_text: Option<&str>,
    schema: &TodSchema,
    failure: &FailureInjectionConfig,
) -> Result<TodResponse, AgentError> {
    if state.phase == TodPhase::Closed {
        return Err(AgentError::ClosedDialogue);
    }
    let mut next = state.clone();
    next.turn += 1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(failure.rng_seed, &[next.turn as u64]));
    let loop_roll: f64 = rng.gen();

    if failure.force_end_after_turn.is_some_and(|limit| next.turn > limit) {
        next.phase = TodPhase::Closed;
        let user_acts = user_text.map(|_| Vec::new());
        return Ok(finish(
            next,
            "Thank you for using our services.".into(),
            vec![DialogueAct::new("bye")],
            user_acts,
        ));
    }

    if state.phase == TodPhase::Greeting {
        next.phase = TodPhase::SlotFilling;
        let text = format!("Hello, welcome to the {} service. How can I help you?", schema.service);
        return Ok(finish(
            next,
            text,
            vec![DialogueAct::new("greet")],
            user_text.map(|_| Vec::new()),
        ));
    }

    if loop_roll < failure.loop_probability {
        if let Some((text, acts)) = state.last_system.clone() {
            return Ok(finish(next, text, acts, Some(Vec::new())));
        }
    }

    let user = user_text.unwrap_or_default();
    let intent = lexical_intent(user).unwrap_or_else(|| "inform".into());
    let mut heard = DialogueAct::new(intent.clone());
    let mut corrupted = false;
    for (key, value) in parse_pending(schema, state, user) {
        let recorded = if rng.gen::<f64>() < failure.nlu_error_rate {
            corrupted = true;
            corrupt(schema, &key, &value, &mut rng)
        } else {
            value
        };
        next.pending_requests.remove(&key);
        next.collected.insert(key.clone(), recorded.clone());
        heard = heard.with_entity(key, recorded);
    }
    let user_acts = Some(vec![heard]);

    let mut acts = Vec::new();
    let mut prefix = String::new();
    let lowered = normalize_value(user);
    for (key, phrase) in &schema.requestable {
        if lowered.contains(&normalize_value(phrase)) {
            let answer = schema.answers.get(key).cloned().unwrap_or_default();
            prefix.push_str(&format!("The {phrase} is {answer}. "));
            acts.push(DialogueAct::new("inform").with_entity(key.clone(), answer));
        }
    }

    if corrupted {
        if next.phase == TodPhase::Confirm {
            next.phase = TodPhase::SlotFilling;
        }
        let text = OFF_TOPIC[rng.gen_range(0..OFF_TOPIC.len())].to_string();
        acts.push(DialogueAct::new("clarify"));
        return Ok(finish(next, format!("{prefix}{text}"), acts, user_acts));
    }

    let text = if state.phase == TodPhase::Confirm && intent == "negate" {
        next.collected.clear();
        next.pending_requests = schema.slots.iter().map(|(k, _)| k.clone()).collect();
        next.phase = TodPhase::SlotFilling;
        let (key, phrase) = schema.slots.first().cloned().unwrap_or_default();
        next.asked = Some(key.clone());
        acts.push(DialogueAct::new("request").with_entity("slot", key));
        format!("Sorry about that, let's start again. Could you tell me the {phrase}?")
    } else if let Some((key, phrase)) = schema.slots.iter().find(|(k, _)| next.pending_requests.contains(k)) {
        next.phase = TodPhase::SlotFilling;
        next.asked = Some(key.clone());
        acts.push(DialogueAct::new("request").with_entity("slot", key.clone()));
        format!("Could you tell me the {phrase}?")
    } else if intent == "affirm" || opens_with_affirmation(user) {
        let (text, closing_acts) = closing(&mut next, schema);
        acts.extend(closing_acts);
        text
    } else {
        next.phase = TodPhase::Confirm;
        next.asked = None;
        let mut confirm = DialogueAct::new("confirm");
        let mut readback = Vec::new();
        for (key, _) in &schema.slots {
            if let Some(v) = next.collected.get(key) {
                readback.push(format!("{} {v}", schema.phrase(key)));
                confirm = confirm.with_entity(key.clone(), v.clone());
            }
        }
        acts.push(confirm);
        format!("Let me confirm: {}. Is that correct?", readback.join(", "))
    };
    Ok(finish(next, format!("{prefix}{text}"), acts, user_acts))
}

/// Stateful wrapper running [`mock_tod_respond`] turn by turn.
#[derive(Debug, Clone)]
pub struct MockTod {
    schema: TodSchema,
    failure: FailureInjectionConfig,
    state: TodState,
}

impl MockTod {
    pub fn new(schema: TodSchema, failure: FailureInjectionConfig) -> Result<Self, AgentError> {
        failure.validate()?;
        let state = TodState::new(&schema);
        Ok(MockTod { schema, failure, state })
    }

    pub fn state(&self) -> &TodState {
        &self.state
    }
}

impl TodSystem for MockTod {
    fn respond(&mut self, user_text: Option<&str>) -> Result<SystemTurn, AgentError> {
        let r = mock_tod_respond(&self.state, user_text, &self.schema, &self.failure)?;
        self.state = r.state;
        Ok(SystemTurn {
            text: r.text,
            acts: r.acts,
            user_acts: r.user_acts,
            terminal: r.terminal,
        })
    }
}
