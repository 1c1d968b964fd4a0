//! User goals: slot specifications, natural-language rendering, frequency
//! conditioned sampling and fixed goal suites.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building, rendering or loading goals.
#[derive(Debug, Error)]
pub enum GoalError {
    #[error("no rendering template for slot {domain}.{slot}")]
    MissingTemplate { domain: String, slot: String },
    #[error("cannot estimate a goal distribution from an empty corpus")]
    EmptyCorpus,
    #[error("goal suite parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("invalid goal `{goal}`: {reason}")]
    InvalidGoal { goal: String, reason: String },
    #[error("invalid goal distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GoalError {
    pub fn kind(&self) -> &'static str {
        match self {
            GoalError::MissingTemplate { .. } => "MissingTemplate",
            GoalError::EmptyCorpus => "EmptyCorpus",
            GoalError::ParseError { .. } => "ParseError",
            GoalError::InvalidGoal { .. } => "InvalidGoal",
            GoalError::InvalidDistribution(_) => "InvalidDistribution",
            GoalError::Io(_) => "IoError",
        }
    }
}

/// Canonical form for slot values and matched text: lower case, trimmed,
/// single spaces, clock times as 24-hour `HH:MM`.
pub fn normalize_value(raw: &str) -> String {
    let collapsed = raw.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    canonicalize_times(&collapsed)
}

fn canonicalize_times(text: &str) -> String {
    static MERIDIEM: OnceLock<Regex> = OnceLock::new();
    static CLOCK: OnceLock<Regex> = OnceLock::new();
    let meridiem = MERIDIEM.get_or_init(|| Regex::new(r"\b(\d{1,2})(?::(\d{2}))?\s?([ap])m\b").expect("valid regex"));
    let clock = CLOCK.get_or_init(|| Regex::new(r"\b(\d{1,2}):(\d{2})\b").expect("valid regex"));

    let text = meridiem.replace_all(text, |caps: &Captures| {
        let hour: u32 = caps[1].parse().unwrap_or(99);
        let minute: u32 = caps.get(2).map_or(0, |m| m.as_str().parse().unwrap_or(99));
        if !(1..=12).contains(&hour) || minute > 59 {
            return caps[0].to_string();
        }
        let hour = match (&caps[3], hour) {
            ("a", 12) => 0,
            ("a", h) => h,
            ("p", 12) => 12,
            (_, h) => h + 12,
        };
        format!("{hour:02}:{minute:02}")
    });
    clock
        .replace_all(&text, |caps: &Captures| {
            let hour: u32 = caps[1].parse().unwrap_or(99);
            if hour > 23 {
                return caps[0].to_string();
            }
            format!("{hour:02}:{}", &caps[2])
        })
        .into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Inform,
    Request,
    Book,
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotKind::Inform => "inform",
            SlotKind::Request => "request",
            SlotKind::Book => "book",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Book,
    Cancel,
    Reschedule,
    Other,
}

impl Subtask {
    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::Book => "book",
            Subtask::Cancel => "cancel",
            Subtask::Reschedule => "reschedule",
            Subtask::Other => "other",
        }
    }
}

impl std::str::FromStr for Subtask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "book" | "b" => Ok(Subtask::Book),
            "cancel" | "c" => Ok(Subtask::Cancel),
            "reschedule" | "r" => Ok(Subtask::Reschedule),
            "other" => Ok(Subtask::Other),
            other => Err(format!("unknown subtask `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// One slot of a user goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub domain: String,
    pub name: String,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl SlotSpec {
    pub fn inform(domain: &str, name: &str, value: &str) -> Self {
        Self::with_value(domain, name, SlotKind::Inform, value)
    }

    pub fn book(domain: &str, name: &str, value: &str) -> Self {
        Self::with_value(domain, name, SlotKind::Book, value)
    }

    pub fn request(domain: &str, name: &str) -> Self {
        SlotSpec {
            domain: domain.to_string(),
            name: name.to_string(),
            kind: SlotKind::Request,
            value: None,
            group: None,
        }
    }

    fn with_value(domain: &str, name: &str, kind: SlotKind, value: &str) -> Self {
        SlotSpec {
            domain: domain.to_string(),
            name: name.to_string(),
            kind,
            value: Some(normalize_value(value)),
            group: None,
        }
    }

    pub fn in_group(mut self, group: &str) -> Self {
        self.group = Some(group.to_string());
        self
    }

    /// Entity key used for matching: `domain.name`.
    pub fn key(&self) -> String {
        slot_key(&self.domain, &self.name)
    }

    /// Slot name as spoken: underscores become spaces.
    pub fn phrase(&self) -> String {
        self.name.replace('_', " ")
    }

    pub fn has_value(&self) -> bool {
        matches!(self.kind, SlotKind::Inform | SlotKind::Book)
    }
}

pub fn slot_key(domain: &str, name: &str) -> String {
    format!("{domain}.{name}")
}

/// A structured user goal together with its natural-language rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GoalRecord", into = "GoalRecord")]
pub struct UserGoal {
    id: String,
    subtask: Option<Subtask>,
    difficulty: Option<Difficulty>,
    notes: Vec<String>,
    slots: Vec<SlotSpec>,
    domains: Vec<String>,
    text: String,
}

impl UserGoal {
    /// Validates the slot invariants and normalizes values. The goal starts
    /// without text; see [`UserGoal::rendered`].
    pub fn new(
        id: impl Into<String>,
        subtask: Option<Subtask>,
        difficulty: Option<Difficulty>,
        slots: Vec<SlotSpec>,
    ) -> Result<Self, GoalError> {
        let id = id.into();
        let invalid = |reason: String| GoalError::InvalidGoal {
            goal: id.clone(),
            reason,
        };
        if id.trim().is_empty() {
            return Err(invalid("empty goal id".into()));
        }
        let mut seen = BTreeSet::new();
        let mut domains: Vec<String> = Vec::new();
        let mut normalized = Vec::with_capacity(slots.len());
        for mut slot in slots {
            if slot.domain.trim().is_empty() || slot.name.trim().is_empty() {
                return Err(invalid("slot with empty domain or name".into()));
            }
            match (slot.kind, &slot.value) {
                (SlotKind::Request, Some(_)) => {
                    return Err(invalid(format!("request slot {} carries a value", slot.key())))
                }
                (SlotKind::Inform | SlotKind::Book, None) => {
                    return Err(invalid(format!("{} slot {} has no value", slot.kind, slot.key())))
                }
                _ => {}
            }
            if let Some(value) = slot.value.as_mut() {
                *value = normalize_value(value);
                if value.is_empty() {
                    return Err(invalid(format!("slot {} has an empty value", slot.key())));
                }
            }
            if !seen.insert((slot.domain.clone(), slot.name.clone(), slot.kind)) {
                return Err(invalid(format!("duplicate {} slot {}", slot.kind, slot.key())));
            }
            if !domains.contains(&slot.domain) {
                domains.push(slot.domain.clone());
            }
            normalized.push(slot);
        }
        Ok(UserGoal {
            id,
            subtask,
            difficulty,
            notes: Vec::new(),
            slots: normalized,
            domains,
            text: String::new(),
        })
    }

    /// Background facts rendered into the goal text but not tracked as slots.
    pub fn with_notes(mut self, notes: Vec<String>) -> Self {
        self.notes = notes;
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = text.into();
        self
    }

    pub fn rendered(self, templates: &GoalTemplates) -> Result<Self, GoalError> {
        let text = render_goal(&self, templates)?;
        Ok(self.with_text(text))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn subtask(&self) -> Option<Subtask> {
        self.subtask
    }

    pub fn difficulty(&self) -> Option<Difficulty> {
        self.difficulty
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_rendered(&self) -> bool {
        !self.text.trim().is_empty()
    }

    /// Inform and book slots, i.e. everything the user has to convey.
    pub fn valued_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.has_value())
    }

    pub fn request_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.kind == SlotKind::Request)
    }

    pub fn book_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.kind == SlotKind::Book)
    }

    /// `(key, value)` pairs of all inform and book slots.
    pub fn entity_set(&self) -> BTreeSet<(String, String)> {
        self.valued_slots()
            .map(|s| (s.key(), s.value.clone().unwrap_or_default()))
            .collect()
    }
}

/// Serialized form of a goal, one JSON object per suite line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtask: Option<Subtask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    #[serde(default)]
    slots: Vec<SlotSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl TryFrom<GoalRecord> for UserGoal {
    type Error = GoalError;

    fn try_from(record: GoalRecord) -> Result<Self, Self::Error> {
        let goal = UserGoal::new(record.id, record.subtask, record.difficulty, record.slots)?.with_notes(record.notes);
        Ok(match record.text {
            Some(text) => goal.with_text(text),
            None => goal,
        })
    }
}

impl From<UserGoal> for GoalRecord {
    fn from(goal: UserGoal) -> Self {
        GoalRecord {
            id: goal.id,
            subtask: goal.subtask,
            difficulty: goal.difficulty,
            notes: goal.notes,
            slots: goal.slots,
            text: (!goal.text.is_empty()).then_some(goal.text),
        }
    }
}

/// Sentence templates for one domain. `{slot}` and `{value}` are substituted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainTemplates {
    #[serde(default)]
    pub intro: Option<String>,
    #[serde(default)]
    pub inform: Option<String>,
    #[serde(default)]
    pub request: Option<String>,
    #[serde(default)]
    pub book: Option<String>,
    /// Per-slot overrides keyed by slot name; take precedence over the kind
    /// templates.
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTemplates {
    pub preamble: String,
    #[serde(default)]
    pub domains: BTreeMap<String, DomainTemplates>,
}

const DEFAULT_TEMPLATES: &str = include_str!("../data/goal_templates.json");

impl Default for GoalTemplates {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("bundled goal templates are valid")
    }
}

impl GoalTemplates {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GoalError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| GoalError::ParseError {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    fn slot_template(&self, slot: &SlotSpec) -> Result<&str, GoalError> {
        let missing = || GoalError::MissingTemplate {
            domain: slot.domain.clone(),
            slot: slot.name.clone(),
        };
        let domain = self.domains.get(&slot.domain).ok_or_else(missing)?;
        if let Some(t) = domain.slots.get(&slot.name) {
            return Ok(t);
        }
        let by_kind = match slot.kind {
            SlotKind::Inform => &domain.inform,
            SlotKind::Request => &domain.request,
            SlotKind::Book => &domain.book,
        };
        by_kind.as_deref().ok_or_else(missing)
    }
}

/// Renders a goal to text: the preamble, the notes, then one sentence per
/// slot grouped by domain in goal order.
pub fn render_goal(goal: &UserGoal, templates: &GoalTemplates) -> Result<String, GoalError> {
    let mut sentences = vec![templates.preamble.trim().to_string()];
    sentences.extend(goal.notes.iter().map(|n| n.trim().to_string()));
    for domain in &goal.domains {
        if let Some(intro) = templates.domains.get(domain).and_then(|d| d.intro.as_ref()) {
            sentences.push(intro.clone());
        }
        for slot in goal.slots.iter().filter(|s| &s.domain == domain) {
            let template = templates.slot_template(slot)?;
            sentences.push(
                template
                    .replace("{slot}", &slot.phrase())
                    .replace("{value}", slot.value.as_deref().unwrap_or("")),
            );
        }
    }
    Ok(sentences
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SlotStats {
    group: Option<String>,
    /// Goals containing the slot's domain that also contain the slot.
    present: u64,
    values: BTreeMap<String, u64>,
}

/// Corpus frequencies of domain combinations and slot values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalDistribution {
    combinations: BTreeMap<Vec<String>, u64>,
    domain_totals: BTreeMap<String, u64>,
    slots: BTreeMap<(String, String, SlotKind), SlotStats>,
}

impl GoalDistribution {
    pub fn combinations(&self) -> &BTreeMap<Vec<String>, u64> {
        &self.combinations
    }

    /// Value counts for one `(domain, slot)` across inform and book kinds.
    pub fn value_counts(&self, domain: &str, name: &str) -> BTreeMap<String, u64> {
        let mut merged = BTreeMap::new();
        for ((d, n, _), stats) in &self.slots {
            if d == domain && n == name {
                for (v, c) in &stats.values {
                    *merged.entry(v.clone()).or_insert(0) += c;
                }
            }
        }
        merged
    }

    fn validate(&self) -> Result<(), GoalError> {
        if self.combinations.is_empty() {
            return Err(GoalError::InvalidDistribution("no domain combinations".into()));
        }
        if self.combinations.values().any(|&c| c == 0) {
            return Err(GoalError::InvalidDistribution("zero combination count".into()));
        }
        for ((domain, name, kind), stats) in &self.slots {
            let valued = *kind != SlotKind::Request;
            if stats.present == 0 || (valued && (stats.values.is_empty() || stats.values.values().any(|&c| c == 0))) {
                return Err(GoalError::InvalidDistribution(format!(
                    "slot {domain}.{name} has zero counts"
                )));
            }
        }
        Ok(())
    }
}

/// Counts domain combinations and slot values over a goal corpus.
pub fn estimate_distribution(corpus: &[UserGoal]) -> Result<GoalDistribution, GoalError> {
    if corpus.is_empty() {
        return Err(GoalError::EmptyCorpus);
    }
    let mut combinations = BTreeMap::new();
    let mut domain_totals = BTreeMap::new();
    let mut slots: BTreeMap<(String, String, SlotKind), SlotStats> = BTreeMap::new();
    for goal in corpus {
        *combinations.entry(goal.domains.clone()).or_insert(0) += 1;
        for domain in &goal.domains {
            *domain_totals.entry(domain.clone()).or_insert(0) += 1;
        }
        for slot in &goal.slots {
            let stats = slots
                .entry((slot.domain.clone(), slot.name.clone(), slot.kind))
                .or_insert_with(|| SlotStats {
                    group: slot.group.clone(),
                    present: 0,
                    values: BTreeMap::new(),
                });
            stats.present += 1;
            if let Some(value) = &slot.value {
                *stats.values.entry(value.clone()).or_insert(0) += 1;
            }
        }
    }
    Ok(GoalDistribution {
        combinations,
        domain_totals,
        slots,
    })
}

/// Inverts the cumulative distribution of `weights` at a uniform draw.
fn draw_weighted<'a, T>(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = (&'a T, &'a u64)> + Clone) -> &'a T
where
    T: 'a,
{
    let total: u64 = weights.clone().map(|(_, &w)| w).sum();
    let mut target = rng.gen_range(0..total);
    for (item, &weight) in weights.clone() {
        if target < weight {
            return item;
        }
        target -= weight;
    }
    unreachable!("draw below the total weight")
}

/// Samples a goal: first a domain combination by frequency, then for each
/// slot of those domains its inclusion (by presence rate) and its value (by
/// value frequency). Slots are treated as independent. The returned goal is
/// not yet rendered.
pub fn sample_goal(dist: &GoalDistribution, rng_seed: u64) -> Result<UserGoal, GoalError> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let domains = draw_weighted(&mut rng, dist.combinations.iter()).clone();
    let mut slots = Vec::new();
    for domain in &domains {
        let total = dist.domain_totals.get(domain).copied().unwrap_or(0);
        let candidates: Vec<_> = dist.slots.iter().filter(|((d, _, _), _)| d == domain).collect();
        let mut included: Vec<bool> = candidates
            .iter()
            .map(|(_, stats)| rng.gen_range(0..total.max(1)) < stats.present)
            .collect();
        // every corpus goal had at least one slot in each of its domains
        if !included.iter().any(|&i| i) {
            if let Some(best) = (0..candidates.len())
                .max_by(|&a, &b| candidates[a].1.present.cmp(&candidates[b].1.present).then(b.cmp(&a)))
            {
                included[best] = true;
            }
        }
        for (((d, name, kind), stats), _) in candidates.iter().zip(&included).filter(|(_, &inc)| inc) {
            let value = match kind {
                SlotKind::Request => None,
                _ => Some(draw_weighted(&mut rng, stats.values.iter()).clone()),
            };
            slots.push(SlotSpec {
                domain: d.clone(),
                name: name.clone(),
                kind: *kind,
                value,
                group: stats.group.clone(),
            });
        }
    }
    let goal = UserGoal::new(format!("sampled-{rng_seed:016x}"), None, None, slots)?;
    Ok(goal)
}

/// Loads a goal suite: one JSON goal per line, blank lines ignored. Goals
/// without a `text` field are rendered with the default templates.
pub fn load_goal_suite(path: impl AsRef<Path>) -> Result<Vec<UserGoal>, GoalError> {
    let raw = std::fs::read_to_string(path)?;
    parse_goal_suite(&raw, &GoalTemplates::default())
}

pub fn parse_goal_suite(raw: &str, templates: &GoalTemplates) -> Result<Vec<UserGoal>, GoalError> {
    let mut goals = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let goal: UserGoal = serde_json::from_str(line).map_err(|e| GoalError::ParseError {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let goal = if goal.is_rendered() {
            goal
        } else {
            goal.rendered(templates).map_err(|e| GoalError::ParseError {
                line: idx + 1,
                reason: e.to_string(),
            })?
        };
        goals.push(goal);
    }
    Ok(goals)
}

const AUTOMOTIVE_SUITE: &str = include_str!("../data/automotive_goals.jsonl");

/// The bundled eight-goal automotive service suite (3 book, 2 cancel,
/// 3 reschedule), rendered with the default templates.
pub fn automotive_suite() -> Vec<UserGoal> {
    parse_goal_suite(AUTOMOTIVE_SUITE, &GoalTemplates::default()).expect("bundled automotive suite is valid")
}
