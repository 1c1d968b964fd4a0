//! Human annotation of simulated dialogues: the six-category error
//! taxonomy, majority voting, prevalence and per-category Fleiss' kappa.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("records belong to different dialogues ({0} and {1})")]
    MixedDialogueIds(String, String),
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),
    #[error("all ratings for {0} are identical; kappa is undefined")]
    DegenerateDistribution(ErrorCategory),
    #[error("record for {dialogue_id}/{annotator_id} lacks category {category}")]
    MissingCategory {
        dialogue_id: String,
        annotator_id: String,
        category: ErrorCategory,
    },
    #[error("annotation parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AnnotationError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnnotationError::MixedDialogueIds(..) => "MixedDialogueIds",
            AnnotationError::EmptyInput => "EmptyInput",
            AnnotationError::UnbalancedDesign(_) => "UnbalancedDesign",
            AnnotationError::DegenerateDistribution(_) => "DegenerateDistribution",
            AnnotationError::MissingCategory { .. } => "MissingCategory",
            AnnotationError::ParseError { .. } => "ParseError",
            AnnotationError::Io(_) => "IoError",
        }
    }
}

/// Simulator failures (hallucination, looping simulator, incomplete goal)
/// and TOD system failures (looping system, NLU misclassification, forced
/// end).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Hallucination,
    LoopingSimulator,
    IncompleteGoal,
    LoopingSystem,
    NluMisclassification,
    ForcedEnd,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::Hallucination,
        ErrorCategory::LoopingSimulator,
        ErrorCategory::IncompleteGoal,
        ErrorCategory::LoopingSystem,
        ErrorCategory::NluMisclassification,
        ErrorCategory::ForcedEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Hallucination => "hallucination",
            ErrorCategory::LoopingSimulator => "looping_simulator",
            ErrorCategory::IncompleteGoal => "incomplete_goal",
            ErrorCategory::LoopingSystem => "looping_system",
            ErrorCategory::NluMisclassification => "nlu_misclassification",
            ErrorCategory::ForcedEnd => "forced_end",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Hallucination => "Hallucination",
            ErrorCategory::LoopingSimulator => "Looping simulator",
            ErrorCategory::IncompleteGoal => "Incomplete goal",
            ErrorCategory::LoopingSystem => "Looping system",
            ErrorCategory::NluMisclassification => "NLU misclassification",
            ErrorCategory::ForcedEnd => "Forced end",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}

pub type Labels = BTreeMap<ErrorCategory, bool>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub dialogue_id: String,
    pub annotator_id: String,
    labels: Labels,
}

impl AnnotationRecord {
    pub fn new(
        dialogue_id: impl Into<String>,
        annotator_id: impl Into<String>,
        labels: Labels,
    ) -> Result<Self, AnnotationError> {
        let record = AnnotationRecord {
            dialogue_id: dialogue_id.into(),
            annotator_id: annotator_id.into(),
            labels,
        };
        if let Some(&category) = ErrorCategory::ALL.iter().find(|c| !record.labels.contains_key(c)) {
            return Err(AnnotationError::MissingCategory {
                dialogue_id: record.dialogue_id,
                annotator_id: record.annotator_id,
                category,
            });
        }
        Ok(record)
    }

    /// Record with exactly the given categories flagged.
    pub fn flagged(dialogue_id: &str, annotator_id: &str, flagged: &[ErrorCategory]) -> Self {
        let labels = ErrorCategory::ALL.iter().map(|&c| (c, flagged.contains(&c))).collect();
        AnnotationRecord {
            dialogue_id: dialogue_id.to_string(),
            annotator_id: annotator_id.to_string(),
            labels,
        }
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn flag(&self, category: ErrorCategory) -> bool {
        self.labels.get(&category).copied().unwrap_or(false)
    }
}

/// Reads the annotation CSV: `dialogue_id,annotator_id` then one 0/1 column
/// per category, in any order.
pub fn read_annotations(reader: impl Read) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, reason: String| AnnotationError::ParseError { line, reason };
    let headers = csv.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let dialogue_col = column("dialogue_id").ok_or_else(|| parse_err(1, "missing dialogue_id column".into()))?;
    let annotator_col = column("annotator_id").ok_or_else(|| parse_err(1, "missing annotator_id column".into()))?;
    let category_cols: Vec<(ErrorCategory, usize)> = ErrorCategory::ALL
        .iter()
        .map(|&c| {
            column(c.as_str())
                .map(|i| (c, i))
                .ok_or_else(|| parse_err(1, format!("missing {c} column")))
        })
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    for (idx, row) in csv.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |i: usize| row.get(i).ok_or_else(|| parse_err(line, format!("missing field {i}")));
        let mut labels = Labels::new();
        for &(category, col) in &category_cols {
            let flag = match field(col)? {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(line, format!("{category} must be 0 or 1, got `{other}`"))),
            };
            labels.insert(category, flag);
        }
        records.push(AnnotationRecord::new(
            field(dialogue_col)?,
            field(annotator_col)?,
            labels,
        )?);
    }
    Ok(records)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    read_annotations(std::fs::File::open(path)?)
}

/// A category is flagged iff strictly more than half of the annotators
/// flagged it, so even splits resolve to "not flagged".
pub fn majority_vote(records: &[AnnotationRecord]) -> Result<Labels, AnnotationError> {
    let first = records.first().ok_or(AnnotationError::EmptyInput)?;
    if let Some(other) = records.iter().find(|r| r.dialogue_id != first.dialogue_id) {
        return Err(AnnotationError::MixedDialogueIds(
            first.dialogue_id.clone(),
            other.dialogue_id.clone(),
        ));
    }
    Ok(ErrorCategory::ALL
        .iter()
        .map(|&c| {
            let votes = records.iter().filter(|r| r.flag(c)).count();
            (c, 2 * votes > records.len())
        })
        .collect())
}

/// Groups records by dialogue (sorted by id) and votes each group.
pub fn vote_all(records: &[AnnotationRecord]) -> Result<BTreeMap<String, Labels>, AnnotationError> {
    let mut groups: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.dialogue_id).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(id, rs)| Ok((id.to_string(), majority_vote(&rs)?)))
        .collect()
}

/// Share of dialogues flagged per category, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub dialogues: usize,
    pub percent: BTreeMap<ErrorCategory, f64>,
}

impl Prevalence {
    /// Whole-percent values as printed in reports.
    pub fn rounded(&self) -> BTreeMap<ErrorCategory, u32> {
        self.percent.iter().map(|(&c, &p)| (c, p.round() as u32)).collect()
    }
}

pub fn prevalence<'a>(voted: impl IntoIterator<Item = &'a Labels>) -> Result<Prevalence, AnnotationError> {
    let voted: Vec<&Labels> = voted.into_iter().collect();
    if voted.is_empty() {
        return Err(AnnotationError::EmptyInput);
    }
    let n = voted.len() as f64;
    let percent = ErrorCategory::ALL
        .iter()
        .map(|&c| {
            let flagged = voted.iter().filter(|l| l.get(&c).copied().unwrap_or(false)).count();
            (c, 100.0 * flagged as f64 / n)
        })
        .collect();
    Ok(Prevalence {
        dialogues: voted.len(),
        percent,
    })
}

/// Binary Fleiss' kappa for one category: `(P - Pe) / (1 - Pe)` over the
/// flag / no-flag ratings of every dialogue.
pub fn fleiss_kappa(records: &[AnnotationRecord], category: ErrorCategory) -> Result<f64, AnnotationError> {
    let mut items: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let entry = items.entry(&r.dialogue_id).or_default();
        entry.0 += r.flag(category) as usize;
        entry.1 += 1;
    }
    if items.len() < 2 {
        return Err(AnnotationError::UnbalancedDesign(format!(
            "{} rated dialogue(s), at least 2 required",
            items.len()
        )));
    }
    let raters = items.values().next().map(|&(_, n)| n).unwrap_or(0);
    if raters < 2 {
        return Err(AnnotationError::UnbalancedDesign(
            "at least 2 annotators per dialogue required".into(),
        ));
    }
    if let Some((id, (_, n))) = items.iter().find(|(_, &(_, n))| n != raters) {
        return Err(AnnotationError::UnbalancedDesign(format!(
            "dialogue {id} has {n} ratings, expected {raters}"
        )));
    }
    let n = raters as f64;
    let items_count = items.len() as f64;
    let mut agreement = 0.0;
    let mut flagged_total = 0.0;
    for &(flagged, _) in items.values() {
        let yes = flagged as f64;
        let no = n - yes;
        agreement += (yes * yes + no * no - n) / (n * (n - 1.0));
        flagged_total += yes;
    }
    let p_bar = agreement / items_count;
    let p_yes = flagged_total / (items_count * n);
    let p_e = p_yes * p_yes + (1.0 - p_yes) * (1.0 - p_yes);
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(AnnotationError::DegenerateDistribution(category));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Kappa per category; categories with a degenerate distribution map to
/// `None`.
pub fn kappa_table(records: &[AnnotationRecord]) -> Result<BTreeMap<ErrorCategory, Option<f64>>, AnnotationError> {
    ErrorCategory::ALL
        .iter()
        .map(|&c| match fleiss_kappa(records, c) {
            Ok(k) => Ok((c, Some(k))),
            Err(AnnotationError::DegenerateDistribution(_)) => Ok((c, None)),
            Err(e) => Err(e),
        })
        .collect()
}
