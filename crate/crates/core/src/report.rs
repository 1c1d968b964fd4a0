//! Campaign evaluation and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{prevalence, vote_all, AnnotationError, AnnotationRecord, ErrorCategory, Prevalence};
use crate::dialogue::DialogueTranscript;
use crate::goal::UserGoal;
use crate::metrics::{
    aggregate_campaign, diversity_report, evaluate_fulfillment, ActsExtractor, CampaignTable, DiversityReport,
    Extractor, FulfillmentReport, LexicalExtractor, MetricError,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("transcript {dialogue_id} refers to unknown goal {goal_id}")]
    UnknownGoal { dialogue_id: String, goal_id: String },
    #[error("unsupported report schema version {0}")]
    UnsupportedSchema(u32),
    #[error("report parse error: {0}")]
    ParseError(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

impl ReportError {
    pub fn kind(&self) -> &'static str {
        match self {
            ReportError::UnknownGoal { .. } => "UnknownGoal",
            ReportError::UnsupportedSchema(_) => "UnsupportedSchema",
            ReportError::ParseError(_) => "ParseError",
            ReportError::Metric(e) => e.kind(),
            ReportError::Annotation(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorChoice {
    /// Recorded dialogue acts.
    Acts,
    /// Goal-suite values found in the user text.
    Lexical,
    /// Acts when the transcript has any, lexical otherwise.
    Auto,
}

impl std::str::FromStr for ExtractorChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acts" => Ok(ExtractorChoice::Acts),
            "lexical" => Ok(ExtractorChoice::Lexical),
            "auto" => Ok(ExtractorChoice::Auto),
            other => Err(format!("unknown extractor `{other}` (acts, lexical, auto)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<String>,
    pub extractor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub label: String,
    pub campaign: CampaignTable,
    pub diversity: DiversityReport,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Prevalence>,
}

impl RunReport {
    pub fn from_json(raw: &str) -> Result<Self, ReportError> {
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| ReportError::ParseError(e.to_string()))?;
        let version = value["schema_version"].as_u64().unwrap_or(0) as u32;
        if version != REPORT_SCHEMA_VERSION {
            return Err(ReportError::UnsupportedSchema(version));
        }
        serde_json::from_value(value).map_err(|e| ReportError::ParseError(e.to_string()))
    }
}

/// Scores every transcript against its goal and builds the report. User
/// utterances enter the diversity metrics in transcript order.
pub fn evaluate_campaign(
    label: &str,
    transcripts: &[DialogueTranscript],
    goals: &[UserGoal],
    extractor: ExtractorChoice,
    annotations: Option<&[AnnotationRecord]>,
) -> Result<(RunReport, Vec<FulfillmentReport>), ReportError> {
    let by_id: BTreeMap<&str, &UserGoal> = goals.iter().map(|g| (g.id(), g)).collect();
    let lexical = LexicalExtractor::from_goals(goals);
    let mut reports = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let goal = by_id.get(t.goal_id.as_str()).ok_or_else(|| ReportError::UnknownGoal {
            dialogue_id: t.dialogue_id.clone(),
            goal_id: t.goal_id.clone(),
        })?;
        let use_acts = match extractor {
            ExtractorChoice::Acts => true,
            ExtractorChoice::Lexical => false,
            ExtractorChoice::Auto => t.user_utterances().any(|u| u.acts.is_some()),
        };
        let ex: &dyn Extractor = if use_acts { &ActsExtractor } else { &lexical };
        reports.push(evaluate_fulfillment(t, goal, ex)?);
    }
    let campaign = aggregate_campaign(&reports)?;
    let utterances: Vec<&str> = transcripts
        .iter()
        .flat_map(|t| t.user_utterances().map(|u| u.text.as_str()))
        .collect();
    let diversity = diversity_report(&utterances)?;
    let taxonomy = match annotations {
        Some(records) if !records.is_empty() => {
            let voted = vote_all(records)?;
            Some(prevalence(voted.values())?)
        }
        _ => None,
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        label: label.to_string(),
        campaign,
        diversity,
        provenance: Provenance {
            manifest: None,
            transcripts: None,
            extractor: serde_json::to_value(extractor)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        },
        taxonomy,
    };
    Ok((report, reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (json, md)")),
        }
    }
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

fn percent(v: f64) -> String {
    format!("{}%", v.round() as i64)
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
            out
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(r: &RunReport) -> String {
    let c = &r.campaign;
    let d = &r.diversity;
    let mut out = String::new();
    let _ = writeln!(out, "# Simulation report: {}\n", r.label);
    let _ = writeln!(
        out,
        "| System | Compl Rate | Succ Rate | Book Rate | P | R | F1 | UttLen | Unig | MTLD |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
        r.label,
        two(c.completion_rate),
        two(c.success_rate),
        c.book_rate.map_or("-".into(), two),
        two(c.precision),
        two(c.recall),
        two(c.f1),
        two(d.avg_utt_len),
        d.unigram_count,
        d.mtld.map_or("-".into(), two),
    );
    let _ = writeln!(
        out,
        "\n{} dialogues. P, R and F1 are per-dialogue means; MTLD runs over the concatenated user utterances.",
        c.dialogues
    );
    if !c.group_accuracy.is_empty() {
        let _ = writeln!(out, "\n## Slot group accuracy\n\n| Group | Accuracy |\n|---|---|");
        for (group, acc) in &c.group_accuracy {
            let _ = writeln!(out, "| {group} | {} |", percent(*acc));
        }
    }
    if let Some(tax) = &r.taxonomy {
        let _ = writeln!(
            out,
            "\n## Error taxonomy\n\n{} annotated dialogues, majority vote.\n\n| Pattern | Dialogues |\n|---|---|",
            tax.dialogues
        );
        for category in ErrorCategory::ALL {
            if let Some(p) = tax.percent.get(&category) {
                let _ = writeln!(out, "| {} | {} |", category.label(), percent(*p));
            }
        }
    }
    let p = &r.provenance;
    let _ = writeln!(out, "\nEntities read with the {} extractor.", p.extractor);
    if let Some(m) = &p.manifest {
        let _ = writeln!(out, "Campaign manifest: {m}");
    }
    if let Some(t) = &p.transcripts {
        let _ = writeln!(out, "Transcripts: {t}");
    }
    out
}
