use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use todsim::agents::{ChatClient, LlmUserAgent, TodSchema};
use todsim::annotation::{kappa_table, load_annotations, prevalence, vote_all, ErrorCategory};
use todsim::dialogue::{corpus_stats_with, read_transcripts, StatsOptions};
use todsim::goal::{automotive_suite, load_goal_suite};
use todsim::metrics::tokenize;
use todsim::pipeline::{
    decompose_corpus, export_records, filter_by_subtask, join_corpus, split_corpus, write_manifest, FinetuneParams,
    SplitSpec,
};
use todsim::report::{evaluate_campaign, ExtractorChoice};
use todsim::{
    render_report, run_campaign, CampaignConfig, GenerationParams, MockTod, PromptTemplate, ReportFormat, RunReport,
    ScriptedAgent, ShotSet, Subtask, TodSystem, UserAgent, UserGoal,
};

mod config;

use config::{AgentConfig, SimulateConfig};

#[derive(Parser)]
#[command(
    name = "todsim",
    version,
    about = "User simulation and evaluation for task-oriented dialogue systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct SeedArg {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation campaign against the mock TOD system.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Score transcripts for goal fulfillment and lexical diversity.
    Evaluate {
        #[arg(long)]
        transcripts: PathBuf,
        /// Goal suite; the bundled automotive suite when absent.
        #[arg(long)]
        goals: Option<PathBuf>,
        #[arg(long, default_value = "md")]
        report: ReportFormat,
        #[arg(long, default_value = "auto")]
        extractor: ExtractorChoice,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "simulator")]
        label: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Decompose dialogues into prompt/completion records for fine-tuning.
    ExportFinetune {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        goals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subtasks to keep, e.g. book,cancel.
        #[arg(long, value_delimiter = ',')]
        keep_subtasks: Option<Vec<Subtask>>,
        /// Comma-separated train,test,val dialogue counts.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        split: Option<Vec<usize>>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Per-category Fleiss' kappa and majority-vote prevalence.
    Kappa {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Average turns and words per utterance of a transcript corpus.
    Stats {
        #[arg(long)]
        transcripts: PathBuf,
        /// Count a trailing unanswered system utterance as half a turn.
        #[arg(long)]
        count_unanswered_half: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Re-render a JSON run report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn load_goals(path: Option<&Path>) -> Result<Vec<UserGoal>> {
    match path {
        Some(p) => Ok(load_goal_suite(p)?),
        None => Ok(automotive_suite()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let raw = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let mut config: SimulateConfig = serde_json::from_str(&raw).context("parsing simulate config")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let goals = load_goals(config.goals.as_deref())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &serde_json::to_value(&config)?)?;

    let params = match &config.agent {
        AgentConfig::Perfect => GenerationParams::new("scripted-perfect").with_temperature(0.0),
        AgentConfig::Llm { params, .. } => params.clone(),
    };
    let campaign = CampaignConfig {
        dialogues_per_goal: config.dialogues_per_goal,
        max_turns: config.max_turns,
        params,
        base_seed: config.seed,
        concurrency: config.concurrency,
        terminate_on_thanks_intent: config.terminate_on_thanks_intent,
        ..CampaignConfig::new(goals.clone(), out)
    };
    let failure = config.failure.clone();
    failure.validate()?;
    let tod_factory = |goal: &UserGoal, seed: u64| -> Result<Box<dyn TodSystem>, todsim::AgentError> {
        let schema = TodSchema::from_goal(goal).with_ontology(&goals);
        let failure = todsim::agents::FailureInjectionConfig {
            rng_seed: failure.rng_seed ^ seed,
            ..failure.clone()
        };
        Ok(Box::new(MockTod::new(schema, failure)?))
    };

    let summary = match &config.agent {
        AgentConfig::Perfect => run_campaign(
            &campaign,
            |goal: &UserGoal, _| Ok(Box::new(ScriptedAgent::perfect(goal)) as Box<dyn UserAgent>),
            tod_factory,
        )?,
        AgentConfig::Llm {
            endpoint,
            params,
            template,
            shots,
        } => {
            let client = Arc::new(ChatClient::new(endpoint.clone())?);
            let template = match template {
                Some(p) => PromptTemplate::from_path(p)?,
                None => PromptTemplate::default(),
            };
            let shots = Arc::new(match shots {
                Some(p) => ShotSet::from_path(p)?,
                None => ShotSet::default(),
            });
            run_campaign(
                &campaign,
                |_: &UserGoal, _| {
                    let agent = LlmUserAgent::new(
                        Arc::clone(&client),
                        template.clone(),
                        Arc::clone(&shots),
                        params.clone(),
                    );
                    Ok(Box::new(agent) as Box<dyn UserAgent>)
                },
                tod_factory,
            )?
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    transcripts: &Path,
    goals: Option<&Path>,
    format: ReportFormat,
    extractor: ExtractorChoice,
    annotations: Option<&Path>,
    label: &str,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let goal_suite = load_goals(goals)?;
    let corpus = read_transcripts(transcripts).with_context(|| format!("reading {}", transcripts.display()))?;
    let records = annotations.map(load_annotations).transpose()?;
    let (mut report, _) = evaluate_campaign(label, &corpus, &goal_suite, extractor, records.as_deref())?;
    report.provenance.transcripts = Some(transcripts.display().to_string());
    let manifest = transcripts.with_file_name(todsim::engine::MANIFEST_FILE);
    if manifest.exists() {
        report.provenance.manifest = Some(manifest.display().to_string());
    }
    if let Some(path) = out {
        let echo = json!({
            "transcripts": transcripts, "goals": goals, "report": format, "extractor": extractor,
            "annotations": annotations, "label": label, "seed": seed,
        });
        write_json(&sibling(path, ".config.json"), &echo)?;
    }
    emit(out, &render_report(&report, format))
}

fn export_finetune(
    corpus_path: &Path,
    goals: Option<&Path>,
    out: &Path,
    keep: Option<&[Subtask]>,
    split: Option<&[usize]>,
    template: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let goal_suite = load_goals(goals)?;
    let template = match template {
        Some(p) => PromptTemplate::from_path(p)?,
        None => PromptTemplate::default(),
    };
    let mut corpus = join_corpus(
        read_transcripts(corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?,
        &goal_suite,
    )?;
    if let Some(keep) = keep {
        let keep: BTreeSet<Subtask> = keep.iter().copied().collect();
        corpus = filter_by_subtask(&corpus, &keep)?;
    }
    let echo = json!({
        "corpus": corpus_path, "goals": goals, "out": out, "keep_subtasks": keep,
        "split": split, "template": template, "seed": seed,
    });
    write_json(&sibling(out, ".config.json"), &echo)?;

    let params = FinetuneParams::default();
    let mut outputs = Vec::new();
    match split {
        None => outputs.push((out.to_path_buf(), corpus)),
        Some(&[train, test, val]) => {
            let spec = SplitSpec {
                train_size: train,
                test_size: test,
                val_size: val,
                seed: seed.unwrap_or(0),
            };
            let (a, b, c) = split_corpus(&corpus, &spec)?;
            for (name, part) in [("train", a), ("test", b), ("val", c)] {
                outputs.push((sibling(out, &format!(".{name}.jsonl")), part));
            }
        }
        Some(other) => bail!(InvalidArgument(format!(
            "--split takes three counts, got {}",
            other.len()
        ))),
    }
    let mut manifests = Vec::new();
    for (path, part) in outputs {
        let records = decompose_corpus(&part, &template)?;
        export_records(&records, &path)?;
        let manifest = write_manifest(&params, &template, &path, sibling(&path, ".manifest.json"))?;
        manifests.push(manifest);
    }
    println!("{}", serde_json::to_string_pretty(&manifests)?);
    Ok(())
}

fn kappa(annotations: &Path, format: ReportFormat) -> Result<()> {
    let records = load_annotations(annotations).with_context(|| format!("reading {}", annotations.display()))?;
    let kappas = kappa_table(&records)?;
    let voted = vote_all(&records)?;
    let prev = prevalence(voted.values())?;
    let rounded = prev.rounded();
    match format {
        ReportFormat::Json => {
            let rows: Vec<_> = ErrorCategory::ALL
                .iter()
                .map(|c| json!({ "category": c, "kappa": kappas[c], "prevalence": rounded[c] }))
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "dialogues": prev.dialogues, "categories": rows }))?
            );
        }
        ReportFormat::Markdown => {
            println!("| Pattern | Fleiss' kappa | Prevalence |\n|---|---|---|");
            for c in ErrorCategory::ALL {
                let k = kappas[&c].map_or("-".to_string(), |k| format!("{k:.2}"));
                println!("| {} | {k} | {}% |", c.label(), rounded[&c]);
            }
        }
    }
    Ok(())
}

fn stats(transcripts: &Path, count_unanswered_half: bool) -> Result<()> {
    let corpus = read_transcripts(transcripts).with_context(|| format!("reading {}", transcripts.display()))?;
    let stats = corpus_stats_with(&corpus, tokenize, StatsOptions { count_unanswered_half })?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn report(input: &Path, format: ReportFormat) -> Result<()> {
    let raw = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    print!("{}", render_report(&RunReport::from_json(&raw)?, format));
    Ok(())
}

/// Bad flag combination not caught by the argument parser.
#[derive(Debug)]
struct InvalidArgument(String);

impl std::fmt::Display for InvalidArgument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidArgument {}

/// Structured name of the first known error in the chain.
fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        macro_rules! kinds {
            ($($t:ty),*) => {
                $(if let Some(err) = cause.downcast_ref::<$t>() {
                    return err.kind();
                })*
            };
        }
        kinds!(
            todsim::GoalError,
            todsim::DialogueError,
            todsim::PromptError,
            todsim::AgentError,
            todsim::EngineError,
            todsim::MetricError,
            todsim::AnnotationError,
            todsim::PipelineError,
            todsim::ReportError
        );
        if cause.is::<InvalidArgument>() {
            return "InvalidArgument";
        }
        if cause.is::<serde_json::Error>() {
            return "ConfigError";
        }
        if cause.is::<std::io::Error>() {
            return "IoError";
        }
    }
    "Error"
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed.seed),
        Command::Evaluate {
            transcripts,
            goals,
            report,
            extractor,
            annotations,
            label,
            out,
            seed,
        } => evaluate(
            &transcripts,
            goals.as_deref(),
            report,
            extractor,
            annotations.as_deref(),
            &label,
            out.as_deref(),
            seed.seed,
        ),
        Command::ExportFinetune {
            corpus,
            goals,
            out,
            keep_subtasks,
            split,
            template,
            seed,
        } => export_finetune(
            &corpus,
            goals.as_deref(),
            &out,
            keep_subtasks.as_deref(),
            split.as_deref(),
            template.as_deref(),
            seed.seed,
        ),
        Command::Kappa {
            annotations, format, ..
        } => kappa(&annotations, format),
        Command::Stats {
            transcripts,
            count_unanswered_half,
            ..
        } => stats(&transcripts, count_unanswered_half),
        Command::Report { input, format, .. } => report(&input, format),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
