//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any fails.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todsim::agents::{FailureInjectionConfig, TodSchema};
use todsim::annotation::{fleiss_kappa, load_annotations, AnnotationError};
use todsim::dialogue::Termination;
use todsim::engine::TRANSCRIPTS_FILE;
use todsim::goal::{automotive_suite, load_goal_suite};
use todsim::metrics::{bleu, meteor_lite, mtld, rouge_l, MTLD_THRESHOLD};
use todsim::pipeline::{
    decompose_corpus, decompose_dialogue, export_records, filter_by_subtask, import_records, join_corpus, split_corpus,
    write_manifest, FinetuneParams, SplitSpec,
};
use todsim::prompt::build_prompt;
use todsim::report::{evaluate_campaign, ExtractorChoice};
use todsim::{
    render_report, run_campaign, run_dialogue, AnnotationRecord, CampaignConfig, DialogueTranscript, ErrorCategory,
    MockTod, PromptTemplate, ReportFormat, ScriptedAgent, ShotSet, StopPolicy, Subtask, TodSystem, UserAgent, UserGoal,
};

type Check = Result<String, String>;
type NamedCheck = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with the golden file, rewriting it when
/// `TODSIM_UPDATE_GOLDEN` is set.
fn matches_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden(name);
    if std::env::var_os("TODSIM_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure!(want == actual, "{name} differs from golden output");
    Ok(())
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn mock_campaign(
    goals: Vec<UserGoal>,
    per_goal: usize,
    dir: &Path,
    nlu_error_rate: f64,
    concurrency: usize,
) -> Result<(), String> {
    let mut config = CampaignConfig::new(goals.clone(), dir);
    config.dialogues_per_goal = per_goal;
    config.base_seed = 7;
    config.concurrency = concurrency;
    run_campaign(
        &config,
        |goal: &UserGoal, _| Ok(Box::new(ScriptedAgent::perfect(goal)) as Box<dyn UserAgent>),
        |goal: &UserGoal, seed| {
            let schema = TodSchema::from_goal(goal).with_ontology(&goals);
            let failure = FailureInjectionConfig {
                nlu_error_rate,
                ..FailureInjectionConfig::none(seed)
            };
            Ok(Box::new(MockTod::new(schema, failure)?) as Box<dyn TodSystem>)
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<DialogueTranscript>, String> {
    todsim::dialogue::read_transcripts(path).map_err(|e| e.to_string())
}

/// Direct MTLD: every factor test recounts its segment from scratch.
fn reference_mtld(tokens: &[String]) -> Option<f64> {
    fn pass(tokens: &[&str]) -> f64 {
        let mut factors = 0.0;
        let mut start = 0;
        for end in 1..=tokens.len() {
            let seg = &tokens[start..end];
            let types = seg.iter().collect::<HashSet<_>>().len() as f64;
            if types / seg.len() as f64 <= MTLD_THRESHOLD {
                factors += 1.0;
                start = end;
            }
        }
        if start < tokens.len() {
            let seg = &tokens[start..];
            let ttr = seg.iter().collect::<HashSet<_>>().len() as f64 / seg.len() as f64;
            factors += (1.0 - ttr) / (1.0 - MTLD_THRESHOLD);
        }
        factors
    }
    if tokens.len() < 10 {
        return None;
    }
    let fwd: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let bwd: Vec<&str> = fwd.iter().rev().copied().collect();
    let (f, b) = (pass(&fwd), pass(&bwd));
    if f == 0.0 || b == 0.0 {
        return None;
    }
    let n = tokens.len() as f64;
    Some((n / f + n / b) / 2.0)
}

fn mtld_matches_reference() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let vocab: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    for case in 0..100 {
        let len = rng.gen_range(10..=500);
        let tokens: Vec<String> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
        match (mtld(&tokens, MTLD_THRESHOLD).ok(), reference_mtld(&tokens)) {
            (Some(got), Some(want)) => ensure!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}"),
            (None, None) => {}
            (got, want) => return Err(format!("case {case}: {got:?} vs {want:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    let repeated = vec!["a"; 10];
    let v = mtld(&repeated, MTLD_THRESHOLD).map_err(|e| e.to_string())?;
    ensure!(v == 2.0, "ten identical tokens gave {v}");
    Ok(format!("100 sequences agree to 1e-9 in {elapsed:.2?}"))
}

fn nlg_bounds() -> Check {
    let t = |s: &'static str| s.split_whitespace().collect::<Vec<_>>();
    let same = t("book a table for two");
    let other = t("cancel my car service appointment");
    for (name, f) in [
        (
            "bleu",
            (|a: &[&str], b: &[&str]| bleu(a, b, 4)) as fn(&[&str], &[&str]) -> f64,
        ),
        ("rouge_l", |a, b| rouge_l(a, b)),
        ("meteor", |a, b| meteor_lite(a, b)),
    ] {
        ensure!((f(&same, &same) - 1.0).abs() < 1e-12, "{name} identical != 1");
        ensure!(f(&same, &other) == 0.0, "{name} disjoint != 0");
    }
    let b = bleu(&t("the cat sat"), &t("the cat sat down"), 4);
    ensure!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12, "bleu fixture {b}");
    let r = rouge_l(&t("a b c d"), &t("a c d"));
    ensure!((r - 6.0 / 7.0).abs() < 1e-12, "rouge fixture {r}");
    let m = meteor_lite(&t("the cat sat"), &t("cat the sat"));
    ensure!((m - 0.5).abs() < 1e-12, "meteor fixture {m}");
    Ok("identity 1, disjoint 0, fixtures exact".into())
}

fn kappa_cases() -> Check {
    let h = ErrorCategory::Hallucination;
    let design = |flags: &[usize]| -> Vec<AnnotationRecord> {
        flags
            .iter()
            .enumerate()
            .flat_map(|(d, &k)| {
                (0..3).map(move |a| {
                    let on: &[ErrorCategory] = if a < k { &[ErrorCategory::Hallucination] } else { &[] };
                    AnnotationRecord::flagged(&format!("d{d}"), &format!("a{a}"), on)
                })
            })
            .collect()
    };
    let k = fleiss_kappa(&design(&[3, 0, 2, 1]), h).map_err(|e| e.to_string())?;
    ensure!((k - 1.0 / 3.0).abs() < 1e-12, "oracle gave {k}");
    let unanimous = fleiss_kappa(&design(&[3, 0, 3, 0]), h).map_err(|e| e.to_string())?;
    ensure!((unanimous - 1.0).abs() < 1e-12, "unanimous gave {unanimous}");
    match fleiss_kappa(&design(&[0, 0, 0]), h) {
        Err(AnnotationError::DegenerateDistribution(_)) => {}
        other => return Err(format!("all-identical gave {other:?}")),
    }
    Ok(format!("oracle {k:.4}, unanimous 1, constant degenerate"))
}

fn perfect_agent_campaign() -> Check {
    let start = Instant::now();
    let goals = automotive_suite();
    let (a, b, noisy) = (tempdir(), tempdir(), tempdir());
    mock_campaign(goals.clone(), 10, a.path(), 0.0, 1)?;
    mock_campaign(goals.clone(), 10, b.path(), 0.0, 1)?;
    mock_campaign(goals.clone(), 10, noisy.path(), 1.0, 1)?;
    let bytes = |d: &tempfile::TempDir| std::fs::read(d.path().join(TRANSCRIPTS_FILE)).unwrap_or_default();
    ensure!(
        !bytes(&a).is_empty() && bytes(&a) == bytes(&b),
        "transcripts differ between identical runs"
    );

    let score = |d: &tempfile::TempDir| -> Result<_, String> {
        let transcripts = read_lines(&d.path().join(TRANSCRIPTS_FILE))?;
        ensure!(transcripts.len() == 80, "{} transcripts", transcripts.len());
        let (report, _) =
            evaluate_campaign("mock", &transcripts, &goals, ExtractorChoice::Acts, None).map_err(|e| e.to_string())?;
        Ok(report.campaign)
    };
    let clean = score(&a)?;
    ensure!(clean.completion_rate == 1.0, "completion {}", clean.completion_rate);
    ensure!((clean.f1 - 1.0).abs() < 1e-12, "f1 {}", clean.f1);
    let bad = score(&noisy)?;
    ensure!(bad.success_rate == 0.0, "success under NLU errors {}", bad.success_rate);
    ensure!(
        bad.precision < clean.precision,
        "precision {} not below {}",
        bad.precision,
        clean.precision
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "completion {:.2}, F1 {:.2}; with NLU errors success {:.2}, P {:.2}; {elapsed:.2?}",
        clean.completion_rate, clean.f1, bad.success_rate, bad.precision
    ))
}

fn thanks_does_not_end_dialogue() -> Check {
    let goal = automotive_suite().remove(0);
    let mut script: Vec<String> = ScriptedAgent::perfect(&goal).script().to_vec();
    script.insert(1, "Thank you.".into());
    let mut user = ScriptedAgent::new(script);
    let mut tod =
        MockTod::new(TodSchema::from_goal(&goal), FailureInjectionConfig::none(1)).map_err(|e| e.to_string())?;
    let t = run_dialogue(&mut user, &mut tod, &goal, &StopPolicy::default(), "thanks", 1);
    let users: Vec<&str> = t.user_utterances().map(|u| u.text.as_str()).collect();
    let at = users
        .iter()
        .position(|u| *u == "Thank you.")
        .ok_or("thanks never said")?;
    let after = t.exchanges() - (at + 1);
    ensure!(after >= 1, "dialogue ended right after thanks ({:?})", t.termination());
    ensure!(t.termination() != Some(Termination::AgentEnd), "ended as agent_end");
    Ok(format!("{after} exchange(s) after thanks, ended {:?}", t.termination()))
}

fn decomposition_and_split() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let goal = automotive_suite().remove(0);
    let template = PromptTemplate::default();
    for i in 0..50 {
        let len = rng.gen_range(1..=24);
        let texts: Vec<String> = (0..len).map(|j| format!("turn {j} of dialogue {i}")).collect();
        let t = DialogueTranscript::from_texts(format!("r{i}"), goal.id(), &texts).map_err(|e| e.to_string())?;
        let records = decompose_dialogue(&goal, &t, &template).map_err(|e| e.to_string())?;
        let users = t.user_utterances().count();
        ensure!(
            records.len() == users,
            "dialogue {i}: {} records for {users} user turns",
            records.len()
        );
    }

    let ids: Vec<usize> = (0..3100).collect();
    let spec = SplitSpec {
        train_size: 2500,
        test_size: 300,
        val_size: 300,
        seed: 5,
    };
    let (train, test, val) = split_corpus(&ids, &spec).map_err(|e| e.to_string())?;
    ensure!(
        (train.len(), test.len(), val.len()) == (2500, 300, 300),
        "sizes {} {} {}",
        train.len(),
        test.len(),
        val.len()
    );
    let all: BTreeSet<usize> = train.iter().chain(&test).chain(&val).copied().collect();
    ensure!(all.len() == 3100, "splits overlap");

    let dir = tempdir();
    let corpus = join_corpus(
        todsim::dialogue::read_transcripts(fixture("corpus.jsonl")).map_err(|e| e.to_string())?,
        &load_goal_suite(fixture("goals.jsonl")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let records = decompose_corpus(&corpus, &template).map_err(|e| e.to_string())?;
    let path = dir.path().join("records.jsonl");
    export_records(&records, &path).map_err(|e| e.to_string())?;
    ensure!(
        import_records(&path).map_err(|e| e.to_string())? == records,
        "round trip changed records"
    );
    Ok(format!(
        "50 dialogues counted, split 2500/300/300 disjoint, {} records round-trip",
        records.len()
    ))
}

fn subtask_ablation() -> Check {
    let goals = automotive_suite();
    let dir = tempdir();
    mock_campaign(goals.clone(), 3, dir.path(), 0.0, 2)?;
    let corpus = join_corpus(read_lines(&dir.path().join(TRANSCRIPTS_FILE))?, &goals).map_err(|e| e.to_string())?;
    let keep = BTreeSet::from([Subtask::Book, Subtask::Cancel]);
    let kept = filter_by_subtask(&corpus, &keep).map_err(|e| e.to_string())?;
    ensure!(
        kept.iter().all(|c| c.goal.subtask() != Some(Subtask::Reschedule)),
        "reschedule dialogue survived the filter"
    );
    let dropped = corpus.len() - kept.len();
    ensure!(dropped > 0, "no reschedule dialogues in the corpus");

    let template = PromptTemplate::default();
    let params = FinetuneParams::default();
    let mut digests = Vec::new();
    for (name, items) in [("full", &corpus), ("ablated", &kept)] {
        let data = dir.path().join(format!("{name}.jsonl"));
        let records = decompose_corpus(items, &template).map_err(|e| e.to_string())?;
        export_records(&records, &data).map_err(|e| e.to_string())?;
        let manifest = write_manifest(
            &params,
            &template,
            &data,
            dir.path().join(format!("{name}.manifest.json")),
        )
        .map_err(|e| e.to_string())?;
        digests.push(manifest.dataset_digest);
    }
    ensure!(digests[0] != digests[1], "digests are equal");
    Ok(format!("{dropped} reschedule dialogues removed, digests differ"))
}

fn taxonomy_rendering() -> Check {
    let annotations = load_annotations(fixture("annotations_45.csv")).map_err(|e| e.to_string())?;
    let transcripts = todsim::dialogue::read_transcripts(fixture("corpus.jsonl")).map_err(|e| e.to_string())?;
    let goals = load_goal_suite(fixture("goals.jsonl")).map_err(|e| e.to_string())?;
    let (report, _) = evaluate_campaign(
        "fixture",
        &transcripts,
        &goals,
        ExtractorChoice::Lexical,
        Some(&annotations),
    )
    .map_err(|e| e.to_string())?;
    let md = render_report(&report, ReportFormat::Markdown);
    ensure!(md.contains("45 annotated dialogues"), "taxonomy block missing");
    ensure!(
        md.contains("| Hallucination | 36% |"),
        "hallucination row missing:\n{md}"
    );
    matches_golden("report_fixture.md", &md)?;
    Ok("| Hallucination | 36% | rendered".into())
}

fn large_concurrent_campaign() -> Check {
    let start = Instant::now();
    let dir = tempdir();
    mock_campaign(automotive_suite(), 100, dir.path(), 0.0, 8)?;
    let raw = std::fs::read_to_string(dir.path().join(TRANSCRIPTS_FILE)).map_err(|e| e.to_string())?;
    let lines = raw.lines().count();
    ensure!(lines == 800, "{lines} transcript lines");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!("800 transcripts with 8 workers in {elapsed:.2?}"))
}

fn golden_prompts() -> Check {
    let shots = ShotSet::from_path(fixture("shots.jsonl")).map_err(|e| e.to_string())?;
    let goals = load_goal_suite(fixture("goals.jsonl")).map_err(|e| e.to_string())?;
    let goal = goals
        .iter()
        .find(|g| g.id() == "mwoz-h1")
        .ok_or("fixture goal missing")?;
    let corpus = todsim::dialogue::read_transcripts(fixture("corpus.jsonl")).map_err(|e| e.to_string())?;
    let dialogue = corpus
        .iter()
        .find(|d| d.goal_id == "mwoz-h1")
        .ok_or("fixture dialogue missing")?;
    let history = dialogue.history_through_system(3);
    for (shots_used, name) in [(0, "prompt_zero_shot.txt"), (2, "prompt_two_shot.txt")] {
        let template = PromptTemplate::default().with_shots(shots_used);
        let prompt = build_prompt(&template, goal, &history, &shots).map_err(|e| e.to_string())?;
        let turns = prompt
            .lines()
            .filter(|l| l.starts_with(&template.speaker_labels.0) || l.starts_with(&template.speaker_labels.1))
            .filter(|l| !l.ends_with(&template.user_cue()));
        for line in turns {
            ensure!(
                line.ends_with(&template.separator),
                "{name}: turn without separator: {line}"
            );
        }
        matches_golden(name, &prompt)?;
    }
    Ok("zero-shot and two-shot prompts match golden files".into())
}

fn main() {
    let checks: [NamedCheck; 10] = [
        ("mtld matches a direct reference", mtld_matches_reference),
        ("bleu, rouge-l and meteor bounds and fixtures", nlg_bounds),
        ("fleiss kappa oracle and edge cases", kappa_cases),
        ("perfect agent against the mock system", perfect_agent_campaign),
        (
            "thanks mid-dialogue does not stop the run",
            thanks_does_not_end_dialogue,
        ),
        ("decomposition counts, split and round trip", decomposition_and_split),
        ("subtask ablation changes the dataset", subtask_ablation),
        ("error taxonomy prevalence rendering", taxonomy_rendering),
        ("800-dialogue campaign with 8 workers", large_concurrent_campaign),
        ("prompt layout matches golden files", golden_prompts),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
