use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn todsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_todsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn simulate(dir: &Path, name: &str, extra: &str) {
    fs::write(
        dir.join("sim.json"),
        format!(r#"{{"dialogues_per_goal": 2, "concurrency": 3{extra}}}"#),
    )
    .unwrap();
    ok(&todsim(
        &["simulate", "--config", "sim.json", "--out", name, "--seed", "11"],
        dir,
    ));
}

#[test]
fn simulate_is_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "a", "");
    simulate(dir.path(), "b", "");
    let a = fs::read(dir.path().join("a/transcripts.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/transcripts.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 16);
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 11);
    assert!(dir.path().join("a/campaign.json").exists());
}

#[test]
fn evaluate_and_rerender() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "run", "");
    let md = ok(&todsim(
        &["evaluate", "--transcripts", "run/transcripts.jsonl"],
        dir.path(),
    ));
    assert!(md.contains("| simulator | 1.00 | 1.00 | - | 1.00 | 1.00 | 1.00 |"));
    ok(&todsim(
        &[
            "evaluate",
            "--transcripts",
            "run/transcripts.jsonl",
            "--report",
            "json",
            "--out",
            "report.json",
        ],
        dir.path(),
    ));
    assert!(dir.path().join("report.config.json").exists());
    let again = ok(&todsim(
        &["report", "--input", "report.json", "--format", "md"],
        dir.path(),
    ));
    assert!(again.contains("| simulator | 1.00 | 1.00 |"));
}

#[test]
fn injected_nlu_errors_lower_success() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "run", r#", "failure": {"nlu_error_rate": 1.0}"#);
    let md = ok(&todsim(
        &[
            "evaluate",
            "--transcripts",
            "run/transcripts.jsonl",
            "--extractor",
            "acts",
        ],
        dir.path(),
    ));
    assert!(md.contains("| simulator | 0.00 | 0.00 | - | 0.00 |"), "{md}");
}

#[test]
fn export_with_split_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "run", "");
    let out = ok(&todsim(
        &[
            "export-finetune",
            "--corpus",
            "run/transcripts.jsonl",
            "--out",
            "ft.jsonl",
            "--keep-subtasks",
            "book,cancel",
            "--split",
            "6,2,2",
            "--seed",
            "3",
        ],
        dir.path(),
    ));
    let manifests: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(manifests.as_array().unwrap().len(), 3);
    for part in ["train", "test", "val"] {
        assert!(dir.path().join(format!("ft.{part}.jsonl")).exists());
        assert!(dir.path().join(format!("ft.{part}.manifest.json")).exists());
    }
    let fail = todsim(
        &[
            "export-finetune",
            "--corpus",
            "run/transcripts.jsonl",
            "--out",
            "x.jsonl",
            "--split",
            "100,1,1",
        ],
        dir.path(),
    );
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).contains("error[InsufficientCorpus]"));
}

#[test]
fn kappa_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let header = "dialogue_id,annotator_id,hallucination,looping_simulator,incomplete_goal,looping_system,nlu_misclassification,forced_end";
    let mut csv = String::from(header);
    for (d, flags) in [
        ("d1", [1, 1, 1]),
        ("d2", [0, 0, 0]),
        ("d3", [1, 1, 0]),
        ("d4", [1, 0, 0]),
    ] {
        for (a, f) in flags.iter().enumerate() {
            csv.push_str(&format!("\n{d},a{a},{f},0,0,0,0,0"));
        }
    }
    fs::write(dir.path().join("ann.csv"), csv + "\n").unwrap();
    let md = ok(&todsim(&["kappa", "--annotations", "ann.csv"], dir.path()));
    assert!(md.contains("| Hallucination | 0.33 | 50% |"), "{md}");
    assert!(md.contains("| Forced end | - | 0% |"));

    simulate(dir.path(), "run", "");
    let stats: serde_json::Value = serde_json::from_str(&ok(&todsim(
        &["stats", "--transcripts", "run/transcripts.jsonl"],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(stats["dialogue_count"], 16);
}

#[test]
fn errors_exit_nonzero_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = todsim(&["evaluate", "--transcripts", "missing.jsonl"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[IoError]"));

    fs::write(
        dir.path().join("t.jsonl"),
        "{\"dialogue_id\":\"x\",\"goal_id\":\"nope\",\"termination\":\"system_end\"}\n",
    )
    .unwrap();
    let out = todsim(&["evaluate", "--transcripts", "t.jsonl"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[UnknownGoal]"));

    fs::write(dir.path().join("bad.json"), r#"{"dialogues_per_goal": 0}"#).unwrap();
    let out = todsim(&["simulate", "--config", "bad.json", "--out", "o"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[InvalidConfig]"));
}
