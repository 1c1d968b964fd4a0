//! Fine-tuning dataset construction: turn-level decomposition, splits,
//! subtask ablation, JSONL export and the training manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue::DialogueTranscript;
use crate::goal::{Subtask, UserGoal};
use crate::prompt::{build_prompt, PromptError, PromptTemplate, ShotSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dialogue {0} has no utterances")]
    EmptyDialogue(String),
    #[error("split needs {requested} dialogues but the corpus has {available}")]
    InsufficientCorpus { requested: usize, available: usize },
    #[error("dialogue {0} has no subtask label")]
    MissingSubtaskLabel(String),
    #[error("dialogue {dialogue_id} refers to unknown goal {goal_id}")]
    UnknownGoal { dialogue_id: String, goal_id: String },
    #[error("parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::EmptyDialogue(_) => "EmptyDialogue",
            PipelineError::InsufficientCorpus { .. } => "InsufficientCorpus",
            PipelineError::MissingSubtaskLabel(_) => "MissingSubtaskLabel",
            PipelineError::UnknownGoal { .. } => "UnknownGoal",
            PipelineError::ParseError { .. } => "ParseError",
            PipelineError::Prompt(e) => e.kind(),
            PipelineError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub dialogue_id: String,
    pub turn: usize,
    #[serde(default)]
    pub subtask: Option<Subtask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub completion: String,
    pub meta: RecordMeta,
}

/// One record per answered system turn: the zero-shot prompt over the
/// history through `s_t`, completed by `u_t` and the separator.
pub fn decompose_dialogue(
    goal: &UserGoal,
    transcript: &DialogueTranscript,
    template: &PromptTemplate,
) -> Result<Vec<TrainingRecord>, PipelineError> {
    if transcript.utterances().is_empty() {
        return Err(PipelineError::EmptyDialogue(transcript.dialogue_id.clone()));
    }
    let zero_shot = PromptTemplate {
        shot_count: 0,
        ..template.clone()
    };
    let no_shots = ShotSet::default();
    transcript
        .user_utterances()
        .enumerate()
        .map(|(i, reply)| {
            let turn = i + 1;
            let history = transcript.history_through_system(turn);
            Ok(TrainingRecord {
                prompt: build_prompt(&zero_shot, goal, &history, &no_shots)?,
                completion: format!("{}{}", reply.text.trim(), template.separator),
                meta: RecordMeta {
                    dialogue_id: transcript.dialogue_id.clone(),
                    turn,
                    subtask: goal.subtask(),
                },
            })
        })
        .collect()
}

/// A dialogue together with the goal it pursued.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub goal: UserGoal,
    pub dialogue: DialogueTranscript,
}

/// Pairs every transcript with its goal by `goal_id`.
pub fn join_corpus(transcripts: Vec<DialogueTranscript>, goals: &[UserGoal]) -> Result<Vec<CorpusItem>, PipelineError> {
    let by_id: BTreeMap<&str, &UserGoal> = goals.iter().map(|g| (g.id(), g)).collect();
    transcripts
        .into_iter()
        .map(|dialogue| match by_id.get(dialogue.goal_id.as_str()) {
            Some(goal) => Ok(CorpusItem {
                goal: (*goal).clone(),
                dialogue,
            }),
            None => Err(PipelineError::UnknownGoal {
                dialogue_id: dialogue.dialogue_id.clone(),
                goal_id: dialogue.goal_id.clone(),
            }),
        })
        .collect()
}

pub fn decompose_corpus(
    corpus: &[CorpusItem],
    template: &PromptTemplate,
) -> Result<Vec<TrainingRecord>, PipelineError> {
    let mut out = Vec::new();
    for item in corpus {
        out.extend(decompose_dialogue(&item.goal, &item.dialogue, template)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_size: usize,
    pub test_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train_size + self.test_size + self.val_size
    }
}

/// `(train, test, val)`.
pub type Splits<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Seeded dialogue-level shuffle cut into `(train, test, val)`; dialogues
/// beyond the requested sizes are left out.
pub fn split_corpus<T: Clone>(corpus: &[T], spec: &SplitSpec) -> Result<Splits<T>, PipelineError> {
    if spec.total() > corpus.len() {
        return Err(PipelineError::InsufficientCorpus {
            requested: spec.total(),
            available: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    let a = spec.train_size;
    let b = a + spec.test_size;
    Ok((pick(0..a), pick(a..b), pick(b..spec.total())))
}

/// Keeps dialogues whose goal subtask is in `keep`, in order.
pub fn filter_by_subtask(corpus: &[CorpusItem], keep: &BTreeSet<Subtask>) -> Result<Vec<CorpusItem>, PipelineError> {
    if let Some(item) = corpus.iter().find(|c| c.goal.subtask().is_none()) {
        return Err(PipelineError::MissingSubtaskLabel(item.dialogue.dialogue_id.clone()));
    }
    Ok(corpus
        .iter()
        .filter(|c| c.goal.subtask().is_some_and(|s| keep.contains(&s)))
        .cloned()
        .collect())
}

pub fn export_records(records: &[TrainingRecord], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn import_records(path: impl AsRef<Path>) -> Result<Vec<TrainingRecord>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::ParseError {
            line: idx + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// LoRA hyperparameters recorded alongside an exported dataset. Nothing is
/// trained here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneParams {
    pub method: String,
    pub rank: u32,
    pub alpha: u32,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub base_model: String,
    pub target_modules: Vec<String>,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        FinetuneParams {
            method: "lora".into(),
            rank: 64,
            alpha: 32,
            dropout: 0.05,
            learning_rate: 3e-5,
            batch_size: 12,
            base_model: "llama-2-13b".into(),
            target_modules: vec!["query".into(), "key".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneManifest {
    #[serde(flatten)]
    pub params: FinetuneParams,
    pub task_description: String,
    pub separator: String,
    pub dataset_path: PathBuf,
    pub dataset_records: usize,
    /// Hex SHA-256 of the dataset file.
    pub dataset_digest: String,
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<(String, usize), PipelineError> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut lines = 0usize;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        lines += buf[..n].iter().filter(|&&b| b == b'\n').count();
        hasher.update(&buf[..n]);
    }
    Ok((hex::encode(hasher.finalize()), lines))
}

/// Writes the manifest for `dataset` to `out` and returns it.
pub fn write_manifest(
    params: &FinetuneParams,
    template: &PromptTemplate,
    dataset: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<FinetuneManifest, PipelineError> {
    let (digest, records) = file_digest(&dataset)?;
    let manifest = FinetuneManifest {
        params: params.clone(),
        task_description: template.task_description.clone(),
        separator: template.separator.clone(),
        dataset_path: dataset.as_ref().to_path_buf(),
        dataset_records: records,
        dataset_digest: digest,
    };
    let mut file = BufWriter::new(File::create(out)?);
    serde_json::to_writer_pretty(&mut file, &manifest).map_err(std::io::Error::from)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goal::{automotive_suite, SlotSpec};

    fn item(id: &str, goal: &UserGoal, texts: &[&str]) -> CorpusItem {
        CorpusItem {
            goal: goal.clone(),
            dialogue: DialogueTranscript::from_texts(id, goal.id(), texts).unwrap(),
        }
    }

    #[test]
    fn decomposition_per_turn() {
        let goal = UserGoal::new("g", None, None, vec![SlotSpec::inform("taxi", "leave_at", "16:00")])
            .unwrap()
            .with_text("You need a taxi.");
        let t = DialogueTranscript::from_texts("d", "g", &["s1", "u1", "s2", "u2"]).unwrap();
        let records = decompose_dialogue(&goal, &t, &PromptTemplate::default()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[1]
            .prompt
            .contains("s1<endturn>\nCUSTOMER: u1<endturn>\nASSISTANT: s2<endturn>\n"));
        assert!(records[1].prompt.ends_with("CUSTOMER: "));
        assert_eq!(records[1].completion, "u2<endturn>");
        assert_eq!(records[1].meta.turn, 2);
        let lone = DialogueTranscript::from_texts("d", "g", &["s1"]).unwrap();
        assert!(decompose_dialogue(&goal, &lone, &PromptTemplate::default())
            .unwrap()
            .is_empty());
        let empty = DialogueTranscript::new("d", "g");
        assert!(matches!(
            decompose_dialogue(&goal, &empty, &PromptTemplate::default()),
            Err(PipelineError::EmptyDialogue(_))
        ));
    }

    #[test]
    fn splits() {
        let corpus: Vec<usize> = (0..10).collect();
        let spec = SplitSpec {
            train_size: 5,
            test_size: 3,
            val_size: 2,
            seed: 7,
        };
        let a = split_corpus(&corpus, &spec).unwrap();
        assert_eq!(a, split_corpus(&corpus, &spec).unwrap());
        let mut all: Vec<usize> = a.0.iter().chain(&a.1).chain(&a.2).copied().collect();
        all.sort();
        assert_eq!(all, corpus);
        assert!(matches!(
            split_corpus(&corpus[..5], &spec),
            Err(PipelineError::InsufficientCorpus {
                requested: 10,
                available: 5
            })
        ));
    }

    #[test]
    fn subtask_filter() {
        let suite = automotive_suite();
        let corpus: Vec<CorpusItem> = suite
            .iter()
            .map(|g| item(&format!("{}-0", g.id()), g, &["s", "u"]))
            .collect();
        let keep: BTreeSet<_> = [Subtask::Book, Subtask::Reschedule].into_iter().collect();
        let kept = filter_by_subtask(&corpus, &keep).unwrap();
        assert_eq!(kept.len(), 6);
        assert!(kept.iter().all(|c| c.goal.subtask() != Some(Subtask::Cancel)));
        let all: BTreeSet<_> = [Subtask::Book, Subtask::Cancel, Subtask::Reschedule]
            .into_iter()
            .collect();
        assert_eq!(filter_by_subtask(&corpus, &all).unwrap(), corpus);
        let unlabeled = UserGoal::new("x", None, None, vec![]).unwrap();
        let mut mixed = corpus.clone();
        mixed.push(item("x-0", &unlabeled, &["s"]));
        assert!(matches!(
            filter_by_subtask(&mixed, &all),
            Err(PipelineError::MissingSubtaskLabel(_))
        ));
    }

    #[test]
    fn export_import_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        export_records(&[], &path).unwrap();
        assert!(import_records(&path).unwrap().is_empty());
        let records: Vec<TrainingRecord> = (0..3)
            .map(|i| TrainingRecord {
                prompt: format!("p{i}\n\"quoted\""),
                completion: format!("c{i}<endturn>"),
                meta: RecordMeta {
                    dialogue_id: "d".into(),
                    turn: i,
                    subtask: Some(Subtask::Book),
                },
            })
            .collect();
        export_records(&records, &path).unwrap();
        assert_eq!(import_records(&path).unwrap(), records);

        let m = write_manifest(
            &FinetuneParams::default(),
            &PromptTemplate::default(),
            &path,
            dir.path().join("m.json"),
        )
        .unwrap();
        assert_eq!(
            (m.params.rank, m.params.alpha, m.params.dropout, m.params.learning_rate),
            (64, 32, 0.05, 3e-5)
        );
        assert_eq!(m.dataset_records, 3);
        export_records(&records[..2], &path).unwrap();
        let m2 = write_manifest(
            &FinetuneParams::default(),
            &PromptTemplate::default(),
            &path,
            dir.path().join("m.json"),
        )
        .unwrap();
        assert_ne!(m.dataset_digest, m2.dataset_digest);
        assert!(matches!(
            write_manifest(
                &FinetuneParams::default(),
                &PromptTemplate::default(),
                dir.path().join("missing"),
                dir.path().join("m.json")
            ),
            Err(PipelineError::Io(_))
        ));

        let content = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &content[..content.len() - 10]).unwrap();
        assert!(matches!(
            import_records(&path),
            Err(PipelineError::ParseError { line: 2, .. })
        ));
    }
}
