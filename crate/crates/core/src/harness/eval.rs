use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use super::dataset::QaRecord;
use crate::kgi::Federation;
use crate::llm::LlmBackend;
use crate::search::{self, Mode, SearchConfig, SearchError, SearchOutcome, StopReason, TreeDump};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

// per-char lowercasing, so appending text never changes how earlier text folds
fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .flat_map(char::to_lowercase)
        .collect()
}

/// Mean over gold labels of case-insensitive, whitespace-normalized containment.
pub fn em_in(model_answer: &str, gold_answers: &[String]) -> f64 {
    if gold_answers.is_empty() {
        return 0.0;
    }
    let answer = normalize(model_answer);
    let hits = gold_answers
        .iter()
        .filter(|gold| answer.contains(&normalize(gold)))
        .count();
    hits as f64 / gold_answers.len() as f64
}

/// Runs one question. The search-backed implementation is [`Searcher`].
pub trait QuestionSolver: Sync {
    fn solve(&self, record: &QaRecord, mode: Mode) -> Result<SearchOutcome, SearchError>;
}

pub struct Searcher<'a> {
    pub kgs: &'a Federation,
    pub llm: &'a dyn LlmBackend,
    pub config: SearchConfig,
}

impl QuestionSolver for Searcher<'_> {
    fn solve(&self, record: &QaRecord, mode: Mode) -> Result<SearchOutcome, SearchError> {
        search::run_mode(&record.question, self.kgs, self.llm, &self.config, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub answer: String,
    pub em_in: f64,
    pub node_count: usize,
    pub expansions: usize,
    pub answer_value: Option<f64>,
    pub stop: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub config: SearchConfig,
    pub mean_em_in: f64,
    pub results: Vec<QuestionResult>,
}

impl EvalReport {
    fn new(mode: Mode, config: SearchConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            mode,
            config,
            mean_em_in: 0.0,
            results: Vec::new(),
        }
    }

    /// Recompute the aggregate; summation over sorted scores keeps it order-independent.
    pub fn refresh_mean(&mut self) {
        self.mean_em_in = mean(self.results.iter().map(|r| r.em_in));
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn mean(scores: impl IntoIterator<Item = f64>) -> f64 {
    let mut scores: Vec<f64> = scores.into_iter().collect();
    if scores.is_empty() {
        return 0.0;
    }
    scores.sort_by(f64::total_cmp);
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unreadable report: {0}")]
    Report(#[from] serde_json::Error),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: Mode,
    /// Where `report.json` and `trees/` are written. `None` keeps everything in memory.
    pub run_dir: Option<PathBuf>,
    pub workers: usize,
    /// Skip questions already present in an existing report.
    pub resume: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Tree,
            run_dir: None,
            workers: 1,
            resume: true,
        }
    }
}

/// Short stable hash of the settings that change search behaviour.
pub fn config_hash(config: &SearchConfig, mode: Mode) -> String {
    let effective = match mode {
        Mode::Chain => SearchConfig {
            k: 1,
            ..config.clone()
        },
        _ => config.clone(),
    };
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&(effective, mode)).expect("config serializes"));
    hex::encode(hasher.finalize())[..12].to_string()
}

/// `base/<mode>-<hash>`.
pub fn run_dir_for(base: impl AsRef<Path>, config: &SearchConfig, mode: Mode) -> PathBuf {
    let mode_name = match mode {
        Mode::Tree => "tree",
        Mode::Chain => "chain",
        Mode::NoBacktrack => "no-backtrack",
    };
    base.as_ref()
        .join(format!("{mode_name}-{}", config_hash(config, mode)))
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_json(path: &Path, text: &str) -> std::io::Result<()> {
    use std::io::Write;
    let parent = path.parent().expect("run dir file has a parent");
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn solve_one(solver: &dyn QuestionSolver, record: &QaRecord, mode: Mode, run_dir: Option<&Path>) -> QuestionResult {
    let start = Instant::now();
    let outcome = solver.solve(record, mode);
    let elapsed_ms = start.elapsed().as_millis() as u64;
    match outcome {
        Ok(outcome) => {
            if let Some(dir) = run_dir {
                let path = dir.join("trees").join(format!("{}.json", file_stem(&record.id)));
                if let Err(e) = write_json(&path, &TreeDump::from_outcome(&outcome).to_json()) {
                    warn!(path = %path.display(), error = %e, "could not write tree dump");
                }
            }
            QuestionResult {
                id: record.id.clone(),
                question: record.question.clone(),
                gold_answers: record.gold_answers.clone(),
                em_in: em_in(&outcome.answer, &record.gold_answers),
                answer: outcome.answer,
                node_count: outcome.tree.len(),
                expansions: outcome.tree.expansions_used(),
                answer_value: outcome.value,
                stop: Some(outcome.stop),
                error: None,
                elapsed_ms,
            }
        }
        Err(e) => {
            warn!(id = %record.id, error = %e, "question failed");
            QuestionResult {
                id: record.id.clone(),
                question: record.question.clone(),
                gold_answers: record.gold_answers.clone(),
                answer: String::new(),
                em_in: 0.0,
                node_count: 0,
                expansions: 0,
                answer_value: None,
                stop: None,
                error: Some(e.to_string()),
                elapsed_ms,
            }
        }
    }
}

/// Evaluate every record, writing the report after each question.
///
/// Results keep dataset order. Failed questions score 0 and carry the error.
pub fn run_eval(
    dataset: &[QaRecord],
    solver: &dyn QuestionSolver,
    config: &SearchConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let effective = match options.mode {
        Mode::Chain => SearchConfig {
            k: 1,
            ..config.clone()
        },
        _ => config.clone(),
    };
    let report_path = options.run_dir.as_ref().map(|d| d.join("report.json"));
    let previous = match &report_path {
        Some(path) if options.resume && path.exists() => Some(EvalReport::load(path)?),
        _ => None,
    };
    let done: HashSet<String> = previous
        .iter()
        .flat_map(|r| r.results.iter().map(|q| q.id.clone()))
        .collect();
    let pending: Vec<&QaRecord> = dataset.iter().filter(|r| !done.contains(&r.id)).collect();
    info!(total = dataset.len(), pending = pending.len(), mode = ?options.mode, "evaluation started");

    let report = Mutex::new(previous.unwrap_or_else(|| EvalReport::new(options.mode, effective.clone())));
    let order = |report: &mut EvalReport| {
        let position = |id: &str| dataset.iter().position(|r| r.id == id).unwrap_or(usize::MAX);
        report.results.sort_by_key(|q| position(&q.id));
        report.refresh_mean();
    };
    let record_result = |result: QuestionResult| -> Result<(), EvalError> {
        let mut report = report.lock().expect("report lock");
        report.results.push(result);
        order(&mut report);
        if let Some(path) = &report_path {
            write_json(path, &serde_json::to_string_pretty(&*report)?)?;
        }
        Ok(())
    };

    let next = AtomicUsize::new(0);
    let run_dir = options.run_dir.as_deref();
    let worker = || -> Result<(), EvalError> {
        loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(record) = pending.get(i) else { return Ok(()) };
            let result = solve_one(solver, record, options.mode, run_dir);
            info!(id = %result.id, em_in = result.em_in, answer = %result.answer, "question finished");
            record_result(result)?;
        }
    };
    let workers = options.workers.clamp(1, pending.len().max(1));
    if workers == 1 {
        worker()?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|_| scope.spawn(worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("eval worker panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?;
    }

    let mut report = report.into_inner().expect("report lock");
    report.results.retain(|q| dataset.iter().any(|r| r.id == q.id));
    order(&mut report);
    if let Some(path) = &report_path {
        write_json(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub with_backtracking: EvalReport,
    pub without_backtracking: EvalReport,
    /// `with - without` mean EM-in.
    pub delta: f64,
    /// Ids where backtracking scored strictly higher.
    pub improved: Vec<String>,
    /// Ids where backtracking scored strictly lower.
    pub regressed: Vec<String>,
}

/// The same questions with and without backtracking, in sibling run directories.
pub fn run_ablation(
    dataset: &[QaRecord],
    solver: &dyn QuestionSolver,
    config: &SearchConfig,
    base_dir: Option<&Path>,
) -> Result<AblationReport, EvalError> {
    let options = |mode| EvalOptions {
        mode,
        run_dir: base_dir.map(|b| run_dir_for(b, config, mode)),
        ..EvalOptions::default()
    };
    let with = run_eval(dataset, solver, config, &options(Mode::Tree))?;
    let without = run_eval(dataset, solver, config, &options(Mode::NoBacktrack))?;
    let mut improved = Vec::new();
    let mut regressed = Vec::new();
    for (a, b) in with.results.iter().zip(&without.results) {
        if a.em_in > b.em_in {
            improved.push(a.id.clone());
        } else if a.em_in < b.em_in {
            regressed.push(a.id.clone());
        }
    }
    Ok(AblationReport {
        delta: with.mean_em_in - without.mean_em_in,
        with_backtracking: with,
        without_backtracking: without,
        improved,
        regressed,
    })
}
