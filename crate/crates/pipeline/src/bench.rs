//! Stage-by-stage speedup of the pipeline as a function of worker count.
//!
//! Every worker count runs the full corpus through parse, predict and
//! assemble on a fresh store. Tasks are one per document, so parse and
//! predict scale with the page count of a single-page corpus while
//! assemble can never use more workers than there are documents.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::broker::InProcessBroker;
use crate::ops::JSON;
use crate::orchestrator::{Orchestrator, OrchestratorError, QueueConfig};
use crate::store::{Kind, MetadataRecord, Store, StoreError};
use crate::task::{Operation, TaskMessage, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parse,
    Ml,
    Assemble,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Parse, Stage::Ml, Stage::Assemble];

    fn queue(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Ml => "ml",
            Stage::Assemble => "assemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: Stage,
    pub workers: usize,
    pub seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Whether every worker count produced the same set of output objects
    /// in every stage as the first worker count.
    pub equivalent: bool,
    pub failures: usize,
}

impl BenchReport {
    pub fn row(&self, stage: Stage, workers: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.stage == stage && r.workers == workers)
    }

    /// CSV with header `stage,workers,seconds,speedup`.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("bad-config: {0}")]
    Config(String),
}

struct RunResult {
    seconds: BTreeMap<Stage, f64>,
    outputs: BTreeMap<Stage, Vec<String>>,
    failures: usize,
}

fn run_stage(
    orch: &Orchestrator,
    stage: Stage,
    workers: usize,
    tasks: Vec<TaskMessage>,
) -> Result<(f64, Vec<Option<String>>, usize), BenchError> {
    let t0 = Instant::now();
    let ids = tasks
        .into_iter()
        .map(|t| orch.submit(t.on_queue(stage.queue())))
        .collect::<Result<Vec<_>, _>>()?;
    orch.run_workers(&QueueConfig::single(stage.queue(), workers));
    let seconds = t0.elapsed().as_secs_f64();
    let mut failures = 0;
    let results = ids
        .iter()
        .map(|id| {
            let s = orch.status(id).filter(|s| s.state == TaskState::Succeeded);
            if s.is_none() {
                failures += 1;
            }
            s.and_then(|s| s.result)
        })
        .collect();
    Ok((seconds, results, failures))
}

fn run_once(corpus: &[(String, Vec<u8>)], model: &[u8], workers: usize, dir: &Path) -> Result<RunResult, BenchError> {
    let store = Arc::new(Store::open(dir)?);
    let orch = Orchestrator::new(Arc::new(InProcessBroker::new()), store.clone());
    let model_key = store.put(model, JSON, Some(MetadataRecord::new("", Kind::Model)))?;
    let pdfs = corpus
        .iter()
        .map(|(name, bytes)| {
            store
                .put(
                    bytes,
                    "application/pdf",
                    Some(MetadataRecord::new("", Kind::Pdf).attr("name", name.clone())),
                )
                .map(|k| (name.clone(), k))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut seconds = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut failures = 0;

    let parse_tasks = pdfs
        .iter()
        .map(|(name, k)| TaskMessage::new(Operation::Parse, vec![k.clone()], json!({ "source_name": name })))
        .collect();
    let (t, parsed, f) = run_stage(&orch, Stage::Parse, workers, parse_tasks)?;
    seconds.insert(Stage::Parse, t);
    failures += f;
    let parsed: Vec<String> = parsed.into_iter().flatten().collect();

    let ml_tasks = parsed
        .iter()
        .map(|k| TaskMessage::new(Operation::Predict, vec![k.clone(), model_key.clone()], json!(null)))
        .collect();
    let (t, predicted, f) = run_stage(&orch, Stage::Ml, workers, ml_tasks)?;
    seconds.insert(Stage::Ml, t);
    failures += f;
    let predicted: Vec<String> = predicted.into_iter().flatten().collect();

    let asm_tasks = predicted
        .iter()
        .map(|k| TaskMessage::new(Operation::Assemble, vec![k.clone()], json!(null)))
        .collect();
    let (t, assembled, f) = run_stage(&orch, Stage::Assemble, workers, asm_tasks)?;
    seconds.insert(Stage::Assemble, t);
    failures += f;
    let assembled: Vec<String> = assembled.into_iter().flatten().collect();

    for (stage, mut keys) in [
        (Stage::Parse, parsed),
        (Stage::Ml, predicted),
        (Stage::Assemble, assembled),
    ] {
        keys.sort();
        outputs.insert(stage, keys);
    }
    Ok(RunResult {
        seconds,
        outputs,
        failures,
    })
}

/// Runs the corpus once per worker count under `work_dir` and reports
/// speedups relative to the first count (normally 1). Stages with no
/// tasks report a speedup of 1.
pub fn bench_scaling(
    corpus: &[(String, Vec<u8>)],
    model: &[u8],
    worker_counts: &[usize],
    work_dir: &Path,
) -> Result<BenchReport, BenchError> {
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(BenchError::Config("worker counts must be positive".into()));
    }
    let mut runs = Vec::new();
    for (i, &w) in worker_counts.iter().enumerate() {
        let dir = work_dir.join(format!("run-{i}-w{w}"));
        runs.push((w, run_once(corpus, model, w, &dir)?));
    }
    let base = &runs[0].1;
    let mut rows = Vec::new();
    for stage in Stage::ALL {
        for (w, r) in &runs {
            let secs = r.seconds[&stage];
            let speedup = if corpus.is_empty() || secs <= 0.0 {
                1.0
            } else {
                base.seconds[&stage] / secs
            };
            rows.push(BenchRow {
                stage,
                workers: *w,
                seconds: secs,
                speedup,
            });
        }
    }
    let equivalent = runs.iter().all(|(_, r)| r.outputs == base.outputs);
    let failures = runs.iter().map(|(_, r)| r.failures).sum();
    Ok(BenchReport {
        rows,
        equivalent,
        failures,
    })
}
