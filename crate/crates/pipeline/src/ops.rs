//! The pipeline microservices as task handlers. Each one is a pure function
//! of its input objects and parameters; outputs are content-addressed, so
//! running a task twice writes nothing new.

use ccs_core::assemble::{assemble, AssembleConfig};
use ccs_core::detect::{sweep_confidence, DetectionSet, SweepCase, DEFAULT_MIN_OVERLAP};
use ccs_core::ml::{self, apply_predictions, evaluate, RandomForestModel, TrainConfig};
use ccs_core::model::{self, LabelSet, ParsedDocument, ParsedPage};
use ccs_core::parser::{parse_pdf, NormalizationConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::{Kind, MetadataRecord, Store, StoreError};
use crate::task::{Operation, TaskError, TaskMessage};

pub const TRAINING_SET_FORMAT: &str = "training-set.v1";
pub const JSON: &str = "application/json";

/// Labeled pages handed to a training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSet {
    pub format: String,
    pub labels: LabelSet,
    pub pages: Vec<ParsedPage>,
}

impl TrainingSet {
    pub fn new(labels: LabelSet, pages: Vec<ParsedPage>) -> Self {
        Self {
            format: TRAINING_SET_FORMAT.to_string(),
            labels,
            pages,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseParams {
    pub source_name: Option<String>,
    pub collection: Option<String>,
    pub config: Option<NormalizationConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictParams {
    pub collection: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleParams {
    pub collection: Option<String>,
    pub config: Option<AssembleConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub collection: Option<String>,
    pub config: TrainConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectEvalParams {
    pub collection: Option<String>,
    pub min_overlap: Option<f64>,
    pub table_label: Option<String>,
}

pub trait Handler: Send + Sync {
    fn run(&self, store: &Store, msg: &TaskMessage) -> Result<String, TaskError>;
}

impl<F> Handler for F
where
    F: Fn(&Store, &TaskMessage) -> Result<String, TaskError> + Send + Sync,
{
    fn run(&self, store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
        self(store, msg)
    }
}

pub fn default_handler(op: Operation) -> fn(&Store, &TaskMessage) -> Result<String, TaskError> {
    match op {
        Operation::Parse => run_parse,
        Operation::Predict => run_predict,
        Operation::Assemble => run_assemble,
        Operation::Train => run_train,
        Operation::DetectEval => run_detect_eval,
    }
}

fn params<T: DeserializeOwned + Default>(msg: &TaskMessage) -> Result<T, TaskError> {
    if msg.params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(msg.params.clone()).map_err(|e| TaskError::new("bad-params", e.to_string()))
}

fn input(msg: &TaskMessage, i: usize) -> Result<&str, TaskError> {
    msg.inputs.get(i).map(String::as_str).ok_or_else(|| {
        TaskError::new(
            "missing-input",
            format!("{} expects at least {} inputs", msg.operation, i + 1),
        )
    })
}

pub fn load(store: &Store, key: &str) -> Result<Vec<u8>, TaskError> {
    store.get(key).map_err(|e| match e {
        StoreError::NotFound(k) | StoreError::BadKey(k) => TaskError::new("missing-input", format!("no object '{k}'")),
        other => TaskError::new("storage", other.to_string()),
    })
}

fn save(store: &Store, bytes: &[u8], record: MetadataRecord) -> Result<String, TaskError> {
    store
        .put(bytes, JSON, Some(record))
        .map_err(|e| TaskError::new("storage", e.to_string()))
}

fn record(kind: Kind, collection: &Option<String>, msg: &TaskMessage) -> MetadataRecord {
    let mut r = MetadataRecord::new("", kind).attr("task", msg.task_id.clone());
    r.collection = collection.clone();
    r
}

fn load_parsed(store: &Store, key: &str) -> Result<ParsedDocument, TaskError> {
    model::deserialize_parsed(&load(store, key)?).map_err(|e| TaskError::new("schema-violation", e.to_string()))
}

pub fn run_parse(store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
    let p: ParseParams = params(msg)?;
    let pdf_key = input(msg, 0)?;
    let bytes = load(store, pdf_key)?;
    let name = p.source_name.clone().unwrap_or_else(|| pdf_key.to_string());
    let doc =
        parse_pdf(&bytes, &name, &p.config.unwrap_or_default()).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    let out = model::serialize_parsed(&doc).map_err(|e| TaskError::new("invalid-output", e.to_string()))?;
    save(
        store,
        &out,
        record(Kind::Parsed, &p.collection, msg)
            .attr("doc_id", doc.doc_id.clone())
            .attr("source", pdf_key)
            .attr("stage", "parsed"),
    )
}

pub fn run_predict(store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
    let p: PredictParams = params(msg)?;
    let mut doc = load_parsed(store, input(msg, 0)?)?;
    let model_key = input(msg, 1)?;
    let model =
        RandomForestModel::from_json(&load(store, model_key)?).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    for page in &mut doc.pages {
        let r = model
            .predict(page)
            .map_err(|e| TaskError::new(e.code(), e.to_string()))?;
        apply_predictions(page, &r);
    }
    let out = model::serialize_parsed(&doc).map_err(|e| TaskError::new("invalid-output", e.to_string()))?;
    save(
        store,
        &out,
        record(Kind::Parsed, &p.collection, msg)
            .attr("doc_id", doc.doc_id.clone())
            .attr("model", model_key)
            .attr("stage", "predicted"),
    )
}

pub fn run_assemble(store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
    let p: AssembleParams = params(msg)?;
    let doc = load_parsed(store, input(msg, 0)?)?;
    let out = assemble(&doc, &p.config.unwrap_or_default()).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    let bytes = model::serialize_structured(&out).map_err(|e| TaskError::new("invalid-output", e.to_string()))?;
    save(
        store,
        &bytes,
        record(Kind::Structured, &p.collection, msg).attr("doc_id", doc.doc_id.clone()),
    )
}

pub fn run_train(store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
    let p: TrainParams = params(msg)?;
    let set_key = input(msg, 0)?;
    let set: TrainingSet =
        model::from_json(&load(store, set_key)?).map_err(|e| TaskError::new("schema-violation", e.to_string()))?;
    if set.format != TRAINING_SET_FORMAT {
        return Err(TaskError::new(
            "schema-violation",
            format!("unknown format '{}'", set.format),
        ));
    }
    let m = ml::train(&set.pages, &set.labels, &p.config).map_err(|e| TaskError::new(e.code(), e.to_string()))?;

    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for page in &set.pages {
        let r = m.predict(page).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
        truth.extend(page.cells.iter().map(|c| c.label.clone().unwrap_or_default()));
        predicted.extend(r.cells.into_iter().map(|c| c.label));
    }
    let eval = evaluate(&truth, &predicted, &set.labels).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    let fmt = |v: f64| format!("{v:.6}");
    save(
        store,
        &m.to_json(),
        record(Kind::Model, &p.collection, msg)
            .attr("training_set", set_key)
            .attr("pages", set.pages.len().to_string())
            .attr("train_macro_precision", fmt(eval.macro_precision))
            .attr("train_macro_recall", fmt(eval.macro_recall))
            .attr("train_macro_f1", fmt(eval.macro_f1)),
    )
}

pub fn run_detect_eval(store: &Store, msg: &TaskMessage) -> Result<String, TaskError> {
    let p: DetectEvalParams = params(msg)?;
    let doc = load_parsed(store, input(msg, 0)?)?;
    let dets =
        DetectionSet::from_json(&load(store, input(msg, 1)?)?).map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    let table = p.table_label.unwrap_or_else(|| "table".into());
    let truth: Vec<Vec<bool>> = doc
        .pages
        .iter()
        .map(|pg| {
            pg.cells
                .iter()
                .map(|c| c.label.as_deref() == Some(table.as_str()))
                .collect()
        })
        .collect();
    let cases: Vec<SweepCase> = doc
        .pages
        .iter()
        .zip(&truth)
        .map(|(pg, t)| SweepCase {
            cells: &pg.cells,
            truth: t,
            detections: dets.page(pg.page_number()),
        })
        .collect();
    let r = sweep_confidence(&cases, p.min_overlap.unwrap_or(DEFAULT_MIN_OVERLAP))
        .map_err(|e| TaskError::new(e.code(), e.to_string()))?;
    let bytes = serde_json::to_vec_pretty(&r).expect("sweep serializes");
    save(
        store,
        &bytes,
        record(Kind::Detections, &p.collection, msg).attr("doc_id", doc.doc_id.clone()),
    )
}
