//! Template-specific cell classification.
//!
//! A model is a stack of random forests. Stage 0 sees per-cell geometry,
//! style and text statistics; every later stage additionally sees the labels
//! that the previous stage predicted for the four directional neighbors.
//! During training those neighbor labels come from out-of-fold predictions
//! over pages, so each stage is trained on the same kind of input it gets at
//! prediction time.

mod features;
mod forest;
mod metrics;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{self, LabelSet, ParsedPage};

pub use features::{
    extract_features, extract_with_graph, neighbor_graph, numeric_fraction, refine_row, refined_arity, Direction,
    FeatureVector, Neighbors, BASE_ARITY, BASE_FEATURE_NAMES, FEATURE_SCHEMA_VERSION,
};
pub use forest::{derive_seed, splitmix64, train_forest, Forest, ForestParams, Samples, Tree};
pub use metrics::{evaluate, from_confusion, Evaluation, LabelMetrics};

pub const MODEL_FORMAT: &str = "rf-model.v1";

#[derive(Debug, thiserror::Error)]
pub enum MlError {
    #[error("unknown-label: '{0}' is not in the label set")]
    UnknownLabel(String),
    #[error("missing-label: page {page} cell {cell} has no label")]
    MissingLabel { page: u32, cell: u32 },
    #[error("empty-dataset: no labeled cells to train on")]
    EmptyDataset,
    #[error("schema-mismatch: {0}")]
    SchemaMismatch(String),
    #[error("shape-error: {0}")]
    Shape(String),
    #[error("bad-config: {0}")]
    Config(String),
    #[error("bad-model: {0}")]
    Format(String),
}

impl MlError {
    pub fn code(&self) -> &'static str {
        match self {
            MlError::UnknownLabel(_) => "unknown-label",
            MlError::MissingLabel { .. } => "missing-label",
            MlError::EmptyDataset => "empty-dataset",
            MlError::SchemaMismatch(_) => "schema-mismatch",
            MlError::Shape(_) => "shape-error",
            MlError::Config(_) => "bad-config",
            MlError::Format(_) => "bad-model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    pub n_refinement_stages: usize,
    /// Page folds used for out-of-fold neighbor labels.
    pub cv_folds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<BTreeMap<String, f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 2,
            seed: 0,
            n_refinement_stages: 2,
            cv_folds: 5,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), MlError> {
        if self.n_trees == 0 {
            return Err(MlError::Config("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(MlError::Config("min_leaf must be positive".into()));
        }
        if self.n_refinement_stages > 0 && self.cv_folds < 2 {
            return Err(MlError::Config("cv_folds must be at least 2".into()));
        }
        Ok(())
    }

    fn forest_params(&self, labels: &LabelSet) -> Result<ForestParams, MlError> {
        let class_weights = match &self.class_weights {
            None => None,
            Some(map) => {
                let mut w = vec![1.0; labels.len()];
                for (name, v) in map {
                    let i = labels
                        .index_of(name)
                        .ok_or_else(|| MlError::UnknownLabel(name.clone()))?;
                    if !(v.is_finite() && *v > 0.0) {
                        return Err(MlError::Config(format!("weight of '{name}' must be positive")));
                    }
                    w[i] = *v;
                }
                Some(w)
            }
        };
        Ok(ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            class_weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub pages: usize,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomForestModel {
    pub format: String,
    pub feature_schema_version: u32,
    pub labels: LabelSet,
    pub config: TrainConfig,
    pub metadata: TrainingMetadata,
    pub stages: Vec<Forest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellPrediction {
    pub cell_id: u32,
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionResult {
    pub page_number: u32,
    pub cells: Vec<CellPrediction>,
}

/// Per-page inputs that do not depend on the stage.
struct PageData {
    graph: Vec<Neighbors>,
    base: Vec<Vec<f64>>,
    index_of_id: HashMap<u32, usize>,
}

impl PageData {
    fn new(page: &ParsedPage) -> Self {
        let graph = neighbor_graph(page);
        let base = extract_with_graph(page, &graph)
            .iter()
            .map(FeatureVector::to_vec)
            .collect();
        let index_of_id = page.cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        Self {
            graph,
            base,
            index_of_id,
        }
    }

    fn rows(&self, prev: Option<&[usize]>, n_labels: usize) -> Vec<Vec<f64>> {
        match prev {
            None => self.base.clone(),
            Some(prev) => self
                .base
                .iter()
                .zip(&self.graph)
                .map(|(b, n)| refine_row(b, n, |id| self.index_of_id.get(&id).map(|&i| prev[i]), n_labels))
                .collect(),
        }
    }
}

fn truth_labels(pages: &[ParsedPage], labels: &LabelSet) -> Result<Vec<Vec<usize>>, MlError> {
    pages
        .iter()
        .map(|p| {
            p.cells
                .iter()
                .map(|c| {
                    let name = c.label.as_ref().ok_or(MlError::MissingLabel {
                        page: p.page_number(),
                        cell: c.id,
                    })?;
                    labels.index_of(name).ok_or_else(|| MlError::UnknownLabel(name.clone()))
                })
                .collect()
        })
        .collect()
}

fn fit(
    data: &[PageData],
    truth: &[Vec<usize>],
    prev: Option<&[Vec<usize>]>,
    subset: &[usize],
    n_labels: usize,
    params: &ForestParams,
    seed: u64,
) -> Option<Forest> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for &p in subset {
        rows.extend(data[p].rows(prev.map(|v| v[p].as_slice()), n_labels));
        y.extend_from_slice(&truth[p]);
    }
    if rows.is_empty() {
        return None;
    }
    let arity = rows[0].len();
    Some(train_forest(
        &Samples::from_rows(&rows, arity),
        &y,
        n_labels,
        params,
        seed,
    ))
}

fn predict_page(forest: &Forest, data: &PageData, prev: Option<&[usize]>, n_labels: usize) -> Vec<(usize, f64)> {
    data.rows(prev, n_labels).iter().map(|r| forest.predict(r)).collect()
}

/// Trains on pages whose cells all carry labels from `labels`.
pub fn train(pages: &[ParsedPage], labels: &LabelSet, config: &TrainConfig) -> Result<RandomForestModel, MlError> {
    config.check()?;
    labels.check().map_err(|e| MlError::Config(e.to_string()))?;
    let truth = truth_labels(pages, labels)?;
    let cells: usize = truth.iter().map(Vec::len).sum();
    if cells == 0 {
        return Err(MlError::EmptyDataset);
    }
    let params = config.forest_params(labels)?;
    let n_labels = labels.len();
    let data: Vec<PageData> = pages.iter().map(PageData::new).collect();
    let all: Vec<usize> = (0..pages.len()).collect();

    let mut stages = Vec::with_capacity(config.n_refinement_stages + 1);
    let mut prev: Option<Vec<Vec<usize>>> = None;
    for stage in 0..=config.n_refinement_stages {
        let stage_seed = derive_seed(config.seed, &[stage as u64, 0]);
        let full = fit(&data, &truth, prev.as_deref(), &all, n_labels, &params, stage_seed).expect("non-empty dataset");
        if stage < config.n_refinement_stages {
            let mut oof: Vec<Vec<usize>> = vec![Vec::new(); pages.len()];
            for fold in 0..config.cv_folds {
                let held: Vec<usize> = all.iter().copied().filter(|p| p % config.cv_folds == fold).collect();
                if held.is_empty() {
                    continue;
                }
                let rest: Vec<usize> = all.iter().copied().filter(|p| p % config.cv_folds != fold).collect();
                let fold_seed = derive_seed(config.seed, &[stage as u64, fold as u64 + 1]);
                let fold_model = fit(&data, &truth, prev.as_deref(), &rest, n_labels, &params, fold_seed);
                let model = fold_model.as_ref().unwrap_or(&full);
                for &p in &held {
                    let prev_p = prev.as_ref().map(|v| v[p].as_slice());
                    oof[p] = predict_page(model, &data[p], prev_p, n_labels)
                        .into_iter()
                        .map(|(l, _)| l)
                        .collect();
                }
            }
            prev = Some(oof);
        }
        stages.push(full);
    }

    Ok(RandomForestModel {
        format: MODEL_FORMAT.to_string(),
        feature_schema_version: FEATURE_SCHEMA_VERSION,
        labels: labels.clone(),
        config: config.clone(),
        metadata: TrainingMetadata {
            seed: config.seed,
            pages: pages.len(),
            cells,
        },
        stages,
    })
}

impl RandomForestModel {
    /// Verifies format, schema version and per-stage arity.
    pub fn check(&self) -> Result<(), MlError> {
        if self.format != MODEL_FORMAT {
            return Err(MlError::Format(format!("unknown model format '{}'", self.format)));
        }
        if self.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(MlError::SchemaMismatch(format!(
                "model uses feature schema {}, extractor is {}",
                self.feature_schema_version, FEATURE_SCHEMA_VERSION
            )));
        }
        if self.stages.is_empty() {
            return Err(MlError::Format("model has no stages".into()));
        }
        let n = self.labels.len();
        for (s, f) in self.stages.iter().enumerate() {
            let expected = if s == 0 { BASE_ARITY } else { refined_arity(n) };
            if f.n_features != expected {
                return Err(MlError::SchemaMismatch(format!(
                    "stage {s} expects {} features, extractor produces {expected}",
                    f.n_features
                )));
            }
            if f.n_labels != n {
                return Err(MlError::SchemaMismatch(format!(
                    "stage {s} has {} labels, set has {n}",
                    f.n_labels
                )));
            }
        }
        Ok(())
    }

    /// Labels and vote-fraction confidences for every cell of `page`.
    pub fn predict(&self, page: &ParsedPage) -> Result<PredictionResult, MlError> {
        self.check()?;
        let n = self.labels.len();
        let data = PageData::new(page);
        let mut prev: Option<Vec<usize>> = None;
        let mut last = Vec::new();
        for forest in &self.stages {
            last = predict_page(forest, &data, prev.as_deref(), n);
            prev = Some(last.iter().map(|(l, _)| *l).collect());
        }
        Ok(PredictionResult {
            page_number: page.page_number(),
            cells: page
                .cells
                .iter()
                .zip(last)
                .map(|(c, (l, conf))| CellPrediction {
                    cell_id: c.id,
                    label: self.labels.name(l).to_string(),
                    confidence: conf,
                })
                .collect(),
        })
    }

    /// Predictions of stage `stage` alone, feeding it the labels of the
    /// stages before it.
    pub fn predict_stage(&self, page: &ParsedPage, stage: usize) -> Result<Vec<String>, MlError> {
        self.check()?;
        if stage >= self.stages.len() {
            return Err(MlError::Config(format!("model has {} stages", self.stages.len())));
        }
        let n = self.labels.len();
        let data = PageData::new(page);
        let mut prev: Option<Vec<usize>> = None;
        for forest in &self.stages[..=stage] {
            prev = Some(
                predict_page(forest, &data, prev.as_deref(), n)
                    .into_iter()
                    .map(|(l, _)| l)
                    .collect(),
            );
        }
        Ok(prev
            .unwrap_or_default()
            .into_iter()
            .map(|l| self.labels.name(l).to_string())
            .collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("model serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, MlError> {
        let m: Self = model::from_json(bytes).map_err(|e| MlError::Format(e.to_string()))?;
        m.check()?;
        Ok(m)
    }
}

/// Writes predictions onto the page's cells.
pub fn apply_predictions(page: &mut ParsedPage, result: &PredictionResult) {
    let by_id: HashMap<u32, &str> = result.cells.iter().map(|c| (c.cell_id, c.label.as_str())).collect();
    for c in &mut page.cells {
        if let Some(l) = by_id.get(&c.id) {
            c.label = Some((*l).to_string());
        }
    }
}
