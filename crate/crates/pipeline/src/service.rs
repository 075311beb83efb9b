//! HTTP+JSON interface over collections, documents, annotations, models
//! and conversions. Every endpoint reads and writes through the store and
//! the orchestrator only, so any instance can serve any request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use ccs_core::ml::{PredictionResult, RandomForestModel, TrainConfig};
use ccs_core::model::{self, LabelSet, ParsedDocument, ParsedPage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation::{
    compute_session_stats, diff_corrections, prediction_labels, validate_record, AnnotationRecord, AnnotationSource,
};
use crate::broker::InProcessBroker;
use crate::ops::{TrainingSet, JSON};
use crate::orchestrator::{Orchestrator, QueueConfig, WorkerPool};
use crate::store::{hash_bytes, now_ms, Kind, MetadataRecord, Store, StoreError, Table};
use crate::task::{ChainTemplate, Operation, TaskMessage, TaskState, TaskStatus};

pub const OPENAPI: &str = include_str!("../../../docs/openapi.json");
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collection {
    pub id: String,
    pub name: String,
    pub labels: LabelSet,
    pub created_ms: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewCollection {
    name: String,
    #[serde(default)]
    labels: Option<LabelSet>,
}

pub fn collection_id(name: &str) -> String {
    format!("c{}", &hash_bytes(name.as_bytes())[..16])
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("no {what} '{id}'"))
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(k) => ApiError::not_found("object", &k),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", other.to_string()),
        }
    }
}

impl From<crate::orchestrator::OrchestratorError> for ApiError {
    fn from(e: crate::orchestrator::OrchestratorError) -> Self {
        let status = match e {
            crate::orchestrator::OrchestratorError::NoSuchOperation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if !self.details.is_null() {
            body["details"] = self.details;
        }
        (self.status, axum::Json(body)).into_response()
    }
}

pub enum Reply {
    Json(StatusCode, Value),
    Bytes(String, Vec<u8>),
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        match self {
            Reply::Json(s, v) => (s, axum::Json(v)).into_response(),
            Reply::Bytes(media, b) => ([(header::CONTENT_TYPE, media)], b).into_response(),
        }
    }
}

type ApiResult = Result<Reply, ApiError>;

fn ok(v: Value) -> ApiResult {
    Ok(Reply::Json(StatusCode::OK, v))
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("response serializes")
}

/// Synchronous implementation of every endpoint.
#[derive(Clone)]
pub struct Api {
    orch: Arc<Orchestrator>,
}

#[derive(Debug, Clone)]
struct ModelInfo {
    id: String,
    record: MetadataRecord,
}

impl Api {
    pub fn new(orch: Arc<Orchestrator>) -> Self {
        Self { orch }
    }

    fn store(&self) -> &Store {
        self.orch.store()
    }

    fn collection(&self, id: &str) -> Result<Collection, ApiError> {
        self.store()
            .index
            .get(Table::Collections, id)
            .ok_or_else(|| ApiError::not_found("collection", id))
    }

    pub fn create_collection(&self, body: &[u8]) -> ApiResult {
        let req: NewCollection =
            model::from_json(body).map_err(|e| ApiError::unprocessable("schema-violation", e.to_string()))?;
        if req.name.trim().is_empty() {
            return Err(ApiError::unprocessable("schema-violation", "name must not be empty"));
        }
        let labels = req.labels.unwrap_or_else(LabelSet::default_set);
        labels
            .check()
            .map_err(|e| ApiError::unprocessable("schema-violation", e.to_string()))?;
        let c = Collection {
            id: collection_id(&req.name),
            name: req.name,
            labels,
            created_ms: now_ms(),
        };
        if !self.store().index.put_if_absent(Table::Collections, &c.id, &c)? {
            return Err(
                ApiError::new(StatusCode::CONFLICT, "duplicate", "collection exists").details(json!({ "id": c.id }))
            );
        }
        Ok(Reply::Json(StatusCode::CREATED, to_value(&c)))
    }

    pub fn list_collections(&self) -> ApiResult {
        let cs: Vec<Collection> = self
            .store()
            .index
            .scan(Table::Collections)
            .into_iter()
            .map(|(_, c)| c)
            .collect();
        ok(json!({ "collections": cs }))
    }

    pub fn get_collection(&self, id: &str) -> ApiResult {
        let c = self.collection(id)?;
        let docs: Vec<Value> = self
            .store()
            .query(Some(id), Some(Kind::Pdf), None)
            .into_iter()
            .map(|r| {
                json!({
                    "doc_id": r.key,
                    "name": r.attribute("name"),
                    "parse_task": r.attribute("parse_task"),
                })
            })
            .collect();
        let models: Vec<String> = self.models(id).into_iter().map(|m| m.id).collect();
        ok(json!({ "collection": c, "documents": docs, "models": models }))
    }

    pub fn upload(&self, collection: &str, name: Option<String>, body: &[u8]) -> ApiResult {
        self.collection(collection)?;
        if body.is_empty() {
            return Err(ApiError::unprocessable("empty-upload", "request body is empty"));
        }
        let doc_id = hash_bytes(body);
        if let Some(r) = self.store().record(&doc_id).filter(|r| r.kind == Kind::Pdf) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate",
                "identical content was already uploaded",
            )
            .details(json!({ "doc_id": doc_id, "task_id": r.attribute("parse_task"), "collection": r.collection })));
        }
        let name = name.unwrap_or_else(|| format!("{}.pdf", &doc_id[..12]));
        let task = TaskMessage::new(
            Operation::Parse,
            vec![doc_id.clone()],
            json!({ "source_name": name, "collection": collection }),
        );
        let record = MetadataRecord::new("", Kind::Pdf)
            .in_collection(collection)
            .attr("name", name)
            .attr("parse_task", task.task_id.clone());
        self.store().put(body, "application/pdf", Some(record))?;
        let task_id = self.orch.submit(task)?;
        Ok(Reply::Json(
            StatusCode::ACCEPTED,
            json!({ "doc_id": doc_id, "task_id": task_id }),
        ))
    }

    fn document(&self, doc_id: &str) -> Result<MetadataRecord, ApiError> {
        self.store()
            .record(doc_id)
            .filter(|r| r.kind == Kind::Pdf)
            .ok_or_else(|| ApiError::not_found("document", doc_id))
    }

    /// The parsed form of a document, once its parse task succeeded.
    fn parsed(&self, doc: &MetadataRecord) -> Result<(String, ParsedDocument), ApiError> {
        let from_task = doc
            .attribute("parse_task")
            .and_then(|t| self.orch.status(t))
            .map(|s| (s.state, s.result, s.error));
        let key = match from_task {
            Some((TaskState::Succeeded, Some(k), _)) => k,
            Some((TaskState::Failed, _, err)) => {
                return Err(
                    ApiError::new(StatusCode::CONFLICT, "parse-failed", "the document could not be parsed")
                        .details(to_value(&err)),
                )
            }
            Some((state, _, _)) => {
                return Err(
                    ApiError::new(StatusCode::CONFLICT, "not-ready", "parsing has not finished")
                        .details(json!({ "state": state })),
                )
            }
            None => self
                .store()
                .query(doc.collection.as_deref(), Some(Kind::Parsed), None)
                .into_iter()
                .find(|r| r.attribute("source") == Some(doc.key.as_str()) && r.attribute("stage") == Some("parsed"))
                .map(|r| r.key)
                .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "not-ready", "document has no parsed form"))?,
        };
        let bytes = self.store().get(&key)?;
        let parsed = model::deserialize_parsed(&bytes)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?;
        Ok((key, parsed))
    }

    pub fn get_document(&self, doc_id: &str) -> ApiResult {
        let doc = self.document(doc_id)?;
        let parse = doc.attribute("parse_task").and_then(|t| self.orch.status(t));
        let pages = self.parsed(&doc).ok().map(|(_, p)| p.pages.len());
        ok(json!({
            "doc_id": doc.key,
            "name": doc.attribute("name"),
            "collection": doc.collection,
            "parse": parse,
            "pages": pages,
        }))
    }

    fn models(&self, collection: &str) -> Vec<ModelInfo> {
        let mut ms: Vec<ModelInfo> = self
            .store()
            .query(Some(collection), Some(Kind::Model), None)
            .into_iter()
            .map(|r| ModelInfo {
                id: r.key.clone(),
                record: r,
            })
            .collect();
        ms.sort_by(|a, b| (a.record.created_ms, &a.id).cmp(&(b.record.created_ms, &b.id)));
        ms
    }

    fn load_model(&self, id: &str) -> Result<RandomForestModel, ApiError> {
        self.store()
            .record(id)
            .filter(|r| r.kind == Kind::Model)
            .ok_or_else(|| ApiError::not_found("model", id))?;
        RandomForestModel::from_json(&self.store().get(id)?)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()))
    }

    fn annotation(&self, doc_id: &str, page: u32) -> Option<AnnotationRecord> {
        let r = self.store().record(&annotation_id(doc_id, page))?;
        let bytes = self.store().get(&r.key).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn page_of(parsed: &ParsedDocument, n: u32) -> Result<&ParsedPage, ApiError> {
        parsed
            .page(n)
            .ok_or_else(|| ApiError::not_found("page", &format!("{}/{}", parsed.doc_id, n)))
    }

    pub fn get_page(&self, doc_id: &str, n: u32) -> ApiResult {
        let doc = self.document(doc_id)?;
        let (_, parsed) = self.parsed(&doc)?;
        let page = Self::page_of(&parsed, n)?;
        let collection = doc.collection.clone().unwrap_or_default();
        let labels = self.collection(&collection).map(|c| c.labels).ok();
        let latest = self.models(&collection).pop();
        let (mode, model_id, predictions): (&str, Option<String>, Option<PredictionResult>) = match latest {
            None => ("fresh", None, None),
            Some(m) => {
                let model = self.load_model(&m.id)?;
                let p = model
                    .predict(page)
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()))?;
                ("correction", Some(m.id), Some(p))
            }
        };
        ok(json!({
            "doc_id": doc.key,
            "page_number": n,
            "page": page,
            "labels": labels,
            "mode": mode,
            "model_id": model_id,
            "predictions": predictions,
            "annotation": self.annotation(&doc.key, n),
        }))
    }

    pub fn post_annotation(&self, doc_id: &str, n: u32, body: &[u8]) -> ApiResult {
        let doc = self.document(doc_id)?;
        let rec: AnnotationRecord =
            model::from_json(body).map_err(|e| ApiError::unprocessable("schema-violation", e.to_string()))?;
        if rec.doc_id != doc.key || rec.page_number != n {
            return Err(ApiError::unprocessable(
                "wrong-target",
                format!(
                    "record is for {}/{}, posted to {}/{}",
                    rec.doc_id, rec.page_number, doc.key, n
                ),
            ));
        }
        let (_, parsed) = self.parsed(&doc)?;
        let page = Self::page_of(&parsed, n)?;
        let collection = doc.collection.clone().unwrap_or_default();
        let labels = self.collection(&collection)?.labels;
        let violations = validate_record(&rec, page, &labels);
        if !violations.is_empty() {
            let first = &violations[0];
            return Err(
                ApiError::unprocessable(&first.rule, first.message.clone()).details(json!({
                    "violations": violations,
                    "cell_ids": violations.iter().filter_map(|v| v.cell_id).collect::<Vec<_>>(),
                })),
            );
        }
        if rec.source == AnnotationSource::CorrectedFromPrediction {
            let model_id = rec.model_id.as_deref().expect("validated");
            let model = self
                .load_model(model_id)
                .map_err(|e| ApiError::unprocessable("unknown-model", e.message))?;
            let pre = model
                .predict(page)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()))?;
            let expected = diff_corrections(&prediction_labels(&pre), &rec.labels)
                .map_err(|e| ApiError::unprocessable("shape-error", e.to_string()))?;
            if expected != rec.corrections_count {
                return Err(ApiError::unprocessable(
                    "corrections-mismatch",
                    format!(
                        "{} cells differ from the pre-annotation, record says {}",
                        expected, rec.corrections_count
                    ),
                )
                .details(json!({ "expected": expected })));
            }
        }
        let bytes = serde_json::to_vec(&rec).expect("record serializes");
        let id = annotation_id(&doc.key, n);
        let record = MetadataRecord::new("", Kind::Annotation)
            .with_id(id.clone())
            .in_collection(collection)
            .attr("doc_id", doc.key.clone())
            .attr("page", n.to_string())
            .attr("annotator", rec.annotator.clone())
            .attr("submitted_ms", rec.submitted_ms.to_string());
        let key = self.store().put(&bytes, JSON, Some(record))?;
        ok(json!({ "id": id, "key": key, "corrections_count": rec.corrections_count }))
    }

    fn annotations(&self, collection: &str) -> Vec<AnnotationRecord> {
        let mut out: Vec<AnnotationRecord> = self
            .store()
            .query(Some(collection), Some(Kind::Annotation), None)
            .into_iter()
            .filter_map(|r| self.store().get(&r.key).ok())
            .filter_map(|b| serde_json::from_slice(&b).ok())
            .collect();
        out.sort_by(|a, b| (a.submitted_ms, &a.doc_id, a.page_number).cmp(&(b.submitted_ms, &b.doc_id, b.page_number)));
        out
    }

    pub fn train(&self, collection: &str, body: &[u8]) -> ApiResult {
        let c = self.collection(collection)?;
        let config: TrainConfig = if body.iter().all(u8::is_ascii_whitespace) {
            TrainConfig::default()
        } else {
            model::from_json(body).map_err(|e| ApiError::unprocessable("schema-violation", e.to_string()))?
        };
        let mut recs = self.annotations(collection);
        recs.sort_by(|a, b| (&a.doc_id, a.page_number).cmp(&(&b.doc_id, b.page_number)));
        let mut parsed_cache: BTreeMap<String, ParsedDocument> = BTreeMap::new();
        let mut pages = Vec::new();
        for r in &recs {
            if !parsed_cache.contains_key(&r.doc_id) {
                let doc = self.document(&r.doc_id)?;
                parsed_cache.insert(r.doc_id.clone(), self.parsed(&doc)?.1);
            }
            if let Some(p) = parsed_cache[&r.doc_id].page(r.page_number) {
                pages.push(r.apply(p));
            }
        }
        if pages.is_empty() {
            return Err(ApiError::unprocessable(
                "empty-dataset",
                "the collection has no annotated pages",
            ));
        }
        let set = TrainingSet::new(c.labels, pages);
        let set_key = self
            .store()
            .put(&serde_json::to_vec(&set).expect("training set serializes"), JSON, None)?;
        let task = TaskMessage::new(
            Operation::Train,
            vec![set_key],
            json!({ "collection": collection, "config": config }),
        );
        let task_id = self.orch.submit(task)?;
        Ok(Reply::Json(StatusCode::ACCEPTED, json!({ "task_id": task_id })))
    }

    pub fn get_model(&self, id: &str) -> ApiResult {
        let r = self
            .store()
            .record(id)
            .filter(|r| r.kind == Kind::Model)
            .ok_or_else(|| ApiError::not_found("model", id))?;
        let m = self.load_model(id)?;
        let metrics: BTreeMap<&str, f64> = r
            .attributes
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("train_").map(|k| (k, v.parse().unwrap_or(f64::NAN))))
            .collect();
        ok(json!({
            "model_id": id,
            "collection": r.collection,
            "created_ms": r.created_ms,
            "labels": m.labels,
            "config": m.config,
            "metadata": m.metadata,
            "stages": m.stages.len(),
            "metrics": { "train": metrics },
            "download": format!("/models/{id}/download"),
        }))
    }

    pub fn download_model(&self, id: &str) -> ApiResult {
        self.store()
            .record(id)
            .filter(|r| r.kind == Kind::Model)
            .ok_or_else(|| ApiError::not_found("model", id))?;
        Ok(Reply::Bytes(JSON.into(), self.store().get(id)?))
    }

    pub fn convert(&self, doc_id: &str, model_id: Option<&str>) -> ApiResult {
        let doc = self.document(doc_id)?;
        if let Some(m) = model_id {
            self.store()
                .record(m)
                .filter(|r| r.kind == Kind::Model)
                .ok_or_else(|| ApiError::not_found("model", m))?;
        }
        let (parsed_key, parsed) = self.parsed(&doc)?;
        let collection = doc.collection.clone().unwrap_or_default();
        let params = json!({ "collection": collection });
        let task = match model_id {
            Some(m) => TaskMessage::new(Operation::Predict, vec![parsed_key, m.to_string()], params.clone())
                .then(ChainTemplate::new(Operation::Assemble).params(params)),
            None => {
                let mut labeled = parsed.clone();
                let mut missing = Vec::new();
                for p in &mut labeled.pages {
                    match self.annotation(&doc.key, p.page_number()) {
                        Some(a) => *p = a.apply(p),
                        None => missing.push(p.page_number()),
                    }
                }
                if !missing.is_empty() {
                    return Err(ApiError::unprocessable(
                        "unannotated-pages",
                        "without a model every page needs an annotation",
                    )
                    .details(json!({ "pages": missing })));
                }
                let bytes = model::serialize_parsed(&labeled)
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?;
                let record = MetadataRecord::new("", Kind::Parsed)
                    .in_collection(collection)
                    .attr("doc_id", doc.key.clone())
                    .attr("stage", "annotated");
                let key = self.store().put(&bytes, JSON, Some(record))?;
                TaskMessage::new(Operation::Assemble, vec![key], params)
            }
        };
        let task_id = self.orch.submit(task)?;
        Ok(Reply::Json(StatusCode::ACCEPTED, json!({ "task_id": task_id })))
    }

    pub fn get_task(&self, id: &str) -> ApiResult {
        let status: TaskStatus = self.orch.status(id).ok_or_else(|| ApiError::not_found("task", id))?;
        let chain = self.orch.chain_status(id).expect("status exists");
        let mut v = to_value(&status);
        v["chain"] = json!({
            "state": chain.state,
            "result": chain.result,
            "error": chain.error,
            "links": chain.links.iter().map(|l| l.task_id.clone()).collect::<Vec<_>>(),
        });
        ok(v)
    }

    pub fn task_result(&self, id: &str) -> ApiResult {
        let chain = self
            .orch
            .chain_status(id)
            .ok_or_else(|| ApiError::not_found("task", id))?;
        match (chain.state, chain.result) {
            (TaskState::Succeeded, Some(key)) => {
                let media = self
                    .store()
                    .object_info(&key)
                    .map_or_else(|| JSON.to_string(), |o| o.media_type);
                Ok(Reply::Bytes(media, self.store().get(&key)?))
            }
            (state, _) => Err(
                ApiError::new(StatusCode::CONFLICT, "not-ready", "the task has no result")
                    .details(json!({ "state": state, "error": chain.error })),
            ),
        }
    }

    pub fn stats(&self, collection: &str) -> ApiResult {
        self.collection(collection)?;
        let recs = self.annotations(collection);
        let retrains: Vec<u64> = self.models(collection).iter().map(|m| m.record.created_ms).collect();
        let stats = compute_session_stats(&recs, &retrains)
            .map_err(|e| ApiError::unprocessable("bad-ordering", e.to_string()))?;
        ok(to_value(&stats))
    }
}

pub fn annotation_id(doc_id: &str, page: u32) -> String {
    format!("{doc_id}/p{page}")
}

async fn blocking<F>(f: F) -> Response
where
    F: FnOnce() -> ApiResult + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(r)) => r.into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()).into_response(),
    }
}

#[derive(Deserialize)]
struct UploadQuery {
    name: Option<String>,
}

#[derive(Deserialize)]
struct ConvertQuery {
    model: Option<String>,
}

pub fn router(api: Api) -> Router {
    Router::new()
        .route(
            "/collections",
            post(|State(a): State<Api>, b: Bytes| blocking(move || a.create_collection(&b)))
                .get(|State(a): State<Api>| blocking(move || a.list_collections())),
        )
        .route(
            "/collections/:id",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.get_collection(&id))),
        )
        .route(
            "/collections/:id/documents",
            post(
                |State(a): State<Api>, UrlPath(id): UrlPath<String>, Query(q): Query<UploadQuery>, b: Bytes| {
                    blocking(move || a.upload(&id, q.name, &b))
                },
            ),
        )
        .route(
            "/collections/:id/models",
            post(|State(a): State<Api>, UrlPath(id): UrlPath<String>, b: Bytes| blocking(move || a.train(&id, &b))),
        )
        .route(
            "/collections/:id/stats",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.stats(&id))),
        )
        .route(
            "/documents/:id",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.get_document(&id))),
        )
        .route(
            "/documents/:id/pages/:n",
            get(|State(a): State<Api>, UrlPath((id, n)): UrlPath<(String, u32)>| blocking(move || a.get_page(&id, n))),
        )
        .route(
            "/documents/:id/pages/:n/annotation",
            post(
                |State(a): State<Api>, UrlPath((id, n)): UrlPath<(String, u32)>, b: Bytes| {
                    blocking(move || a.post_annotation(&id, n, &b))
                },
            ),
        )
        .route(
            "/documents/:id/convert",
            post(
                |State(a): State<Api>, UrlPath(id): UrlPath<String>, Query(q): Query<ConvertQuery>| {
                    blocking(move || a.convert(&id, q.model.as_deref()))
                },
            ),
        )
        .route(
            "/models/:id",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.get_model(&id))),
        )
        .route(
            "/models/:id/download",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.download_model(&id))),
        )
        .route(
            "/tasks/:id",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.get_task(&id))),
        )
        .route(
            "/tasks/:id/result",
            get(|State(a): State<Api>, UrlPath(id): UrlPath<String>| blocking(move || a.task_result(&id))),
        )
        .route(
            "/openapi.json",
            get(|| async { ([(header::CONTENT_TYPE, "application/json")], OPENAPI) }),
        )
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(api)
}

/// A store, an in-process broker and background workers behind the API.
pub struct Service {
    pub api: Api,
    pool: Option<WorkerPool>,
}

impl Service {
    pub fn open(data_dir: &Path, queues: &QueueConfig) -> Result<Self, StoreError> {
        let store = Arc::new(Store::open(data_dir)?);
        let orch = Arc::new(Orchestrator::new(Arc::new(InProcessBroker::new()), store));
        Ok(Self::with_orchestrator(orch, queues))
    }

    pub fn with_orchestrator(orch: Arc<Orchestrator>, queues: &QueueConfig) -> Self {
        let pool = orch.spawn_workers(queues);
        Self {
            api: Api::new(orch),
            pool: Some(pool),
        }
    }

    pub fn router(&self) -> Router {
        router(self.api.clone())
    }

    pub async fn serve(self, addr: SocketAddr) -> std::io::Result<()> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, self.router()).await
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Some(p) = self.pool.take() {
            p.shutdown();
        }
    }
}
