#![allow(dead_code)]

use std::sync::Arc;

use ccs_core::ml::{self, TrainConfig};
use ccs_core::model::LabelSet;
use ccs_core::synth::corpus::{generate_doc, template_corpus, SynthDoc, Template};
use ccs_pipeline::store::{Kind, MetadataRecord};
use ccs_pipeline::{InProcessBroker, Orchestrator, Store};
use tempfile::TempDir;

pub fn orchestrator() -> (TempDir, Arc<Orchestrator>) {
    let dir = TempDir::new().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let orch = Orchestrator::new(Arc::new(InProcessBroker::new()), store);
    (dir, Arc::new(orch))
}

pub fn doc(pages: usize, seed: u64) -> SynthDoc {
    generate_doc(Template::Journal, pages, seed, format!("doc-{seed}"))
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        n_trees: 12,
        n_refinement_stages: 1,
        cv_folds: 2,
        ..TrainConfig::default()
    }
}

pub fn model_bytes() -> Vec<u8> {
    let pages: Vec<_> = template_corpus(Template::Journal, 6, 11)
        .iter()
        .flat_map(|d| d.to_parsed().pages)
        .collect();
    ml::train(&pages, &LabelSet::template_six(), &small_config())
        .unwrap()
        .to_json()
}

pub fn put_pdf(store: &Store, bytes: &[u8]) -> String {
    store
        .put(bytes, "application/pdf", Some(MetadataRecord::new("", Kind::Pdf)))
        .unwrap()
}

pub fn put_model(store: &Store, bytes: &[u8]) -> String {
    store
        .put(bytes, "application/json", Some(MetadataRecord::new("", Kind::Model)))
        .unwrap()
}

pub mod http {
    use std::time::{Duration, Instant};

    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use axum::Router;
    use ccs_core::model::{ParsedDocument, ParsedPage};
    use ccs_core::synth::corpus::{oracle_label, SynthDoc};
    use serde_json::{json, Value};
    use tower::ServiceExt;

    pub async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(Body::from(body))
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, bytes.to_vec())
    }

    pub async fn json(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        let bytes = if body.is_null() {
            Vec::new()
        } else {
            serde_json::to_vec(&body).unwrap()
        };
        let (s, b) = call(app, method, uri, bytes).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
        json(app, "GET", uri, Value::Null).await
    }

    /// Polls a task until its chain is terminal.
    pub async fn finish(app: &Router, task_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let (s, v) = get(app, &format!("/tasks/{task_id}")).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            let state = v["chain"]["state"].as_str().unwrap().to_string();
            if state == "succeeded" || state == "failed" {
                return v;
            }
            assert!(Instant::now() < deadline, "task {task_id} stuck in {state}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    pub async fn create_collection(app: &Router, name: &str) -> String {
        let (s, v) = json(app, "POST", "/collections", json!({ "name": name })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    /// Uploads a PDF and waits for it to parse. Returns the document id.
    pub async fn upload(app: &Router, collection: &str, name: &str, pdf: Vec<u8>) -> String {
        let (s, b) = call(
            app,
            "POST",
            &format!("/collections/{collection}/documents?name={name}"),
            pdf,
        )
        .await;
        assert_eq!(s, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&b));
        let v: Value = serde_json::from_slice(&b).unwrap();
        let done = finish(app, v["task_id"].as_str().unwrap()).await;
        assert_eq!(done["chain"]["state"], "succeeded", "{done}");
        v["doc_id"].as_str().unwrap().to_string()
    }

    /// A served page with every cell labeled from the generator's truth.
    pub fn oracle_page(page: &Value, truth: &SynthDoc) -> ParsedPage {
        let page: ParsedPage = serde_json::from_value(page.clone()).unwrap();
        let mut doc = ParsedDocument::new("x", "x", vec![page]);
        oracle_label(&mut doc, truth);
        let mut page = doc.pages.pop().unwrap();
        for c in &mut page.cells {
            c.label.get_or_insert_with(|| "text".to_string());
        }
        page
    }

    pub struct Submission<'a> {
        pub doc_id: &'a str,
        pub page: &'a ParsedPage,
        pub started_ms: u64,
        pub submitted_ms: u64,
        pub model_id: Option<&'a str>,
        pub corrections: u32,
    }

    pub fn record(s: &Submission) -> Value {
        let labels: Vec<Value> = s
            .page
            .cells
            .iter()
            .map(|c| json!({ "cell_id": c.id, "label": c.label.clone().unwrap() }))
            .collect();
        let mut v = json!({
            "doc_id": s.doc_id,
            "page_number": s.page.page_number(),
            "labels": labels,
            "annotator": "tester",
            "started_ms": s.started_ms,
            "submitted_ms": s.submitted_ms,
            "source": if s.model_id.is_some() { "corrected-from-prediction" } else { "fresh" },
            "corrections_count": s.corrections,
        });
        if let Some(m) = s.model_id {
            v["model_id"] = json!(m);
        }
        v
    }
}
