mod common;

use axum::http::StatusCode;
use axum::Router;
use ccs_core::model::ParsedPage;
use ccs_pipeline::service::Service;
use ccs_pipeline::QueueConfig;
use serde_json::{json, Value};

use common::http::{call, create_collection, finish, get, json, oracle_page, record, upload, Submission};
use common::{doc, orchestrator, small_config};

fn service() -> (tempfile::TempDir, Service) {
    let (dir, orch) = orchestrator();
    (dir, Service::with_orchestrator(orch, &QueueConfig::all(1)))
}

async fn page(app: &Router, doc_id: &str, n: u32) -> Value {
    let (s, v) = get(app, &format!("/documents/{doc_id}/pages/{n}")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

async fn annotate(app: &Router, doc_id: &str, page: &ParsedPage, t0: u64) -> (StatusCode, Value) {
    let r = record(&Submission {
        doc_id,
        page,
        started_ms: t0,
        submitted_ms: t0 + 30_000,
        model_id: None,
        corrections: 0,
    });
    let n = page.page_number();
    json(app, "POST", &format!("/documents/{doc_id}/pages/{n}/annotation"), r).await
}

#[tokio::test(flavor = "multi_thread")]
async fn collections_are_unique_by_name() {
    let (_d, svc) = service();
    let app = svc.router();
    let id = create_collection(&app, "papers").await;
    let (s, v) = json(&app, "POST", "/collections", json!({ "name": "papers" })).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "duplicate");
    let (s, v) = get(&app, "/collections").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["collections"][0]["id"], id.as_str());
    let (s, v) = json(&app, "POST", "/collections", json!({ "name": "" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, _) = get(&app, "/collections/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_parses_and_rejects_duplicates() {
    let (_d, svc) = service();
    let app = svc.router();
    let c = create_collection(&app, "c").await;
    let pdf = doc(2, 1).render_pdf();
    let doc_id = upload(&app, &c, "one.pdf", pdf.clone()).await;

    let (s, v) = get(&app, &format!("/documents/{doc_id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["pages"], 2);
    assert_eq!(v["name"], "one.pdf");
    assert_eq!(v["parse"]["state"], "succeeded");

    let (s, b) = call(&app, "POST", &format!("/collections/{c}/documents"), pdf).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["details"]["doc_id"], doc_id.as_str());
    assert!(v["details"]["task_id"].is_string());

    let (s, _) = call(&app, "POST", &format!("/collections/{c}/documents"), Vec::new()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/collections/missing/documents", b"%PDF".to_vec()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = get(&app, &format!("/collections/{c}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["documents"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn corrupt_upload_reports_parse_failure() {
    let (_d, svc) = service();
    let app = svc.router();
    let c = create_collection(&app, "c").await;
    let (s, b) = call(
        &app,
        "POST",
        &format!("/collections/{c}/documents"),
        b"garbage".to_vec(),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let v: Value = serde_json::from_slice(&b).unwrap();
    let done = finish(&app, v["task_id"].as_str().unwrap()).await;
    assert_eq!(done["chain"]["state"], "failed");
    let (s, v) = get(&app, &format!("/documents/{}/pages/1", v["doc_id"].as_str().unwrap())).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "parse-failed");
}

#[tokio::test(flavor = "multi_thread")]
async fn annotation_validation() {
    let (_d, svc) = service();
    let app = svc.router();
    let c = create_collection(&app, "c").await;
    let truth = doc(1, 2);
    let doc_id = upload(&app, &c, "a.pdf", truth.render_pdf()).await;
    let v = page(&app, &doc_id, 1).await;
    assert_eq!(v["mode"], "fresh");
    assert!(v["model_id"].is_null());
    let labeled = oracle_page(&v["page"], &truth);

    let mut short = labeled.clone();
    let dropped = short.cells.pop().unwrap().id;
    let (s, v) = annotate(&app, &doc_id, &short, 1_000).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "missing-cell");
    assert!(v["details"]["cell_ids"].as_array().unwrap().contains(&json!(dropped)));

    let mut bad = labeled.clone();
    bad.cells[0].label = Some("not-a-label".into());
    let (s, v) = annotate(&app, &doc_id, &bad, 1_000).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "unknown-label");

    let mut r = record(&Submission {
        doc_id: &doc_id,
        page: &labeled,
        started_ms: 1_000,
        submitted_ms: 2_000,
        model_id: None,
        corrections: 3,
    });
    let (s, v) = json(
        &app,
        "POST",
        &format!("/documents/{doc_id}/pages/1/annotation"),
        r.clone(),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "fresh-with-corrections");

    r["corrections_count"] = json!(0);
    let (s, v) = json(
        &app,
        "POST",
        &format!("/documents/{doc_id}/pages/2/annotation"),
        r.clone(),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "wrong-target");

    let (s, v) = json(&app, "POST", &format!("/documents/{doc_id}/pages/1/annotation"), r).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let v = page(&app, &doc_id, 1).await;
    assert_eq!(v["annotation"]["labels"].as_array().unwrap().len(), labeled.cells.len());
}

#[tokio::test(flavor = "multi_thread")]
async fn convert_paths() {
    let (_d, svc) = service();
    let app = svc.router();
    let c = create_collection(&app, "c").await;
    let truth = doc(1, 3);
    let doc_id = upload(&app, &c, "a.pdf", truth.render_pdf()).await;

    let (s, v) = json(
        &app,
        "POST",
        &format!("/documents/{doc_id}/convert?model={}", "f".repeat(64)),
        Value::Null,
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{v}");
    let (s, v) = json(&app, "POST", &format!("/documents/{doc_id}/convert"), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "unannotated-pages");
    assert_eq!(v["details"]["pages"], json!([1]));

    let labeled = oracle_page(&page(&app, &doc_id, 1).await["page"], &truth);
    assert_eq!(annotate(&app, &doc_id, &labeled, 1_000).await.0, StatusCode::OK);
    let (s, v) = json(&app, "POST", &format!("/documents/{doc_id}/convert"), Value::Null).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let task = v["task_id"].as_str().unwrap();
    assert_eq!(finish(&app, task).await["chain"]["state"], "succeeded");
    let (s, bytes) = call(&app, "GET", &format!("/tasks/{task}/result"), Vec::new()).await;
    assert_eq!(s, StatusCode::OK);
    let out = ccs_core::model::deserialize_structured(&bytes).unwrap();
    assert!(!out.main_text.is_empty());

    let (s, _) = get(&app, "/tasks/unknown").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn training_switches_pages_to_correction_mode() {
    let (_d, svc) = service();
    let app = svc.router();
    let c = create_collection(&app, "c").await;

    let (s, v) = json(&app, "POST", &format!("/collections/{c}/models"), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "empty-dataset");

    let mut t = 1_000_000u64;
    for seed in 0..3 {
        let truth = doc(2, 40 + seed);
        let doc_id = upload(&app, &c, &format!("d{seed}.pdf"), truth.render_pdf()).await;
        for n in 1..=2 {
            let labeled = oracle_page(&page(&app, &doc_id, n).await["page"], &truth);
            let (s, v) = annotate(&app, &doc_id, &labeled, t).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            t += 40_000;
        }
    }

    let (s, v) = json(&app, "POST", &format!("/collections/{c}/models"), json!(small_config())).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let done = finish(&app, v["task_id"].as_str().unwrap()).await;
    assert_eq!(done["chain"]["state"], "succeeded", "{done}");
    let model_id = done["chain"]["result"].as_str().unwrap().to_string();

    let (s, v) = get(&app, &format!("/models/{model_id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["collection"], c.as_str());
    assert!(v["metrics"]["train"]["macro_f1"].as_f64().unwrap() > 0.5);
    let (s, bytes) = call(&app, "GET", &format!("/models/{model_id}/download"), Vec::new()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(ccs_core::ml::RandomForestModel::from_json(&bytes).is_ok());

    let truth = doc(1, 77);
    let doc_id = upload(&app, &c, "new.pdf", truth.render_pdf()).await;
    let v = page(&app, &doc_id, 1).await;
    assert_eq!(v["mode"], "correction");
    assert_eq!(v["model_id"], model_id.as_str());
    let predicted: Vec<(u64, String)> = v["predictions"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["cell_id"].as_u64().unwrap(), c["label"].as_str().unwrap().to_string()))
        .collect();
    let mut labeled = oracle_page(&v["page"], &truth);
    // force one disagreement with the pre-annotation
    let flip = labeled.cells[0].id;
    let pre = &predicted.iter().find(|(id, _)| *id == u64::from(flip)).unwrap().1;
    labeled.cells[0].label = Some(if pre == "author" { "text" } else { "author" }.into());
    let expected = labeled
        .cells
        .iter()
        .filter(|c| {
            predicted
                .iter()
                .any(|(id, l)| *id == u64::from(c.id) && Some(l) != c.label.as_ref())
        })
        .count() as u32;
    assert!(expected >= 1);

    let sub = |corrections| {
        record(&Submission {
            doc_id: &doc_id,
            page: &labeled,
            started_ms: t,
            submitted_ms: t + 20_000,
            model_id: Some(&model_id),
            corrections,
        })
    };
    let uri = format!("/documents/{doc_id}/pages/1/annotation");
    let (s, v) = json(&app, "POST", &uri, sub(expected + 1)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "corrections-mismatch");
    assert_eq!(v["details"]["expected"], expected);
    let mut no_model = sub(expected);
    no_model.as_object_mut().unwrap().remove("model_id");
    let (s, v) = json(&app, "POST", &uri, no_model).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "missing-model");
    let (s, v) = json(&app, "POST", &uri, sub(expected)).await;
    assert_eq!(s, StatusCode::OK, "{v}");

    let (s, v) = json(
        &app,
        "POST",
        &format!("/documents/{doc_id}/convert?model={model_id}"),
        Value::Null,
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = finish(&app, v["task_id"].as_str().unwrap()).await;
    assert_eq!(done["chain"]["state"], "succeeded");
    assert_eq!(done["chain"]["links"].as_array().unwrap().len(), 2);

    let (s, v) = get(&app, &format!("/collections/{c}/stats")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["retrain_markers"].as_array().unwrap().len(), 1);
    assert!(!v["windows"].as_array().unwrap().is_empty() || !v["timeline"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn openapi_lists_every_route() {
    let (_d, svc) = service();
    let app = svc.router();
    let (s, v) = get(&app, "/openapi.json").await;
    assert_eq!(s, StatusCode::OK);
    let paths = v["paths"].as_object().expect("paths object");
    for p in [
        "/collections",
        "/collections/{id}",
        "/collections/{id}/documents",
        "/collections/{id}/models",
        "/collections/{id}/stats",
        "/documents/{id}",
        "/documents/{id}/pages/{n}",
        "/documents/{id}/pages/{n}/annotation",
        "/documents/{id}/convert",
        "/models/{id}",
        "/models/{id}/download",
        "/tasks/{id}",
        "/tasks/{id}/result",
    ] {
        assert!(paths.contains_key(p), "missing {p}");
    }
    let schema = &v["components"]["schemas"]["AnnotationRecord"];
    let rec = ccs_pipeline::AnnotationRecord {
        doc_id: "d".into(),
        page_number: 1,
        labels: vec![],
        annotator: "a".into(),
        started_ms: 1,
        submitted_ms: 2,
        source: ccs_pipeline::annotation::AnnotationSource::CorrectedFromPrediction,
        corrections_count: 0,
        model_id: Some("m".into()),
        flags: vec![ccs_pipeline::annotation::CellFlag {
            cell_id: 0,
            note: "merged".into(),
        }],
    };
    let rec = serde_json::to_value(rec).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for k in rec.as_object().unwrap().keys() {
        assert!(props.contains_key(k), "schema lacks {k}");
    }
    for k in schema["required"].as_array().unwrap() {
        assert!(rec.get(k.as_str().unwrap()).is_some(), "record lacks {k}");
    }
    assert_eq!(props.len(), rec.as_object().unwrap().len());
}
