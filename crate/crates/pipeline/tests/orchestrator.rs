mod common;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use ccs_pipeline::orchestrator::OrchestratorError;
use ccs_pipeline::store::Store;
use ccs_pipeline::task::TaskError;
use ccs_pipeline::{
    ChainTemplate, CrashInjection, FileBroker, Operation, Orchestrator, QueueConfig, RetryPolicy, TaskMessage,
    TaskState,
};
use serde_json::json;

use common::{doc, model_bytes, orchestrator, put_model, put_pdf};

fn parse_msg(key: &str) -> TaskMessage {
    TaskMessage::new(
        Operation::Parse,
        vec![key.to_string()],
        json!({ "source_name": "x.pdf" }),
    )
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_backoff: Duration::from_millis(5),
    }
}

fn parse_results(workers: usize) -> Vec<String> {
    let (_dir, orch) = orchestrator();
    let ids: Vec<String> = (0..10)
        .map(|i| {
            let key = put_pdf(orch.store(), &doc(1, i).render_pdf());
            orch.submit(parse_msg(&key)).unwrap()
        })
        .collect();
    let report = orch.run_workers(&QueueConfig::single("parse", workers));
    assert_eq!(report.succeeded, 10);
    ids.iter()
        .map(|id| {
            let s = orch.status(id).unwrap();
            assert_eq!(s.state, TaskState::Succeeded);
            s.result.unwrap()
        })
        .collect()
}

#[test]
fn worker_count_does_not_change_results() {
    assert_eq!(parse_results(1), parse_results(4));
}

#[test]
fn duplicate_submission_runs_once() {
    let (_dir, orch) = orchestrator();
    let key = put_pdf(orch.store(), &doc(1, 3).render_pdf());
    let a = orch.submit(parse_msg(&key)).unwrap();
    let b = orch.submit(parse_msg(&key)).unwrap();
    assert_eq!(a, b);
    let report = orch.run_workers(&QueueConfig::all(2));
    assert_eq!(report.executed, 1);
    assert_eq!(orch.status(&a).unwrap().state, TaskState::Succeeded);
}

#[test]
fn dangling_input_fails_without_running() {
    let (_dir, orch) = orchestrator();
    let id = orch.submit(parse_msg(&"0".repeat(64))).unwrap();
    let s = orch.status(&id).unwrap();
    assert_eq!(s.state, TaskState::Failed);
    assert_eq!(s.error.unwrap().code, "missing-input");
    assert_eq!(orch.run_workers(&QueueConfig::all(1)).executed, 0);
}

#[test]
fn parse_then_predict_chain() {
    let (_dir, orch) = orchestrator();
    let model = put_model(orch.store(), &model_bytes());
    let pdf = put_pdf(orch.store(), &doc(2, 5).render_pdf());
    let id = orch
        .chain(
            parse_msg(&pdf),
            ChainTemplate::new(Operation::Predict).inputs([model.clone()]),
        )
        .unwrap();
    orch.run_workers(&QueueConfig::all(2));
    let c = orch.chain_status(&id).unwrap();
    assert_eq!(c.state, TaskState::Succeeded);
    assert_eq!(c.links.len(), 2);
    let predicted = orch.store().record(c.result.as_ref().unwrap()).unwrap();
    assert_eq!(predicted.attribute("stage"), Some("predicted"));
    assert_eq!(predicted.attribute("model"), Some(model.as_str()));
}

#[test]
fn failed_parse_stops_the_chain() {
    let (_dir, orch) = orchestrator();
    let orch = Arc::new(Orchestrator::new(orch.broker().clone(), orch.store().clone()).with_retry(fast_retry()));
    let model = put_model(orch.store(), &model_bytes());
    let pdf = put_pdf(orch.store(), b"%PDF-1.4 this is not a document");
    let id = orch
        .chain(parse_msg(&pdf), ChainTemplate::new(Operation::Predict).inputs([model]))
        .unwrap();
    let report = orch.run_workers(&QueueConfig::all(1));
    let c = orch.chain_status(&id).unwrap();
    assert_eq!(c.state, TaskState::Failed);
    assert_eq!(c.links.len(), 1, "predict must never be enqueued");
    assert_eq!(c.links[0].failures, 3);
    assert_eq!(report.executed, 3);
    assert!(!c.error.unwrap().code.is_empty());
}

#[test]
fn three_link_chain_produces_structured_output() {
    let (_dir, orch) = orchestrator();
    let model = put_model(orch.store(), &model_bytes());
    let pdf = put_pdf(orch.store(), &doc(2, 8).render_pdf());
    let then = ChainTemplate::new(Operation::Predict)
        .inputs([model])
        .then(ChainTemplate::new(Operation::Assemble));
    let id = orch.chain(parse_msg(&pdf), then).unwrap();
    orch.run_workers(&QueueConfig::all(1));
    let c = orch.chain_status(&id).unwrap();
    assert_eq!(c.state, TaskState::Succeeded);
    assert_eq!(c.links.len(), 3);
    let bytes = orch.store().get(c.result.as_ref().unwrap()).unwrap();
    let out = ccs_core::model::deserialize_structured(&bytes).unwrap();
    assert!(!out.main_text.is_empty());
}

#[test]
fn first_delivery_crash_is_redelivered() {
    let (_dir, base) = orchestrator();
    let crash = CrashInjection {
        max_attempt: 1,
        ..CrashInjection::new(1.0, 7)
    };
    let orch = Orchestrator::new(base.broker().clone(), base.store().clone()).with_crash_injection(crash);
    let key = put_pdf(orch.store(), &doc(1, 2).render_pdf());
    let id = orch.submit(parse_msg(&key)).unwrap();
    let report = orch.run_workers(&QueueConfig::single("parse", 1));
    let s = orch.status(&id).unwrap();
    assert_eq!(s.state, TaskState::Succeeded);
    assert_eq!(s.attempt, 2);
    assert_eq!(s.failures, 0);
    assert_eq!(report.crashes, 1);
}

#[test]
fn crashes_keep_outputs_identical() {
    let clean = parse_results(2);
    let (_dir, base) = orchestrator();
    let orch = Orchestrator::new(base.broker().clone(), base.store().clone())
        .with_crash_injection(CrashInjection::new(0.3, 99));
    let ids: Vec<String> = (0..10)
        .map(|i| {
            let key = put_pdf(orch.store(), &doc(1, i).render_pdf());
            orch.submit(parse_msg(&key)).unwrap()
        })
        .collect();
    let report = orch.run_workers(&QueueConfig::single("parse", 2));
    assert!(report.crashes > 0);
    let crashed: Vec<String> = ids.iter().map(|id| orch.status(id).unwrap().result.unwrap()).collect();
    assert_eq!(clean, crashed);
}

#[test]
fn poisoned_task_fails_after_three_failures() {
    let (_dir, base) = orchestrator();
    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let orch = Orchestrator::new(base.broker().clone(), base.store().clone())
        .with_retry(fast_retry())
        .with_handler(Operation::Parse, move |_: &Store, _: &TaskMessage| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(TaskError::new("poison", "always fails"))
        });
    let key = put_pdf(orch.store(), b"anything");
    let id = orch.submit(parse_msg(&key)).unwrap();
    let report = orch.run_workers(&QueueConfig::single("parse", 1));
    let s = orch.status(&id).unwrap();
    assert_eq!(s.state, TaskState::Failed);
    assert_eq!(s.failures, 3);
    assert_eq!(s.error.unwrap().code, "poison");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(report.failed, 1);
    assert_eq!(report.retried, 2);
}

#[test]
fn flaky_task_succeeds_on_retry() {
    let (_dir, base) = orchestrator();
    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let orch = Orchestrator::new(base.broker().clone(), base.store().clone())
        .with_retry(fast_retry())
        .with_handler(Operation::Parse, move |store: &Store, _: &TaskMessage| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                return Err(TaskError::new("transient", "first call fails"));
            }
            store
                .put(b"ok", "text/plain", None)
                .map_err(|e| TaskError::new("storage", e.to_string()))
        });
    let key = put_pdf(orch.store(), b"anything");
    let id = orch.submit(parse_msg(&key)).unwrap();
    orch.run_workers(&QueueConfig::single("parse", 1));
    let s = orch.status(&id).unwrap();
    assert_eq!(s.state, TaskState::Succeeded);
    assert_eq!(s.failures, 1);
    assert_eq!(orch.store().get(&s.result.unwrap()).unwrap(), b"ok");
}

#[test]
fn missing_handler_is_rejected_at_submit() {
    let (_dir, base) = orchestrator();
    let orch = Orchestrator::new(base.broker().clone(), base.store().clone()).without_handler(Operation::Train);
    let err = orch
        .submit(TaskMessage::new(Operation::Train, vec![], json!(null)))
        .unwrap_err();
    assert!(matches!(err, OrchestratorError::NoSuchOperation(_)));
    assert_eq!(err.code(), "no-such-operation");
    let key = put_pdf(orch.store(), &doc(1, 1).render_pdf());
    let err = orch
        .chain(parse_msg(&key), ChainTemplate::new(Operation::Train))
        .unwrap_err();
    assert_eq!(err.code(), "no-such-operation");
}

#[test]
fn two_processes_share_a_file_broker() {
    let dir = tempfile::TempDir::new().unwrap();
    let make = || {
        let store = Arc::new(Store::open(dir.path().join("store")).unwrap());
        let broker = Arc::new(FileBroker::open(dir.path().join("queue")).unwrap());
        Orchestrator::new(broker, store)
    };
    let a = make();
    let b = make();
    let ids: Vec<String> = (0..8)
        .map(|i| {
            let key = put_pdf(a.store(), &doc(1, 20 + i).render_pdf());
            a.submit(parse_msg(&key)).unwrap()
        })
        .collect();
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| a.run_workers(&QueueConfig::single("parse", 1)));
        let hb = s.spawn(|| b.run_workers(&QueueConfig::single("parse", 1)));
        (ha.join().unwrap(), hb.join().unwrap())
    });
    assert_eq!(ra.executed + rb.executed, 8);
    for id in &ids {
        assert_eq!(b.status(id).unwrap().state, TaskState::Succeeded);
    }
}

#[test]
fn finished_statuses_expire() {
    let (_dir, orch) = orchestrator();
    let key = put_pdf(orch.store(), &doc(1, 4).render_pdf());
    let id = orch.submit(parse_msg(&key)).unwrap();
    assert_eq!(orch.cleanup_statuses(Duration::ZERO).unwrap(), 0);
    orch.run_workers(&QueueConfig::single("parse", 1));
    assert_eq!(orch.cleanup_statuses(Duration::from_secs(3600)).unwrap(), 0);
    assert_eq!(orch.cleanup_statuses(Duration::ZERO).unwrap(), 1);
    assert!(orch.status(&id).is_none());
}

#[test]
fn background_pool_serves_submissions() {
    let (_dir, orch) = orchestrator();
    let pool = orch.spawn_workers(&QueueConfig::all(1));
    let key = put_pdf(orch.store(), &doc(1, 6).render_pdf());
    let id = orch.submit(parse_msg(&key)).unwrap();
    let c = orch.wait(&id, Duration::from_secs(30)).unwrap();
    assert_eq!(c.state, TaskState::Succeeded);
    let report = pool.shutdown();
    assert_eq!(report.succeeded, 1);
}
