//! Task submission, chaining and worker execution over a [`Broker`].
//!
//! Task statuses live in the metadata index (`tasks` table). Workers keep
//! no state of their own: everything they read or write goes through the
//! store, and a redelivered task that already succeeded is acked without
//! running again.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ccs_core::ml::splitmix64;
use serde::{Deserialize, Serialize};

use crate::broker::{Broker, BrokerError, Delivery};
use crate::ops::{default_handler, Handler};
use crate::store::{now_ms, Store, StoreError, Table};
use crate::task::{Operation, TaskError, TaskMessage, TaskState, TaskStatus};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("no-such-operation: '{0}'")]
    NoSuchOperation(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bad-config: {0}")]
    Config(String),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::NoSuchOperation(_) => "no-such-operation",
            OrchestratorError::Broker(_) => "broker",
            OrchestratorError::Store(_) => "storage",
            OrchestratorError::Config(_) => "bad-config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Handler failures after which a task is marked failed.
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before the retry that follows failure number `failures`.
    pub fn backoff(&self, failures: u32) -> Duration {
        self.base_backoff * 2u32.saturating_pow(failures.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforeRun,
    AfterRun,
}

/// Seeded fault injection: each delivery up to attempt `max_attempt`
/// crashes its worker with probability `rate`, either before the handler
/// runs or after it has written its output but before the ack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrashInjection {
    pub rate: f64,
    pub seed: u64,
    pub max_attempt: u32,
}

impl CrashInjection {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            seed,
            max_attempt: u32::MAX,
        }
    }

    pub fn point(&self, task_id: &str, attempt: u32) -> Option<CrashPoint> {
        if attempt > self.max_attempt {
            return None;
        }
        let mut h = splitmix64(self.seed ^ u64::from(attempt).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for chunk in task_id.as_bytes().chunks(8) {
            let mut b = [0u8; 8];
            b[..chunk.len()].copy_from_slice(chunk);
            h = splitmix64(h ^ u64::from_le_bytes(b));
        }
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        (u < self.rate).then_some(if h & 1 == 0 {
            CrashPoint::BeforeRun
        } else {
            CrashPoint::AfterRun
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub workers: usize,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub queues: BTreeMap<String, QueueSpec>,
    pub rationale: String,
}

impl QueueConfig {
    pub fn single(queue: &str, workers: usize) -> Self {
        Self {
            queues: [(
                queue.to_string(),
                QueueSpec {
                    workers,
                    max_in_flight: None,
                },
            )]
            .into(),
            rationale: String::new(),
        }
    }

    /// One worker per queue used by the built-in operations.
    pub fn all(workers: usize) -> Self {
        let mut c = Self::single("parse", workers);
        for q in ["ml", "assemble"] {
            c.queues.insert(
                q.to_string(),
                QueueSpec {
                    workers,
                    max_in_flight: None,
                },
            );
        }
        c
    }

    fn effective(&self) -> Vec<(String, usize)> {
        self.queues
            .iter()
            .map(|(q, s)| (q.clone(), s.max_in_flight.map_or(s.workers, |m| m.min(s.workers))))
            .collect()
    }
}

impl FromStr for QueueConfig {
    type Err = OrchestratorError;

    /// `parse=4,ml=2,assemble=1`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut queues = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (q, n) = part
                .split_once('=')
                .ok_or_else(|| OrchestratorError::Config(format!("expected queue=count, got '{part}'")))?;
            let workers = n
                .trim()
                .parse()
                .map_err(|_| OrchestratorError::Config(format!("bad worker count '{n}'")))?;
            queues.insert(
                q.trim().to_string(),
                QueueSpec {
                    workers,
                    max_in_flight: None,
                },
            );
        }
        if queues.is_empty() {
            return Err(OrchestratorError::Config("no queues given".into()));
        }
        Ok(Self {
            queues,
            rationale: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    /// Handler invocations, including retries and crashed runs.
    pub executed: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub retried: u64,
    pub crashes: u64,
    /// Redeliveries of tasks that had already finished.
    pub duplicates: u64,
    pub seconds: f64,
}

#[derive(Default)]
struct Counters {
    executed: AtomicU64,
    succeeded: AtomicU64,
    failed: AtomicU64,
    retried: AtomicU64,
    crashes: AtomicU64,
    duplicates: AtomicU64,
}

impl Counters {
    fn report(&self, seconds: f64) -> ExecutionReport {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ExecutionReport {
            executed: g(&self.executed),
            succeeded: g(&self.succeeded),
            failed: g(&self.failed),
            retried: g(&self.retried),
            crashes: g(&self.crashes),
            duplicates: g(&self.duplicates),
            seconds,
        }
    }
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::Relaxed);
}

/// Final state of a task and everything chained after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub task_id: String,
    pub state: TaskState,
    pub result: Option<String>,
    pub error: Option<TaskError>,
    pub links: Vec<TaskStatus>,
}

struct Crashed;

pub struct Orchestrator {
    broker: Arc<dyn Broker>,
    store: Arc<Store>,
    handlers: BTreeMap<Operation, Arc<dyn Handler>>,
    retry: RetryPolicy,
    crash: Option<CrashInjection>,
    poll: Duration,
}

impl Orchestrator {
    pub fn new(broker: Arc<dyn Broker>, store: Arc<Store>) -> Self {
        let handlers = Operation::ALL
            .into_iter()
            .map(|op| (op, Arc::new(default_handler(op)) as Arc<dyn Handler>))
            .collect();
        Self {
            broker,
            store,
            handlers,
            retry: RetryPolicy::default(),
            crash: None,
            poll: Duration::from_millis(20),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_crash_injection(mut self, crash: CrashInjection) -> Self {
        self.crash = Some(crash);
        self
    }

    pub fn with_handler(mut self, op: Operation, handler: impl Handler + 'static) -> Self {
        self.handlers.insert(op, Arc::new(handler));
        self
    }

    pub fn without_handler(mut self, op: Operation) -> Self {
        self.handlers.remove(&op);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn broker(&self) -> &Arc<dyn Broker> {
        &self.broker
    }

    /// Enqueues `msg` once per task id. Resubmitting an id returns it
    /// without a second execution. Tasks with unresolvable inputs fail
    /// immediately with `missing-input`.
    pub fn submit(&self, msg: TaskMessage) -> Result<String, OrchestratorError> {
        self.submit_with_parent(msg, None)
    }

    /// Submits `first` with `then` chained after it.
    pub fn chain(&self, first: TaskMessage, then: crate::task::ChainTemplate) -> Result<String, OrchestratorError> {
        self.submit(first.then(then))
    }

    fn check_operations(&self, msg: &TaskMessage) -> Result<(), OrchestratorError> {
        let mut op = Some(msg.operation);
        let mut next = msg.chain.as_deref();
        while let Some(o) = op {
            if !self.handlers.contains_key(&o) {
                return Err(OrchestratorError::NoSuchOperation(o.to_string()));
            }
            op = next.map(|t| t.operation);
            next = next.and_then(|t| t.then.as_deref());
        }
        Ok(())
    }

    fn submit_with_parent(&self, msg: TaskMessage, parent: Option<String>) -> Result<String, OrchestratorError> {
        self.check_operations(&msg)?;
        let mut msg = msg.seal();
        msg.attempt = 1;
        let id = msg.task_id.clone();
        let status = TaskStatus::queued(&msg, parent, now_ms());
        if !self.store.index.put_if_absent(Table::Tasks, &id, &status)? {
            return Ok(id);
        }
        if let Some(k) = msg.inputs.iter().find(|k| !self.store.objects.contains(k)) {
            let err = TaskError::new("missing-input", format!("no object '{k}'"));
            self.finish(&id, TaskState::Failed, None, Some(err), None)?;
            return Ok(id);
        }
        self.broker.publish(msg, 0)?;
        Ok(id)
    }

    pub fn status(&self, task_id: &str) -> Option<TaskStatus> {
        self.store.index.get(Table::Tasks, task_id)
    }

    pub fn chain_status(&self, task_id: &str) -> Option<ChainStatus> {
        let mut links = vec![self.status(task_id)?];
        while let Some(next) = links.last().and_then(|s| s.next.clone()) {
            match self.status(&next) {
                Some(s) => links.push(s),
                None => break,
            }
        }
        let last = links.last().expect("at least one link");
        Some(ChainStatus {
            task_id: task_id.to_string(),
            state: last.state,
            result: if last.state == TaskState::Succeeded {
                last.result.clone()
            } else {
                None
            },
            error: last.error.clone().filter(|_| last.state == TaskState::Failed),
            links,
        })
    }

    /// Polls until the chain reaches a terminal state or `timeout` passes.
    pub fn wait(&self, task_id: &str, timeout: Duration) -> Option<ChainStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.chain_status(task_id)?;
            if s.state.is_terminal() || Instant::now() >= deadline {
                return Some(s);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    fn update<F: FnOnce(&mut TaskStatus)>(&self, id: &str, f: F) -> Result<Option<TaskStatus>, OrchestratorError> {
        Ok(self.store.index.update(Table::Tasks, id, |cur: Option<TaskStatus>| {
            let mut s = cur?;
            let before = s.state;
            f(&mut s);
            before.can_become(s.state).then_some(s)
        })?)
    }

    fn finish(
        &self,
        id: &str,
        state: TaskState,
        result: Option<String>,
        error: Option<TaskError>,
        next: Option<String>,
    ) -> Result<(), OrchestratorError> {
        self.update(id, |s| {
            s.state = state;
            s.result = result;
            s.error = error;
            s.next = next;
            s.finished_ms = Some(now_ms());
        })?;
        Ok(())
    }

    fn enqueue_next(&self, msg: &TaskMessage, result: &str) -> Result<Option<String>, OrchestratorError> {
        match &msg.chain {
            None => Ok(None),
            Some(t) => Ok(Some(
                self.submit_with_parent(t.instantiate(result), Some(msg.task_id.clone()))?,
            )),
        }
    }

    fn execute(&self, d: &Delivery, c: &Counters) -> Result<Result<(), Crashed>, OrchestratorError> {
        let msg = &d.message;
        let id = msg.task_id.as_str();
        if let Some(s) = self.status(id).filter(|s| s.state.is_terminal()) {
            if let (TaskState::Succeeded, Some(r)) = (s.state, &s.result) {
                self.enqueue_next(msg, r)?;
            }
            bump(&c.duplicates);
            self.broker.ack(d)?;
            return Ok(Ok(()));
        }
        let Some(status) = self.update(id, |s| {
            s.state = TaskState::Running;
            s.attempt = msg.attempt;
            s.started_ms.get_or_insert_with(now_ms);
        })?
        else {
            // No status row: the task was cleaned up or never submitted here.
            self.broker.ack(d)?;
            return Ok(Ok(()));
        };
        let crash = self.crash.and_then(|ci| ci.point(id, msg.attempt));
        if crash == Some(CrashPoint::BeforeRun) {
            return Ok(Err(Crashed));
        }
        bump(&c.executed);
        let outcome = match self.handlers.get(&msg.operation) {
            Some(h) => h.run(&self.store, msg),
            None => Err(TaskError::new("no-such-operation", msg.operation.to_string())),
        };
        if crash == Some(CrashPoint::AfterRun) {
            return Ok(Err(Crashed));
        }
        match outcome {
            Ok(key) => {
                let next = self.enqueue_next(msg, &key)?;
                self.finish(id, TaskState::Succeeded, Some(key), None, next)?;
                bump(&c.succeeded);
            }
            Err(e) => {
                let failures = status.failures + 1;
                if failures < self.retry.max_attempts {
                    let mut again = msg.clone();
                    again.attempt += 1;
                    let due = now_ms() + self.retry.backoff(failures).as_millis() as u64;
                    self.update(id, |s| {
                        s.failures = failures;
                        s.error = Some(e);
                    })?;
                    self.broker.publish(again, due)?;
                    bump(&c.retried);
                } else {
                    self.update(id, |s| s.failures = failures)?;
                    self.finish(id, TaskState::Failed, None, Some(e), None)?;
                    bump(&c.failed);
                }
            }
        }
        self.broker.ack(d)?;
        Ok(Ok(()))
    }

    fn worker_loop(&self, queue: &str, name: &str, stop: &AtomicBool, drain: bool, c: &Counters) {
        let queues = [queue.to_string()];
        let mut generation = 0u32;
        let mut worker = format!("{name}-{generation}");
        while !stop.load(Ordering::Relaxed) {
            let claimed = match self.broker.claim(&queues, &worker, self.poll) {
                Ok(c) => c,
                Err(e) => {
                    tracing::warn!(%worker, error = %e, "claim failed");
                    std::thread::sleep(self.poll);
                    continue;
                }
            };
            match claimed {
                None => {
                    if drain && self.broker.outstanding().map(|n| n == 0).unwrap_or(false) {
                        break;
                    }
                }
                Some(d) => match self.execute(&d, c) {
                    Ok(Ok(())) => {}
                    Ok(Err(Crashed)) => {
                        bump(&c.crashes);
                        tracing::debug!(%worker, task = %d.message.task_id, "injected crash");
                        // The broker notices the dead worker and redelivers.
                        if let Err(e) = self.broker.recover(&worker) {
                            tracing::warn!(%worker, error = %e, "recover failed");
                        }
                        generation += 1;
                        worker = format!("{name}-{generation}");
                    }
                    Err(e) => {
                        tracing::warn!(%worker, error = %e, "task bookkeeping failed");
                        let _ = self.broker.recover(&worker);
                        generation += 1;
                        worker = format!("{name}-{generation}");
                    }
                },
            }
        }
    }

    /// Runs workers until every queue is empty and nothing is in flight.
    pub fn run_workers(&self, config: &QueueConfig) -> ExecutionReport {
        let c = Counters::default();
        let stop = AtomicBool::new(false);
        let t0 = Instant::now();
        std::thread::scope(|s| {
            for (q, n) in config.effective() {
                for i in 0..n {
                    let (c, stop, q) = (&c, &stop, q.clone());
                    s.spawn(move || self.worker_loop(&q, &format!("{q}{i}"), stop, true, c));
                }
            }
        });
        c.report(t0.elapsed().as_secs_f64())
    }

    /// Starts background workers that run until the pool is dropped.
    pub fn spawn_workers(self: &Arc<Self>, config: &QueueConfig) -> WorkerPool {
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(Counters::default());
        let mut handles = Vec::new();
        for (q, n) in config.effective() {
            for i in 0..n {
                let (me, stop, c, q) = (self.clone(), stop.clone(), counters.clone(), q.clone());
                let name = format!("{q}{i}p{}", std::process::id());
                handles.push(std::thread::spawn(move || me.worker_loop(&q, &name, &stop, false, &c)));
            }
        }
        WorkerPool {
            stop,
            counters,
            handles,
            started: Instant::now(),
        }
    }

    /// Drops finished statuses older than `ttl`. Returns how many.
    pub fn cleanup_statuses(&self, ttl: Duration) -> Result<usize, OrchestratorError> {
        let cutoff = now_ms().saturating_sub(ttl.as_millis() as u64);
        let mut n = 0;
        for (id, s) in self.store.index.scan::<TaskStatus>(Table::Tasks) {
            if s.state.is_terminal() && s.finished_ms.is_some_and(|t| t <= cutoff) {
                self.store.index.delete(Table::Tasks, &id)?;
                n += 1;
            }
        }
        Ok(n)
    }
}

pub struct WorkerPool {
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    handles: Vec<JoinHandle<()>>,
    started: Instant,
}

impl WorkerPool {
    pub fn report(&self) -> ExecutionReport {
        self.counters.report(self.started.elapsed().as_secs_f64())
    }

    pub fn shutdown(mut self) -> ExecutionReport {
        self.stop_and_join();
        self.report()
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff(1), Duration::from_secs(1));
        assert_eq!(r.backoff(2), Duration::from_secs(2));
        assert_eq!(r.backoff(3), Duration::from_secs(4));
    }

    #[test]
    fn queue_config_parsing() {
        let c: QueueConfig = "parse=4, ml=2,assemble=1".parse().unwrap();
        assert_eq!(c.queues["parse"].workers, 4);
        assert_eq!(c.queues["ml"].workers, 2);
        assert_eq!(c.queues["assemble"].workers, 1);
        assert!("parse".parse::<QueueConfig>().is_err());
        assert!("parse=x".parse::<QueueConfig>().is_err());
        assert!("".parse::<QueueConfig>().is_err());
    }

    #[test]
    fn max_in_flight_caps_workers() {
        let mut c = QueueConfig::single("parse", 8);
        c.queues.get_mut("parse").unwrap().max_in_flight = Some(3);
        assert_eq!(c.effective(), vec![("parse".to_string(), 3)]);
    }

    #[test]
    fn crash_rate_is_roughly_honored_and_seeded() {
        let ci = CrashInjection::new(0.1, 7);
        let n = 20_000;
        let hits = (0..n).filter(|i| ci.point(&format!("task{i}"), 1).is_some()).count();
        assert!((1700..2300).contains(&hits), "{hits}");
        assert_eq!(ci.point("abc", 1), ci.point("abc", 1));
        let none = CrashInjection::new(0.0, 7);
        assert!((0..1000).all(|i| none.point(&format!("t{i}"), 1).is_none()));
        let first = CrashInjection {
            max_attempt: 1,
            ..CrashInjection::new(1.0, 7)
        };
        assert!(first.point("abc", 1).is_some());
        assert!(first.point("abc", 2).is_none());
    }
}
