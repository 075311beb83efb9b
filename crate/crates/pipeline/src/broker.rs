//! Named work queues with publish / claim / ack semantics.
//!
//! A claimed message stays in flight until its worker acks it. `recover`
//! returns everything a dead worker held to the ready queues with the
//! attempt counter raised, which gives at-least-once delivery.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::store::{now_ms, unique_suffix};
use crate::task::TaskMessage;

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("broker io error: {0}")]
    Io(#[from] io::Error),
    #[error("broker record corrupt: {0}")]
    Corrupt(String),
    #[error("unknown delivery '{0}'")]
    UnknownDelivery(String),
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub id: String,
    pub worker: String,
    pub message: TaskMessage,
}

pub trait Broker: Send + Sync {
    /// Enqueues `message`; it becomes claimable at `not_before_ms`.
    fn publish(&self, message: TaskMessage, not_before_ms: u64) -> Result<(), BrokerError>;
    /// Takes the oldest due message from any of `queues`, waiting up to `wait`.
    fn claim(&self, queues: &[String], worker: &str, wait: Duration) -> Result<Option<Delivery>, BrokerError>;
    fn ack(&self, delivery: &Delivery) -> Result<(), BrokerError>;
    /// Requeues all deliveries held by `worker`. Returns how many.
    fn recover(&self, worker: &str) -> Result<usize, BrokerError>;
    /// Ready, delayed and in-flight messages across all queues.
    fn outstanding(&self) -> Result<usize, BrokerError>;
}

struct Pending {
    not_before: u64,
    message: TaskMessage,
}

#[derive(Default)]
struct MemState {
    queues: HashMap<String, VecDeque<Pending>>,
    in_flight: HashMap<String, Delivery>,
    next_id: u64,
}

/// Mutex-and-condvar broker for a single process.
#[derive(Default)]
pub struct InProcessBroker {
    state: Mutex<MemState>,
    ready: Condvar,
}

impl InProcessBroker {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Broker for InProcessBroker {
    fn publish(&self, message: TaskMessage, not_before_ms: u64) -> Result<(), BrokerError> {
        let mut st = self.state.lock().unwrap();
        st.queues.entry(message.queue.clone()).or_default().push_back(Pending {
            not_before: not_before_ms,
            message,
        });
        self.ready.notify_all();
        Ok(())
    }

    fn claim(&self, queues: &[String], worker: &str, wait: Duration) -> Result<Option<Delivery>, BrokerError> {
        let deadline = Instant::now() + wait;
        let mut st = self.state.lock().unwrap();
        loop {
            let now = now_ms();
            let mut earliest: Option<u64> = None;
            for q in queues {
                let Some(queue) = st.queues.get_mut(q) else { continue };
                if let Some(pos) = queue.iter().position(|p| p.not_before <= now) {
                    let p = queue.remove(pos).expect("position is valid");
                    st.next_id += 1;
                    let d = Delivery {
                        id: format!("d{}", st.next_id),
                        worker: worker.to_string(),
                        message: p.message,
                    };
                    st.in_flight.insert(d.id.clone(), d.clone());
                    return Ok(Some(d));
                }
                if let Some(t) = queue.iter().map(|p| p.not_before).min() {
                    earliest = Some(earliest.map_or(t, |e: u64| e.min(t)));
                }
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            let sleep = match earliest {
                Some(t) => left.min(Duration::from_millis(t.saturating_sub(now).max(1))),
                None => left,
            };
            st = self.ready.wait_timeout(st, sleep).unwrap().0;
        }
    }

    fn ack(&self, delivery: &Delivery) -> Result<(), BrokerError> {
        let mut st = self.state.lock().unwrap();
        st.in_flight
            .remove(&delivery.id)
            .map(|_| ())
            .ok_or_else(|| BrokerError::UnknownDelivery(delivery.id.clone()))?;
        self.ready.notify_all();
        Ok(())
    }

    fn recover(&self, worker: &str) -> Result<usize, BrokerError> {
        let mut st = self.state.lock().unwrap();
        let mut held: Vec<Delivery> = Vec::new();
        st.in_flight.retain(|_, d| {
            if d.worker == worker {
                held.push(d.clone());
                false
            } else {
                true
            }
        });
        held.sort_by(|a, b| a.id.cmp(&b.id));
        let n = held.len();
        for d in held {
            let mut m = d.message;
            m.attempt += 1;
            st.queues.entry(m.queue.clone()).or_default().push_front(Pending {
                not_before: 0,
                message: m,
            });
        }
        self.ready.notify_all();
        Ok(n)
    }

    fn outstanding(&self) -> Result<usize, BrokerError> {
        let st = self.state.lock().unwrap();
        Ok(st.queues.values().map(VecDeque::len).sum::<usize>() + st.in_flight.len())
    }
}

/// Directory-backed broker usable from several processes.
///
/// Layout: `root/<queue>/ready/<not_before>-<seq>-<task>.json` and
/// `root/<queue>/claimed/<worker>/<same name>`. Claiming is a rename from
/// `ready` into the worker's directory, which only one claimant can win.
pub struct FileBroker {
    root: PathBuf,
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl FileBroker {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, BrokerError> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
        })
    }

    fn queue_dir(&self, queue: &str) -> Result<PathBuf, BrokerError> {
        if !safe_name(queue) {
            return Err(BrokerError::Corrupt(format!("bad queue name '{queue}'")));
        }
        Ok(self.root.join(queue))
    }

    fn queues(&self) -> Result<Vec<String>, BrokerError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root)? {
            let e = e?;
            if e.file_type()?.is_dir() {
                out.push(e.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    fn write_ready(&self, message: &TaskMessage, not_before_ms: u64) -> Result<(), BrokerError> {
        let dir = self.queue_dir(&message.queue)?.join("ready");
        fs::create_dir_all(&dir)?;
        let name = format!("{not_before_ms:020}-{}-{}.json", unique_suffix(), message.task_id);
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, serde_json::to_vec(message).expect("message serializes"))?;
        fs::rename(tmp, dir.join(name))?;
        Ok(())
    }

    fn read_message(path: &Path) -> Result<TaskMessage, BrokerError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| BrokerError::Corrupt(format!("{}: {e}", path.display())))
    }

    fn try_claim(&self, queue: &str, worker: &str) -> Result<Option<Delivery>, BrokerError> {
        let dir = self.queue_dir(queue)?;
        let ready = dir.join("ready");
        let Ok(entries) = fs::read_dir(&ready) else {
            return Ok(None);
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| !n.starts_with('.'))
            .collect();
        names.sort();
        let now = now_ms();
        let claimed = dir.join("claimed").join(worker);
        for name in names {
            let due: u64 = name.split('-').next().and_then(|t| t.parse().ok()).unwrap_or(0);
            if due > now {
                continue;
            }
            fs::create_dir_all(&claimed)?;
            let target = claimed.join(&name);
            match fs::rename(ready.join(&name), &target) {
                Ok(()) => {
                    let message = Self::read_message(&target)?;
                    return Ok(Some(Delivery {
                        id: format!("{queue}/{name}"),
                        worker: worker.to_string(),
                        message,
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(None)
    }

    /// Requeues deliveries whose claim file is older than `lease`, for
    /// workers of processes that died without cleanup.
    pub fn recover_stale(&self, lease: Duration) -> Result<usize, BrokerError> {
        let mut n = 0;
        for q in self.queues()? {
            let claimed = self.root.join(&q).join("claimed");
            let Ok(workers) = fs::read_dir(&claimed) else { continue };
            for w in workers {
                let w = w?;
                for f in fs::read_dir(w.path())? {
                    let f = f?;
                    let age = f.metadata()?.modified()?.elapsed().unwrap_or_default();
                    if age >= lease {
                        let mut m = Self::read_message(&f.path())?;
                        m.attempt += 1;
                        self.write_ready(&m, 0)?;
                        fs::remove_file(f.path())?;
                        n += 1;
                    }
                }
            }
        }
        Ok(n)
    }
}

impl Broker for FileBroker {
    fn publish(&self, message: TaskMessage, not_before_ms: u64) -> Result<(), BrokerError> {
        self.write_ready(&message, not_before_ms)
    }

    fn claim(&self, queues: &[String], worker: &str, wait: Duration) -> Result<Option<Delivery>, BrokerError> {
        if !safe_name(worker) {
            return Err(BrokerError::Corrupt(format!("bad worker name '{worker}'")));
        }
        let deadline = Instant::now() + wait;
        loop {
            for q in queues {
                if let Some(d) = self.try_claim(q, worker)? {
                    return Ok(Some(d));
                }
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            std::thread::sleep(Duration::from_millis(5).min(deadline.saturating_duration_since(Instant::now())));
        }
    }

    fn ack(&self, delivery: &Delivery) -> Result<(), BrokerError> {
        let (queue, name) = delivery
            .id
            .split_once('/')
            .ok_or_else(|| BrokerError::UnknownDelivery(delivery.id.clone()))?;
        let path = self.queue_dir(queue)?.join("claimed").join(&delivery.worker).join(name);
        match fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(BrokerError::UnknownDelivery(delivery.id.clone())),
            Err(e) => Err(e.into()),
        }
    }

    fn recover(&self, worker: &str) -> Result<usize, BrokerError> {
        let mut n = 0;
        for q in self.queues()? {
            let dir = self.root.join(&q).join("claimed").join(worker);
            let Ok(files) = fs::read_dir(&dir) else { continue };
            let mut paths: Vec<PathBuf> = files.filter_map(|f| f.ok()).map(|f| f.path()).collect();
            paths.sort();
            for p in paths {
                let mut m = Self::read_message(&p)?;
                m.attempt += 1;
                self.write_ready(&m, 0)?;
                fs::remove_file(&p)?;
                n += 1;
            }
            let _ = fs::remove_dir(&dir);
        }
        Ok(n)
    }

    fn outstanding(&self) -> Result<usize, BrokerError> {
        let mut n = 0;
        for q in self.queues()? {
            let qd = self.root.join(&q);
            if let Ok(r) = fs::read_dir(qd.join("ready")) {
                n += r
                    .filter_map(|e| e.ok())
                    .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
                    .count();
            }
            if let Ok(ws) = fs::read_dir(qd.join("claimed")) {
                for w in ws.filter_map(|e| e.ok()) {
                    n += fs::read_dir(w.path())?.count();
                }
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Operation;

    fn msg(i: u32) -> TaskMessage {
        TaskMessage::new(Operation::Parse, vec![format!("k{i}")], serde_json::Value::Null)
    }

    fn contract(b: &dyn Broker) {
        let qs = vec!["parse".to_string()];
        assert!(b.claim(&qs, "w1", Duration::ZERO).unwrap().is_none());
        b.publish(msg(1), 0).unwrap();
        b.publish(msg(2), 0).unwrap();
        b.publish(msg(3), now_ms() + 60_000).unwrap();
        assert_eq!(b.outstanding().unwrap(), 3);

        let d1 = b.claim(&qs, "w1", Duration::ZERO).unwrap().unwrap();
        assert_eq!(d1.message.inputs, vec!["k1"]);
        let d2 = b.claim(&qs, "w2", Duration::ZERO).unwrap().unwrap();
        assert_eq!(d2.message.inputs, vec!["k2"]);
        // the delayed message is not due
        assert!(b.claim(&qs, "w1", Duration::from_millis(20)).unwrap().is_none());
        assert!(b.claim(&["ml".to_string()], "w1", Duration::ZERO).unwrap().is_none());

        b.ack(&d2).unwrap();
        assert!(b.ack(&d2).is_err());
        assert_eq!(b.outstanding().unwrap(), 2);

        // w1 dies holding d1
        assert_eq!(b.recover("w1").unwrap(), 1);
        let again = b.claim(&qs, "w3", Duration::ZERO).unwrap().unwrap();
        assert_eq!(again.message.task_id, d1.message.task_id);
        assert_eq!(again.message.attempt, 2);
        b.ack(&again).unwrap();
        assert_eq!(b.outstanding().unwrap(), 1);
    }

    #[test]
    fn in_process_contract() {
        contract(&InProcessBroker::new());
    }

    #[test]
    fn file_contract() {
        let dir = tempfile::tempdir().unwrap();
        contract(&FileBroker::open(dir.path()).unwrap());
    }

    #[test]
    fn file_broker_is_shared_between_handles() {
        let dir = tempfile::tempdir().unwrap();
        let a = FileBroker::open(dir.path()).unwrap();
        let b = FileBroker::open(dir.path()).unwrap();
        a.publish(msg(7), 0).unwrap();
        let d = b.claim(&["parse".into()], "wb", Duration::ZERO).unwrap().unwrap();
        assert!(a.claim(&["parse".into()], "wa", Duration::ZERO).unwrap().is_none());
        a.ack(&d).unwrap();
        assert_eq!(b.outstanding().unwrap(), 0);
    }

    #[test]
    fn stale_claims_are_requeued() {
        let dir = tempfile::tempdir().unwrap();
        let b = FileBroker::open(dir.path()).unwrap();
        b.publish(msg(1), 0).unwrap();
        b.claim(&["parse".into()], "gone", Duration::ZERO).unwrap().unwrap();
        assert_eq!(b.recover_stale(Duration::from_secs(3600)).unwrap(), 0);
        assert_eq!(b.recover_stale(Duration::ZERO).unwrap(), 1);
        let d = b.claim(&["parse".into()], "w", Duration::ZERO).unwrap().unwrap();
        assert_eq!(d.message.attempt, 2);
    }

    #[test]
    fn concurrent_claims_deliver_each_message_once() {
        let b = std::sync::Arc::new(InProcessBroker::new());
        for i in 0..200 {
            b.publish(msg(i), 0).unwrap();
        }
        let seen: Vec<String> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|w| {
                    let b = b.clone();
                    s.spawn(move || {
                        let mut got = Vec::new();
                        while let Some(d) = b.claim(&["parse".into()], &format!("w{w}"), Duration::ZERO).unwrap() {
                            b.ack(&d).unwrap();
                            got.push(d.message.task_id);
                        }
                        got
                    })
                })
                .collect();
            hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        let mut uniq = seen.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(seen.len(), 200);
        assert_eq!(uniq.len(), 200);
    }
}
