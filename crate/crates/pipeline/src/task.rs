use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::store::hash_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operation {
    Parse,
    Predict,
    Assemble,
    Train,
    DetectEval,
}

impl Operation {
    pub const ALL: [Operation; 5] = [
        Operation::Parse,
        Operation::Predict,
        Operation::Assemble,
        Operation::Train,
        Operation::DetectEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Parse => "parse",
            Operation::Predict => "predict",
            Operation::Assemble => "assemble",
            Operation::Train => "train",
            Operation::DetectEval => "detect-eval",
        }
    }

    pub fn default_queue(self) -> &'static str {
        match self {
            Operation::Parse => "parse",
            Operation::Predict | Operation::Train | Operation::DetectEval => "ml",
            Operation::Assemble => "assemble",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no-such-operation: '{0}'")]
pub struct NoSuchOperation(pub String);

impl FromStr for Operation {
    type Err = NoSuchOperation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operation::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| NoSuchOperation(s.to_string()))
    }
}

/// The follow-up of a chained task. Its inputs are the predecessor's
/// result followed by `extra_inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainTemplate {
    pub operation: Operation,
    #[serde(default)]
    pub extra_inputs: Vec<String>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub queue: Option<String>,
    #[serde(default)]
    pub then: Option<Box<ChainTemplate>>,
}

impl ChainTemplate {
    pub fn new(operation: Operation) -> Self {
        Self {
            operation,
            extra_inputs: Vec::new(),
            params: serde_json::Value::Null,
            queue: None,
            then: None,
        }
    }

    pub fn inputs(mut self, extra: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.extra_inputs = extra.into_iter().map(Into::into).collect();
        self
    }

    pub fn params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    /// Appends `next` at the end of this chain.
    pub fn then(mut self, next: ChainTemplate) -> Self {
        self.then = Some(Box::new(match self.then.take() {
            None => next,
            Some(t) => t.then(next),
        }));
        self
    }

    pub fn instantiate(&self, predecessor_result: &str) -> TaskMessage {
        let mut inputs = vec![predecessor_result.to_string()];
        inputs.extend(self.extra_inputs.iter().cloned());
        let mut m = TaskMessage::new(self.operation, inputs, self.params.clone());
        if let Some(q) = &self.queue {
            m.queue = q.clone();
        }
        m.chain = self.then.clone();
        m.seal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMessage {
    pub task_id: String,
    pub queue: String,
    pub operation: Operation,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub chain: Option<Box<ChainTemplate>>,
    pub attempt: u32,
}

#[derive(Serialize)]
struct Identity<'a> {
    operation: Operation,
    inputs: &'a [String],
    params: &'a serde_json::Value,
    chain: &'a Option<Box<ChainTemplate>>,
}

impl TaskMessage {
    pub fn new(operation: Operation, inputs: Vec<String>, params: serde_json::Value) -> Self {
        Self {
            task_id: String::new(),
            queue: operation.default_queue().to_string(),
            operation,
            inputs,
            params,
            chain: None,
            attempt: 1,
        }
        .seal()
    }

    pub fn on_queue(mut self, queue: impl Into<String>) -> Self {
        self.queue = queue.into();
        self
    }

    pub fn then(mut self, next: ChainTemplate) -> Self {
        self.chain = Some(Box::new(match self.chain.take() {
            None => next,
            Some(t) => t.then(next),
        }));
        self.seal()
    }

    /// Hash of operation, inputs, params and chain. The queue and attempt
    /// do not contribute, so the id is stable across retries.
    pub fn compute_id(&self) -> String {
        let id = Identity {
            operation: self.operation,
            inputs: &self.inputs,
            params: &self.params,
            chain: &self.chain,
        };
        hash_bytes(&serde_json::to_vec(&id).expect("identity serializes"))
    }

    pub fn seal(mut self) -> Self {
        self.task_id = self.compute_id();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed)
    }

    fn rank(self) -> u8 {
        match self {
            TaskState::Queued => 0,
            TaskState::Running => 1,
            TaskState::Succeeded | TaskState::Failed => 2,
        }
    }

    /// Transitions only move forward; terminal states are final.
    pub fn can_become(self, next: TaskState) -> bool {
        next.rank() > self.rank() || (next == self && !self.is_terminal())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(deny_unknown_fields)]
#[error("{code}: {message}")]
pub struct TaskError {
    pub code: String,
    pub message: String,
}

impl TaskError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStatus {
    pub task_id: String,
    pub operation: Operation,
    pub queue: String,
    pub state: TaskState,
    /// Delivery count of the latest delivery.
    pub attempt: u32,
    /// Handler failures so far.
    pub failures: u32,
    pub result: Option<String>,
    pub error: Option<TaskError>,
    /// Id of the chained successor, once enqueued.
    pub next: Option<String>,
    pub parent: Option<String>,
    pub queued_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
}

impl TaskStatus {
    pub fn queued(msg: &TaskMessage, parent: Option<String>, now: u64) -> Self {
        Self {
            task_id: msg.task_id.clone(),
            operation: msg.operation,
            queue: msg.queue.clone(),
            state: TaskState::Queued,
            attempt: 0,
            failures: 0,
            result: None,
            error: None,
            next: None,
            parent,
            queued_ms: now,
            started_ms: None,
            finished_ms: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn id_ignores_attempt_and_queue() {
        let a = TaskMessage::new(Operation::Parse, vec!["k".into()], json!({"source_name": "a.pdf"}));
        let mut b = a.clone().on_queue("other");
        b.attempt = 3;
        assert_eq!(a.task_id, b.compute_id());
        let c = TaskMessage::new(Operation::Parse, vec!["k2".into()], json!({"source_name": "a.pdf"}));
        assert_ne!(a.task_id, c.task_id);
    }

    #[test]
    fn chain_changes_id_and_appends() {
        let a = TaskMessage::new(Operation::Parse, vec!["k".into()], json!(null));
        let b = a
            .clone()
            .then(ChainTemplate::new(Operation::Predict).inputs(["m"]))
            .then(ChainTemplate::new(Operation::Assemble));
        assert_ne!(a.task_id, b.task_id);
        let t = b.chain.as_ref().unwrap();
        assert_eq!(t.operation, Operation::Predict);
        assert_eq!(t.then.as_ref().unwrap().operation, Operation::Assemble);
        let next = t.instantiate("parsed");
        assert_eq!(next.inputs, vec!["parsed".to_string(), "m".to_string()]);
        assert_eq!(next.queue, "ml");
        assert_eq!(next.chain.as_ref().unwrap().operation, Operation::Assemble);
    }

    #[test]
    fn operation_names() {
        for op in Operation::ALL {
            assert_eq!(op.as_str().parse::<Operation>().unwrap(), op);
        }
        assert_eq!(
            "ocr".parse::<Operation>().unwrap_err().to_string(),
            "no-such-operation: 'ocr'"
        );
        assert!(serde_json::from_str::<Operation>("\"ocr\"").is_err());
    }

    #[test]
    fn state_transitions_are_monotone() {
        use TaskState::*;
        assert!(Queued.can_become(Running));
        assert!(Running.can_become(Running));
        assert!(Running.can_become(Failed));
        assert!(!Running.can_become(Queued));
        assert!(!Succeeded.can_become(Failed));
        assert!(!Failed.can_become(Running));
    }
}
