//! Storage, task orchestration and the HTTP service around the document
//! ingestion core.
//!
//! Documents and every derived artifact live in a content-addressed
//! [`store::Store`]. Work is expressed as [`task::TaskMessage`]s flowing
//! through a [`broker::Broker`] to stateless workers run by an
//! [`orchestrator::Orchestrator`]. [`service`] exposes the whole thing as a
//! REST API.

pub mod annotation;
pub mod bench;
pub mod broker;
pub mod ops;
pub mod orchestrator;
pub mod service;
pub mod store;
pub mod task;

pub use annotation::{compute_session_stats, diff_corrections, AnnotationRecord, SessionStats};
pub use broker::{Broker, FileBroker, InProcessBroker};
pub use orchestrator::{CrashInjection, ExecutionReport, Orchestrator, QueueConfig, RetryPolicy};
pub use store::Store;
pub use task::{ChainTemplate, Operation, TaskMessage, TaskState, TaskStatus};
