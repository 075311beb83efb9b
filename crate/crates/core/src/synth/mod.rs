//! Synthetic documents: a fixture PDF writer and template corpora.

pub mod corpus;
pub mod pdf;
