use super::{Extraction, ExtractionBackend, ParseError};
use crate::model;

pub const RAW_SNIPPETS_FORMAT: &str = "raw-snippets.v1";

/// Replays a recorded `raw-snippets.v1` document instead of reading a PDF.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureBackend;

impl FixtureBackend {
    pub fn encode(extraction: &Extraction) -> Vec<u8> {
        serde_json::to_vec_pretty(extraction).expect("extraction serializes")
    }
}

impl ExtractionBackend for FixtureBackend {
    fn extract(&self, bytes: &[u8]) -> Result<Extraction, ParseError> {
        let extraction: Extraction = model::from_json(bytes).map_err(|e| ParseError::ParseFailure {
            offset: None,
            reason: e.to_string(),
        })?;
        if extraction.format != RAW_SNIPPETS_FORMAT {
            return Err(ParseError::ParseFailure {
                offset: None,
                reason: format!("unknown fixture format '{}'", extraction.format),
            });
        }
        Ok(extraction)
    }
}
