//! PDF to [`ParsedDocument`] conversion.
//!
//! Extraction backends turn document bytes into raw text snippets, ruling
//! lines and image references per page. [`normalize_cells`] then rebuilds
//! those snippets into homogeneous single-line cells: fragments on one
//! baseline are merged, and cells are split at wide horizontal gaps, at
//! crossing vertical rules and before list markers.

mod fixture;
mod normalize;
mod pdf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{self, BBox, PageGeometry, ParsedDocument, ParsedPage, Segment, Violation};

pub use fixture::{FixtureBackend, RAW_SNIPPETS_FORMAT};
pub use normalize::{assign_raster_ids, normalize_cells, NormalizationReport, Normalized};
pub use pdf::PdfBackend;

/// Font attributes attached to a snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FontInfo {
    pub name: String,
    pub size: f64,
    #[serde(default)]
    pub italic: bool,
    #[serde(default)]
    pub bold: bool,
}

/// A piece of text as drawn by one text-showing instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSnippet {
    pub bbox: BBox,
    pub text: String,
    pub font: FontInfo,
    pub baseline_y: f64,
    /// Horizontal extent of every character of `text`, when the backend
    /// knows glyph advances. Characters are spread uniformly otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_spans: Option<Vec<[f64; 2]>>,
}

impl RawSnippet {
    pub fn new(bbox: BBox, text: impl Into<String>, font: FontInfo, baseline_y: f64) -> Self {
        Self {
            bbox,
            text: text.into(),
            font,
            baseline_y,
            char_spans: None,
        }
    }
}

/// Everything a backend extracted from one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageExtraction {
    pub geometry: PageGeometry,
    pub snippets: Vec<RawSnippet>,
    #[serde(default)]
    pub paths: Vec<Segment>,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extraction {
    pub format: String,
    pub pages: Vec<PageExtraction>,
}

impl Extraction {
    pub fn new(pages: Vec<PageExtraction>) -> Self {
        Self {
            format: RAW_SNIPPETS_FORMAT.to_string(),
            pages,
        }
    }
}

/// Source of raw snippets. The PDF backend is the production one; the
/// fixture backend replays recorded `raw-snippets.v1` JSON.
pub trait ExtractionBackend: Send + Sync {
    fn extract(&self, bytes: &[u8]) -> Result<Extraction, ParseError>;
}

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("unsupported-encryption: encrypted PDFs are not supported")]
    UnsupportedEncryption,
    #[error("parse-failure{}: {reason}", .offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    ParseFailure { offset: Option<usize>, reason: String },
    #[error("invalid normalization config: {0}")]
    Config(String),
    #[error("parser produced an invalid document: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidOutput(Vec<Violation>),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::UnsupportedEncryption => "unsupported-encryption",
            ParseError::ParseFailure { .. } => "parse-failure",
            ParseError::Config(_) => "bad-config",
            ParseError::InvalidOutput(_) => "invalid-output",
        }
    }
}

/// Tunables of cell normalization. Gap thresholds are multiples of the
/// page's median character width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    /// Hard cap on cell width as a fraction of the page width. Off by default.
    pub max_cell_width_fraction: Option<f64>,
    /// Gaps above this start a new cell when the next word is a list marker.
    pub merge_gap_em: f64,
    /// Gaps above this always start a new cell (column gutters).
    pub split_gap_em: f64,
    /// Gaps at or above this are rendered as a single space.
    pub space_gap_em: f64,
    /// Snippets share a line only if their baselines differ by less than
    /// this fraction of the font size.
    pub baseline_tolerance: f64,
    /// A vertical rule splits a cell when it overlaps at least this fraction
    /// of the cell height.
    pub rule_overlap_fraction: f64,
    pub list_marker_patterns: Vec<String>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            max_cell_width_fraction: None,
            merge_gap_em: 1.0,
            split_gap_em: 2.0,
            space_gap_em: 0.4,
            baseline_tolerance: 0.25,
            rule_overlap_fraction: 0.5,
            list_marker_patterns: vec![
                r"^[•●○◦▪■‣∙\-–—*]$".to_string(),
                r"^\(?[a-zA-Z]\)$".to_string(),
                r"^\(?\d{1,3}[.)]$".to_string(),
                r"^\(?[ivxlc]{1,6}[.)]$".to_string(),
            ],
        }
    }
}

impl NormalizationConfig {
    /// Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), ParseError> {
        let bad = |m: &str| Err(ParseError::Config(m.to_string()));
        if !(self.merge_gap_em < self.split_gap_em) {
            return bad("merge_gap_em must be below split_gap_em");
        }
        if !(self.space_gap_em > 0.0 && self.space_gap_em <= self.merge_gap_em) {
            return bad("space_gap_em must be in (0, merge_gap_em]");
        }
        if !(self.baseline_tolerance > 0.0) {
            return bad("baseline_tolerance must be positive");
        }
        if !(self.rule_overlap_fraction > 0.0 && self.rule_overlap_fraction <= 1.0) {
            return bad("rule_overlap_fraction must be in (0, 1]");
        }
        if let Some(f) = self.max_cell_width_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("max_cell_width_fraction must be in (0, 1]");
            }
        }
        for p in &self.list_marker_patterns {
            regex::Regex::new(p).map_err(|e| ParseError::Config(format!("pattern {p:?}: {e}")))?;
        }
        Ok(())
    }
}

/// Content hash used as document id.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses with the PDF backend.
pub fn parse_pdf(bytes: &[u8], source_name: &str, config: &NormalizationConfig) -> Result<ParsedDocument, ParseError> {
    parse_document(&PdfBackend, bytes, source_name, config)
}

/// Extracts, then normalizes every page. Pages are processed in parallel;
/// the result does not depend on scheduling.
pub fn parse_document(
    backend: &dyn ExtractionBackend,
    bytes: &[u8],
    source_name: &str,
    config: &NormalizationConfig,
) -> Result<ParsedDocument, ParseError> {
    config.check()?;
    let extraction = backend.extract(bytes)?;
    if extraction.pages.is_empty() {
        return Err(ParseError::ParseFailure {
            offset: None,
            reason: "document has no pages".into(),
        });
    }
    let pages: Vec<ParsedPage> = extraction
        .pages
        .par_iter()
        .map(|p| {
            let normalized = normalize_cells(&p.snippets, &p.paths, &p.geometry, config);
            let mut page = ParsedPage::new(p.geometry);
            page.cells = normalized.cells;
            page.paths = p.paths.clone();
            page.image_refs = p.image_refs.clone();
            page.image_refs.sort();
            page.image_refs.dedup();
            page
        })
        .collect();
    let mut doc = ParsedDocument::new(content_hash(bytes), source_name, pages);
    doc.canonicalize();
    let violations = model::validate(&doc);
    if !violations.is_empty() {
        return Err(ParseError::InvalidOutput(violations));
    }
    Ok(doc)
}
