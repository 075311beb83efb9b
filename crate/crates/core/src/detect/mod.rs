//! Table detection support: layout rasters, detector seam, overlap
//! labeling and the confidence sweep.

mod heuristic;
mod raster;

use serde::{Deserialize, Serialize};

use crate::model::{self, BBox, ParsedDocument, ParsedPage, TextCell};

pub use heuristic::HeuristicTableDetector;
pub use raster::{render_layout_image, LayoutRaster, BACKGROUND, CELL, DEFAULT_SCALE, PATH};

pub const DETECTIONS_FORMAT: &str = "detections.v1";
pub const DEFAULT_MIN_OVERLAP: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("bad-scale: scale must be positive, got {0}")]
    BadScale(f64),
    #[error("empty-input: no cells to evaluate")]
    EmptyInput,
    #[error("shape-error: {0}")]
    Shape(String),
    #[error("bad-detections: {0}")]
    Format(String),
}

impl DetectError {
    pub fn code(&self) -> &'static str {
        match self {
            DetectError::BadScale(_) => "bad-scale",
            DetectError::EmptyInput => "empty-input",
            DetectError::Shape(_) => "shape-error",
            DetectError::Format(_) => "bad-detections",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub class: String,
}

impl Detection {
    pub fn table(bbox: BBox, confidence: f64) -> Self {
        Self {
            bbox,
            confidence,
            class: "table".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageDetections {
    pub page_number: u32,
    pub detections: Vec<Detection>,
}

/// `detections.v1` file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSet {
    pub format: String,
    pub doc_id: String,
    pub pages: Vec<PageDetections>,
}

impl DetectionSet {
    pub fn from_json(bytes: &[u8]) -> Result<Self, DetectError> {
        let s: Self = model::from_json(bytes).map_err(|e| DetectError::Format(e.to_string()))?;
        if s.format != DETECTIONS_FORMAT {
            return Err(DetectError::Format(format!("unknown format '{}'", s.format)));
        }
        for p in &s.pages {
            for d in &p.detections {
                if !(0.0..=1.0).contains(&d.confidence) {
                    return Err(DetectError::Format(format!(
                        "confidence {} outside [0, 1]",
                        d.confidence
                    )));
                }
            }
        }
        Ok(s)
    }

    pub fn page(&self, n: u32) -> &[Detection] {
        self.pages
            .iter()
            .find(|p| p.page_number == n)
            .map_or(&[], |p| p.detections.as_slice())
    }
}

/// A pluggable object detector over parsed pages.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, page: &ParsedPage) -> Vec<Detection>;

    fn detect_document(&self, doc: &ParsedDocument) -> DetectionSet {
        DetectionSet {
            format: DETECTIONS_FORMAT.to_string(),
            doc_id: doc.doc_id.clone(),
            pages: doc
                .pages
                .iter()
                .map(|p| PageDetections {
                    page_number: p.page_number(),
                    detections: self.detect(p),
                })
                .collect(),
        }
    }
}

/// True for cells covered at least `min_overlap` (by area) by one detection
/// whose confidence reaches `threshold`.
pub fn overlap_labeling(cells: &[TextCell], detections: &[Detection], threshold: f64, min_overlap: f64) -> Vec<bool> {
    let live: Vec<&Detection> = detections.iter().filter(|d| d.confidence >= threshold).collect();
    cells
        .iter()
        .map(|c| {
            let area = c.bbox.area();
            area > 0.0
                && live
                    .iter()
                    .any(|d| c.bbox.intersection_area(&d.bbox) / area >= min_overlap)
        })
        .collect()
}

/// One page of sweep input.
#[derive(Debug, Clone, Copy)]
pub struct SweepCase<'a> {
    pub cells: &'a [TextCell],
    /// True where the cell belongs to a table.
    pub truth: &'a [bool],
    pub detections: &'a [Detection],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub best_threshold: f64,
    pub best_f1: f64,
}

/// Precision, recall and F1 of the table class. A ratio with an empty
/// denominator counts as 1.
pub fn table_scores(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let ratio = |den: u64| if den == 0 { 1.0 } else { tp as f64 / den as f64 };
    let p = ratio(tp + fp);
    let r = ratio(tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Evaluates every distinct confidence, plus 0 and 1, as threshold. The
/// best threshold is the smallest one reaching the maximal F1.
pub fn sweep_confidence(cases: &[SweepCase<'_>], min_overlap: f64) -> Result<SweepResult, DetectError> {
    let total: usize = cases.iter().map(|c| c.cells.len()).sum();
    if total == 0 {
        return Err(DetectError::EmptyInput);
    }
    for c in cases {
        if c.cells.len() != c.truth.len() {
            return Err(DetectError::Shape(format!(
                "{} cells vs {} truth labels",
                c.cells.len(),
                c.truth.len()
            )));
        }
    }
    let mut thresholds: Vec<f64> = vec![0.0, 1.0];
    thresholds.extend(cases.iter().flat_map(|c| c.detections.iter().map(|d| d.confidence)));
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for c in cases {
            for (pred, truth) in overlap_labeling(c.cells, c.detections, t, min_overlap)
                .into_iter()
                .zip(c.truth)
            {
                match (pred, *truth) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        let (precision, recall, f1) = table_scores(tp, fp, fn_);
        points.push(SweepPoint {
            threshold: t,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        });
    }
    let best = points.iter().fold(&points[0], |b, p| if p.f1 > b.f1 { p } else { b });
    Ok(SweepResult {
        best_threshold: best.threshold,
        best_f1: best.f1,
        points,
    })
}
