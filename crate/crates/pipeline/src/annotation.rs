//! Page annotations and annotation-rate statistics.

use std::collections::{BTreeMap, BTreeSet};

use ccs_core::ml::PredictionResult;
use ccs_core::model::{LabelSet, ParsedPage};
use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSource {
    Fresh,
    CorrectedFromPrediction,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellLabel {
    pub cell_id: u32,
    pub label: String,
}

/// A note attached to a cell the parser got wrong (merged lines and such).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellFlag {
    pub cell_id: u32,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub page_number: u32,
    pub labels: Vec<CellLabel>,
    pub annotator: String,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u64,
    pub submitted_ms: u64,
    pub source: AnnotationSource,
    pub corrections_count: u32,
    /// Model whose predictions were corrected. Required for corrected pages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<CellFlag>,
}

impl AnnotationRecord {
    /// Writes the labels onto a copy of `page`.
    pub fn apply(&self, page: &ParsedPage) -> ParsedPage {
        let by_id: BTreeMap<u32, &str> = self.labels.iter().map(|l| (l.cell_id, l.label.as_str())).collect();
        let mut out = page.clone();
        for c in &mut out.cells {
            c.label = by_id.get(&c.id).map(|l| l.to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationViolation {
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_id: Option<u32>,
    pub message: String,
}

impl AnnotationViolation {
    fn new(rule: &str, cell_id: Option<u32>, message: String) -> Self {
        Self {
            rule: rule.to_string(),
            cell_id,
            message,
        }
    }
}

/// Checks a record against the page it annotates. Empty means valid.
pub fn validate_record(record: &AnnotationRecord, page: &ParsedPage, labels: &LabelSet) -> Vec<AnnotationViolation> {
    let mut out = Vec::new();
    if record.page_number != page.page_number() {
        out.push(AnnotationViolation::new(
            "wrong-page",
            None,
            format!("record is for page {}, not {}", record.page_number, page.page_number()),
        ));
    }
    let page_ids: BTreeSet<u32> = page.cells.iter().map(|c| c.id).collect();
    let mut seen = BTreeSet::new();
    for l in &record.labels {
        if !seen.insert(l.cell_id) {
            out.push(AnnotationViolation::new(
                "duplicate-cell",
                Some(l.cell_id),
                format!("cell {} labeled twice", l.cell_id),
            ));
        }
        if !page_ids.contains(&l.cell_id) {
            out.push(AnnotationViolation::new(
                "unknown-cell",
                Some(l.cell_id),
                format!("page has no cell {}", l.cell_id),
            ));
        }
        if !labels.contains(&l.label) {
            out.push(AnnotationViolation::new(
                "unknown-label",
                Some(l.cell_id),
                format!("'{}' is not in the label set", l.label),
            ));
        }
    }
    for id in page_ids.difference(&seen) {
        out.push(AnnotationViolation::new(
            "missing-cell",
            Some(*id),
            format!("cell {id} has no label"),
        ));
    }
    if record.submitted_ms < record.started_ms {
        out.push(AnnotationViolation::new(
            "bad-timestamps",
            None,
            "submitted before started".into(),
        ));
    }
    match record.source {
        AnnotationSource::Fresh if record.corrections_count != 0 => out.push(AnnotationViolation::new(
            "fresh-with-corrections",
            None,
            "a fresh annotation has no pre-annotation to correct".into(),
        )),
        AnnotationSource::CorrectedFromPrediction if record.model_id.is_none() => out.push(AnnotationViolation::new(
            "missing-model",
            None,
            "corrected annotations must name the model that pre-annotated the page".into(),
        )),
        _ => {}
    }
    for f in &record.flags {
        if !page_ids.contains(&f.cell_id) {
            out.push(AnnotationViolation::new(
                "unknown-cell",
                Some(f.cell_id),
                format!("flag on missing cell {}", f.cell_id),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape-error: {0}")]
pub struct ShapeError(pub String);

/// Number of cells whose submitted label differs from the pre-annotation.
pub fn diff_corrections(pre: &[CellLabel], submitted: &[CellLabel]) -> Result<u32, ShapeError> {
    let a: BTreeMap<u32, &str> = pre.iter().map(|l| (l.cell_id, l.label.as_str())).collect();
    let b: BTreeMap<u32, &str> = submitted.iter().map(|l| (l.cell_id, l.label.as_str())).collect();
    if a.len() != pre.len() || b.len() != submitted.len() {
        return Err(ShapeError("duplicate cell ids".into()));
    }
    if !a.keys().eq(b.keys()) {
        return Err(ShapeError(format!(
            "cell ids differ: {} pre-annotated vs {} submitted",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.values()).filter(|((_, x), y)| x != y).count() as u32)
}

pub fn prediction_labels(p: &PredictionResult) -> Vec<CellLabel> {
    p.cells
        .iter()
        .map(|c| CellLabel {
            cell_id: c.cell_id,
            label: c.label.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateWindow {
    /// Indices of the first and last record in the window.
    pub first: usize,
    pub last: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub pages: usize,
    /// Pages per minute.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TimelineEvent {
    Window { index: usize, at_ms: u64, rate: f64 },
    Retrain { at_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub window_size: usize,
    pub windows: Vec<RateWindow>,
    pub retrain_markers: Vec<u64>,
    /// Windows (at their end time) and retrains in time order.
    pub timeline: Vec<TimelineEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad-ordering: {0}")]
pub struct BadOrdering(pub String);

/// Annotation rate over sliding windows of `window` consecutive pages. A
/// window spans from the first page's start to the last page's submit.
/// Fewer records than `window` give a single window over all of them.
pub fn compute_session_stats_with(
    records: &[AnnotationRecord],
    retrains: &[u64],
    window: usize,
) -> Result<SessionStats, BadOrdering> {
    let window = window.max(1);
    for (i, r) in records.iter().enumerate() {
        if r.submitted_ms <= r.started_ms {
            return Err(BadOrdering(format!("record {i} is submitted no later than it starts")));
        }
        if i > 0 && r.started_ms < records[i - 1].submitted_ms {
            return Err(BadOrdering(format!(
                "record {i} starts before record {} was submitted",
                i - 1
            )));
        }
    }
    let mut markers = retrains.to_vec();
    markers.sort_unstable();

    let size = window.min(records.len());
    let windows: Vec<RateWindow> = if records.is_empty() {
        Vec::new()
    } else {
        (0..=records.len() - size)
            .map(|first| {
                let last = first + size - 1;
                let (start, end) = (records[first].started_ms, records[last].submitted_ms);
                RateWindow {
                    first,
                    last,
                    start_ms: start,
                    end_ms: end,
                    pages: size,
                    rate: size as f64 * 60_000.0 / (end - start) as f64,
                }
            })
            .collect()
    };

    let mut timeline: Vec<TimelineEvent> = windows
        .iter()
        .enumerate()
        .map(|(index, w)| TimelineEvent::Window {
            index,
            at_ms: w.end_ms,
            rate: w.rate,
        })
        .chain(markers.iter().map(|&at_ms| TimelineEvent::Retrain { at_ms }))
        .collect();
    let at = |e: &TimelineEvent| match e {
        TimelineEvent::Window { at_ms, .. } | TimelineEvent::Retrain { at_ms } => *at_ms,
    };
    // Retrains sort before windows ending at the same instant.
    timeline.sort_by_key(|e| (at(e), matches!(e, TimelineEvent::Window { .. })));

    Ok(SessionStats {
        window_size: window,
        windows,
        retrain_markers: markers,
        timeline,
    })
}

pub fn compute_session_stats(records: &[AnnotationRecord], retrains: &[u64]) -> Result<SessionStats, BadOrdering> {
    compute_session_stats_with(records, retrains, DEFAULT_WINDOW)
}

/// Time an annotator spends on a page: `base` plus `per_correction` for
/// every cell they relabel.
pub fn page_time_ms(base_ms: u64, per_correction_ms: u64, corrections: u32) -> u64 {
    base_ms + per_correction_ms * u64::from(corrections)
}
