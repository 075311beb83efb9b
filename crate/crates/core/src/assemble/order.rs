//! Recursive XY-cut reading order.

use crate::model::{ParsedPage, TextCell};

#[derive(Debug, Clone, Copy)]
struct Gap {
    width: f64,
    at: f64,
}

/// Widest empty band between the cells' vertical extents. Among equally
/// wide bands the uppermost wins.
fn horizontal_gap(cells: &[&TextCell]) -> Option<Gap> {
    let mut spans: Vec<(f64, f64)> = cells.iter().map(|c| (c.bbox.y0, c.bbox.y1)).collect();
    spans.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.total_cmp(&a.0)));
    let mut low = spans[0].0;
    let mut best: Option<Gap> = None;
    for &(y0, y1) in &spans[1..] {
        if y1 < low {
            let width = low - y1;
            if best.is_none_or(|b| width > b.width) {
                best = Some(Gap {
                    width,
                    at: (low + y1) / 2.0,
                });
            }
        }
        low = low.min(y0);
    }
    best
}

/// Widest empty band between the cells' horizontal extents, leftmost on
/// ties.
fn vertical_gap(cells: &[&TextCell]) -> Option<Gap> {
    let mut spans: Vec<(f64, f64)> = cells.iter().map(|c| (c.bbox.x0, c.bbox.x1)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut high = spans[0].1;
    let mut best: Option<Gap> = None;
    for &(x0, x1) in &spans[1..] {
        if x0 > high {
            let width = x0 - high;
            if best.is_none_or(|b| width > b.width) {
                best = Some(Gap {
                    width,
                    at: (high + x0) / 2.0,
                });
            }
        }
        high = high.max(x1);
    }
    best
}

fn leaf_order(a: &&TextCell, b: &&TextCell) -> std::cmp::Ordering {
    b.bbox
        .y1
        .total_cmp(&a.bbox.y1)
        .then(a.bbox.x0.total_cmp(&b.bbox.x0))
        .then(a.id.cmp(&b.id))
}

fn cut(mut cells: Vec<&TextCell>, out: &mut Vec<u32>) {
    if cells.len() <= 1 {
        out.extend(cells.iter().map(|c| c.id));
        return;
    }
    let h = horizontal_gap(&cells);
    let v = vertical_gap(&cells);
    let horizontal = match (h, v) {
        (Some(h), Some(v)) => h.width >= v.width,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (None, None) => {
            cells.sort_by(leaf_order);
            out.extend(cells.iter().map(|c| c.id));
            return;
        }
    };
    let (first, second): (Vec<&TextCell>, Vec<&TextCell>) = if horizontal {
        let at = h.map(|g| g.at).unwrap_or_default();
        cells.into_iter().partition(|c| c.bbox.y0 > at)
    } else {
        let at = v.map(|g| g.at).unwrap_or_default();
        cells.into_iter().partition(|c| c.bbox.x1 < at)
    };
    cut(first, out);
    cut(second, out);
}

/// Cell ids of `page` in reading order. At every level the cell set is cut
/// at whichever is wider of its widest empty horizontal band and its widest
/// empty vertical band (horizontal on ties); upper parts precede lower ones
/// and left parts precede right ones. Sets without any empty band are
/// read top to bottom, then left to right.
pub fn reading_order(page: &ParsedPage) -> Vec<u32> {
    let mut cells: Vec<&TextCell> = page.cells.iter().collect();
    cells.sort_by(leaf_order);
    let mut out = Vec::with_capacity(cells.len());
    if !cells.is_empty() {
        cut(cells, &mut out);
    }
    out
}
