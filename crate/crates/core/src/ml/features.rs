//! Per-cell feature vectors and the four-direction neighbor graph.

use serde::{Deserialize, Serialize};

use crate::model::{ParsedPage, TextCell};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const BASE_FEATURE_NAMES: [&str; 16] = [
    "page_number",
    "width",
    "height",
    "x0",
    "y0",
    "x1",
    "y1",
    "dist_above",
    "dist_below",
    "dist_left",
    "dist_right",
    "italic",
    "bold",
    "font_size",
    "numeric_fraction",
    "char_count",
];

pub const BASE_ARITY: usize = BASE_FEATURE_NAMES.len();

/// Arity of a refinement stage: base features plus one one-hot block per
/// direction.
pub fn refined_arity(n_labels: usize) -> usize {
    BASE_ARITY + 4 * n_labels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub page_number: f64,
    pub width: f64,
    pub height: f64,
    /// Corners normalized by page width and height.
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Gap to the neighbor in each direction, or to the page edge.
    pub dist_above: f64,
    pub dist_below: f64,
    pub dist_left: f64,
    pub dist_right: f64,
    pub italic: f64,
    pub bold: f64,
    pub font_size: f64,
    pub numeric_fraction: f64,
    pub char_count: f64,
}

impl FeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.page_number,
            self.width,
            self.height,
            self.x0,
            self.y0,
            self.x1,
            self.y1,
            self.dist_above,
            self.dist_below,
            self.dist_left,
            self.dist_right,
            self.italic,
            self.bold,
            self.font_size,
            self.numeric_fraction,
            self.char_count,
        ]
    }
}

pub fn numeric_fraction(text: &str) -> f64 {
    let total = text.chars().count();
    if total == 0 {
        return 0.0;
    }
    text.chars().filter(|c| c.is_ascii_digit()).count() as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Above, Direction::Below, Direction::Left, Direction::Right];
}

/// Nearest cell ids in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Neighbors {
    pub above: Option<u32>,
    pub below: Option<u32>,
    pub left: Option<u32>,
    pub right: Option<u32>,
}

impl Neighbors {
    pub fn get(&self, d: Direction) -> Option<u32> {
        match d {
            Direction::Above => self.above,
            Direction::Below => self.below,
            Direction::Left => self.left,
            Direction::Right => self.right,
        }
    }

    fn slot(&mut self, d: Direction) -> &mut Option<u32> {
        match d {
            Direction::Above => &mut self.above,
            Direction::Below => &mut self.below,
            Direction::Left => &mut self.left,
            Direction::Right => &mut self.right,
        }
    }

    pub fn count(&self) -> usize {
        Direction::ALL.iter().filter(|d| self.get(**d).is_some()).count()
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.max(b.0) < a.1.min(b.1)
}

/// The neighbor of a cell in direction `d` is the cell whose center lies on
/// that side of the source center and whose projection onto the other axis
/// overlaps the source's, at minimal center distance. Ties go to the lower
/// id. Result is indexed like `page.cells`.
pub fn neighbor_graph(page: &ParsedPage) -> Vec<Neighbors> {
    let cells = &page.cells;
    let centers: Vec<(f64, f64)> = cells.iter().map(|c| c.bbox.center()).collect();
    let mut out = vec![Neighbors::default(); cells.len()];
    for (i, c) in cells.iter().enumerate() {
        let (cx, cy) = centers[i];
        let xr = (c.bbox.x0, c.bbox.x1);
        let yr = (c.bbox.y0, c.bbox.y1);
        let mut best: [Option<(f64, u32)>; 4] = [None; 4];
        for (j, o) in cells.iter().enumerate() {
            if i == j {
                continue;
            }
            let (ox, oy) = centers[j];
            let ox_r = (o.bbox.x0, o.bbox.x1);
            let oy_r = (o.bbox.y0, o.bbox.y1);
            let dirs = [
                (oy > cy && overlap(xr, ox_r)),
                (oy < cy && overlap(xr, ox_r)),
                (ox < cx && overlap(yr, oy_r)),
                (ox > cx && overlap(yr, oy_r)),
            ];
            let dist = (ox - cx).hypot(oy - cy);
            for (k, hit) in dirs.into_iter().enumerate() {
                if !hit {
                    continue;
                }
                let better = match best[k] {
                    None => true,
                    Some((bd, bid)) => dist < bd || (dist == bd && o.id < bid),
                };
                if better {
                    best[k] = Some((dist, o.id));
                }
            }
        }
        for (k, d) in Direction::ALL.iter().enumerate() {
            *out[i].slot(*d) = best[k].map(|b| b.1);
        }
    }
    out
}

fn by_id(page: &ParsedPage, id: u32) -> Option<&TextCell> {
    page.cells
        .binary_search_by_key(&id, |c| c.id)
        .ok()
        .map(|i| &page.cells[i])
        .or_else(|| page.cells.iter().find(|c| c.id == id))
}

/// Base features for every cell, in `page.cells` order.
pub fn extract_features(page: &ParsedPage) -> Vec<FeatureVector> {
    let graph = neighbor_graph(page);
    extract_with_graph(page, &graph)
}

pub fn extract_with_graph(page: &ParsedPage, graph: &[Neighbors]) -> Vec<FeatureVector> {
    let g = page.geometry;
    page.cells
        .iter()
        .zip(graph)
        .map(|(c, n)| {
            let b = c.bbox;
            let gap = |d: Direction| -> f64 {
                let other = n.get(d).and_then(|id| by_id(page, id)).map(|o| o.bbox);
                let v = match (d, other) {
                    (Direction::Above, Some(o)) => o.y0 - b.y1,
                    (Direction::Above, None) => g.height - b.y1,
                    (Direction::Below, Some(o)) => b.y0 - o.y1,
                    (Direction::Below, None) => b.y0,
                    (Direction::Left, Some(o)) => b.x0 - o.x1,
                    (Direction::Left, None) => b.x0,
                    (Direction::Right, Some(o)) => o.x0 - b.x1,
                    (Direction::Right, None) => g.width - b.x1,
                };
                v.max(0.0)
            };
            FeatureVector {
                page_number: g.page_number as f64,
                width: b.width(),
                height: b.height(),
                x0: b.x0 / g.width,
                y0: b.y0 / g.height,
                x1: b.x1 / g.width,
                y1: b.y1 / g.height,
                dist_above: gap(Direction::Above),
                dist_below: gap(Direction::Below),
                dist_left: gap(Direction::Left),
                dist_right: gap(Direction::Right),
                italic: c.style.italic as u8 as f64,
                bold: c.style.bold as u8 as f64,
                font_size: c.style.font_size,
                numeric_fraction: numeric_fraction(&c.text),
                char_count: c.text.chars().count() as f64,
            }
        })
        .collect()
}

/// Appends one-hot blocks (above, below, left, right) of the neighbors'
/// labels. A missing neighbor contributes an all-zero block.
pub fn refine_row(
    base: &[f64],
    neighbors: &Neighbors,
    label_of: impl Fn(u32) -> Option<usize>,
    n_labels: usize,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(base.len() + 4 * n_labels);
    row.extend_from_slice(base);
    for d in Direction::ALL {
        let start = row.len();
        row.extend(std::iter::repeat_n(0.0, n_labels));
        if let Some(l) = neighbors.get(d).and_then(&label_of) {
            row[start + l] = 1.0;
        }
    }
    row
}
