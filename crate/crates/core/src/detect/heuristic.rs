use super::{Detection, Detector};
use crate::model::{BBox, ParsedPage, TextCell};

/// Finds grids: at least `min_rows` consecutive rows of at least two cells
/// whose left edges, right edges or centers line up with the row above.
#[derive(Debug, Clone)]
pub struct HeuristicTableDetector {
    pub min_rows: usize,
    /// Points within which two edges count as aligned.
    pub tolerance: f64,
    /// Mean cell width must stay below this fraction of the page width.
    pub max_mean_width_fraction: f64,
    /// Rows further apart than this many row heights break a grid.
    pub max_row_gap: f64,
}

impl Default for HeuristicTableDetector {
    fn default() -> Self {
        Self {
            min_rows: 3,
            tolerance: 3.0,
            max_mean_width_fraction: 0.3,
            max_row_gap: 2.5,
        }
    }
}

struct Row<'a> {
    cells: Vec<&'a TextCell>,
    top: f64,
    bottom: f64,
}

impl HeuristicTableDetector {
    fn rows<'a>(&self, page: &'a ParsedPage) -> Vec<Row<'a>> {
        let mut cells: Vec<&TextCell> = page.cells.iter().collect();
        cells.sort_by(|a, b| {
            b.bbox
                .center()
                .1
                .total_cmp(&a.bbox.center().1)
                .then(a.bbox.x0.total_cmp(&b.bbox.x0))
                .then(a.id.cmp(&b.id))
        });
        let mut rows: Vec<Row> = Vec::new();
        for c in cells {
            let cy = c.bbox.center().1;
            match rows.last_mut() {
                Some(r) if cy >= r.bottom && cy <= r.top => {
                    r.cells.push(c);
                    r.top = r.top.max(c.bbox.y1);
                    r.bottom = r.bottom.min(c.bbox.y0);
                }
                _ => rows.push(Row {
                    cells: vec![c],
                    top: c.bbox.y1,
                    bottom: c.bbox.y0,
                }),
            }
        }
        for r in &mut rows {
            r.cells
                .sort_by(|a, b| a.bbox.x0.total_cmp(&b.bbox.x0).then(a.id.cmp(&b.id)));
        }
        rows
    }

    /// Fraction of `lower`'s cells aligned with some cell of `upper`.
    fn alignment(&self, upper: &Row, lower: &Row) -> f64 {
        let tol = self.tolerance;
        let hits = lower
            .cells
            .iter()
            .filter(|c| {
                upper.cells.iter().any(|u| {
                    (u.bbox.x0 - c.bbox.x0).abs() <= tol
                        || (u.bbox.x1 - c.bbox.x1).abs() <= tol
                        || (u.bbox.center().0 - c.bbox.center().0).abs() <= tol
                })
            })
            .count();
        hits as f64 / lower.cells.len() as f64
    }

    fn emit(&self, rows: &[&Row], scores: &[f64], page_width: f64, out: &mut Vec<Detection>) {
        if rows.len() < self.min_rows {
            return;
        }
        let cells: Vec<&&TextCell> = rows.iter().flat_map(|r| r.cells.iter()).collect();
        let mean_w = cells.iter().map(|c| c.bbox.width()).sum::<f64>() / cells.len() as f64;
        if mean_w >= self.max_mean_width_fraction * page_width {
            return;
        }
        let bbox = cells.iter().skip(1).fold(cells[0].bbox, |b: BBox, c| b.union(&c.bbox));
        let score = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        out.push(Detection::table(bbox, (score * 1000.0).round() / 1000.0));
    }
}

impl Detector for HeuristicTableDetector {
    fn name(&self) -> &str {
        "heuristic-grid"
    }

    fn detect(&self, page: &ParsedPage) -> Vec<Detection> {
        let rows = self.rows(page);
        let mut out = Vec::new();
        let mut run: Vec<&Row> = Vec::new();
        let mut scores: Vec<f64> = Vec::new();
        for row in &rows {
            let multi = row.cells.len() >= 2;
            let joined = match run.last() {
                Some(prev) if multi => {
                    let height = (prev.top - prev.bottom).max(row.top - row.bottom);
                    let gap = prev.bottom - row.top;
                    let a = self.alignment(prev, row);
                    if gap <= self.max_row_gap * height && a >= 0.5 {
                        scores.push(a);
                        true
                    } else {
                        false
                    }
                }
                _ => false,
            };
            if !joined {
                self.emit(&run, &scores, page.geometry.width, &mut out);
                run.clear();
                scores.clear();
            }
            if multi {
                run.push(row);
            }
        }
        self.emit(&run, &scores, page.geometry.width, &mut out);
        out
    }
}
