//! Rule-based assembly of labeled cells into a structured document.
//!
//! Cells are put in reading order page by page, consecutive cells with the
//! same label are contracted into one object, and objects are routed to the
//! description, the main text, the tables or the images.

mod order;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{
    self, BBox, DocumentObject, ImageObject, ParsedDocument, Prov, StructuredDocument, TableObject, TextCell, Violation,
};

pub use order::reading_order;

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("missing-label: page {page} cell {cell} has no label")]
    MissingLabel { page: u32, cell: u32 },
    #[error("invalid output: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidOutput(Vec<Violation>),
}

impl AssembleError {
    pub fn code(&self) -> &'static str {
        match self {
            AssembleError::MissingLabel { .. } => "missing-label",
            AssembleError::InvalidOutput(_) => "invalid-output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleConfig {
    /// Output `type` per label; labels not listed keep their own name.
    pub type_names: BTreeMap<String, String>,
    pub title_labels: Vec<String>,
    pub author_labels: Vec<String>,
    pub affiliation_labels: Vec<String>,
    pub abstract_labels: Vec<String>,
    pub table_labels: Vec<String>,
    pub picture_labels: Vec<String>,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        let s = |v: &str| vec![v.to_string()];
        Self {
            type_names: [("subtitle", "subtitle-level-1"), ("text", "paragraph")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            title_labels: s("title"),
            author_labels: s("author"),
            affiliation_labels: s("affiliation"),
            abstract_labels: s("abstract"),
            table_labels: s("table"),
            picture_labels: s("picture"),
        }
    }
}

impl AssembleConfig {
    pub fn type_name<'a>(&'a self, label: &'a str) -> &'a str {
        self.type_names.get(label).map_or(label, String::as_str)
    }
}

/// A contracted run of same-label cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun<'a> {
    pub label: &'a str,
    pub text: String,
    pub prov: Vec<Prov>,
    pub cells: Vec<(u32, &'a TextCell)>,
}

/// Joins two cell texts with a space, or without one where a trailing
/// hyphen meets a lowercase continuation.
pub fn join_text(acc: &mut String, next: &str) {
    if acc.is_empty() {
        acc.push_str(next);
        return;
    }
    let hyphenated = acc.ends_with('-')
        && acc[..acc.len() - 1].chars().last().is_some_and(char::is_alphabetic)
        && next.chars().next().is_some_and(char::is_lowercase);
    if hyphenated {
        acc.pop();
    } else {
        acc.push(' ');
    }
    acc.push_str(next);
}

/// Contracts maximal runs of consecutive same-label cells. `cells` pairs
/// each cell with its page number and must already be in reading order.
pub fn merge_by_label<'a>(cells: &[(u32, &'a TextCell)]) -> Result<Vec<LabeledRun<'a>>, AssembleError> {
    let mut out: Vec<LabeledRun> = Vec::new();
    for &(page, cell) in cells {
        let label = cell
            .label
            .as_deref()
            .ok_or(AssembleError::MissingLabel { page, cell: cell.id })?;
        let prov = Prov { bbox: cell.bbox, page };
        match out.last_mut() {
            Some(run) if run.label == label => {
                join_text(&mut run.text, &cell.text);
                run.prov.push(prov);
                run.cells.push((page, cell));
            }
            _ => out.push(LabeledRun {
                label,
                text: cell.text.clone(),
                prov: vec![prov],
                cells: vec![(page, cell)],
            }),
        }
    }
    Ok(out)
}

/// All cells of the document in reading order, page after page.
pub fn ordered_cells(doc: &ParsedDocument) -> Vec<(u32, &TextCell)> {
    let mut out = Vec::with_capacity(doc.cell_count());
    let mut pages: Vec<_> = doc.pages.iter().collect();
    pages.sort_by_key(|p| p.page_number());
    for page in pages {
        let by_id: HashMap<u32, &TextCell> = page.cells.iter().map(|c| (c.id, c)).collect();
        out.extend(
            reading_order(page)
                .into_iter()
                .map(|id| (page.page_number(), by_id[&id])),
        );
    }
    out
}

/// Groups cells into rows by vertical overlap of their centers and into
/// columns by overlapping horizontal extents.
pub fn table_rows(cells: &[&TextCell]) -> Vec<Vec<String>> {
    if cells.is_empty() {
        return Vec::new();
    }
    let mut spans: Vec<(f64, f64)> = cells.iter().map(|c| (c.bbox.x0, c.bbox.x1)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut bands: Vec<(f64, f64)> = Vec::new();
    for (x0, x1) in spans {
        match bands.last_mut() {
            Some(b) if x0 < b.1 => b.1 = b.1.max(x1),
            _ => bands.push((x0, x1)),
        }
    }
    let column = |c: &TextCell| {
        bands
            .iter()
            .position(|b| c.bbox.x0 >= b.0 && c.bbox.x0 < b.1.max(b.0 + 1e-9))
            .unwrap_or(0)
    };

    let mut sorted: Vec<&TextCell> = cells.to_vec();
    sorted.sort_by(|a, b| {
        b.bbox
            .center()
            .1
            .total_cmp(&a.bbox.center().1)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(a.id.cmp(&b.id))
    });
    let mut rows: Vec<(BBox, Vec<&TextCell>)> = Vec::new();
    for c in sorted {
        let cy = c.bbox.center().1;
        match rows.last_mut() {
            Some((band, members)) if cy >= band.y0 && cy <= band.y1 => {
                *band = band.union(&c.bbox);
                members.push(c);
            }
            _ => rows.push((c.bbox, vec![c])),
        }
    }
    rows.into_iter()
        .map(|(_, mut members)| {
            members.sort_by(|a, b| a.bbox.x0.total_cmp(&b.bbox.x0).then(a.id.cmp(&b.id)));
            let mut row = vec![String::new(); bands.len()];
            for c in members {
                join_text(&mut row[column(c)], &c.text);
            }
            row
        })
        .collect()
}

/// Builds the structured document. Every cell must carry a label.
pub fn assemble(doc: &ParsedDocument, config: &AssembleConfig) -> Result<StructuredDocument, AssembleError> {
    let cells = ordered_cells(doc);
    let runs = merge_by_label(&cells)?;
    let is = |list: &[String], label: &str| list.iter().any(|l| l == label);

    let mut out = StructuredDocument::default();
    for run in runs {
        let on_first_page = run.prov.first().is_some_and(|p| p.page == 1);
        let slot = if !on_first_page {
            None
        } else if is(&config.title_labels, run.label) {
            Some(&mut out.description.title)
        } else if is(&config.author_labels, run.label) {
            Some(&mut out.description.authors)
        } else if is(&config.affiliation_labels, run.label) {
            Some(&mut out.description.affiliations)
        } else if is(&config.abstract_labels, run.label) {
            Some(&mut out.description.abstract_text)
        } else {
            None
        };
        if let Some(field) = slot.filter(|f| f.is_none()) {
            *field = Some(run.text);
            continue;
        }
        if is(&config.table_labels, run.label) {
            let mut rows = Vec::new();
            let mut start = 0;
            while start < run.cells.len() {
                let page = run.cells[start].0;
                let end = start + run.cells[start..].iter().take_while(|(p, _)| *p == page).count();
                let page_cells: Vec<&TextCell> = run.cells[start..end].iter().map(|(_, c)| *c).collect();
                rows.extend(table_rows(&page_cells));
                start = end;
            }
            out.tables.push(TableObject { prov: run.prov, rows });
        } else if is(&config.picture_labels, run.label) {
            out.images.push(ImageObject {
                prov: run.prov,
                text: run.text,
                image_ref: None,
            });
        } else {
            out.main_text.push(DocumentObject {
                prov: run.prov,
                kind: config.type_name(run.label).to_string(),
                text: run.text,
            });
        }
    }

    let mut pages: Vec<_> = doc.pages.iter().collect();
    pages.sort_by_key(|p| p.page_number());
    for page in pages {
        for r in &page.image_refs {
            out.images.push(ImageObject {
                prov: vec![Prov {
                    bbox: page.geometry.rect(),
                    page: page.page_number(),
                }],
                text: String::new(),
                image_ref: Some(r.clone()),
            });
        }
    }

    let violations = model::validate_structured(&out, doc.pages.len() as u32);
    if !violations.is_empty() {
        return Err(AssembleError::InvalidOutput(violations));
    }
    Ok(out)
}

/// Whitespace-separated words with hyphenated line breaks undone the same
/// way assembly undoes them.
pub fn words(texts: impl IntoIterator<Item = impl AsRef<str>>) -> Vec<String> {
    let mut joined = String::new();
    for t in texts {
        join_text(&mut joined, t.as_ref());
    }
    let mut w: Vec<String> = joined.split_whitespace().map(String::from).collect();
    w.sort();
    w
}

/// Words of every cell, in document order of its merged run, compared as
/// multisets with the assembled output.
pub fn conserves_text(doc: &ParsedDocument, out: &StructuredDocument) -> Result<bool, AssembleError> {
    let cells = ordered_cells(doc);
    let runs = merge_by_label(&cells)?;
    let input = words(runs.iter().map(|r| r.text.as_str()));
    let d = &out.description;
    let mut texts: Vec<String> = [&d.title, &d.authors, &d.affiliations, &d.abstract_text]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    texts.extend(out.main_text.iter().map(|o| o.text.clone()));
    texts.extend(out.tables.iter().flat_map(|t| t.rows.iter().flatten().cloned()));
    texts.extend(out.images.iter().map(|i| i.text.clone()));
    let mut output: Vec<String> = texts
        .iter()
        .flat_map(|t| t.split_whitespace().map(String::from))
        .collect();
    output.sort();
    Ok(input == output)
}
