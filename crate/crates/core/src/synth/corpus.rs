//! Labeled synthetic documents in two layout templates.
//!
//! Every generated run carries its ground-truth label, so documents can be
//! turned into labeled pages directly or rendered to PDF and labeled back
//! after parsing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pdf::{text_width, write_pdf, FontFace, PageSpec, TextRun};
use crate::model::{BBox, PageGeometry, ParsedDocument, ParsedPage, Segment, Style, TextCell};
use crate::parser::{assign_raster_ids, content_hash};

/// Glyph box extents the parser assumes for fonts without a descriptor.
pub const ASCENT: f64 = 0.8;
pub const DESCENT: f64 = -0.2;

pub const TITLE: &str = "title";
pub const AUTHOR: &str = "author";
pub const SUBTITLE: &str = "subtitle";
pub const TEXT: &str = "text";
pub const PICTURE: &str = "picture";
pub const TABLE: &str = "table";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    /// Single column, centered bold title, numbered headings.
    Journal,
    /// Two columns, left-aligned title, italic authors, caps headings,
    /// fully ruled tables.
    Conference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub spec: PageSpec,
    /// Ground truth, parallel to `spec.runs`.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDoc {
    pub name: String,
    pub template: Template,
    pub pages: Vec<SynthPage>,
}

#[derive(Clone)]
struct Layout {
    width: f64,
    height: f64,
    columns: &'static [(f64, f64)],
    top: f64,
    bottom: f64,
    title_size: f64,
    title_face: FontFace,
    title_centered: bool,
    author_size: f64,
    author_face: FontFace,
    author_lines: (usize, usize),
    heading_size: f64,
    heading_caps: bool,
    body_size: f64,
    leading: f64,
    picture_size: f64,
    table_size: f64,
    vertical_table_rules: bool,
}

const JOURNAL: Layout = Layout {
    width: 612.0,
    height: 792.0,
    columns: &[(72.0, 540.0)],
    top: 720.0,
    bottom: 72.0,
    title_size: 17.0,
    title_face: FontFace::Bold,
    title_centered: true,
    author_size: 11.0,
    author_face: FontFace::Regular,
    author_lines: (1, 2),
    heading_size: 12.0,
    heading_caps: false,
    body_size: 10.0,
    leading: 12.5,
    picture_size: 7.0,
    table_size: 8.0,
    vertical_table_rules: false,
};

const CONFERENCE: Layout = Layout {
    width: 612.0,
    height: 792.0,
    columns: &[(54.0, 300.0), (312.0, 558.0)],
    top: 740.0,
    bottom: 60.0,
    title_size: 20.0,
    title_face: FontFace::Regular,
    title_centered: false,
    author_size: 10.0,
    author_face: FontFace::Italic,
    author_lines: (2, 3),
    heading_size: 9.0,
    heading_caps: true,
    body_size: 9.0,
    leading: 11.0,
    picture_size: 6.0,
    table_size: 7.0,
    vertical_table_rules: true,
};

impl Template {
    fn layout(self) -> &'static Layout {
        match self {
            Template::Journal => &JOURNAL,
            Template::Conference => &CONFERENCE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::Journal => "journal",
            Template::Conference => "conference",
        }
    }
}

const WORDS: &[&str] = &[
    "the",
    "of",
    "and",
    "a",
    "to",
    "in",
    "is",
    "we",
    "for",
    "that",
    "with",
    "on",
    "are",
    "as",
    "by",
    "this",
    "be",
    "from",
    "model",
    "data",
    "results",
    "method",
    "table",
    "which",
    "can",
    "our",
    "these",
    "document",
    "layout",
    "network",
    "training",
    "set",
    "performance",
    "analysis",
    "learning",
    "each",
    "cells",
    "page",
    "text",
    "using",
    "approach",
    "shown",
    "based",
    "between",
    "structure",
    "values",
    "number",
    "section",
    "experiments",
    "time",
    "large",
    "small",
    "high",
    "order",
    "system",
    "process",
    "new",
    "first",
    "two",
    "three",
    "function",
    "error",
    "quality",
    "different",
    "figure",
    "parameters",
    "observed",
    "sample",
    "scale",
    "first",
    "energy",
    "field",
    "temperature",
    "phase",
    "state",
    "measured",
    "distribution",
    "average",
    "random",
    "forest",
    "labels",
    "precision",
    "recall",
    "memory",
    "parallel",
    "queue",
    "worker",
    "stored",
    "index",
    "object",
    "reading",
];

const HEADINGS: &[&str] = &[
    "Introduction",
    "Related Work",
    "Methods",
    "Experimental Setup",
    "Results",
    "Discussion",
    "Evaluation",
    "Model Architecture",
    "Data Collection",
    "Analysis",
    "Limitations",
    "Conclusion",
    "Background",
    "Ablation",
];

const SURNAMES: &[&str] = &[
    "Keller",
    "Moreau",
    "Tanaka",
    "Okafor",
    "Lindqvist",
    "Rossi",
    "Novak",
    "Haddad",
    "Silva",
    "Brennan",
    "Ivanova",
    "Chen",
    "Fischer",
    "Garcia",
    "Kowalski",
    "Nakamura",
    "Petrov",
    "Schmid",
];

const AXIS_TITLES: &[&str] = &[
    "Time (s)", "Loss", "Accuracy", "Energy", "Epoch", "Pages", "Recall", "Density",
];

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).copied().unwrap_or("the")
}

const PROSE_NUMBERS: &[&str] = &["2017", "3.5", "12", "0.91", "(1)", "[4]", "10%", "256", "1.2"];

fn prose_word(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.gen_bool(0.04) {
        PROSE_NUMBERS.choose(rng).copied().unwrap_or("12")
    } else {
        word(rng)
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

/// A line of words no wider than `max` points.
fn fill_line(rng: &mut ChaCha8Rng, max: f64, size: f64) -> String {
    let mut line = String::new();
    loop {
        let w = prose_word(rng);
        let candidate = if line.is_empty() {
            w.to_string()
        } else {
            format!("{line} {w}")
        };
        if text_width(&candidate, size) > max {
            break;
        }
        line = candidate;
    }
    if line.is_empty() {
        line.push('a');
    }
    line
}

struct Flow<'a> {
    layout: &'a Layout,
    pages: Vec<SynthPage>,
    max_pages: usize,
    column: usize,
    y: f64,
    /// First usable y on the current page, below the header on page one.
    page_top: f64,
    figures: usize,
    tables: usize,
    sections: usize,
    done: bool,
}

impl<'a> Flow<'a> {
    fn page(&mut self) -> &mut SynthPage {
        self.pages.last_mut().expect("flow has a page")
    }

    fn push(&mut self, x: f64, baseline: f64, size: f64, face: FontFace, text: String, label: &str) {
        let page = self.page();
        page.spec.runs.push(TextRun {
            x,
            baseline,
            size,
            face,
            text,
        });
        page.labels.push(label.to_string());
    }

    fn col(&self) -> (f64, f64) {
        self.layout.columns[self.column]
    }

    fn next_column(&mut self) {
        self.column += 1;
        if self.column >= self.layout.columns.len() {
            if self.pages.len() >= self.max_pages {
                self.done = true;
                return;
            }
            self.pages.push(blank_page(self.layout));
            self.column = 0;
            self.page_top = self.layout.top;
        }
        self.y = self.page_top;
    }

    /// Reserves `h` points in the current column, moving on if needed.
    fn reserve(&mut self, h: f64) -> bool {
        let l = self.layout;
        if h > self.page_top.min(l.top) - l.bottom {
            return false;
        }
        while !self.done && self.y - h < l.bottom {
            self.next_column();
        }
        !self.done
    }

    fn line(&mut self, indent: f64, text: String, size: f64, face: FontFace, label: &str) {
        let leading = self.layout.leading.max(size * 1.25);
        if !self.reserve(leading) {
            return;
        }
        let (x0, _) = self.col();
        let baseline = self.y - size * ASCENT - 1.0;
        self.push(x0 + indent, baseline, size, face, text, label);
        self.y -= leading;
    }

    fn paragraph(&mut self, rng: &mut ChaCha8Rng) {
        let l = self.layout;
        self.y -= l.leading * 0.5;
        let n = rng.gen_range(3..=9);
        let (x0, x1) = self.col();
        let width = x1 - x0;
        for i in 0..n {
            let indent = if i == 0 { 12.0 } else { 0.0 };
            let max = if i == n - 1 {
                width * rng.gen_range(0.3..0.9)
            } else {
                width - indent
            };
            let text = fill_line(rng, max, l.body_size);
            self.line(indent, text, l.body_size, FontFace::Regular, TEXT);
            if self.done {
                return;
            }
        }
    }

    fn heading(&mut self, rng: &mut ChaCha8Rng) {
        let l = self.layout;
        self.sections += 1;
        let name = HEADINGS.choose(rng).copied().unwrap_or("Results");
        let text = if l.heading_caps {
            name.to_uppercase()
        } else if rng.gen_bool(0.5) {
            format!("{} {}", self.sections, name)
        } else {
            format!("{}.{} {}", self.sections, rng.gen_range(1..5), name)
        };
        if !self.reserve(l.leading * 2.5 + l.heading_size) {
            return;
        }
        self.y -= l.leading * 0.8;
        self.line(0.0, text, l.heading_size, FontFace::Bold, SUBTITLE);
        self.y -= 2.0;
    }

    fn figure(&mut self, rng: &mut ChaCha8Rng) {
        let l = self.layout;
        let (x0, x1) = self.col();
        let cw = x1 - x0;
        let h = rng.gen_range(90.0..160.0);
        let w = cw * rng.gen_range(0.6..0.9);
        if !self.reserve(h + 2.5 * l.leading + 8.0) {
            return;
        }
        let (x0, x1) = self.col();
        let fx = x0 + (x1 - x0 - w) / 2.0;
        let fy = self.y - 4.0 - h;
        self.page().spec.images.push([fx, fy, w, h]);
        let ps = l.picture_size;
        let y_ticks = rng.gen_range(3..=6);
        let step = (h - 30.0) / y_ticks as f64;
        let scale = [1.0, 0.1, 10.0, 100.0][rng.gen_range(0..4)];
        for k in 0..y_ticks {
            let v = format_tick((k + 1) as f64 * scale);
            self.push(fx + 2.0, fy + 20.0 + k as f64 * step, ps, FontFace::Regular, v, PICTURE);
        }
        let x_ticks = rng.gen_range(3..=5);
        let xstep = (w - 40.0) / x_ticks as f64;
        for k in 0..x_ticks {
            let v = format_tick(k as f64 * scale * 2.0);
            self.push(
                fx + 30.0 + k as f64 * xstep,
                fy + 3.0,
                ps,
                FontFace::Regular,
                v,
                PICTURE,
            );
        }
        if rng.gen_bool(0.6) {
            let t = AXIS_TITLES.choose(rng).copied().unwrap_or("Time");
            self.push(
                fx + w / 2.0,
                fy + h - ps - 3.0,
                ps,
                FontFace::Regular,
                t.to_string(),
                PICTURE,
            );
        }
        self.y = fy - 6.0;
        self.figures += 1;
        let caption = format!(
            "Figure {}: {}",
            self.figures,
            fill_line(rng, (x1 - x0) * 0.7, l.body_size)
        );
        self.line(0.0, caption, l.body_size, FontFace::Regular, TEXT);
    }

    fn table(&mut self, rng: &mut ChaCha8Rng) {
        let l = self.layout;
        let ts = l.table_size;
        let rows = rng.gen_range(4..=9);
        let row_h = ts * 1.7;
        let h = rows as f64 * row_h + 2.0 * l.leading + 8.0;
        if !self.reserve(h) {
            return;
        }
        self.tables += 1;
        let (x0, x1) = self.col();
        let caption = format!(
            "Table {}: {}",
            self.tables,
            fill_line(rng, (x1 - x0) * 0.6, l.body_size)
        );
        self.line(0.0, caption, l.body_size, FontFace::Regular, TEXT);
        let (x0, x1) = self.col();
        let max_cols = (((x1 - x0) / 55.0) as usize).clamp(3, 6);
        let cols = rng.gen_range(3..=max_cols);
        let col_w = (x1 - x0) / cols as f64;
        let top = self.y - 3.0;
        let mut lines = vec![[x0, top, x1, top]];
        for r in 0..rows {
            let baseline = top - (r as f64 + 1.0) * row_h + ts * 0.45;
            for c in 0..cols {
                let budget = col_w - 4.0 * ts;
                let text = if r == 0 {
                    let w = capitalize(word(rng));
                    if text_width(&w, ts) <= budget {
                        w
                    } else {
                        "Col".to_string()
                    }
                } else if c == 0 || rng.gen_bool(0.15) {
                    let w = word(rng).to_string();
                    if text_width(&w, ts) <= budget {
                        w
                    } else {
                        "row".to_string()
                    }
                } else {
                    format!("{:.2}", rng.gen_range(0.0..100.0))
                };
                let face = if r == 0 { FontFace::Bold } else { FontFace::Regular };
                self.push(x0 + c as f64 * col_w + 3.0, baseline, ts, face, text, TABLE);
            }
            if r == 0 {
                let y = top - row_h;
                lines.push([x0, y, x1, y]);
            }
        }
        let bottom = top - rows as f64 * row_h - 1.0;
        lines.push([x0, bottom, x1, bottom]);
        if l.vertical_table_rules {
            for c in 1..cols {
                let x = x0 + c as f64 * col_w;
                lines.push([x, bottom, x, top]);
            }
        }
        self.page().spec.lines.extend(lines);
        self.y = bottom - 6.0;
    }
}

/// Per-document font sizes. Table and figure sizes overlap on purpose.
fn jittered(base: &Layout, rng: &mut ChaCha8Rng) -> Layout {
    let mut l = base.clone();
    let q = |v: f64| (v * 2.0).round() / 2.0;
    l.body_size = q(base.body_size + rng.gen_range(-0.5..=0.5));
    l.leading = l.body_size * base.leading / base.body_size;
    l.heading_size = q(base.heading_size + rng.gen_range(-1.0..=1.0)).max(l.body_size);
    l.table_size = q(rng.gen_range(l.body_size - 2.5..=l.body_size - 0.5));
    l.picture_size = q(rng.gen_range(l.table_size - 1.5..=l.table_size + 0.5));
    l.title_size = q(base.title_size + rng.gen_range(-1.5..=1.5));
    l
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn blank_page(l: &Layout) -> SynthPage {
    SynthPage {
        spec: PageSpec {
            width: l.width,
            height: l.height,
            ..PageSpec::default()
        },
        labels: Vec::new(),
    }
}

/// One document of `pages` pages. The first page carries the single title
/// line and the author lines.
pub fn generate_doc(template: Template, pages: usize, seed: u64, name: impl Into<String>) -> SynthDoc {
    assert!(pages > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = &jittered(template.layout(), &mut rng);
    let mut flow = Flow {
        layout: l,
        pages: vec![blank_page(l)],
        max_pages: pages,
        column: 0,
        y: l.top,
        page_top: l.top,
        figures: 0,
        tables: 0,
        sections: 0,
        done: false,
    };

    let full = (l.columns[0].0, l.columns[l.columns.len() - 1].1);
    let n_words = rng.gen_range(4..=7);
    let title = (0..n_words)
        .map(|_| capitalize(word(&mut rng)))
        .collect::<Vec<_>>()
        .join(" ");
    let tw = text_width(&title, l.title_size);
    let tx = if l.title_centered { (l.width - tw) / 2.0 } else { full.0 };
    let mut y = l.top;
    flow.push(tx, y, l.title_size, l.title_face, title, TITLE);
    y -= l.title_size + 10.0;
    let n_authors = rng.gen_range(l.author_lines.0..=l.author_lines.1);
    for _ in 0..n_authors {
        let names: Vec<String> = (0..rng.gen_range(2..=3))
            .map(|_| {
                let initial = (b'A' + rng.gen_range(0..26u8)) as char;
                format!("{initial}. {}", SURNAMES.choose(&mut rng).copied().unwrap_or("Keller"))
            })
            .collect();
        let text = names.join(", ");
        let aw = text_width(&text, l.author_size);
        let ax = if l.title_centered { (l.width - aw) / 2.0 } else { full.0 };
        flow.push(ax, y, l.author_size, l.author_face, text, AUTHOR);
        y -= l.author_size + 4.0;
    }
    flow.page_top = y - 18.0;
    flow.y = flow.page_top;

    flow.heading(&mut rng);
    let mut since_heading = 0;
    while !flow.done {
        let roll: f64 = rng.gen();
        if roll < 0.08 && since_heading > 1 {
            flow.heading(&mut rng);
            since_heading = 0;
        } else if roll < 0.15 {
            flow.figure(&mut rng);
            since_heading += 1;
        } else if roll < 0.22 {
            flow.table(&mut rng);
            since_heading += 1;
        } else {
            flow.paragraph(&mut rng);
            since_heading += 1;
        }
    }
    SynthDoc {
        name: name.into(),
        template,
        pages: flow.pages,
    }
}

/// `n_pages` pages of one template, in documents of 16 pages.
pub fn template_corpus(template: Template, n_pages: usize, seed: u64) -> Vec<SynthDoc> {
    const PAGES_PER_DOC: usize = 16;
    let mut docs = Vec::new();
    let mut left = n_pages;
    let mut k = 0u64;
    while left > 0 {
        let n = left.min(PAGES_PER_DOC);
        let name = format!("{}-{:03}", template.name(), k);
        docs.push(generate_doc(
            template,
            n,
            seed.wrapping_mul(1_000_003).wrapping_add(k),
            name,
        ));
        left -= n;
        k += 1;
    }
    docs
}

/// Splits by document: the first `⌈(1 - test_fraction) · n⌉` documents
/// train, the rest test.
pub fn split_docs(docs: &[SynthDoc], test_fraction: f64) -> (Vec<SynthDoc>, Vec<SynthDoc>) {
    let n_train = ((docs.len() as f64) * (1.0 - test_fraction)).round() as usize;
    (docs[..n_train].to_vec(), docs[n_train..].to_vec())
}

pub fn run_bbox(run: &TextRun) -> BBox {
    let w = text_width(&run.text, run.size);
    BBox::new(
        run.x,
        run.baseline + DESCENT * run.size,
        run.x + w,
        run.baseline + ASCENT * run.size,
    )
}

fn run_style(run: &TextRun) -> Style {
    Style::new(run.size, run.face == FontFace::Bold, run.face == FontFace::Italic)
}

impl SynthDoc {
    pub fn render_pdf(&self) -> Vec<u8> {
        let specs: Vec<PageSpec> = self.pages.iter().map(|p| p.spec.clone()).collect();
        write_pdf(&specs)
    }

    /// Labeled pages built directly from the runs, one cell per run.
    pub fn to_parsed(&self) -> ParsedDocument {
        let pages = self
            .pages
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut page = ParsedPage::new(PageGeometry::new(i as u32 + 1, p.spec.width, p.spec.height));
                page.cells = p
                    .spec
                    .runs
                    .iter()
                    .zip(&p.labels)
                    .map(|(r, l)| TextCell::new(0, run_bbox(r), r.text.clone(), run_style(r)).with_label(l.clone()))
                    .collect();
                assign_raster_ids(&mut page.cells);
                page.paths = p
                    .spec
                    .lines
                    .iter()
                    .map(|l| Segment::new(l[0], l[1], l[2], l[3]))
                    .collect();
                page.image_refs = (0..p.spec.images.len())
                    .map(|k| format!("p{}/figure{}", i + 1, k))
                    .collect();
                page
            })
            .collect();
        let mut doc = ParsedDocument::new(content_hash(self.name.as_bytes()), self.name.clone(), pages);
        doc.canonicalize();
        doc
    }

    pub fn counts(&self) -> std::collections::BTreeMap<String, usize> {
        let mut m = std::collections::BTreeMap::new();
        for p in &self.pages {
            for l in &p.labels {
                *m.entry(l.clone()).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Labels parsed cells from ground truth: each cell takes the label of the
/// run it overlaps most. Returns the number of cells left unlabeled.
pub fn oracle_label(parsed: &mut ParsedDocument, truth: &SynthDoc) -> usize {
    let mut missing = 0;
    for page in &mut parsed.pages {
        let Some(t) = truth.pages.get(page.page_number() as usize - 1) else {
            missing += page.cells.len();
            continue;
        };
        let boxes: Vec<BBox> = t.spec.runs.iter().map(run_bbox).collect();
        for cell in &mut page.cells {
            let best = boxes
                .iter()
                .enumerate()
                .map(|(i, b)| (cell.bbox.intersection_area(b), i))
                .filter(|(a, _)| *a > 0.0)
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            match best {
                Some((_, i)) => cell.label = Some(t.labels[i].clone()),
                None => missing += 1,
            }
        }
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;
    use crate::parser::{parse_pdf, NormalizationConfig};

    #[test]
    fn one_title_on_first_page() {
        for t in [Template::Journal, Template::Conference] {
            let d = generate_doc(t, 4, 1, "d");
            assert_eq!(d.pages.len(), 4);
            assert_eq!(d.counts()[TITLE], 1);
            assert_eq!(d.pages[0].labels[0], TITLE);
            assert!(validate(&d.to_parsed()).is_empty());
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_doc(Template::Conference, 3, 42, "x");
        let b = generate_doc(Template::Conference, 3, 42, "x");
        assert_eq!(a, b);
    }

    #[test]
    fn parsed_pdf_matches_runs() {
        for t in [Template::Journal, Template::Conference] {
            let doc = generate_doc(t, 3, 7, "roundtrip");
            let direct = doc.to_parsed();
            let mut parsed = parse_pdf(&doc.render_pdf(), "roundtrip.pdf", &NormalizationConfig::default()).unwrap();
            assert_eq!(oracle_label(&mut parsed, &doc), 0);
            for (a, b) in direct.pages.iter().zip(&parsed.pages) {
                assert_eq!(a.cells.len(), b.cells.len(), "{t:?} page {}", a.page_number());
                for (x, y) in a.cells.iter().zip(&b.cells) {
                    assert_eq!(x.text, y.text);
                    assert_eq!(x.label, y.label);
                    for (p, q) in x.bbox.as_array().iter().zip(y.bbox.as_array()) {
                        assert!((p - q).abs() < 0.01, "{x:?} vs {y:?}");
                    }
                }
            }
        }
    }
}
