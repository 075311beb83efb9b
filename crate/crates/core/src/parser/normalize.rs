use regex::Regex;

use super::{NormalizationConfig, RawSnippet};
use crate::model::{quantize, BBox, PageGeometry, Segment, Style, TextCell, PAGE_OVERHANG};

/// Counters for input that did not make it into a cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizationReport {
    /// Zero-area or non-finite snippets.
    pub degenerate: usize,
    /// Snippets with only whitespace.
    pub blank: usize,
    /// Snippets entirely outside the page.
    pub off_page: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Normalized {
    pub cells: Vec<TextCell>,
    pub report: NormalizationReport,
}

#[derive(Debug, Clone)]
struct Glyph {
    ch: char,
    x0: f64,
    x1: f64,
    snippet: usize,
    /// The source snippet had whitespace right before this glyph.
    space_before: bool,
}

impl Glyph {
    fn center(&self) -> f64 {
        (self.x0 + self.x1) / 2.0
    }
}

struct CellBuilder {
    glyphs: Vec<Glyph>,
    text: String,
    right: f64,
}

impl CellBuilder {
    fn start(g: Glyph) -> Self {
        let mut text = String::new();
        text.push(g.ch);
        let right = g.x1;
        Self {
            glyphs: vec![g],
            text,
            right,
        }
    }

    fn push(&mut self, g: Glyph, space: bool) {
        if space {
            self.text.push(' ');
        }
        self.text.push(g.ch);
        self.right = self.right.max(g.x1);
        self.glyphs.push(g);
    }
}

/// Rebuilds one page's snippets into single-line cells with raster-ordered
/// ids (top to bottom by bbox top, then left to right).
pub fn normalize_cells(
    snippets: &[RawSnippet],
    paths: &[Segment],
    geometry: &PageGeometry,
    config: &NormalizationConfig,
) -> Normalized {
    let mut report = NormalizationReport::default();
    let page = geometry.rect().expand(PAGE_OVERHANG);

    let mut kept: Vec<&RawSnippet> = Vec::with_capacity(snippets.len());
    for s in snippets {
        let b = s.bbox;
        if !b.is_finite() || !s.baseline_y.is_finite() || b.width() <= 0.0 || b.height() <= 0.0 {
            report.degenerate += 1;
        } else if s.text.chars().all(char::is_whitespace) {
            report.blank += 1;
        } else if b.intersection(&page).is_none() {
            report.off_page += 1;
        } else {
            kept.push(s);
        }
    }
    if kept.is_empty() {
        return Normalized {
            cells: Vec::new(),
            report,
        };
    }

    let char_width = median_char_width(&kept);
    let markers: Vec<Regex> = config
        .list_marker_patterns
        .iter()
        .filter_map(|p| Regex::new(p).ok())
        .collect();
    let verticals: Vec<&Segment> = paths.iter().filter(|s| s.is_vertical(0.5)).collect();

    let mut cells = Vec::new();
    for line in group_lines(&kept, config.baseline_tolerance) {
        let glyphs = line_glyphs(&kept, &line);
        cells.extend(split_line(
            &kept, glyphs, char_width, &verticals, &markers, geometry, config,
        ));
    }

    for cell in &mut cells {
        clip_to_rules(cell, &verticals, config.rule_overlap_fraction);
        let b = cell.bbox;
        cell.bbox = BBox::new(
            b.x0.max(page.x0),
            b.y0.max(page.y0),
            b.x1.min(page.x1),
            b.y1.min(page.y1),
        );
        if cell.bbox.x1 <= cell.bbox.x0 {
            cell.bbox.x1 = quantize(cell.bbox.x0 + 0.001);
        }
        if cell.bbox.y1 <= cell.bbox.y0 {
            cell.bbox.y1 = quantize(cell.bbox.y0 + 0.001);
        }
    }

    assign_raster_ids(&mut cells);
    Normalized { cells, report }
}

/// Sorts cells top to bottom by bbox top, then left to right, and numbers
/// them in that order.
pub fn assign_raster_ids(cells: &mut [TextCell]) {
    cells.sort_by(|a, b| {
        b.bbox
            .y1
            .total_cmp(&a.bbox.y1)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
            .then(b.bbox.y0.total_cmp(&a.bbox.y0))
            .then(a.bbox.x1.total_cmp(&b.bbox.x1))
            .then_with(|| a.text.cmp(&b.text))
    });
    for (i, c) in cells.iter_mut().enumerate() {
        c.id = i as u32;
    }
}

fn median_char_width(snippets: &[&RawSnippet]) -> f64 {
    let mut widths: Vec<f64> = snippets
        .iter()
        .map(|s| s.bbox.width() / s.text.chars().count().max(1) as f64)
        .filter(|w| *w > 0.0)
        .collect();
    if widths.is_empty() {
        return 1.0;
    }
    widths.sort_by(f64::total_cmp);
    let n = widths.len();
    if n % 2 == 1 {
        widths[n / 2]
    } else {
        (widths[n / 2 - 1] + widths[n / 2]) / 2.0
    }
}

/// Greedy baseline clustering. A line accepts a snippet only while the
/// spread of its baselines stays below `tolerance` times the smallest font
/// size in the line, so no two members ever differ by more than that.
fn group_lines(snippets: &[&RawSnippet], tolerance: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..snippets.len()).collect();
    order.sort_by(|&a, &b| {
        snippets[b]
            .baseline_y
            .total_cmp(&snippets[a].baseline_y)
            .then(snippets[a].bbox.x0.total_cmp(&snippets[b].bbox.x0))
            .then(snippets[a].bbox.x1.total_cmp(&snippets[b].bbox.x1))
            .then(snippets[a].font.size.total_cmp(&snippets[b].font.size))
            .then_with(|| snippets[a].text.cmp(&snippets[b].text))
            .then(a.cmp(&b))
    });
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut hi = f64::NAN;
    let mut lo = f64::NAN;
    let mut min_size = f64::NAN;
    for i in order {
        let s = snippets[i];
        let size = s.font.size.max(f64::MIN_POSITIVE);
        if let Some(line) = lines.last_mut() {
            let new_hi = hi.max(s.baseline_y);
            let new_lo = lo.min(s.baseline_y);
            let new_min = min_size.min(size);
            if new_hi - new_lo < tolerance * new_min {
                line.push(i);
                hi = new_hi;
                lo = new_lo;
                min_size = new_min;
                continue;
            }
        }
        lines.push(vec![i]);
        hi = s.baseline_y;
        lo = s.baseline_y;
        min_size = size;
    }
    lines
}

fn line_glyphs(snippets: &[&RawSnippet], line: &[usize]) -> Vec<Glyph> {
    let mut glyphs = Vec::new();
    for &si in line {
        let s = snippets[si];
        let chars: Vec<char> = s.text.chars().collect();
        let n = chars.len();
        let spans: Vec<[f64; 2]> = match &s.char_spans {
            Some(spans) if spans.len() == n && spans.iter().all(|sp| sp[0].is_finite() && sp[1].is_finite()) => spans
                .iter()
                .map(|sp| [sp[0].min(sp[1]).max(s.bbox.x0), sp[0].max(sp[1]).min(s.bbox.x1)])
                .collect(),
            _ => {
                let w = s.bbox.width() / n as f64;
                (0..n)
                    .map(|k| [s.bbox.x0 + k as f64 * w, s.bbox.x0 + (k + 1) as f64 * w])
                    .collect()
            }
        };
        let mut space_before = false;
        for (ch, span) in chars.into_iter().zip(spans) {
            if ch.is_whitespace() {
                space_before = true;
                continue;
            }
            glyphs.push(Glyph {
                ch,
                x0: span[0],
                x1: span[1].max(span[0]),
                snippet: si,
                space_before,
            });
            space_before = false;
        }
    }
    glyphs.sort_by(|a, b| {
        a.x0.total_cmp(&b.x0)
            .then(a.x1.total_cmp(&b.x1))
            .then(a.ch.cmp(&b.ch))
            .then(a.space_before.cmp(&b.space_before))
    });
    glyphs
}

/// The word starting at `start`: glyphs up to the next word gap.
fn word_at(glyphs: &[Glyph], start: usize, space_gap: f64) -> String {
    let mut word = String::new();
    word.push(glyphs[start].ch);
    let mut right = glyphs[start].x1;
    for g in &glyphs[start + 1..] {
        if g.space_before || g.x0 - right >= space_gap {
            break;
        }
        word.push(g.ch);
        right = right.max(g.x1);
    }
    word
}

fn split_line(
    snippets: &[&RawSnippet],
    glyphs: Vec<Glyph>,
    char_width: f64,
    verticals: &[&Segment],
    markers: &[Regex],
    geometry: &PageGeometry,
    config: &NormalizationConfig,
) -> Vec<TextCell> {
    if glyphs.is_empty() {
        return Vec::new();
    }
    let space_gap = config.space_gap_em * char_width;
    let merge_gap = config.merge_gap_em * char_width;
    let split_gap = config.split_gap_em * char_width;
    let max_width = config.max_cell_width_fraction.map(|f| f * geometry.width);
    let (line_y0, line_y1) = glyphs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
        let b = snippets[g.snippet].bbox;
        (lo.min(b.y0), hi.max(b.y1))
    });
    let line_height = line_y1 - line_y0;
    let crossing_rules: Vec<f64> = verticals
        .iter()
        .filter(|v| {
            let (a, b) = v.y_range();
            (b.min(line_y1) - a.max(line_y0)) >= config.rule_overlap_fraction * line_height
        })
        .map(|v| v.x0)
        .collect();

    let mut builders: Vec<CellBuilder> = Vec::new();
    let mut current: Option<CellBuilder> = None;
    for idx in 0..glyphs.len() {
        let g = glyphs[idx].clone();
        let Some(cell) = current.as_mut() else {
            current = Some(CellBuilder::start(g));
            continue;
        };
        let gap = g.x0 - cell.right;
        let prev_center = cell.glyphs.last().map(Glyph::center).unwrap_or(cell.right);
        let word_break = g.space_before || gap >= space_gap;
        let split = gap > split_gap
            || crossing_rules.iter().any(|&x| prev_center < x && x <= g.center())
            || (word_break && gap > merge_gap && markers.iter().any(|m| m.is_match(&word_at(&glyphs, idx, space_gap))))
            || max_width.is_some_and(|w| g.x1 - cell.glyphs[0].x0 > w);
        if split {
            builders.push(current.take().expect("current cell"));
            current = Some(CellBuilder::start(g));
        } else {
            cell.push(g, word_break);
        }
    }
    builders.extend(current);

    builders
        .into_iter()
        .map(|b| {
            let mut bbox: Option<BBox> = None;
            for g in &b.glyphs {
                let sb = snippets[g.snippet].bbox;
                let gb = BBox {
                    x0: g.x0,
                    y0: sb.y0,
                    x1: g.x1.max(g.x0),
                    y1: sb.y1,
                };
                bbox = Some(bbox.map_or(gb, |acc| acc.union(&gb)));
            }
            let bbox = bbox.expect("non-empty cell");
            let font = &snippets[b.glyphs[0].snippet].font;
            TextCell::new(
                0,
                BBox::new(bbox.x0, bbox.y0, bbox.x1, bbox.y1),
                b.text,
                Style::new(font.size, font.bold, font.italic),
            )
        })
        .collect()
}

/// Pulls a cell edge back onto any qualifying vertical rule still inside it.
fn clip_to_rules(cell: &mut TextCell, verticals: &[&Segment], overlap_fraction: f64) {
    let h = cell.bbox.height();
    let mut hits: Vec<f64> = verticals
        .iter()
        .filter(|v| {
            let (a, b) = v.y_range();
            b.min(cell.bbox.y1) - a.max(cell.bbox.y0) >= overlap_fraction * h
        })
        .map(|v| v.x0)
        .filter(|&x| cell.bbox.x0 < x && x < cell.bbox.x1)
        .collect();
    hits.sort_by(f64::total_cmp);
    let mid = cell.bbox.center().0;
    for x in hits {
        if x <= mid {
            cell.bbox.x0 = cell.bbox.x0.max(x);
        } else {
            cell.bbox.x1 = cell.bbox.x1.min(x);
        }
    }
    if cell.bbox.x1 <= cell.bbox.x0 {
        cell.bbox.x1 = cell.bbox.x0 + 0.001;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::FontInfo;
    use proptest::prelude::*;

    fn font(size: f64) -> FontInfo {
        FontInfo {
            name: "Helvetica".into(),
            size,
            italic: false,
            bold: false,
        }
    }

    /// Snippet with 5 pt per character, baseline at `y`, 10 pt font.
    fn snip(text: &str, x0: f64, y: f64) -> RawSnippet {
        let w = 5.0 * text.chars().count() as f64;
        RawSnippet::new(BBox::new(x0, y - 2.0, x0 + w, y + 8.0), text, font(10.0), y)
    }

    fn page() -> PageGeometry {
        PageGeometry::new(1, 612.0, 792.0)
    }

    fn run(snippets: &[RawSnippet], paths: &[Segment]) -> Vec<TextCell> {
        normalize_cells(snippets, paths, &page(), &NormalizationConfig::default()).cells
    }

    #[test]
    fn empty_input_gives_no_cells() {
        assert!(run(&[], &[]).is_empty());
    }

    #[test]
    fn fragments_merge_into_one_cell() {
        // median char width 5 pt; gap 1.5 pt = 0.3 em
        let cells = run(&[snip("Hel", 100.0, 700.0), snip("lo", 116.5, 700.0)], &[]);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].text, "Hello");
        assert_eq!(cells[0].bbox, BBox::new(100.0, 698.0, 126.5, 708.0));
    }

    #[test]
    fn word_gap_becomes_space() {
        let cells = run(&[snip("Hello", 100.0, 700.0), snip("world", 128.0, 700.0)], &[]);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].text, "Hello world");
    }

    #[test]
    fn column_gutter_splits() {
        // gap of 20 pt = 4 em > split gap
        let cells = run(&[snip("left", 100.0, 700.0), snip("right", 140.0, 700.0)], &[]);
        let texts: Vec<&str> = cells.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["left", "right"]);
    }

    #[test]
    fn vertical_rule_splits_wide_snippet() {
        // 80 chars at 5 pt spans x = 100..500
        let text: String = "ab".repeat(40);
        let s = snip(&text, 100.0, 700.0);
        let rule = Segment::new(300.0, 690.0, 300.0, 720.0);
        let cells = run(&[s], &[rule]);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].bbox.x0, 100.0);
        assert_eq!(cells[0].bbox.x1, 300.0);
        assert_eq!(cells[1].bbox.x0, 300.0);
        assert_eq!(cells[1].bbox.x1, 500.0);
        assert_eq!(cells[0].text.len() + cells[1].text.len(), 80);
    }

    #[test]
    fn short_rule_does_not_split() {
        let s = snip("abcdefgh", 100.0, 700.0);
        let rule = Segment::new(120.0, 698.0, 120.0, 700.0);
        assert_eq!(run(&[s], &[rule]).len(), 1);
    }

    #[test]
    fn list_marker_splits_after_wide_gap() {
        let cells = run(&[snip("first item", 100.0, 700.0), snip("• second", 162.0, 700.0)], &[]);
        let texts: Vec<&str> = cells.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["first item", "• second"]);
        // an ordinary dash after a word space stays inline
        let cells = run(&[snip("range - end", 100.0, 700.0)], &[]);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].text, "range - end");
    }

    #[test]
    fn lines_stay_separate() {
        let cells = run(&[snip("upper", 100.0, 700.0), snip("lower", 100.0, 688.0)], &[]);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].text, "upper");
        assert_eq!(cells[0].id, 0);
        assert_eq!(cells[1].id, 1);
    }

    #[test]
    fn degenerate_snippets_are_counted() {
        let mut flat = snip("x", 10.0, 10.0);
        flat.bbox.y1 = flat.bbox.y0;
        let out = normalize_cells(
            &[flat, snip("  ", 50.0, 50.0)],
            &[],
            &page(),
            &NormalizationConfig::default(),
        );
        assert!(out.cells.is_empty());
        assert_eq!(out.report.degenerate, 1);
        assert_eq!(out.report.blank, 1);
    }

    #[test]
    fn width_cap_when_enabled() {
        let config = NormalizationConfig {
            max_cell_width_fraction: Some(0.1),
            ..NormalizationConfig::default()
        };
        let text = "x".repeat(40); // 200 pt wide, cap is 61.2 pt
        let out = normalize_cells(&[snip(&text, 100.0, 700.0)], &[], &page(), &config);
        assert!(out.cells.len() >= 3);
        assert!(out.cells.iter().all(|c| c.bbox.width() <= 61.2 + 1e-9));
    }

    fn non_ws(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        v.sort_unstable();
        v
    }

    fn arb_snippet() -> impl Strategy<Value = RawSnippet> {
        (
            "[a-z0-9•\\- ]{1,12}",
            0.0f64..550.0,
            0usize..40,
            prop_oneof![Just(8.0f64), Just(10.0), Just(12.0)],
            0.0f64..2.0,
        )
            .prop_filter_map("needs visible text", |(text, x0, row, size, jitter)| {
                if text.trim().is_empty() {
                    return None;
                }
                let y = 60.0 + row as f64 * 17.0 + jitter;
                let w = size * 0.5 * text.chars().count() as f64;
                Some(RawSnippet::new(
                    BBox::new(x0, y - 0.2 * size, x0 + w, y + 0.8 * size),
                    text,
                    font(size),
                    y,
                ))
            })
    }

    proptest! {
        #[test]
        fn coverage_single_line_and_split_soundness(
            snippets in proptest::collection::vec(arb_snippet(), 0..30),
            rule_xs in proptest::collection::vec(0.0f64..600.0, 0..3),
        ) {
            let rules: Vec<Segment> = rule_xs.iter().map(|&x| Segment::new(x, 40.0, x, 760.0)).collect();
            let out = normalize_cells(&snippets, &rules, &page(), &NormalizationConfig::default());

            let input: String = snippets.iter().map(|s| s.text.as_str()).collect();
            let output: String = out.cells.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(non_ws(&input), non_ws(&output));

            for (i, c) in out.cells.iter().enumerate() {
                prop_assert_eq!(c.id as usize, i);
                prop_assert!(!c.text.contains('\n'));
                prop_assert!(c.bbox.is_valid());
                for r in &rules {
                    let (a, b) = r.y_range();
                    let spans = b.min(c.bbox.y1) - a.max(c.bbox.y0) >= 0.8 * c.bbox.height();
                    prop_assert!(!(spans && c.bbox.x0 < r.x0 && r.x0 < c.bbox.x1),
                        "cell {:?} contains rule at {}", c.bbox, r.x0);
                }
            }

        }

        #[test]
        fn line_groups_respect_baseline_tolerance(snippets in proptest::collection::vec(arb_snippet(), 1..40)) {
            let refs: Vec<&RawSnippet> = snippets.iter().collect();
            for line in group_lines(&refs, 0.25) {
                let bs: Vec<f64> = line.iter().map(|&i| refs[i].baseline_y).collect();
                let spread = bs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - bs.iter().cloned().fold(f64::INFINITY, f64::min);
                let min_size = line.iter().map(|&i| refs[i].font.size).fold(f64::INFINITY, f64::min);
                prop_assert!(spread < 0.25 * min_size);
            }
        }

        #[test]
        fn deterministic_under_input_order(snippets in proptest::collection::vec(arb_snippet(), 0..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = normalize_cells(&snippets, &[], &page(), &NormalizationConfig::default()).cells;
            let mut shuffled = snippets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = normalize_cells(&shuffled, &[], &page(), &NormalizationConfig::default()).cells;
            prop_assert_eq!(a, b);
        }
    }
}
