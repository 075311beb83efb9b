//! Shared document data model.
//!
//! Coordinates are PDF points with the origin at the bottom-left corner of
//! the page, so `y` grows upward. Every coordinate is quantized to three
//! decimals on construction; canonical JSON prints exactly three decimals,
//! which makes serialization round-trip exactly.

use std::fmt;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Current version of both document schemas.
pub const SCHEMA_VERSION: u32 = 1;

/// Overhang (points) a cell may extend past the page rectangle.
pub const PAGE_OVERHANG: f64 = 2.0;

/// Rounds to the canonical three-decimal grid.
pub fn quantize(v: f64) -> f64 {
    let q = (v * 1000.0).round() / 1000.0;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// A float that serializes with exactly three decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Fixed3(pub f64);

impl Serialize for Fixed3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite coordinate"));
        }
        let raw = serde_json::value::RawValue::from_string(format!("{:.3}", quantize(self.0)))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub(crate) mod fixed3 {
    use super::Fixed3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Fixed3(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

fn serialize_coords<S: Serializer>(coords: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(coords.len()))?;
    for c in coords {
        seq.serialize_element(&Fixed3(*c))?;
    }
    seq.end()
}

/// Axis-aligned rectangle `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Builds a box on the canonical grid. No ordering check is made here;
    /// see [`BBox::is_valid`].
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: quantize(x0),
            y0: quantize(y0),
            x1: quantize(x1),
            y1: quantize(y1),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.y0.is_finite() && self.x1.is_finite() && self.y1.is_finite()
    }

    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Grows the box by `margin` on every side.
    pub fn expand(&self, margin: f64) -> BBox {
        BBox {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serialize_coords(&self.as_array(), serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(deserializer)?;
        Ok(BBox::new(v[0], v[1], v[2], v[3]))
    }
}

/// A straight ruling-line segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: quantize(x0),
            y0: quantize(y0),
            x1: quantize(x1),
            y1: quantize(y1),
        }
    }

    /// True when the segment runs vertically within `tolerance` points.
    pub fn is_vertical(&self, tolerance: f64) -> bool {
        (self.x1 - self.x0).abs() <= tolerance && (self.y1 - self.y0).abs() > tolerance
    }

    pub fn is_horizontal(&self, tolerance: f64) -> bool {
        (self.y1 - self.y0).abs() <= tolerance && (self.x1 - self.x0).abs() > tolerance
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y0.min(self.y1), self.y0.max(self.y1))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x0.min(self.x1), self.x0.max(self.x1))
    }

    fn sort_key(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl Serialize for Segment {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serialize_coords(&self.sort_key(), serializer)
    }
}

impl<'de> Deserialize<'de> for Segment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(deserializer)?;
        Ok(Segment::new(v[0], v[1], v[2], v[3]))
    }
}

/// Text style of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Style {
    pub bold: bool,
    pub italic: bool,
    #[serde(with = "fixed3")]
    pub font_size: f64,
}

impl Style {
    pub fn new(font_size: f64, bold: bool, italic: bool) -> Self {
        Self {
            bold,
            italic,
            font_size: quantize(font_size),
        }
    }

    pub fn normal(font_size: f64) -> Self {
        Self::new(font_size, false, false)
    }
}

impl Default for Style {
    fn default() -> Self {
        Self::normal(10.0)
    }
}

/// One single-line text snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextCell {
    pub id: u32,
    pub bbox: BBox,
    pub text: String,
    pub style: Style,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl TextCell {
    pub fn new(id: u32, bbox: BBox, text: impl Into<String>, style: Style) -> Self {
        Self {
            id,
            bbox,
            text: text.into(),
            style,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageGeometry {
    pub page_number: u32,
    #[serde(with = "fixed3")]
    pub width: f64,
    #[serde(with = "fixed3")]
    pub height: f64,
}

impl PageGeometry {
    pub fn new(page_number: u32, width: f64, height: f64) -> Self {
        Self {
            page_number,
            width: quantize(width),
            height: quantize(height),
        }
    }

    pub fn rect(&self) -> BBox {
        BBox {
            x0: 0.0,
            y0: 0.0,
            x1: self.width,
            y1: self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsedPage {
    pub geometry: PageGeometry,
    pub cells: Vec<TextCell>,
    #[serde(default)]
    pub paths: Vec<Segment>,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

impl ParsedPage {
    pub fn new(geometry: PageGeometry) -> Self {
        Self {
            geometry,
            cells: Vec::new(),
            paths: Vec::new(),
            image_refs: Vec::new(),
        }
    }

    pub fn page_number(&self) -> u32 {
        self.geometry.page_number
    }

    fn canonicalize(&mut self) {
        self.cells.sort_by_key(|c| c.id);
        self.paths.sort_by(|a, b| {
            a.sort_key()
                .partial_cmp(&b.sort_key())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        self.image_refs.sort();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsedDocument {
    pub schema_version: u32,
    pub doc_id: String,
    pub source_name: String,
    pub pages: Vec<ParsedPage>,
}

impl ParsedDocument {
    pub fn new(doc_id: impl Into<String>, source_name: impl Into<String>, pages: Vec<ParsedPage>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            doc_id: doc_id.into(),
            source_name: source_name.into(),
            pages,
        }
    }

    pub fn page(&self, page_number: u32) -> Option<&ParsedPage> {
        self.pages.iter().find(|p| p.page_number() == page_number)
    }

    pub fn cell_count(&self) -> usize {
        self.pages.iter().map(|p| p.cells.len()).sum()
    }

    /// Puts pages, cells, paths and image refs into canonical order.
    pub fn canonicalize(&mut self) {
        self.pages.sort_by_key(|p| p.page_number());
        for page in &mut self.pages {
            page.canonicalize();
        }
    }
}

/// A label name plus its display color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDef {
    pub name: String,
    pub color: String,
}

/// Ordered, user-definable label vocabulary of a collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSet {
    pub labels: Vec<LabelDef>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| LabelDef {
                name: n.into(),
                color: fallback_color(i),
            })
            .collect();
        Self::from_defs(labels)
    }

    pub fn from_defs(labels: Vec<LabelDef>) -> Result<Self, ModelError> {
        let set = Self { labels };
        set.check()?;
        Ok(set)
    }

    /// Rejects duplicate names.
    pub fn check(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.labels {
            if l.name.is_empty() {
                return Err(ModelError::BadLabelSet("empty label name".into()));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(ModelError::BadLabelSet(format!("duplicate label '{}'", l.name)));
            }
        }
        Ok(())
    }

    /// The six template-model labels of the journal experiments.
    pub fn template_six() -> Self {
        Self::default_set().restricted(6)
    }

    fn restricted(mut self, n: usize) -> Self {
        self.labels.truncate(n);
        self
    }

    pub fn default_set() -> Self {
        let defs = [
            ("title", "#ff0000"),
            ("author", "#008000"),
            ("subtitle", "#8b0000"),
            ("text", "#ffff00"),
            ("picture", "#fffff0"),
            ("table", "#1e90ff"),
            ("caption", "#ffa500"),
            ("list", "#00ced1"),
        ];
        Self {
            labels: defs
                .iter()
                .map(|(n, c)| LabelDef {
                    name: (*n).to_string(),
                    color: (*c).to_string(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::default_set()
    }
}

fn fallback_color(i: usize) -> String {
    // golden-angle hue walk, fixed saturation/value
    let hue = (i as f64 * 137.507_764) % 360.0;
    let (r, g, b) = hsv_to_rgb(hue, 0.65, 0.9);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |f: f64| ((f + m) * 255.0).round() as u8;
    (to(r), to(g), to(b))
}

/// Provenance of an assembled object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prov {
    pub bbox: BBox,
    pub page: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentObject {
    pub prov: Vec<Prov>,
    #[serde(rename = "type")]
    pub kind: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableObject {
    pub prov: Vec<Prov>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageObject {
    pub prov: Vec<Prov>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Description {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, rename = "abstract", skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affiliations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authors: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredDocument {
    pub description: Description,
    #[serde(rename = "main-text")]
    pub main_text: Vec<DocumentObject>,
    pub tables: Vec<TableObject>,
    pub images: Vec<ImageObject>,
    #[serde(default = "default_version")]
    pub schema_version: u32,
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

impl Default for StructuredDocument {
    fn default() -> Self {
        Self {
            description: Description::default(),
            main_text: Vec::new(),
            tables: Vec::new(),
            images: Vec::new(),
            schema_version: SCHEMA_VERSION,
        }
    }
}

impl StructuredDocument {
    /// Every provenance record, in output order.
    pub fn all_prov(&self) -> impl Iterator<Item = &Prov> {
        self.main_text
            .iter()
            .flat_map(|o| o.prov.iter())
            .chain(self.tables.iter().flat_map(|t| t.prov.iter()))
            .chain(self.images.iter().flat_map(|i| i.prov.iter()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("schema-violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u32),
    #[error("bad label set: {0}")]
    BadLabelSet(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// What rule a [`Violation`] broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    InvertedBbox,
    NonFiniteCoordinate,
    LineBreakInText,
    NonDenseIds,
    CellOutsidePage,
    BadPageGeometry,
    PageGap,
    PageOrder,
    UnknownLabel,
    UnsupportedVersion,
    MissingProvenance,
    BadProvenancePage,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::InvertedBbox => "inverted bbox",
            Rule::NonFiniteCoordinate => "non-finite coordinate",
            Rule::LineBreakInText => "line break in text",
            Rule::NonDenseIds => "cell ids not dense",
            Rule::CellOutsidePage => "cell outside page",
            Rule::BadPageGeometry => "bad page geometry",
            Rule::PageGap => "page gap",
            Rule::PageOrder => "page order",
            Rule::UnknownLabel => "unknown label",
            Rule::UnsupportedVersion => "unsupported version",
            Rule::MissingProvenance => "missing provenance",
            Rule::BadProvenancePage => "bad provenance page",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub page: Option<u32>,
    pub cell: Option<u32>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rule)?;
        if let Some(p) = self.page {
            write!(f, " (page {p}")?;
            if let Some(c) = self.cell {
                write!(f, ", cell {c}")?;
            }
            write!(f, ")")?;
        }
        write!(f, ": {}", self.message)
    }
}

fn violation(page: Option<u32>, cell: Option<u32>, rule: Rule, message: impl Into<String>) -> Violation {
    Violation {
        page,
        cell,
        rule,
        message: message.into(),
    }
}

/// Checks every structural invariant of a parsed document.
pub fn validate(doc: &ParsedDocument) -> Vec<Violation> {
    validate_inner(doc, None)
}

/// [`validate`] plus label closure against `labels`.
pub fn validate_with_labels(doc: &ParsedDocument, labels: &LabelSet) -> Vec<Violation> {
    validate_inner(doc, Some(labels))
}

fn validate_inner(doc: &ParsedDocument, labels: Option<&LabelSet>) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.schema_version != SCHEMA_VERSION {
        out.push(violation(
            None,
            None,
            Rule::UnsupportedVersion,
            format!("schema_version {}", doc.schema_version),
        ));
    }
    let mut expected = 1u32;
    for page in &doc.pages {
        let n = page.page_number();
        if n < expected {
            out.push(violation(
                Some(n),
                None,
                Rule::PageOrder,
                format!("page {n} out of order"),
            ));
        } else if n > expected {
            out.push(violation(
                Some(n),
                None,
                Rule::PageGap,
                format!("page gap: expected page {expected}, found {n}"),
            ));
        }
        expected = n.max(expected) + 1;
        validate_page(page, labels, &mut out);
    }
    out
}

fn validate_page(page: &ParsedPage, labels: Option<&LabelSet>, out: &mut Vec<Violation>) {
    let n = page.page_number();
    let g = page.geometry;
    let geometry_ok = g.width.is_finite() && g.height.is_finite() && g.width > 0.0 && g.height > 0.0;
    if !geometry_ok {
        out.push(violation(
            Some(n),
            None,
            Rule::BadPageGeometry,
            format!("page size {}x{}", g.width, g.height),
        ));
    }
    let allowed = g.rect().expand(PAGE_OVERHANG);
    let mut ids: Vec<u32> = page.cells.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
        out.push(violation(
            Some(n),
            None,
            Rule::NonDenseIds,
            format!("{} cells but ids are not 0..{}", ids.len(), ids.len()),
        ));
    }
    for cell in &page.cells {
        let b = cell.bbox;
        if !b.is_finite() {
            out.push(violation(
                Some(n),
                Some(cell.id),
                Rule::NonFiniteCoordinate,
                "bbox has non-finite value",
            ));
            continue;
        }
        if b.x0 >= b.x1 || b.y0 >= b.y1 {
            out.push(violation(
                Some(n),
                Some(cell.id),
                Rule::InvertedBbox,
                format!("bbox {:?} is inverted or empty", b.as_array()),
            ));
        } else if geometry_ok && b.intersection(&allowed).is_none() {
            out.push(violation(
                Some(n),
                Some(cell.id),
                Rule::CellOutsidePage,
                "bbox does not touch the page",
            ));
        } else if geometry_ok && (b.x0 < allowed.x0 || b.y0 < allowed.y0 || b.x1 > allowed.x1 || b.y1 > allowed.y1) {
            out.push(violation(
                Some(n),
                Some(cell.id),
                Rule::CellOutsidePage,
                format!("bbox overhangs the page by more than {PAGE_OVERHANG} pt"),
            ));
        }
        if cell
            .text
            .contains(['\n', '\r', '\u{2028}', '\u{2029}', '\u{0b}', '\u{0c}', '\u{85}'])
        {
            out.push(violation(
                Some(n),
                Some(cell.id),
                Rule::LineBreakInText,
                "cell text spans lines",
            ));
        }
        if let (Some(set), Some(label)) = (labels, cell.label.as_deref()) {
            if !set.contains(label) {
                out.push(violation(
                    Some(n),
                    Some(cell.id),
                    Rule::UnknownLabel,
                    format!("label '{label}'"),
                ));
            }
        }
    }
}

/// Checks a structured document against the page count of its source.
pub fn validate_structured(doc: &StructuredDocument, page_count: u32) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.schema_version != SCHEMA_VERSION {
        out.push(violation(
            None,
            None,
            Rule::UnsupportedVersion,
            format!("schema_version {}", doc.schema_version),
        ));
    }
    let mut check = |what: &str, i: usize, prov: &[Prov]| {
        if prov.is_empty() {
            out.push(violation(
                None,
                None,
                Rule::MissingProvenance,
                format!("{what}[{i}] has no provenance"),
            ));
        }
        for p in prov {
            if p.page == 0 || p.page > page_count {
                out.push(violation(
                    Some(p.page),
                    None,
                    Rule::BadProvenancePage,
                    format!("{what}[{i}] cites page {} of {page_count}", p.page),
                ));
            }
            if !p.bbox.is_valid() {
                out.push(violation(
                    Some(p.page),
                    None,
                    Rule::InvertedBbox,
                    format!("{what}[{i}] bbox"),
                ));
            }
        }
    };
    for (i, o) in doc.main_text.iter().enumerate() {
        check("main-text", i, &o.prov);
    }
    for (i, t) in doc.tables.iter().enumerate() {
        check("tables", i, &t.prov);
    }
    for (i, im) in doc.images.iter().enumerate() {
        check("images", i, &im.prov);
    }
    out
}

/// Canonical pretty JSON: fixed key order, three-decimal floats, trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, ModelError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| ModelError::Serialize(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Deserializes strictly, reporting the JSON path of the first failure.
pub fn from_json<'de, T: Deserialize<'de>>(bytes: &'de [u8]) -> Result<T, ModelError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ModelError::Schema {
            path: if path.is_empty() {
                "$".into()
            } else {
                format!("$.{path}")
            },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn serialize_parsed(doc: &ParsedDocument) -> Result<Vec<u8>, ModelError> {
    let mut doc = doc.clone();
    doc.canonicalize();
    to_canonical_json(&doc)
}

pub fn deserialize_parsed(bytes: &[u8]) -> Result<ParsedDocument, ModelError> {
    let doc: ParsedDocument = from_json(bytes)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ModelError::UnsupportedVersion(doc.schema_version));
    }
    Ok(doc)
}

pub fn serialize_structured(doc: &StructuredDocument) -> Result<Vec<u8>, ModelError> {
    to_canonical_json(doc)
}

pub fn deserialize_structured(bytes: &[u8]) -> Result<StructuredDocument, ModelError> {
    let doc: StructuredDocument = from_json(bytes)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ModelError::UnsupportedVersion(doc.schema_version));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_page() -> ParsedDocument {
        let mut page = ParsedPage::new(PageGeometry::new(1, 612.0, 792.0));
        page.cells.push(TextCell::new(
            0,
            BBox::new(52.304, 509.75, 168.099, 523.98),
            "1 INTRODUCTION",
            Style::new(10.0, true, false),
        ));
        ParsedDocument::new("abc", "fixture.pdf", vec![page])
    }

    #[test]
    fn well_formed_has_no_violations() {
        assert!(validate(&one_page()).is_empty());
    }

    #[test]
    fn inverted_bbox_names_the_cell() {
        let mut doc = one_page();
        doc.pages[0].cells[0].bbox = BBox::new(200.0, 500.0, 100.0, 520.0);
        let v = validate(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::InvertedBbox);
        assert_eq!(v[0].cell, Some(0));
        assert_eq!(v[0].page, Some(1));
    }

    #[test]
    fn page_gap_is_reported_once() {
        let mut doc = one_page();
        let mut p3 = doc.pages[0].clone();
        p3.geometry.page_number = 3;
        doc.pages.push(p3);
        let v = validate(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::PageGap);
        assert!(v[0].to_string().contains("page gap"));
    }

    #[test]
    fn newline_and_sparse_ids_are_violations() {
        let mut doc = one_page();
        doc.pages[0].cells[0].text = "two\nlines".into();
        doc.pages[0].cells[0].id = 4;
        let rules: Vec<Rule> = validate(&doc).iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::LineBreakInText));
        assert!(rules.contains(&Rule::NonDenseIds));
    }

    #[test]
    fn overhang_tolerance() {
        let mut doc = one_page();
        doc.pages[0].cells[0].bbox = BBox::new(-1.5, 10.0, 30.0, 20.0);
        assert!(validate(&doc).is_empty());
        doc.pages[0].cells[0].bbox = BBox::new(-3.0, 10.0, 30.0, 20.0);
        assert_eq!(validate(&doc)[0].rule, Rule::CellOutsidePage);
    }

    #[test]
    fn label_closure() {
        let mut doc = one_page();
        doc.pages[0].cells[0].label = Some("footnote".into());
        assert!(validate(&doc).is_empty());
        let v = validate_with_labels(&doc, &LabelSet::default());
        assert_eq!(v[0].rule, Rule::UnknownLabel);
    }

    #[test]
    fn round_trip_and_fixed_decimals() {
        let doc = one_page();
        let bytes = serialize_parsed(&doc).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("509.750"), "{text}");
        assert!(text.contains("612.000"));
        assert_eq!(deserialize_parsed(&bytes).unwrap(), doc);
        assert_eq!(serialize_parsed(&doc).unwrap(), bytes);
    }

    #[test]
    fn malformed_input_reports_path() {
        let bad = br#"{"schema_version":1,"doc_id":"x","source_name":"s","pages":[{"geometry":{"page_number":1,"width":1.0,"height":1.0},"cells":[{"id":0,"bbox":[1,2,3],"text":"a","style":{"bold":false,"italic":false,"font_size":1}}]}]}"#;
        match deserialize_parsed(bad) {
            Err(ModelError::Schema { path, .. }) => assert!(path.starts_with("$.pages[0].cells[0].bbox"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn future_version_rejected() {
        let mut doc = one_page();
        doc.schema_version = 2;
        let bytes = to_canonical_json(&doc).unwrap();
        assert!(matches!(
            deserialize_parsed(&bytes),
            Err(ModelError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn listing_excerpt_reserializes() {
        let listing = br#"{
          "description": {
            "title": "Corpus Conversion Service: A machine learning platform to ingest documents at scale.",
            "affiliations": "IBM Research Rueschlikon, Switzerland ",
            "authors": "Peter W J Staar, Michele Dolfi, Christoph Auer, Costas Bekas "
          },
          "main-text": [
            {"prov": [{"bbox": [52.304, 509.750, 168.099, 523.980], "page": 1}],
             "type": "subtitle-level-1", "text": "1 INTRODUCTION"},
            {"prov": [{"bbox": [52.304, 337.678, 286.067, 380.475], "page": 1}],
             "type": "paragraph", "text": "It is estimated that [...] put these into context."}
          ],
          "tables": [],
          "images": []
        }"#;
        let doc = deserialize_structured(listing).unwrap();
        let out = String::from_utf8(serialize_structured(&doc).unwrap()).unwrap();
        assert!(out.contains(r#""type": "paragraph""#));
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        for obj in v["main-text"].as_array().unwrap() {
            assert_eq!(obj["prov"][0]["bbox"].as_array().unwrap().len(), 4);
        }
        assert!(out.contains("509.750"));
        assert!(validate_structured(&doc, 1).is_empty());
    }

    #[test]
    fn label_set_rejects_duplicates() {
        assert!(LabelSet::new(["a", "b", "a"]).is_err());
        let set = LabelSet::new(["a", "b"]).unwrap();
        assert_eq!(set.index_of("b"), Some(1));
        assert_ne!(set.labels[0].color, set.labels[1].color);
    }
}
