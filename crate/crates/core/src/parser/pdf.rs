//! Content-stream interpreter over `lopdf`.
//!
//! Tracks the graphics and text state needed to place every glyph of every
//! text-showing operator, collects straight ruling lines from stroked paths
//! and thin filled rectangles, and records image XObjects.

use std::collections::BTreeMap;

use lopdf::content::{Content, Operation};
use lopdf::Encoding;
use lopdf::{Dictionary, Document, Object, ObjectId};

use super::{Extraction, ExtractionBackend, FontInfo, PageExtraction, ParseError, RawSnippet};
use crate::model::{BBox, PageGeometry, Segment};

const MAX_FORM_DEPTH: usize = 8;
const RULE_THICKNESS: f64 = 2.0;
const AXIS_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct PdfBackend;

impl ExtractionBackend for PdfBackend {
    fn extract(&self, bytes: &[u8]) -> Result<Extraction, ParseError> {
        let doc = Document::load_mem(bytes).map_err(|e| {
            if contains(bytes, b"/Encrypt") {
                ParseError::UnsupportedEncryption
            } else {
                load_error(e, bytes)
            }
        })?;
        if doc.is_encrypted() {
            return Err(ParseError::UnsupportedEncryption);
        }
        let pages = doc.get_pages();
        if pages.is_empty() {
            return Err(ParseError::ParseFailure {
                offset: None,
                reason: "document has no pages".into(),
            });
        }
        let mut out = Vec::with_capacity(pages.len());
        for (number, page_id) in pages {
            out.push(extract_page(&doc, number, page_id)?);
        }
        Ok(Extraction::new(out))
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn load_error(e: lopdf::Error, bytes: &[u8]) -> ParseError {
    let offset = match &e {
        lopdf::Error::Parse { offset } => Some(*offset),
        lopdf::Error::Offset(o) => Some(*o),
        lopdf::Error::Xref(_) | lopdf::Error::Trailer => startxref_offset(bytes),
        _ => None,
    };
    ParseError::ParseFailure {
        offset,
        reason: e.to_string(),
    }
}

/// Byte offset named by the last `startxref` keyword, if readable.
fn startxref_offset(bytes: &[u8]) -> Option<usize> {
    let pos = bytes.windows(9).rposition(|w| w == b"startxref")?;
    let tail = &bytes[pos + 9..];
    let digits: String = tail
        .iter()
        .skip_while(|b| b.is_ascii_whitespace())
        .take_while(|b| b.is_ascii_digit())
        .map(|&b| b as char)
        .collect();
    digits.parse().ok().or(Some(pos))
}

fn num(o: &Object) -> Option<f64> {
    match o {
        Object::Integer(i) => Some(*i as f64),
        Object::Real(r) => Some(*r as f64),
        _ => None,
    }
}

fn deref<'a>(doc: &'a Document, o: &'a Object) -> &'a Object {
    match o {
        Object::Reference(id) => doc.get_object(*id).unwrap_or(o),
        _ => o,
    }
}

fn dict_get<'a>(doc: &'a Document, d: &'a Dictionary, key: &[u8]) -> Option<&'a Object> {
    d.get(key).ok().map(|o| deref(doc, o))
}

fn inherited<'a>(doc: &'a Document, page_id: ObjectId, key: &[u8]) -> Option<&'a Object> {
    let mut node = doc.get_dictionary(page_id).ok()?;
    for _ in 0..64 {
        if let Some(v) = dict_get(doc, node, key) {
            return Some(v);
        }
        let parent = node.get(b"Parent").ok()?.as_reference().ok()?;
        node = doc.get_dictionary(parent).ok()?;
    }
    None
}

/// 2-D affine matrix `[a b c d e f]` in PDF row-vector convention.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Matrix([f64; 6]);

impl Matrix {
    const IDENTITY: Matrix = Matrix([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    fn from_operands(ops: &[Object]) -> Option<Matrix> {
        if ops.len() < 6 {
            return None;
        }
        let mut m = [0.0; 6];
        for (slot, o) in m.iter_mut().zip(ops) {
            *slot = num(o)?;
        }
        Some(Matrix(m))
    }

    fn translate(tx: f64, ty: f64) -> Matrix {
        Matrix([1.0, 0.0, 0.0, 1.0, tx, ty])
    }

    /// `self × other`: apply `self` first.
    fn then(&self, other: &Matrix) -> Matrix {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = other.0;
        Matrix([
            a * a2 + b * c2,
            a * b2 + b * d2,
            c * a2 + d * c2,
            c * b2 + d * d2,
            e * a2 + f * c2 + e2,
            e * b2 + f * d2 + f2,
        ])
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.0;
        (x * a + y * c + e, x * b + y * d + f)
    }

    fn y_scale(&self) -> f64 {
        let [_, _, c, d, _, _] = self.0;
        (c * c + d * d).sqrt()
    }
}

struct LoadedFont<'a> {
    encoding: Option<Encoding<'a>>,
    two_byte: bool,
    name: String,
    bold: bool,
    italic: bool,
    ascent: f64,
    descent: f64,
    widths: Widths,
}

enum Widths {
    Simple { first: u32, widths: Vec<f64>, missing: f64 },
    Cid { default: f64, map: BTreeMap<u32, f64> },
}

impl LoadedFont<'_> {
    fn width(&self, code: u32) -> f64 {
        match &self.widths {
            Widths::Simple { first, widths, missing } => code
                .checked_sub(*first)
                .and_then(|i| widths.get(i as usize))
                .copied()
                .unwrap_or(*missing),
            Widths::Cid { default, map } => map.get(&code).copied().unwrap_or(*default),
        }
    }

    fn decode(&self, bytes: &[u8]) -> String {
        if let Some(enc) = &self.encoding {
            if let Ok(s) = enc.bytes_to_string(bytes) {
                return s;
            }
        }
        if self.two_byte {
            let code = bytes.iter().fold(0u32, |acc, &b| (acc << 8) | b as u32);
            char::from_u32(code)
                .map(String::from)
                .unwrap_or_else(|| "\u{fffd}".into())
        } else {
            bytes.iter().map(|&b| b as char).collect()
        }
    }
}

fn load_font<'a>(doc: &'a Document, font: &'a Dictionary) -> LoadedFont<'a> {
    let subtype = font.get(b"Subtype").and_then(Object::as_name).unwrap_or(b"Type1");
    let two_byte = subtype == b"Type0";
    let name = dict_get(doc, font, b"BaseFont")
        .and_then(|o| o.as_name().ok())
        .map(|n| String::from_utf8_lossy(n).into_owned())
        .unwrap_or_default();
    let descendant = if two_byte {
        dict_get(doc, font, b"DescendantFonts")
            .and_then(|o| o.as_array().ok())
            .and_then(|a| a.first())
            .and_then(|o| deref(doc, o).as_dict().ok())
    } else {
        None
    };
    let descriptor = dict_get(doc, descendant.unwrap_or(font), b"FontDescriptor").and_then(|o| o.as_dict().ok());
    let desc_num = |key: &[u8]| descriptor.and_then(|d| dict_get(doc, d, key)).and_then(num);
    let flags = desc_num(b"Flags").unwrap_or(0.0) as u32;
    let lower = name.to_ascii_lowercase();
    let bold = lower.contains("bold")
        || lower.contains("black")
        || lower.contains("heavy")
        || flags & (1 << 18) != 0
        || desc_num(b"FontWeight").is_some_and(|w| w >= 600.0);
    let italic = lower.contains("italic")
        || lower.contains("oblique")
        || flags & (1 << 6) != 0
        || desc_num(b"ItalicAngle").is_some_and(|a| a != 0.0);
    let ascent = desc_num(b"Ascent").filter(|a| *a > 0.0).map_or(0.8, |a| a / 1000.0);
    let descent = desc_num(b"Descent").filter(|d| *d < 0.0).map_or(-0.2, |d| d / 1000.0);

    let widths = if let Some(cid) = descendant {
        let default = dict_get(doc, cid, b"DW").and_then(num).unwrap_or(1000.0) / 1000.0;
        let mut map = BTreeMap::new();
        if let Some(w) = dict_get(doc, cid, b"W").and_then(|o| o.as_array().ok()) {
            let mut i = 0;
            while i < w.len() {
                let Some(start) = num(deref(doc, &w[i])) else { break };
                match w.get(i + 1).map(|o| deref(doc, o)) {
                    Some(Object::Array(list)) => {
                        for (k, v) in list.iter().enumerate() {
                            if let Some(v) = num(deref(doc, v)) {
                                map.insert(start as u32 + k as u32, v / 1000.0);
                            }
                        }
                        i += 2;
                    }
                    Some(end) => {
                        let (Some(end), Some(v)) = (num(end), w.get(i + 2).and_then(|o| num(deref(doc, o)))) else {
                            break;
                        };
                        for code in start as u32..=end as u32 {
                            map.insert(code, v / 1000.0);
                        }
                        i += 3;
                    }
                    None => break,
                }
            }
        }
        Widths::Cid { default, map }
    } else {
        let first = dict_get(doc, font, b"FirstChar").and_then(num).unwrap_or(0.0) as u32;
        let widths: Vec<f64> = dict_get(doc, font, b"Widths")
            .and_then(|o| o.as_array().ok())
            .map(|a| a.iter().map(|o| num(deref(doc, o)).unwrap_or(0.0) / 1000.0).collect())
            .unwrap_or_default();
        let fallback = if lower.contains("courier") { 0.6 } else { 0.5 };
        let missing = desc_num(b"MissingWidth")
            .filter(|w| *w > 0.0)
            .map_or(fallback, |w| w / 1000.0);
        Widths::Simple { first, widths, missing }
    };

    LoadedFont {
        encoding: font.get_font_encoding(doc).ok(),
        two_byte,
        name,
        bold,
        italic,
        ascent,
        descent,
        widths,
    }
}

/// Resource lookup across a chain of dictionaries, innermost first.
#[derive(Clone)]
struct Resources<'a> {
    dicts: Vec<&'a Dictionary>,
}

impl<'a> Resources<'a> {
    fn lookup(&self, doc: &'a Document, category: &[u8], name: &[u8]) -> Option<&'a Object> {
        self.dicts.iter().find_map(|d| {
            let cat = dict_get(doc, d, category)?.as_dict().ok()?;
            cat.get(name).ok()
        })
    }
}

#[derive(Clone, Copy)]
struct TextState {
    char_spacing: f64,
    word_spacing: f64,
    scale: f64,
    leading: f64,
    rise: f64,
    size: f64,
    render_mode: i64,
}

impl Default for TextState {
    fn default() -> Self {
        Self {
            char_spacing: 0.0,
            word_spacing: 0.0,
            scale: 1.0,
            leading: 0.0,
            rise: 0.0,
            size: 0.0,
            render_mode: 0,
        }
    }
}

#[derive(Clone)]
struct GraphicsState {
    ctm: Matrix,
    text: TextState,
    font: Option<Vec<u8>>,
}

struct Interpreter<'a> {
    doc: &'a Document,
    page_number: u32,
    fonts: BTreeMap<ObjectId, LoadedFont<'a>>,
    inline_fonts: Vec<LoadedFont<'a>>,
    snippets: Vec<RawSnippet>,
    segments: Vec<Segment>,
    images: Vec<String>,
}

#[derive(Default)]
struct PathBuilder {
    current: Option<(f64, f64)>,
    start: Option<(f64, f64)>,
    lines: Vec<((f64, f64), (f64, f64))>,
    rects: Vec<BBox>,
}

impl PathBuilder {
    fn clear(&mut self) {
        *self = PathBuilder::default();
    }
}

fn extract_page(doc: &Document, number: u32, page_id: ObjectId) -> Result<PageExtraction, ParseError> {
    let media = inherited(doc, page_id, b"MediaBox")
        .and_then(|o| o.as_array().ok())
        .and_then(|a| {
            let v: Vec<f64> = a.iter().filter_map(|o| num(deref(doc, o))).collect();
            (v.len() == 4).then(|| [v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3])])
        })
        .unwrap_or([0.0, 0.0, 612.0, 792.0]);
    let width = media[2] - media[0];
    let height = media[3] - media[1];
    if !(width > 0.0 && height > 0.0) {
        return Err(ParseError::ParseFailure {
            offset: None,
            reason: format!("page {number} has an empty media box"),
        });
    }

    let (own, ancestors) = doc.get_page_resources(page_id).unwrap_or((None, Vec::new()));
    let mut dicts: Vec<&Dictionary> = own.into_iter().collect();
    dicts.extend(ancestors.iter().filter_map(|id| doc.get_dictionary(*id).ok()));
    let resources = Resources { dicts };

    let content = doc.get_page_content(page_id).map_err(|e| ParseError::ParseFailure {
        offset: None,
        reason: format!("page {number}: {e}"),
    })?;
    let ops = Content::decode(&content)
        .map_err(|e| ParseError::ParseFailure {
            offset: None,
            reason: format!("page {number} content stream: {e}"),
        })?
        .operations;

    let mut interp = Interpreter {
        doc,
        page_number: number,
        fonts: BTreeMap::new(),
        inline_fonts: Vec::new(),
        snippets: Vec::new(),
        segments: Vec::new(),
        images: Vec::new(),
    };
    let state = GraphicsState {
        ctm: Matrix::translate(-media[0], -media[1]),
        text: TextState::default(),
        font: None,
    };
    interp.run(&ops, &resources, state, 0);
    interp.images.sort();
    interp.images.dedup();
    Ok(PageExtraction {
        geometry: PageGeometry::new(number, width, height),
        snippets: interp.snippets,
        paths: interp.segments,
        image_refs: interp.images,
    })
}

enum FontKey {
    Object(ObjectId),
    Inline(usize),
}

impl<'a> Interpreter<'a> {
    fn font_key(&mut self, resources: &Resources<'a>, name: &[u8]) -> Option<FontKey> {
        let obj = resources.lookup(self.doc, b"Font", name)?;
        match obj {
            Object::Reference(id) => {
                if !self.fonts.contains_key(id) {
                    let dict = self.doc.get_dictionary(*id).ok()?;
                    self.fonts.insert(*id, load_font(self.doc, dict));
                }
                Some(FontKey::Object(*id))
            }
            Object::Dictionary(d) => {
                self.inline_fonts.push(load_font(self.doc, d));
                Some(FontKey::Inline(self.inline_fonts.len() - 1))
            }
            _ => None,
        }
    }

    fn font(&self, key: &FontKey) -> &LoadedFont<'a> {
        match key {
            FontKey::Object(id) => &self.fonts[id],
            FontKey::Inline(i) => &self.inline_fonts[*i],
        }
    }

    fn run(&mut self, ops: &[Operation], resources: &Resources<'a>, mut gs: GraphicsState, depth: usize) {
        let mut stack: Vec<GraphicsState> = Vec::new();
        let mut tm = Matrix::IDENTITY;
        let mut tlm = Matrix::IDENTITY;
        let mut path = PathBuilder::default();
        let mut font_key: Option<FontKey> = None;

        for op in ops {
            let args = &op.operands;
            let f = |i: usize| args.get(i).and_then(num).unwrap_or(0.0);
            match op.operator.as_str() {
                "q" => stack.push(gs.clone()),
                "Q" => {
                    if let Some(prev) = stack.pop() {
                        if prev.font != gs.font {
                            font_key = prev.font.as_deref().and_then(|n| self.font_key(resources, n));
                        }
                        gs = prev;
                    }
                }
                "cm" => {
                    if let Some(m) = Matrix::from_operands(args) {
                        gs.ctm = m.then(&gs.ctm);
                    }
                }
                "BT" => {
                    tm = Matrix::IDENTITY;
                    tlm = Matrix::IDENTITY;
                }
                "ET" => {}
                "Tf" => {
                    if let Some(name) = args.first().and_then(|o| o.as_name().ok()) {
                        gs.font = Some(name.to_vec());
                        font_key = self.font_key(resources, name);
                    }
                    gs.text.size = f(1);
                }
                "Tc" => gs.text.char_spacing = f(0),
                "Tw" => gs.text.word_spacing = f(0),
                "Tz" => gs.text.scale = f(0) / 100.0,
                "TL" => gs.text.leading = f(0),
                "Ts" => gs.text.rise = f(0),
                "Tr" => gs.text.render_mode = args.first().and_then(|o| o.as_i64().ok()).unwrap_or(0),
                "Td" => {
                    tlm = Matrix::translate(f(0), f(1)).then(&tlm);
                    tm = tlm;
                }
                "TD" => {
                    gs.text.leading = -f(1);
                    tlm = Matrix::translate(f(0), f(1)).then(&tlm);
                    tm = tlm;
                }
                "Tm" => {
                    if let Some(m) = Matrix::from_operands(args) {
                        tlm = m;
                        tm = m;
                    }
                }
                "T*" => {
                    tlm = Matrix::translate(0.0, -gs.text.leading).then(&tlm);
                    tm = tlm;
                }
                "Tj" | "'" | "\"" | "TJ" => {
                    if op.operator == "\"" {
                        gs.text.word_spacing = f(0);
                        gs.text.char_spacing = f(1);
                    }
                    if op.operator == "'" || op.operator == "\"" {
                        tlm = Matrix::translate(0.0, -gs.text.leading).then(&tlm);
                        tm = tlm;
                    }
                    let items: Vec<ShowItem> = match op.operator.as_str() {
                        "TJ" => args
                            .first()
                            .and_then(|o| o.as_array().ok())
                            .map(|a| {
                                a.iter()
                                    .filter_map(|o| match o {
                                        Object::String(s, _) => Some(ShowItem::Text(s)),
                                        other => num(other).map(ShowItem::Adjust),
                                    })
                                    .collect()
                            })
                            .unwrap_or_default(),
                        _ => args
                            .iter()
                            .rev()
                            .find_map(|o| match o {
                                Object::String(s, _) => Some(vec![ShowItem::Text(s)]),
                                _ => None,
                            })
                            .unwrap_or_default(),
                    };
                    if let Some(key) = &font_key {
                        let advance = self.show(&items, key, &gs, &tm);
                        tm = Matrix::translate(advance, 0.0).then(&tm);
                    }
                }
                "m" => {
                    let p = gs.ctm.apply(f(0), f(1));
                    path.current = Some(p);
                    path.start = Some(p);
                }
                "l" => {
                    let p = gs.ctm.apply(f(0), f(1));
                    if let Some(c) = path.current {
                        path.lines.push((c, p));
                    }
                    path.current = Some(p);
                }
                "c" | "v" | "y" => {
                    let n = args.len();
                    if n >= 2 {
                        let p = gs.ctm.apply(f(n - 2), f(n - 1));
                        path.current = Some(p);
                    }
                }
                "h" => {
                    if let (Some(c), Some(s)) = (path.current, path.start) {
                        if c != s {
                            path.lines.push((c, s));
                        }
                        path.current = Some(s);
                    }
                }
                "re" => {
                    let (x, y, w, h) = (f(0), f(1), f(2), f(3));
                    let corners = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)].map(|(px, py)| gs.ctm.apply(px, py));
                    for i in 0..4 {
                        path.lines.push((corners[i], corners[(i + 1) % 4]));
                    }
                    let xs = corners.map(|c| c.0);
                    let ys = corners.map(|c| c.1);
                    let fold = |v: [f64; 4], init: f64, g: fn(f64, f64) -> f64| v.into_iter().fold(init, g);
                    path.rects.push(BBox {
                        x0: fold(xs, f64::INFINITY, f64::min),
                        y0: fold(ys, f64::INFINITY, f64::min),
                        x1: fold(xs, f64::NEG_INFINITY, f64::max),
                        y1: fold(ys, f64::NEG_INFINITY, f64::max),
                    });
                    path.current = Some(corners[0]);
                    path.start = Some(corners[0]);
                }
                "S" | "s" | "B" | "B*" | "b" | "b*" => {
                    if matches!(op.operator.as_str(), "s" | "b" | "b*") {
                        if let (Some(c), Some(s)) = (path.current, path.start) {
                            if c != s {
                                path.lines.push((c, s));
                            }
                        }
                    }
                    for &(a, b) in &path.lines {
                        self.push_segment(a, b);
                    }
                    path.clear();
                }
                "f" | "F" | "f*" => {
                    for r in std::mem::take(&mut path.rects) {
                        if r.width() < RULE_THICKNESS && r.height() > r.width() {
                            let x = (r.x0 + r.x1) / 2.0;
                            self.push_segment((x, r.y0), (x, r.y1));
                        } else if r.height() < RULE_THICKNESS && r.width() > r.height() {
                            let y = (r.y0 + r.y1) / 2.0;
                            self.push_segment((r.x0, y), (r.x1, y));
                        }
                    }
                    path.clear();
                }
                "n" => path.clear(),
                "Do" => {
                    if let Some(name) = args.first().and_then(|o| o.as_name().ok()) {
                        self.do_xobject(resources, name, &gs, depth);
                    }
                }
                _ => {}
            }
        }
    }

    fn push_segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        let seg = Segment::new(a.0, a.1, b.0, b.1);
        if seg.is_vertical(AXIS_TOLERANCE) || seg.is_horizontal(AXIS_TOLERANCE) {
            self.segments.push(seg);
        }
    }

    fn do_xobject(&mut self, resources: &Resources<'a>, name: &[u8], gs: &GraphicsState, depth: usize) {
        let Some(obj) = resources.lookup(self.doc, b"XObject", name) else {
            return;
        };
        let id = obj.as_reference().ok();
        let Ok(stream) = deref(self.doc, obj).as_stream() else {
            return;
        };
        let subtype = stream.dict.get(b"Subtype").and_then(Object::as_name).unwrap_or(b"");
        match subtype {
            b"Image" => {
                let label = String::from_utf8_lossy(name);
                let r = match id {
                    Some((n, g)) => format!("p{}/{}#{}.{}", self.page_number, label, n, g),
                    None => format!("p{}/{}", self.page_number, label),
                };
                self.images.push(r);
            }
            b"Form" if depth < MAX_FORM_DEPTH => {
                let content = stream.decompressed_content().unwrap_or_else(|_| stream.content.clone());
                let Ok(parsed) = Content::decode(&content) else { return };
                let matrix = stream
                    .dict
                    .get(b"Matrix")
                    .ok()
                    .and_then(|o| o.as_array().ok())
                    .and_then(|a| Matrix::from_operands(a))
                    .unwrap_or(Matrix::IDENTITY);
                let mut inner = resources.clone();
                if let Some(d) = dict_get(self.doc, &stream.dict, b"Resources").and_then(|o| o.as_dict().ok()) {
                    inner.dicts.insert(0, d);
                }
                let mut state = gs.clone();
                state.ctm = matrix.then(&gs.ctm);
                self.run(&parsed.operations, &inner, state, depth + 1);
            }
            _ => {}
        }
    }

    /// Places the glyphs of one show operator and returns the horizontal
    /// advance in text space.
    fn show(&mut self, items: &[ShowItem], key: &FontKey, gs: &GraphicsState, tm: &Matrix) -> f64 {
        let ts = gs.text;
        let font = self.font(key);
        let m = tm.then(&gs.ctm);
        let code_len = if font.two_byte { 2 } else { 1 };

        let mut cursor = 0.0;
        let mut text = String::new();
        let mut spans: Vec<[f64; 2]> = Vec::new();
        let mut bbox: Option<BBox> = None;
        let y_lo = font.descent * ts.size + ts.rise;
        let y_hi = font.ascent * ts.size + ts.rise;

        for item in items {
            match item {
                ShowItem::Adjust(n) => cursor -= n / 1000.0 * ts.size * ts.scale,
                ShowItem::Text(bytes) => {
                    for chunk in bytes.chunks(code_len) {
                        let code = chunk.iter().fold(0u32, |acc, &b| (acc << 8) | b as u32);
                        let w = font.width(code) * ts.size;
                        let decoded = font.decode(chunk);
                        let glyph_x0 = cursor;
                        let glyph_x1 = cursor + w * ts.scale;
                        let corners = [(glyph_x0, y_lo), (glyph_x1, y_lo), (glyph_x1, y_hi), (glyph_x0, y_hi)]
                            .map(|(x, y)| m.apply(x, y));
                        let gx0 = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
                        let gx1 = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
                        let gy0 = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                        let gy1 = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                        let gb = BBox {
                            x0: gx0,
                            y0: gy0,
                            x1: gx1,
                            y1: gy1,
                        };
                        bbox = Some(bbox.map_or(gb, |b| b.union(&gb)));
                        let chars: Vec<char> = decoded.chars().collect();
                        let per = (gx1 - gx0) / chars.len().max(1) as f64;
                        for (k, ch) in chars.iter().enumerate() {
                            text.push(*ch);
                            spans.push([gx0 + k as f64 * per, gx0 + (k + 1) as f64 * per]);
                        }
                        let word = if code_len == 1 && code == 32 {
                            ts.word_spacing
                        } else {
                            0.0
                        };
                        cursor += (w + ts.char_spacing + word) * ts.scale;
                    }
                }
            }
        }

        let visible = ts.render_mode != 3 && ts.render_mode != 7;
        if visible && !text.trim().is_empty() {
            if let Some(b) = bbox {
                let baseline = m.apply(0.0, ts.rise).1;
                let size = ts.size.abs() * m.y_scale() / 1.0;
                let font = self.font(key);
                self.snippets.push(RawSnippet {
                    bbox: BBox::new(b.x0, b.y0, b.x1, b.y1),
                    text,
                    font: FontInfo {
                        name: font.name.clone(),
                        size: crate::model::quantize(size),
                        italic: font.italic,
                        bold: font.bold,
                    },
                    baseline_y: crate::model::quantize(baseline),
                    char_spans: Some(spans),
                });
            }
        }
        cursor
    }
}

enum ShowItem<'s> {
    Text(&'s [u8]),
    Adjust(f64),
}
