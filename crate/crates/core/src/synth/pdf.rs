//! Minimal PDF writer for fixtures and synthetic corpora.
//!
//! Text is set in Helvetica (WinAnsi) with an explicit width table so the
//! parser sees exact glyph advances.

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};

/// Helvetica advance widths for codes 32..=126, in 1/1000 em.
const HELVETICA_WIDTHS: [i64; 95] = [
    278, 278, 355, 556, 556, 889, 667, 191, 333, 333, 389, 584, 278, 333, 278, 278, // 32-47
    556, 556, 556, 556, 556, 556, 556, 556, 556, 556, 278, 278, 584, 584, 584, 556, // 48-63
    1015, 667, 667, 722, 722, 667, 611, 778, 722, 278, 500, 667, 556, 833, 722, 778, // 64-79
    667, 778, 722, 667, 611, 722, 667, 944, 667, 667, 611, 278, 278, 278, 469, 556, // 80-95
    333, 556, 556, 500, 556, 556, 278, 556, 556, 222, 222, 500, 222, 833, 556, 556, // 96-111
    556, 556, 333, 500, 278, 556, 500, 722, 500, 500, 500, 334, 260, 334, 584, // 112-126
];

/// Width of `text` in points at `size`. Characters outside printable ASCII
/// are written as `?` and measured as such.
pub fn text_width(text: &str, size: f64) -> f64 {
    text.chars().map(|c| char_width(c) as f64).sum::<f64>() * size / 1000.0
}

fn char_width(c: char) -> i64 {
    let code = sanitize(c) as usize;
    HELVETICA_WIDTHS[code - 32]
}

fn sanitize(c: char) -> u8 {
    if (' '..='~').contains(&c) {
        c as u8
    } else {
        b'?'
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FontFace {
    #[default]
    Regular,
    Bold,
    Italic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextRun {
    pub x: f64,
    pub baseline: f64,
    pub size: f64,
    pub face: FontFace,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PageSpec {
    pub width: f64,
    pub height: f64,
    pub runs: Vec<TextRun>,
    /// Stroked straight lines `(x0, y0, x1, y1)`.
    pub lines: Vec<[f64; 4]>,
    /// Placed images `(x, y, w, h)`.
    pub images: Vec<[f64; 4]>,
}

impl PageSpec {
    pub fn letter() -> Self {
        Self {
            width: 612.0,
            height: 792.0,
            ..Self::default()
        }
    }

    pub fn text(&mut self, x: f64, baseline: f64, size: f64, face: FontFace, text: impl Into<String>) -> &mut Self {
        self.runs.push(TextRun {
            x,
            baseline,
            size,
            face,
            text: text.into(),
        });
        self
    }

    pub fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) -> &mut Self {
        self.lines.push([x0, y0, x1, y1]);
        self
    }

    pub fn image(&mut self, x: f64, y: f64, w: f64, h: f64) -> &mut Self {
        self.images.push([x, y, w, h]);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct WriteOptions {
    /// Adds an `/Encrypt` entry to the trailer. The output is not really
    /// encrypted; it only looks that way to a reader.
    pub mark_encrypted: bool,
}

fn font_dict(base: &str) -> lopdf::Dictionary {
    let widths: Vec<Object> = HELVETICA_WIDTHS.iter().map(|&w| Object::Integer(w)).collect();
    dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => Object::Name(base.as_bytes().to_vec()),
        "Encoding" => "WinAnsiEncoding",
        "FirstChar" => 32,
        "LastChar" => 126,
        "Widths" => widths,
    }
}

fn escape(text: &str) -> Vec<u8> {
    text.chars().map(sanitize).collect()
}

pub fn write_pdf(pages: &[PageSpec]) -> Vec<u8> {
    write_pdf_with(pages, &WriteOptions::default())
}

pub fn write_pdf_with(pages: &[PageSpec], options: &WriteOptions) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let regular = doc.add_object(font_dict("Helvetica"));
    let bold = doc.add_object(font_dict("Helvetica-Bold"));
    let italic = doc.add_object(font_dict("Helvetica-Oblique"));
    let image = doc.add_object(Stream::new(
        dictionary! {
            "Type" => "XObject",
            "Subtype" => "Image",
            "Width" => 1,
            "Height" => 1,
            "ColorSpace" => "DeviceGray",
            "BitsPerComponent" => 8,
        },
        vec![0x80],
    ));
    let resources = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => regular, "F2" => bold, "F3" => italic },
        "XObject" => dictionary! { "Im1" => image },
    });

    let mut kids = Vec::with_capacity(pages.len());
    for spec in pages {
        let mut ops = Vec::new();
        for run in &spec.runs {
            let font = match run.face {
                FontFace::Regular => "F1",
                FontFace::Bold => "F2",
                FontFace::Italic => "F3",
            };
            ops.push(Operation::new("BT", vec![]));
            ops.push(Operation::new("Tf", vec![font.into(), run.size.into()]));
            ops.push(Operation::new("Td", vec![run.x.into(), run.baseline.into()]));
            ops.push(Operation::new("Tj", vec![Object::string_literal(escape(&run.text))]));
            ops.push(Operation::new("ET", vec![]));
        }
        for l in &spec.lines {
            ops.push(Operation::new("m", vec![l[0].into(), l[1].into()]));
            ops.push(Operation::new("l", vec![l[2].into(), l[3].into()]));
            ops.push(Operation::new("S", vec![]));
        }
        for im in &spec.images {
            ops.push(Operation::new("q", vec![]));
            ops.push(Operation::new(
                "cm",
                vec![
                    im[2].into(),
                    0.into(),
                    0.into(),
                    im[3].into(),
                    im[0].into(),
                    im[1].into(),
                ],
            ));
            ops.push(Operation::new("Do", vec!["Im1".into()]));
            ops.push(Operation::new("Q", vec![]));
        }
        let content = Content { operations: ops }.encode().expect("content encodes");
        let content_id = doc.add_object(Stream::new(dictionary! {}, content));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "Contents" => content_id,
            "MediaBox" => vec![0.into(), 0.into(), spec.width.into(), spec.height.into()],
            "Resources" => resources,
        });
        kids.push(page_id.into());
    }
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! { "Type" => "Pages", "Kids" => kids, "Count" => count }),
    );
    let catalog = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
    doc.trailer.set("Root", catalog);
    if options.mark_encrypted {
        let enc = doc.add_object(dictionary! {
            "Filter" => "Standard",
            "V" => 1,
            "R" => 2,
            "O" => Object::string_literal(vec![0u8; 32]),
            "U" => Object::string_literal(vec![0u8; 32]),
            "P" => -4,
        });
        doc.trailer.set("Encrypt", enc);
    }
    let mut out = Vec::new();
    doc.save_to(&mut out).expect("in-memory write");
    out
}
