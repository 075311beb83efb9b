use ccs_core::parser::{parse_pdf, ExtractionBackend, NormalizationConfig, PdfBackend};
use ccs_core::synth::pdf::{text_width, write_pdf, write_pdf_with, FontFace, PageSpec, WriteOptions};

fn hello() -> Vec<u8> {
    let mut page = PageSpec::letter();
    page.text(100.0, 700.0, 12.0, FontFace::Regular, "Hello");
    write_pdf(&[page])
}

#[test]
fn hello_is_one_snippet() {
    let ex = PdfBackend.extract(&hello()).unwrap();
    assert_eq!(ex.pages.len(), 1);
    let snips = &ex.pages[0].snippets;
    assert_eq!(snips.len(), 1);
    assert_eq!(snips[0].text, "Hello");
    let b = snips[0].bbox;
    assert!((b.x0 - 100.0).abs() < 1e-6);
    assert!((b.x1 - (100.0 + text_width("Hello", 12.0))).abs() < 1e-3);
    assert!((snips[0].baseline_y - 700.0).abs() < 1e-6);
    assert_eq!(snips[0].font.size, 12.0);
}

#[test]
fn empty_page_has_no_snippets() {
    let ex = PdfBackend.extract(&write_pdf(&[PageSpec::letter()])).unwrap();
    assert!(ex.pages[0].snippets.is_empty());
    let doc = parse_pdf(
        &write_pdf(&[PageSpec::letter()]),
        "empty.pdf",
        &NormalizationConfig::default(),
    )
    .unwrap();
    assert!(doc.pages[0].cells.is_empty());
}

fn two_cell_table() -> Vec<u8> {
    let mut page = PageSpec::letter();
    page.text(100.0, 700.0, 10.0, FontFace::Regular, "Left");
    page.text(210.0, 700.0, 10.0, FontFace::Regular, "Right");
    page.line(200.0, 690.0, 200.0, 715.0);
    write_pdf(&[page])
}

#[test]
fn two_cell_table_fixture() {
    let bytes = two_cell_table();
    let ex = PdfBackend.extract(&bytes).unwrap();
    assert!(ex.pages[0].snippets.len() >= 2);
    assert_eq!(ex.pages[0].paths.len(), 1);
    let doc = parse_pdf(&bytes, "table.pdf", &NormalizationConfig::default()).unwrap();
    let texts: Vec<&str> = doc.pages[0].cells.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["Left", "Right"]);
}

#[test]
fn rule_splits_a_single_run() {
    let mut page = PageSpec::letter();
    page.text(100.0, 700.0, 10.0, FontFace::Regular, "alpha beta gamma delta");
    let split_x = 100.0 + text_width("alpha beta ", 10.0) - 1.0;
    page.line(split_x, 690.0, split_x, 715.0);
    let doc = parse_pdf(&write_pdf(&[page]), "x.pdf", &NormalizationConfig::default()).unwrap();
    let texts: Vec<&str> = doc.pages[0].cells.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["alpha beta", "gamma delta"]);
}

#[test]
fn styles_and_images() {
    let mut page = PageSpec::letter();
    page.text(72.0, 700.0, 18.0, FontFace::Bold, "Heading");
    page.text(72.0, 680.0, 10.0, FontFace::Italic, "aside");
    page.image(72.0, 400.0, 200.0, 150.0);
    let doc = parse_pdf(&write_pdf(&[page]), "x.pdf", &NormalizationConfig::default()).unwrap();
    let p = &doc.pages[0];
    assert!(p.cells[0].style.bold && !p.cells[0].style.italic);
    assert!(p.cells[1].style.italic && !p.cells[1].style.bold);
    assert_eq!(p.image_refs.len(), 1);
}

#[test]
fn zero_page_pdf_is_parse_failure() {
    let err = parse_pdf(&write_pdf(&[]), "none.pdf", &NormalizationConfig::default()).unwrap_err();
    assert_eq!(err.code(), "parse-failure");
}

#[test]
fn encrypted_pdf_is_rejected() {
    let bytes = write_pdf_with(&[PageSpec::letter()], &WriteOptions { mark_encrypted: true });
    let err = parse_pdf(&bytes, "locked.pdf", &NormalizationConfig::default()).unwrap_err();
    assert_eq!(err.code(), "unsupported-encryption");
}

#[test]
fn corrupt_xref_reports_offset() {
    let mut bytes = hello();
    let pos = bytes.windows(9).rposition(|w| w == b"startxref").unwrap() + 10;
    let end = pos + bytes[pos..].iter().take_while(|b| b.is_ascii_digit()).count();
    let bogus = end - pos;
    bytes[pos..end].copy_from_slice(&vec![b'3'; bogus]);
    let err = parse_pdf(&bytes, "broken.pdf", &NormalizationConfig::default()).unwrap_err();
    assert_eq!(err.code(), "parse-failure");
    assert!(err.to_string().contains("at byte"), "{err}");
}

#[test]
fn garbage_is_parse_failure() {
    let err = parse_pdf(b"not a pdf at all", "junk", &NormalizationConfig::default()).unwrap_err();
    assert_eq!(err.code(), "parse-failure");
}

#[test]
fn reparse_is_byte_identical() {
    let bytes = two_cell_table();
    let cfg = NormalizationConfig::default();
    let a = parse_pdf(&bytes, "t.pdf", &cfg).unwrap();
    let b = parse_pdf(&bytes, "t.pdf", &cfg).unwrap();
    assert_eq!(a.doc_id, b.doc_id);
    assert_eq!(a.doc_id.len(), 64);
    assert_eq!(
        ccs_core::model::serialize_parsed(&a).unwrap(),
        ccs_core::model::serialize_parsed(&b).unwrap()
    );
}
