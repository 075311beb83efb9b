//! Document ingestion core: a shared document model, a PDF cell parser,
//! template-specific cell classifiers, table-detection evaluation and
//! deterministic assembly into structured JSON.

pub mod assemble;
pub mod detect;
pub mod ml;
pub mod model;
pub mod parser;
pub mod synth;

pub use model::{
    BBox, Description, DocumentObject, ImageObject, LabelDef, LabelSet, ModelError, PageGeometry, ParsedDocument,
    ParsedPage, Prov, Segment, StructuredDocument, Style, TableObject, TextCell, Violation,
};
