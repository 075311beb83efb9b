//! `labels.v1`: per-cell labels of one parsed document, as written by
//! `ccs predict` and read by `ccs assemble --labels`.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use ccs_core::ml::{PredictionResult, RandomForestModel};
use ccs_core::model::ParsedDocument;
use serde::{Deserialize, Serialize};

pub const LABELS_FORMAT: &str = "labels.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub format: String,
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub pages: Vec<PredictionResult>,
}

impl LabelsFile {
    pub fn predict(model: &RandomForestModel, model_id: String, doc: &ParsedDocument) -> Result<Self> {
        let pages = doc
            .pages
            .iter()
            .map(|p| model.predict(p).map_err(|e| anyhow::anyhow!("{}: {e}", e.code())))
            .collect::<Result<_>>()?;
        Ok(Self {
            format: LABELS_FORMAT.into(),
            doc_id: doc.doc_id.clone(),
            model: Some(model_id),
            pages,
        })
    }

    /// Sets every cell's label. Each cell must be covered exactly once.
    pub fn apply(&self, doc: &mut ParsedDocument) -> Result<()> {
        if self.format != LABELS_FORMAT {
            bail!("schema-violation: unknown format '{}'", self.format);
        }
        if self.doc_id != doc.doc_id {
            bail!(
                "schema-violation: labels are for '{}', document is '{}'",
                self.doc_id,
                doc.doc_id
            );
        }
        let by_page: BTreeMap<u32, &PredictionResult> = self.pages.iter().map(|p| (p.page_number, p)).collect();
        for page in &mut doc.pages {
            let n = page.page_number();
            let Some(r) = by_page.get(&n) else {
                bail!("schema-violation: no labels for page {n}");
            };
            let labels: BTreeMap<u32, &str> = r.cells.iter().map(|c| (c.cell_id, c.label.as_str())).collect();
            if labels.len() != page.cells.len() {
                bail!(
                    "schema-violation: page {n} has {} cells, {} labels",
                    page.cells.len(),
                    labels.len()
                );
            }
            for c in &mut page.cells {
                let Some(l) = labels.get(&c.id) else {
                    bail!("schema-violation: no label for cell {} on page {n}", c.id);
                };
                c.label = Some(l.to_string());
            }
        }
        Ok(())
    }
}
