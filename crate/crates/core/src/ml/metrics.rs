//! Confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use super::MlError;
use crate::model::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `None` when the label never occurs in the truth.
    pub recall: Option<f64>,
    /// `None` when the label is never predicted.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_label: Vec<LabelMetrics>,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
}

impl Evaluation {
    pub fn label(&self, name: &str) -> Option<&LabelMetrics> {
        self.per_label.iter().find(|m| m.label == name)
    }
}

/// Compares two label sequences.
pub fn evaluate(truth: &[String], predicted: &[String], labels: &LabelSet) -> Result<Evaluation, MlError> {
    if truth.len() != predicted.len() {
        return Err(MlError::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let idx = |l: &String| labels.index_of(l).ok_or_else(|| MlError::UnknownLabel(l.clone()));
    let n = labels.len();
    let mut m = vec![vec![0u64; n]; n];
    for (t, p) in truth.iter().zip(predicted) {
        m[idx(t)?][idx(p)?] += 1;
    }
    from_confusion(m, labels)
}

/// Metrics of a square confusion matrix whose rows are true labels.
pub fn from_confusion(confusion: Vec<Vec<u64>>, labels: &LabelSet) -> Result<Evaluation, MlError> {
    let n = labels.len();
    if confusion.len() != n || confusion.iter().any(|r| r.len() != n) {
        return Err(MlError::Shape(format!("confusion matrix must be {n}x{n}")));
    }
    let mut per_label = Vec::with_capacity(n);
    for l in 0..n {
        let tp = confusion[l][l];
        let row: u64 = confusion[l].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[l]).sum();
        let ratio = |den: u64| (den > 0).then(|| tp as f64 / den as f64);
        per_label.push(LabelMetrics {
            label: labels.name(l).to_string(),
            support: row,
            tp,
            fp: col - tp,
            fn_: row - tp,
            recall: ratio(row),
            precision: ratio(col),
        });
    }
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let macro_recall = mean(per_label.iter().filter_map(|m| m.recall).collect());
    let macro_precision = mean(per_label.iter().filter_map(|m| m.precision).collect());
    let macro_f1 = if macro_recall + macro_precision > 0.0 {
        2.0 * macro_precision * macro_recall / (macro_precision + macro_recall)
    } else {
        0.0
    };
    Ok(Evaluation {
        labels: labels.names().map(String::from).collect(),
        confusion,
        per_label,
        macro_recall,
        macro_precision,
        macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let labels = LabelSet::new(["a", "b", "c"]).unwrap();
        let e = from_confusion(vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]], &labels).unwrap();
        for m in &e.per_label {
            assert_eq!((m.recall, m.precision), (Some(1.0), Some(1.0)));
        }
        assert_eq!(e.macro_f1, 1.0);
    }

    #[test]
    fn identities_hold() {
        let labels = LabelSet::new(["a", "b"]).unwrap();
        let truth: Vec<String> = ["a", "a", "b", "b", "b"].map(String::from).to_vec();
        let pred: Vec<String> = ["a", "b", "b", "a", "b"].map(String::from).to_vec();
        let e = evaluate(&truth, &pred, &labels).unwrap();
        assert_eq!(e.confusion, vec![vec![1, 1], vec![1, 2]]);
        let b = e.label("b").unwrap();
        assert_eq!((b.tp, b.fp, b.fn_), (2, 1, 1));
        assert_eq!(b.tp + b.fn_, 3);
    }

    #[test]
    fn zero_support_is_excluded() {
        let labels = LabelSet::new(["a", "b"]).unwrap();
        let e = from_confusion(vec![vec![4, 0], vec![0, 0]], &labels).unwrap();
        assert_eq!(e.label("b").unwrap().recall, None);
        assert_eq!(e.macro_recall, 1.0);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let labels = LabelSet::new(["a"]).unwrap();
        let err = evaluate(&["a".into()], &[], &labels).unwrap_err();
        assert_eq!(err.code(), "shape-error");
    }
}
