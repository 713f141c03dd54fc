//! Confusion matrix and macro-averaged precision / recall.
//!
//! Rows are true classes and columns predicted classes, so for class `i`
//! the diagonal entry is `tp_i`, the rest of column `i` is `fp_i` and the
//! rest of row `i` is `fn_i`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Build from explicit counts; must be square and at least 1×1.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(Error::Input("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Per-class `tp / (tp + fn)`; an empty row is an error.
    pub fn recalls(&self) -> Result<Vec<f64>> {
        (0..self.num_classes())
            .map(|i| match self.row_sum(i) {
                0 => Err(Error::Metric(format!("class {} has no true samples", i + 1))),
                n => Ok(self.counts[i][i] as f64 / n as f64),
            })
            .collect()
    }

    /// Per-class `tp / (tp + fp)`, with 0 for a class that is never predicted.
    pub fn precisions(&self) -> Vec<f64> {
        (0..self.num_classes())
            .map(|j| match self.col_sum(j) {
                0 => 0.0,
                n => self.counts[j][j] as f64 / n as f64,
            })
            .collect()
    }

    /// Classes that were never predicted.
    pub fn empty_columns(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&j| self.col_sum(j) == 0).collect()
    }

    /// CSV with a header row and a leading column of class names.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let m = self.num_classes();
        let name = |i: usize| names.get(i).map(|s| s.to_string()).unwrap_or(format!("class {}", i + 1));
        let quote = |s: String| {
            if s.contains([',', '"']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s
            }
        };
        let mut out = String::from("true\\predicted");
        for j in 0..m {
            write!(out, ",{}", quote(name(j))).unwrap();
        }
        out.push('\n');
        for i in 0..m {
            out.push_str(&quote(name(i)));
            for j in 0..m {
                write!(out, ",{}", self.counts[i][j]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Count (true, predicted) pairs; labels are 1-based in `1..=m`.
pub fn confusion(true_labels: &[usize], predicted: &[usize], m: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::Input(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    if m == 0 {
        return Err(Error::Input("zero classes".into()));
    }
    let mut counts = vec![vec![0u64; m]; m];
    for (&a, &p) in true_labels.iter().zip(predicted) {
        if !(1..=m).contains(&a) || !(1..=m).contains(&p) {
            return Err(Error::Input(format!("label pair ({a}, {p}) outside 1..={m}")));
        }
        counts[a - 1][p - 1] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::Metric("accuracy of an empty confusion matrix".into())),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Mean over classes of `tp / (tp + fp)`. Never-predicted classes count as 0.
pub fn macro_precision(cm: &ConfusionMatrix) -> f64 {
    let p = cm.precisions();
    p.iter().sum::<f64>() / p.len() as f64
}

/// Mean over classes of `tp / (tp + fn)`.
pub fn macro_recall(cm: &ConfusionMatrix) -> Result<f64> {
    let r = cm.recalls()?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub class: usize,
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
}

/// Metrics file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_class: Vec<PerClass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, names: &[&str]) -> Result<Self> {
        let precisions = cm.precisions();
        let recalls = cm.recalls()?;
        let per_class = (0..cm.num_classes())
            .map(|i| PerClass {
                class: i + 1,
                name: names.get(i).map(|s| s.to_string()).unwrap_or_default(),
                support: cm.row_sum(i),
                precision: precisions[i],
                recall: recalls[i],
            })
            .collect();
        let warnings = cm
            .empty_columns()
            .into_iter()
            .map(|j| format!("class {} was never predicted; its precision is taken as 0", j + 1))
            .collect();
        Ok(MetricsReport {
            accuracy: accuracy(cm)?,
            precision: macro_precision(cm),
            recall: macro_recall(cm)?,
            per_class,
            warnings,
        })
    }

    /// `accuracy / precision / recall` to 4 decimal places.
    pub fn summary_line(&self) -> String {
        format!(
            "accuracy {:.4}  precision {:.4}  recall {:.4}",
            self.accuracy, self.precision, self.recall
        )
    }
}
