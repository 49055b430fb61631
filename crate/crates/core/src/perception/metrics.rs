use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{LabeledSample, PerceptionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class scores in Table II layout (class 0 = no puncture, class 1 = puncture).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    pub accuracy: f64,
    /// Confusion counts `[tn, fp, fn, tp]`.
    pub confusion: [usize; 4],
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

pub fn evaluate_classifier(samples: &[LabeledSample]) -> Result<MetricsTable, PerceptionError> {
    if samples.is_empty() {
        return Err(PerceptionError::EmptySampleSet);
    }
    let mut cm = [0usize; 4];
    for s in samples {
        for l in [s.true_label, s.predicted_label] {
            if l > 1 {
                return Err(PerceptionError::NonBinaryLabel(l));
            }
        }
        cm[(s.true_label * 2 + s.predicted_label) as usize] += 1;
    }
    Ok(MetricsTable::from_confusion(cm[0], cm[1], cm[2], cm[3]))
}

impl MetricsTable {
    pub fn from_confusion(tn: usize, fp: usize, fn_: usize, tp: usize) -> Self {
        let mut flagged = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                flagged = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let p0 = ratio(tn, tn + fn_);
        let r0 = ratio(tn, tn + fp);
        let p1 = ratio(tp, tp + fp);
        let r1 = ratio(tp, tp + fn_);
        let accuracy = ratio(tn + tp, tn + fp + fn_ + tp);
        let mut f1 = |p: f64, r: f64| {
            if p + r == 0.0 {
                flagged = true;
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        };
        let f0 = f1(p0, r0);
        let f1v = f1(p1, r1);
        MetricsTable {
            class0: ClassMetrics { precision: p0, recall: r0, f1: f0, support: tn + fp },
            class1: ClassMetrics { precision: p1, recall: r1, f1: f1v, support: fn_ + tp },
            accuracy,
            confusion: [tn, fp, fn_, tp],
            zero_division: flagged,
        }
    }

    /// CSV in Table II layout (metric, class 0, class 1) plus an accuracy row; two decimals.
    pub fn to_csv(&self) -> String {
        let (a, b) = (&self.class0, &self.class1);
        let mut s = String::from("Metric,Class 0 (Failure),Class 1 (Success)\n");
        for (name, x, y) in [("Precision", a.precision, b.precision), ("Recall", a.recall, b.recall), ("F1-score", a.f1, b.f1)] {
            let _ = writeln!(s, "{name},{x:.2},{y:.2}");
        }
        let _ = writeln!(s, "Support,{},{}", a.support, b.support);
        let _ = writeln!(s, "Accuracy,{:.2},", self.accuracy);
        s
    }

    /// JSON rows in the same order as the CSV.
    pub fn to_json(&self) -> serde_json::Value {
        let (a, b) = (&self.class0, &self.class1);
        serde_json::json!({
            "columns": ["Metric", "Class 0 (Failure)", "Class 1 (Success)"],
            "rows": [
                ["Precision", a.precision, b.precision],
                ["Recall", a.recall, b.recall],
                ["F1-score", a.f1, b.f1],
                ["Support", a.support, b.support],
                ["Accuracy", self.accuracy, null],
            ],
            "confusion": {"tn": self.confusion[0], "fp": self.confusion[1], "fn": self.confusion[2], "tp": self.confusion[3]},
            "zero_division": self.zero_division,
        })
    }
}
