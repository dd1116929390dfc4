//! Evaluation reports in JSON and aligned text.

use std::fmt::Write as _;

use lanekit_core::metrics::{Averaging, EvalConfig, Evaluation, Matching};
use lanekit_core::ClassScheme;
use serde::Serialize;

/// Rules the scores depend on, written at the top of every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conventions {
    pub threshold_px: f64,
    pub matching: Matching,
    pub averaging: Averaging,
    /// Lanes are matched one to one to maximize correct points.
    pub correspondence: &'static str,
    /// Unmatched ground-truth lanes count in the classification total.
    pub unmatched_gt_in_classification_total: bool,
}

impl Conventions {
    pub fn new(cfg: &EvalConfig) -> Self {
        Conventions {
            threshold_px: cfg.threshold(),
            matching: cfg.matching,
            averaging: cfg.averaging,
            correspondence: "max-correct-points",
            unmatched_gt_in_classification_total: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionPart {
    pub correct: u64,
    pub total: u64,
    /// `null` when there is no data.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationPart {
    pub scheme: ClassScheme,
    pub labels: Vec<&'static str>,
    pub tp: u64,
    pub total: u64,
    pub accuracy: Option<f64>,
    /// Rows are ground truth, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub conventions: Conventions,
    pub images: usize,
    pub detection: DetectionPart,
    /// `null` when the ground truth carries no classes.
    pub classification: Option<ClassificationPart>,
}

impl Report {
    pub fn new(eval: &Evaluation, cfg: &EvalConfig) -> Self {
        Report {
            conventions: Conventions::new(cfg),
            images: eval.images,
            detection: DetectionPart {
                correct: eval.detection.correct,
                total: eval.detection.total,
                accuracy: eval.detection.accuracy,
            },
            classification: eval.classification.as_ref().map(|c| ClassificationPart {
                scheme: c.scheme,
                labels: (0..c.scheme.num_classes()).map(|i| c.scheme.label(i)).collect(),
                tp: c.tp,
                total: c.total,
                accuracy: c.accuracy,
                confusion: c.confusion.clone(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let c = &self.conventions;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# threshold {} px, {} matching ({}), {} averaging, unmatched gt lanes counted in class totals",
            c.threshold_px,
            lower(&c.matching),
            c.correspondence,
            lower(&c.averaging)
        );
        let _ = writeln!(s, "{:<16}{:>10}", "images", self.images);
        let d = &self.detection;
        let _ = writeln!(s, "{:<16}{:>10}  ({}/{})", "detection", accuracy(d.accuracy), d.correct, d.total);
        match &self.classification {
            None => {
                let _ = writeln!(s, "{:<16}{:>10}", "classification", "no data");
            }
            Some(k) => {
                let name = format!("{}-class", k.labels.len());
                let _ = writeln!(s, "{:<16}{:>10}  ({}/{})", name, accuracy(k.accuracy), k.tp, k.total);
                let width = k.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(6) + 2;
                let _ = write!(s, "{:<width$}", "gt\\pred");
                for l in &k.labels {
                    let _ = write!(s, "{l:>width$}");
                }
                s.push('\n');
                for (l, row) in k.labels.iter().zip(&k.confusion) {
                    let _ = write!(s, "{l:<width$}");
                    for v in row {
                        let _ = write!(s, "{v:>width$}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

fn lower<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn accuracy(a: Option<f64>) -> String {
    match a {
        Some(a) => format!("{a:.4}"),
        None => "no data".into(),
    }
}
