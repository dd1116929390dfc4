//! Point-level detection accuracy, lane-type accuracy and lane matching.
//!
//! A ground-truth point is correct when the prediction matched to its lane
//! has a point at the same anchor within the pixel threshold. Lanes are
//! matched one to one so as to maximize correct points; only pairs sharing
//! at least one correct point are matched.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_absent, resample_lane};
use crate::record::{ClassId, ClassScheme, LaneRecord};

/// Largest lane count per side accepted by exhaustive matching.
pub const EXHAUSTIVE_MAX_LANES: usize = 6;

/// Threshold at the 1280-pixel reference width.
pub const REFERENCE_THRESHOLD: f64 = 20.0;
pub const REFERENCE_WIDTH: f64 = 1280.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    #[default]
    Greedy,
    Exhaustive,
}

/// How per-image counts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Sum counts over all images, divide once.
    #[default]
    Micro,
    /// Mean of per-image accuracies.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Absolute threshold in pixels; `None` scales 20 px at 1280 wide to
    /// `image_width`.
    pub pixel_threshold: Option<f64>,
    pub image_width: u32,
    pub matching: Matching,
    pub scheme: ClassScheme,
    pub averaging: Averaging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pixel_threshold: None,
            image_width: 1280,
            matching: Matching::Greedy,
            scheme: ClassScheme::Two,
            averaging: Averaging::Micro,
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self) -> f64 {
        self.pixel_threshold
            .unwrap_or(REFERENCE_THRESHOLD * self.image_width as f64 / REFERENCE_WIDTH)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.threshold();
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("pixel threshold must be positive, got {t}")));
        }
        Ok(())
    }
}

/// Correct points between one gt lane and one predicted lane.
pub fn pair_score(gt: &[f64], pred: &[f64], threshold: f64) -> usize {
    gt.iter()
        .zip(pred)
        .filter(|(g, p)| !is_absent(**g) && !is_absent(**p) && (**g - **p).abs() <= threshold)
        .count()
}

fn score_matrix(pred: &[Vec<f64>], gt: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    gt.iter()
        .map(|g| pred.iter().map(|p| pair_score(g, p, threshold)).collect())
        .collect()
}

/// Assign each gt lane at most one predicted lane.
pub fn match_lanes(pred: &[Vec<f64>], gt: &[Vec<f64>], threshold: f64, mode: Matching) -> Result<Vec<Option<usize>>> {
    let s = score_matrix(pred, gt, threshold);
    match mode {
        Matching::Greedy => Ok(greedy(&s, pred.len())),
        Matching::Exhaustive => {
            if gt.len() > EXHAUSTIVE_MAX_LANES || pred.len() > EXHAUSTIVE_MAX_LANES {
                return Err(Error::Unsupported(alloc::format!(
                    "exhaustive matching supports at most {EXHAUSTIVE_MAX_LANES} lanes per side, got {} gt and {} predicted",
                    gt.len(),
                    pred.len()
                )));
            }
            Ok(exhaustive(&s, pred.len()))
        }
    }
}

/// Total score of an assignment.
pub fn assignment_score(pred: &[Vec<f64>], gt: &[Vec<f64>], threshold: f64, a: &[Option<usize>]) -> usize {
    a.iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| pair_score(&gt[g], &pred[p], threshold)))
        .sum()
}

fn greedy(s: &[Vec<usize>], n_pred: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; s.len()];
    let mut used = vec![false; n_pred];
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for (g, row) in s.iter().enumerate() {
            if out[g].is_some() {
                continue;
            }
            for (p, &v) in row.iter().enumerate() {
                // strict > keeps the lowest (gt, pred) among ties
                if !used[p] && v > 0 && best.is_none_or(|b| v > b.2) {
                    best = Some((g, p, v));
                }
            }
        }
        match best {
            Some((g, p, _)) => {
                out[g] = Some(p);
                used[p] = true;
            }
            None => return out,
        }
    }
}

fn exhaustive(s: &[Vec<usize>], n_pred: usize) -> Vec<Option<usize>> {
    fn go(
        s: &[Vec<usize>],
        g: usize,
        used: &mut [bool],
        cur: &mut Vec<Option<usize>>,
        acc: usize,
        best: &mut (usize, Vec<Option<usize>>),
    ) {
        if g == s.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for p in 0..used.len() {
            if !used[p] && s[g][p] > 0 {
                used[p] = true;
                cur.push(Some(p));
                go(s, g + 1, used, cur, acc + s[g][p], best);
                cur.pop();
                used[p] = false;
            }
        }
        cur.push(None);
        go(s, g + 1, used, cur, acc, best);
        cur.pop();
    }
    let mut best = (0, vec![None; s.len()]);
    go(s, 0, &mut vec![false; n_pred], &mut Vec::new(), 0, &mut best);
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub correct: u64,
    pub total: u64,
    /// `None` when there are no ground-truth points.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScore {
    pub scheme: ClassScheme,
    pub tp: u64,
    pub total: u64,
    pub accuracy: Option<f64>,
    /// `confusion[gt][pred]` over matched lane pairs.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub detection: DetectionScore,
    pub classification: Option<ClassificationScore>,
    pub images: usize,
}

fn index_by_file(records: &[LaneRecord]) -> Result<BTreeMap<&str, &LaneRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.raw_file.as_str(), r).is_some() {
            return Err(Error::DuplicateRecord {
                raw_file: r.raw_file.clone(),
            });
        }
    }
    Ok(map)
}

fn class_of(rec: &LaneRecord, lane: usize) -> Result<ClassId> {
    let c = rec.classes.as_ref().ok_or_else(|| Error::MissingClasses {
        raw_file: rec.raw_file.clone(),
    })?;
    let v = *c.get(lane).ok_or_else(|| {
        Error::InvalidValue(alloc::format!("{}: no class for lane {lane}", rec.raw_file))
    })?;
    ClassId::from_u8(v).ok_or_else(|| Error::InvalidValue(alloc::format!("{}: unknown class id {v}", rec.raw_file)))
}

struct Accum {
    correct: u64,
    total: u64,
    per_image: Vec<f64>,
    tp: u64,
    cls_total: u64,
    confusion: Vec<Vec<u64>>,
}

fn accumulate(pred: &[LaneRecord], gt: &[LaneRecord], cfg: &EvalConfig, classify: bool) -> Result<Accum> {
    cfg.validate()?;
    let preds = index_by_file(pred)?;
    index_by_file(gt)?;
    let thr = cfg.threshold();
    let c = cfg.scheme.num_classes();
    let mut acc = Accum {
        correct: 0,
        total: 0,
        per_image: Vec::new(),
        tp: 0,
        cls_total: 0,
        confusion: vec![vec![0; c]; c],
    };
    for g in gt {
        let total = g.point_count() as u64;
        acc.total += total;
        if classify {
            for i in 0..g.lanes.len() {
                if g.lane_present(i) {
                    class_of(g, i)?;
                    acc.cls_total += 1;
                }
            }
        }
        let Some(p) = preds.get(g.raw_file.as_str()) else {
            if total > 0 {
                acc.per_image.push(0.0);
            }
            continue;
        };
        let p_lanes: Vec<Vec<f64>> = if p.h_samples == g.h_samples {
            p.lanes.clone()
        } else {
            p.lanes.iter().map(|l| resample_lane(l, &p.h_samples, &g.h_samples)).collect()
        };
        let a = match_lanes(&p_lanes, &g.lanes, thr, cfg.matching)?;
        let correct = assignment_score(&p_lanes, &g.lanes, thr, &a) as u64;
        acc.correct += correct;
        if total > 0 {
            acc.per_image.push(correct as f64 / total as f64);
        }
        if classify {
            for (gi, pi) in a.iter().enumerate() {
                if let Some(pi) = *pi {
                    let gc = cfg.scheme.index(class_of(g, gi)?);
                    let pc = cfg.scheme.index(class_of(p, pi)?);
                    acc.confusion[gc][pc] += 1;
                    if gc == pc {
                        acc.tp += 1;
                    }
                }
            }
        }
    }
    Ok(acc)
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn detection_from(acc: &Accum, cfg: &EvalConfig) -> DetectionScore {
    let accuracy = match cfg.averaging {
        Averaging::Micro => ratio(acc.correct, acc.total),
        Averaging::Macro => {
            (!acc.per_image.is_empty()).then(|| acc.per_image.iter().sum::<f64>() / acc.per_image.len() as f64)
        }
    };
    DetectionScore {
        correct: acc.correct,
        total: acc.total,
        accuracy,
    }
}

/// Fraction of ground-truth points predicted within the threshold.
///
/// Images missing from `pred` count every point as incorrect.
pub fn detection_accuracy(pred: &[LaneRecord], gt: &[LaneRecord], cfg: &EvalConfig) -> Result<DetectionScore> {
    let acc = accumulate(pred, gt, cfg, false)?;
    Ok(detection_from(&acc, cfg))
}

/// Matched lanes whose grouped classes agree, over all gt lanes with at
/// least one point.
pub fn classification_accuracy(pred: &[LaneRecord], gt: &[LaneRecord], cfg: &EvalConfig) -> Result<ClassificationScore> {
    let acc = accumulate(pred, gt, cfg, true)?;
    Ok(ClassificationScore {
        scheme: cfg.scheme,
        tp: acc.tp,
        total: acc.cls_total,
        accuracy: ratio(acc.tp, acc.cls_total),
        confusion: acc.confusion,
    })
}

/// Detection score plus, when the ground truth carries classes, the
/// classification score.
pub fn evaluate(pred: &[LaneRecord], gt: &[LaneRecord], cfg: &EvalConfig) -> Result<Evaluation> {
    let classify = !gt.is_empty() && gt.iter().all(|r| r.classes.is_some());
    let acc = accumulate(pred, gt, cfg, classify)?;
    let detection = detection_from(&acc, cfg);
    let classification = classify.then(|| ClassificationScore {
        scheme: cfg.scheme,
        tp: acc.tp,
        total: acc.cls_total,
        accuracy: ratio(acc.tp, acc.cls_total),
        confusion: acc.confusion.clone(),
    });
    Ok(Evaluation {
        detection,
        classification,
        images: gt.len(),
    })
}
