//! Training objectives.
//!
//! All functions take detector outputs already on a [`Tape`] and return
//! scalar graph nodes, so they are differentiable end to end. Every loss is
//! averaged over the batch.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode, is_absent, resample_lane, GridTarget, RowAnchorGrid};
use crate::record::{ClassId, ClassScheme, LaneRecord};
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

/// Coefficients of the structural and classification terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda: 1.0,
            gamma: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Values of every loss term of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub loc: f64,
    pub sim: f64,
    pub shp: f64,
    pub detection: f64,
    pub classification: f64,
    pub total: f64,
}

/// Graph nodes of every loss term.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub loc: Var,
    pub sim: Var,
    pub shp: Var,
    pub detection: Var,
    pub classification: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let v = |x: Var| tape.value(x).data()[0];
        LossReport {
            loc: v(self.loc),
            sim: v(self.sim),
            shp: v(self.shp),
            detection: v(self.detection),
            classification: v(self.classification),
            total: v(self.total),
        }
    }
}

/// Encoded supervision for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    /// One grid target per image, `M` lane slots each.
    pub grids: Vec<GridTarget>,
    /// Per `(image, slot)`: the class index, or `None` for slots without a
    /// real lane (masked out of the classification loss).
    pub classes: Vec<Option<usize>>,
}

impl BatchTargets {
    /// Encode records onto `grid`, resampling lanes whose rows differ from
    /// the grid's anchors.
    pub fn from_records(records: &[&LaneRecord], grid: &RowAnchorGrid, slots: usize, scheme: ClassScheme) -> Result<Self> {
        let mut grids = Vec::with_capacity(records.len());
        let mut classes = Vec::with_capacity(records.len() * slots);
        for rec in records {
            let lanes: Vec<Vec<f64>> = if rec.h_samples == grid.h_samples {
                rec.lanes.clone()
            } else {
                rec.lanes
                    .iter()
                    .map(|l| resample_lane(l, &rec.h_samples, &grid.h_samples))
                    .collect()
            };
            grids.push(encode(&lanes, grid, slots)?);
            for slot in 0..slots {
                let present = lanes.get(slot).is_some_and(|l| l.iter().any(|&x| !is_absent(x)));
                let class = match (&rec.classes, present) {
                    (Some(c), true) => {
                        let id = ClassId::from_u8(c[slot]).ok_or_else(|| {
                            Error::InvalidValue(format!("{}: unknown class id {}", rec.raw_file, c[slot]))
                        })?;
                        Some(scheme.index(id))
                    }
                    _ => None,
                };
                classes.push(class);
            }
        }
        Ok(BatchTargets { grids, classes })
    }
}

fn check_det(tape: &Tape, det: Var, op: &'static str) -> Result<[usize; 4]> {
    match *tape.shape(det) {
        [n, m, h, k] if k >= 2 => Ok([n, m, h, k]),
        ref s => Err(Error::shape(op, format!("detection logits {} are not [n, M, h, w + 1]", shape_str(s)))),
    }
}

fn zero(tape: &mut Tape, like: Var) -> Var {
    let dt = tape.dtype(like);
    tape.constant(Tensor::scalar(0.0, dt))
}

/// Sum over lanes and anchors of the cross entropy against the target cell,
/// averaged over the batch.
pub fn loc_loss(tape: &mut Tape, det: Var, targets: &[GridTarget]) -> Result<Var> {
    let [n, m, h, k] = check_det(tape, det, "loc_loss")?;
    if targets.len() != n || targets.iter().any(|t| t.lanes() != m || t.anchors() != h) {
        return Err(Error::shape("loc_loss", format!("{} targets for logits [{n}, {m}, {h}, {k}]", targets.len())));
    }
    let flat: Vec<usize> = targets.iter().flat_map(|t| t.as_slice().iter().copied()).collect();
    let rows = tape.reshape(det, &[n * m * h, k])?;
    let ce = tape.cross_entropy(rows, &flat)?;
    let s = tape.sum(ce);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Mean over lanes and adjacent anchor pairs of the L1 distance between the
/// two anchors' softmax distributions.
pub fn sim_loss(tape: &mut Tape, det: Var) -> Result<Var> {
    let [n, m, h, _] = check_det(tape, det, "sim_loss")?;
    if h < 2 {
        return Ok(zero(tape, det));
    }
    let p = tape.softmax(det, 3)?;
    let a = tape.narrow(p, 2, 0, h - 1)?;
    let b = tape.narrow(p, 2, 1, h - 1)?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / (n * m * (h - 1)) as f64))
}

/// Expected cell index under the softmax over the real cells, `[n, M, h]`.
pub fn expected_location(tape: &mut Tape, det: Var) -> Result<Var> {
    let [_, _, _, k] = check_det(tape, det, "expected_location")?;
    let cells = tape.narrow(det, 3, 0, k - 1)?;
    let p = tape.softmax(cells, 3)?;
    tape.weighted_sum_last(p, (0..k - 1).map(|c| c as f64).collect())
}

/// Mean over lanes and interior anchors of the absolute second difference
/// of the expected location.
pub fn shp_loss(tape: &mut Tape, det: Var) -> Result<Var> {
    let [n, m, h, _] = check_det(tape, det, "shp_loss")?;
    if h < 3 {
        return Ok(zero(tape, det));
    }
    let loc = expected_location(tape, det)?;
    let a = tape.narrow(loc, 2, 0, h - 2)?;
    let b = tape.narrow(loc, 2, 1, h - 2)?;
    let c = tape.narrow(loc, 2, 2, h - 2)?;
    let ab = tape.sub(a, b)?;
    let bc = tape.sub(b, c)?;
    let d = tape.sub(ab, bc)?;
    let d = tape.abs(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / (n * m * (h - 2)) as f64))
}

/// Mean cross entropy over lane slots that hold a real lane; zero when
/// there are none.
pub fn classification_loss(tape: &mut Tape, cls: Var, targets: &[Option<usize>]) -> Result<Var> {
    let (rows, c) = match *tape.shape(cls) {
        [n, m, c] => (n * m, c),
        ref s => return Err(Error::shape("classification_loss", format!("logits {} are not [n, M, C]", shape_str(s)))),
    };
    if targets.len() != rows {
        return Err(Error::shape("classification_loss", format!("{} targets for {rows} lane slots", targets.len())));
    }
    if let Some(&t) = targets.iter().flatten().find(|&&t| t >= c) {
        return Err(Error::TargetOutOfRange { target: t, classes: c });
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Ok(zero(tape, cls));
    }
    let flat = tape.reshape(cls, &[rows, c])?;
    let idx: Vec<usize> = targets.iter().map(|t| t.unwrap_or(0)).collect();
    let ce = tape.cross_entropy(flat, &idx)?;
    let mask = targets.iter().map(|t| if t.is_some() { 1.0 } else { 0.0 }).collect();
    let ce = tape.mul_const(ce, mask)?;
    let s = tape.sum(ce);
    Ok(tape.scale(s, 1.0 / count as f64))
}

/// `loc + alpha * sim + lambda * shp`.
pub fn detection_loss(tape: &mut Tape, det: Var, targets: &[GridTarget], w: &LossWeights) -> Result<(Var, Var, Var, Var)> {
    let loc = loc_loss(tape, det, targets)?;
    let sim = sim_loss(tape, det)?;
    let shp = shp_loss(tape, det)?;
    let a = tape.scale(sim, w.alpha);
    let b = tape.scale(shp, w.lambda);
    let d = tape.add(loc, a)?;
    let d = tape.add(d, b)?;
    Ok((d, loc, sim, shp))
}

/// `detection + gamma * classification`.
pub fn total_loss(tape: &mut Tape, detection: Var, classification: Var, w: &LossWeights) -> Result<Var> {
    let c = tape.scale(classification, w.gamma);
    tape.add(detection, c)
}

/// Every term for one batch of detector outputs.
pub fn compute(tape: &mut Tape, det: Var, cls: Var, targets: &BatchTargets, w: &LossWeights) -> Result<LossTerms> {
    let (detection, loc, sim, shp) = detection_loss(tape, det, &targets.grids, w)?;
    let classification = classification_loss(tape, cls, &targets.classes)?;
    let total = total_loss(tape, detection, classification, w)?;
    Ok(LossTerms {
        loc,
        sim,
        shp,
        detection,
        classification,
        total,
    })
}
