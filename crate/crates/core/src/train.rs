//! Training: full-precision and emulated mixed-precision steps, dynamic
//! loss scaling, and the epoch loop.
//!
//! Mixed precision follows the usual recipe: master weights stay in F32, a
//! low-precision copy runs the forward and backward passes on a scaled
//! loss, and the gradients are unscaled into F32 before the update. Steps
//! whose gradients overflow are skipped and the scale backs off.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::losses::{self, BatchTargets, LossReport, LossWeights};
use crate::metrics::{evaluate, EvalConfig};
use crate::model::{Mode, Model};
use crate::optim::{lr_at, sgd_step, OptimConfig};
use crate::record::LaneRecord;
use crate::tape::{BatchStats, Tape, Var};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePolicy {
    Static,
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpConfig {
    pub enabled: bool,
    pub initial_loss_scale: f64,
    pub policy: ScalePolicy,
    pub growth_interval: u32,
    pub backoff_factor: f64,
    pub growth_factor: f64,
    /// Precision of the forward/backward copy. `F16E` in normal use;
    /// `F64` turns rounding off, which is only useful in tests.
    pub compute_dtype: DType,
}

impl Default for MpConfig {
    fn default() -> Self {
        MpConfig {
            enabled: false,
            initial_loss_scale: 1024.0,
            policy: ScalePolicy::Dynamic,
            growth_interval: 200,
            backoff_factor: 0.5,
            growth_factor: 2.0,
            compute_dtype: DType::F16E,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mixed precision: {m}")));
        let s = self.initial_loss_scale;
        if !(s.is_finite() && s > 0.0) {
            return bad("initial_loss_scale must be positive");
        }
        if self.policy == ScalePolicy::Dynamic {
            if libm::exp2(libm::round(libm::log2(s))) != s {
                return bad("initial_loss_scale must be a power of two under the dynamic policy");
            }
            if !(self.backoff_factor > 0.0 && self.backoff_factor < 1.0) {
                return bad("backoff_factor must lie in (0, 1)");
            }
            if !(self.growth_factor > 1.0 && self.growth_factor.is_finite()) {
                return bad("growth_factor must exceed 1");
            }
            if self.growth_interval == 0 {
                return bad("growth_interval must be positive");
            }
        }
        Ok(())
    }
}

/// Current loss scale and the count of consecutive clean steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    pub scale: f64,
    pub clean_steps: u32,
}

impl LossScaler {
    pub fn new(cfg: &MpConfig) -> Self {
        LossScaler {
            scale: cfg.initial_loss_scale,
            clean_steps: 0,
        }
    }

    /// Record an overflowing step.
    pub fn on_overflow(&mut self, cfg: &MpConfig) -> Result<()> {
        self.clean_steps = 0;
        if cfg.policy == ScalePolicy::Dynamic {
            self.scale *= cfg.backoff_factor;
            if self.scale < 1.0 {
                return Err(Error::LossScaleUnderflow { scale: self.scale });
            }
        }
        Ok(())
    }

    /// Record a clean step.
    pub fn on_clean(&mut self, cfg: &MpConfig) {
        self.clean_steps += 1;
        if cfg.policy == ScalePolicy::Dynamic && self.clean_steps >= cfg.growth_interval {
            self.scale *= cfg.growth_factor;
            self.clean_steps = 0;
        }
    }
}

/// Unscaled gradients of one evaluation of an objective.
#[derive(Debug, Clone)]
pub struct Grads<X> {
    /// Loss value before scaling.
    pub loss: f64,
    /// One buffer per master tensor, rounded to that tensor's dtype.
    pub grads: Vec<Vec<f64>>,
    /// Whether the loss and every gradient are finite.
    pub finite: bool,
    pub extra: X,
}

/// Evaluate `f` on a `compute`-precision copy of `master`, backpropagate
/// `loss * loss_scale`, and return gradients divided by `loss_scale` in the
/// master precision.
pub fn gradients<X>(
    master: &[Tensor],
    compute: DType,
    loss_scale: f64,
    f: impl FnOnce(&mut Tape, &[Var]) -> Result<(Var, X)>,
) -> Result<Grads<X>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = master.iter().map(|t| tape.param(t.cast(compute))).collect();
    let (loss, extra) = f(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    let scaled = if loss_scale == 1.0 { loss } else { tape.scale(loss, loss_scale) };
    let mut g = tape.backward(scaled)?;
    let mut finite = value.is_finite();
    let grads = master
        .iter()
        .zip(&vars)
        .map(|(t, &v)| {
            let raw = g.take(v).unwrap_or_else(|| vec![0.0; t.len()]);
            raw.into_iter()
                .map(|x| {
                    let u = t.dtype().round(x / loss_scale);
                    finite &= u.is_finite();
                    u
                })
                .collect()
        })
        .collect();
    Ok(Grads {
        loss: value,
        grads,
        finite,
        extra,
    })
}

/// Master-weight optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub velocity: Vec<Tensor>,
    /// Next epoch to run.
    pub epoch: usize,
    pub step: u64,
    pub scaler: LossScaler,
    /// Base seed of shuffling and augmentation streams.
    pub seed: u64,
    /// Best validation detection accuracy so far.
    pub best_val: Option<f64>,
}

impl TrainState {
    pub fn new(params: &[Tensor], cfg: &TrainConfig) -> Self {
        TrainState {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape(), p.dtype())).collect(),
            epoch: 0,
            step: 0,
            scaler: LossScaler::new(&cfg.mp),
            seed: cfg.optim.seed,
            best_val: None,
        }
    }
}

/// Apply mixed-precision gradients: skip on overflow, otherwise update.
/// Returns whether the step was skipped.
#[allow(clippy::too_many_arguments)]
pub fn apply_mp_update<X>(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    scaler: &mut LossScaler,
    mp: &MpConfig,
    g: &Grads<X>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<bool> {
    if !g.finite {
        scaler.on_overflow(mp)?;
        return Ok(true);
    }
    let refs: Vec<&[f64]> = g.grads.iter().map(Vec::as_slice).collect();
    sgd_step(params, velocity, &refs, lr, momentum, weight_decay)?;
    scaler.on_clean(mp);
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub mp: MpConfig,
    pub loss: LossWeights,
    /// Random augmentation of training samples; `None` disables it.
    pub augment: Option<AugmentParams>,
    pub eval: EvalConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.mp.validate()?;
        self.loss.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.eval.validate()
    }
}

/// Network input and encoded targets of one batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub targets: BatchTargets,
}

impl Batch {
    pub fn new(model: &Model, images: &[&RgbImage], records: &[&LaneRecord]) -> Result<Self> {
        let cfg = model.config();
        Ok(Batch {
            images: model.prepare(images),
            targets: BatchTargets::from_records(records, &cfg.grid, cfg.max_lanes, cfg.scheme)?,
        })
    }
}

type StepExtra = (LossReport, Vec<BatchStats>);

fn model_gradients(
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
    compute: DType,
    loss_scale: f64,
    loss_multiplier: f64,
) -> Result<Grads<StepExtra>> {
    gradients(model.params(), compute, loss_scale, |tape, params| {
        let x = tape.constant(batch.images.cast(compute));
        let f = model.forward(tape, params, x, Mode::Train)?;
        // Losses run in at least single precision.
        let loss_dtype = compute.promote(DType::F32);
        let det = tape.cast(f.det, loss_dtype);
        let cls = tape.cast(f.cls, loss_dtype);
        let terms = losses::compute(tape, det, cls, &batch.targets, weights)?;
        let mut report = terms.report(tape);
        let total = if loss_multiplier == 1.0 {
            terms.total
        } else {
            report.total *= loss_multiplier;
            tape.scale(terms.total, loss_multiplier)
        };
        Ok((total, (report, f.stats)))
    })
}

/// One full-precision step.
pub fn train_step_fp32(model: &mut Model, batch: &Batch, state: &mut TrainState, cfg: &TrainConfig) -> Result<LossReport> {
    let lr = lr_at(state.epoch, &cfg.optim)?;
    let g = model_gradients(model, batch, &cfg.loss, DType::F32, 1.0, 1.0)?;
    let (report, stats) = g.extra;
    if !g.finite {
        return Err(Error::NonFinite {
            what: format!(
                "loss or gradient at epoch {} step {} (loss {})",
                state.epoch, state.step, report.total
            ),
        });
    }
    let refs: Vec<&[f64]> = g.grads.iter().map(Vec::as_slice).collect();
    sgd_step(model.params_mut(), &mut state.velocity, &refs, lr, cfg.optim.momentum, cfg.optim.weight_decay)?;
    model.update_running(&stats)?;
    state.step += 1;
    Ok(report)
}

/// One mixed-precision step; returns the report and whether it was skipped.
pub fn train_step_mp(model: &mut Model, batch: &Batch, state: &mut TrainState, cfg: &TrainConfig) -> Result<(LossReport, bool)> {
    train_step_mp_scaled(model, batch, state, cfg, 1.0)
}

/// [`train_step_mp`] with the loss multiplied by `loss_multiplier` first,
/// which lets tests provoke overflow.
pub fn train_step_mp_scaled(
    model: &mut Model,
    batch: &Batch,
    state: &mut TrainState,
    cfg: &TrainConfig,
    loss_multiplier: f64,
) -> Result<(LossReport, bool)> {
    let lr = lr_at(state.epoch, &cfg.optim)?;
    let g = model_gradients(model, batch, &cfg.loss, cfg.mp.compute_dtype, state.scaler.scale, loss_multiplier)?;
    let skipped = apply_mp_update(
        model.params_mut(),
        &mut state.velocity,
        &mut state.scaler,
        &cfg.mp,
        &g,
        lr,
        cfg.optim.momentum,
        cfg.optim.weight_decay,
    )?;
    if !skipped {
        model.update_running(&g.extra.1)?;
    }
    state.step += 1;
    Ok((g.extra.0, skipped))
}

/// An image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub record: LaneRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss_scale: f64,
    pub skipped: bool,
    #[serde(flatten)]
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub skipped: usize,
    pub loss_scale: f64,
    /// Mean of the epoch's non-skipped step reports.
    pub mean: LossReport,
    pub val_detection: Option<f64>,
    pub val_classification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Hooks called by [`fit`].
pub trait FitObserver<E> {
    fn on_step(&mut self, _step: &StepRecord) -> core::result::Result<(), E> {
        Ok(())
    }

    /// Called after each epoch; `is_best` marks a new best validation
    /// detection accuracy.
    fn on_epoch(&mut self, _epoch: &EpochRecord, _model: &Model, _state: &TrainState, _is_best: bool) -> core::result::Result<(), E> {
        Ok(())
    }

    /// Checked after each epoch; `true` ends training early.
    fn stop(&self) -> bool {
        false
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<E> FitObserver<E> for NoObserver {}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b5_e8a5);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample order of `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    // keep the generator's advance independent of n for future draws
    let _: u32 = rng.random();
    idx
}

/// Predict records for `samples` in eval mode, `batch` images at a time.
pub fn predict_samples(model: &Model, images: &[&RgbImage], names: &[&str], batch: usize) -> Result<Vec<LaneRecord>> {
    let h = &model.config().grid.h_samples;
    let mut out = Vec::with_capacity(images.len());
    for (imgs, names) in images.chunks(batch.max(1)).zip(names.chunks(batch.max(1))) {
        let preds = model.predict(&model.prepare(imgs))?;
        for (p, name) in preds.iter().zip(names) {
            out.push(p.to_record(name, h));
        }
    }
    Ok(out)
}

/// Train from `state.epoch` to the configured epoch count.
pub fn fit<E: From<Error>>(
    model: &mut Model,
    state: &mut TrainState,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn FitObserver<E>,
) -> core::result::Result<History, E> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()).into());
    }
    let mcfg = model.config().clone();
    let cached: Option<Vec<Tensor>> = match cfg.augment {
        Some(_) => None,
        None => Some(train.iter().map(|s| model.prepare(&[&s.image])).collect()),
    };
    let mut history = History::default();
    for epoch in state.epoch..cfg.optim.epochs {
        let lr = lr_at(epoch, &cfg.optim)?;
        let order = epoch_order(state.seed, epoch, train.len());
        let mut sum = LossReport::default();
        let (mut steps, mut skipped) = (0usize, 0usize);
        for chunk in order.chunks(cfg.optim.batch_size) {
            let mut recs = Vec::with_capacity(chunk.len());
            let mut data = Vec::new();
            for &i in chunk {
                let s = &train[i];
                match (&cached, &cfg.augment) {
                    (Some(c), _) => {
                        data.extend_from_slice(c[i].data());
                        recs.push(s.record.clone());
                    }
                    (None, Some(p)) => {
                        let seed = mix(state.seed, ((epoch as u64) << 32) | i as u64);
                        let (img, rec) = augment(&s.record, &s.image, &mcfg.grid, p, seed)?;
                        data.extend_from_slice(model.prepare(&[&img]).data());
                        recs.push(rec);
                    }
                    (None, None) => unreachable!("cache exists without augmentation"),
                }
            }
            let images = Tensor::new(&[chunk.len(), 3, mcfg.input_height, mcfg.input_width], data, DType::F32)?;
            let rec_refs: Vec<&LaneRecord> = recs.iter().collect();
            let batch = Batch {
                images,
                targets: BatchTargets::from_records(&rec_refs, &mcfg.grid, mcfg.max_lanes, mcfg.scheme)?,
            };
            let scale_before = state.scaler.scale;
            let (report, was_skipped) = if cfg.mp.enabled {
                train_step_mp(model, &batch, state, cfg)?
            } else {
                (train_step_fp32(model, &batch, state, cfg)?, false)
            };
            steps += 1;
            if was_skipped {
                skipped += 1;
            } else {
                for (a, b) in [
                    (&mut sum.loc, report.loc),
                    (&mut sum.sim, report.sim),
                    (&mut sum.shp, report.shp),
                    (&mut sum.detection, report.detection),
                    (&mut sum.classification, report.classification),
                    (&mut sum.total, report.total),
                ] {
                    *a += b;
                }
            }
            let rec = StepRecord {
                epoch,
                step: state.step,
                lr,
                loss_scale: scale_before,
                skipped: was_skipped,
                report,
            };
            observer.on_step(&rec)?;
            history.steps.push(rec);
        }
        let kept = (steps - skipped).max(1) as f64;
        let mean = LossReport {
            loc: sum.loc / kept,
            sim: sum.sim / kept,
            shp: sum.shp / kept,
            detection: sum.detection / kept,
            classification: sum.classification / kept,
            total: sum.total / kept,
        };
        state.epoch = epoch + 1;
        let (mut val_detection, mut val_classification) = (None, None);
        if !val.is_empty() {
            let imgs: Vec<&RgbImage> = val.iter().map(|s| &s.image).collect();
            let names: Vec<&str> = val.iter().map(|s| s.record.raw_file.as_str()).collect();
            let preds = predict_samples(model, &imgs, &names, 32)?;
            let gts: Vec<LaneRecord> = val.iter().map(|s| s.record.clone()).collect();
            let e = evaluate(&preds, &gts, &cfg.eval)?;
            val_detection = e.detection.accuracy;
            val_classification = e.classification.and_then(|c| c.accuracy);
        }
        let is_best = match (val_detection, state.best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if is_best {
            state.best_val = val_detection;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            steps,
            skipped,
            loss_scale: state.scaler.scale,
            mean,
            val_detection,
            val_classification,
        };
        observer.on_epoch(&rec, model, state, is_best)?;
        history.epochs.push(rec);
        if observer.stop() {
            break;
        }
    }
    Ok(history)
}

/// Least-squares linear regression, the reference objective for comparing
/// precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    /// `[n, d]`
    pub x: Tensor,
    /// `[n]`
    pub y: Tensor,
}

impl LinearProblem {
    /// Inputs uniform in `[-1, 1]`, a random true model, small target noise.
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.random::<f64>() * 2.0 - 1.0;
        let x: Vec<f64> = (0..n * d).map(|_| u()).collect();
        let w: Vec<f64> = (0..d).map(|_| u()).collect();
        let b = u();
        let y: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|j| x[i * d + j] * w[j]).sum::<f64>() + b + 0.05 * u())
            .collect();
        LinearProblem {
            x: Tensor::new(&[n, d], x, DType::F32).expect("sized"),
            y: Tensor::new(&[n], y, DType::F32).expect("sized"),
        }
    }

    /// Zero-initialized `[w: [1, d], b: [1]]` in F32.
    pub fn init_params(&self) -> Vec<Tensor> {
        vec![
            Tensor::zeros(&[1, self.x.shape()[1]], DType::F32),
            Tensor::zeros(&[1], DType::F32),
        ]
    }

    /// Mean squared error of `x · wᵀ + b` against `y`.
    pub fn loss(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let dt = tape.dtype(params[0]);
        let n = self.x.shape()[0];
        let x = tape.constant(self.x.cast(dt));
        let y = tape.constant(self.y.cast(dt));
        let p = tape.dense(x, params[0], Some(params[1]))?;
        let p = tape.reshape(p, &[n])?;
        let d = tape.sub(p, y)?;
        let sq = tape.mul(d, d)?;
        tape.mean(sq)
    }
}
