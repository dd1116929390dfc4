//! Side-by-side timing of full-precision and emulated mixed-precision
//! training steps.

use std::time::Instant;

use lanekit_core::model::{Model, ModelConfig};
use lanekit_core::optim::sgd_step;
use lanekit_core::synth::{generate, SynthSpec};
use lanekit_core::train::{
    apply_mp_update, gradients, train_step_fp32, train_step_mp, Batch, LinearProblem, LossScaler, MpConfig, TrainConfig,
    TrainState,
};
use lanekit_core::{DType, LaneRecord, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const LABEL: &str = "emulated precision, not hardware FP16 timing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    /// Least-squares regression.
    #[default]
    Linear,
    /// The detector on one synthetic batch.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub workload: Workload,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear workload size.
    pub samples: usize,
    pub features: usize,
    /// Model workload.
    pub model: ModelConfig,
    pub batch_size: usize,
    /// Loss-scaling settings of the mixed-precision mode.
    pub mp: MpConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            workload: Workload::Linear,
            steps: 200,
            seed: 0,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            samples: 256,
            features: 16,
            model: ModelConfig::tiny(),
            batch_size: 4,
            mp: MpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fp32,
    Mp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub steps: usize,
    pub skipped: usize,
    pub seconds: f64,
    pub steps_per_sec: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub workload: Workload,
    pub modes: Vec<ModeResult>,
    /// `|mp - fp32| / |fp32|` of the final losses when both modes ran.
    pub loss_delta_rel: Option<f64>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n{:<6}{:>8}{:>9}{:>12}{:>16}\n", self.label, "mode", "steps", "skipped", "steps/s", "final loss");
        for m in &self.modes {
            let name = match m.mode {
                Mode::Fp32 => "fp32",
                Mode::Mp => "mp",
            };
            s += &format!(
                "{:<6}{:>8}{:>9}{:>12.1}{:>16.8}\n",
                name, m.steps, m.skipped, m.steps_per_sec, m.final_loss
            );
        }
        match self.loss_delta_rel {
            Some(d) => s += &format!("relative loss delta {d:.3e}\n"),
            None => s += "relative loss delta: no data\n",
        }
        s
    }
}

fn linear(cfg: &BenchConfig, mode: Mode) -> Result<ModeResult> {
    let prob = LinearProblem::random(cfg.samples, cfg.features, cfg.seed);
    let mut params = prob.init_params();
    let mut velocity: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape(), p.dtype())).collect();
    let mut scaler = LossScaler::new(&cfg.mp);
    let objective = |tape: &mut Tape, p: &[lanekit_core::Var]| prob.loss(tape, p).map(|l| (l, ()));
    let mut skipped = 0;
    let start = Instant::now();
    for _ in 0..cfg.steps {
        match mode {
            Mode::Fp32 => {
                let g = gradients(&params, DType::F32, 1.0, objective)?;
                if !g.finite {
                    return Err(lanekit_core::Error::NonFinite { what: "bench loss".into() }.into());
                }
                let refs: Vec<&[f64]> = g.grads.iter().map(Vec::as_slice).collect();
                sgd_step(&mut params, &mut velocity, &refs, cfg.lr, cfg.momentum, cfg.weight_decay)?;
            }
            Mode::Mp => {
                let g = gradients(&params, cfg.mp.compute_dtype, scaler.scale, objective)?;
                let s = apply_mp_update(
                    &mut params,
                    &mut velocity,
                    &mut scaler,
                    &cfg.mp,
                    &g,
                    cfg.lr,
                    cfg.momentum,
                    cfg.weight_decay,
                )?;
                skipped += s as usize;
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    // both modes are scored in full precision
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let loss = prob.loss(&mut tape, &vars)?;
    let final_loss = tape.value(loss).item()?;
    Ok(result(mode, cfg.steps, skipped, seconds, final_loss))
}

fn result(mode: Mode, steps: usize, skipped: usize, seconds: f64, final_loss: f64) -> ModeResult {
    ModeResult {
        mode,
        steps,
        skipped,
        seconds,
        steps_per_sec: if seconds > 0.0 { steps as f64 / seconds } else { f64::INFINITY },
        final_loss,
    }
}

fn model(cfg: &BenchConfig, mode: Mode) -> Result<ModeResult> {
    let grid = &cfg.model.grid;
    let spec = SynthSpec {
        count: cfg.batch_size,
        width: grid.image_width,
        height: grid.image_height,
        h_samples: grid.h_samples.clone(),
        lanes_max: cfg.model.max_lanes.min(SynthSpec::default().lanes_max),
        seed: cfg.seed,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let mut net = Model::build(cfg.model.clone(), cfg.seed)?;
    let imgs: Vec<_> = data.iter().map(|(i, _)| i).collect();
    let recs: Vec<&LaneRecord> = data.iter().map(|(_, r)| r).collect();
    let batch = Batch::new(&net, &imgs, &recs)?;
    let mut tc = TrainConfig::default();
    tc.optim.lr0 = cfg.lr;
    tc.optim.momentum = cfg.momentum;
    tc.optim.weight_decay = cfg.weight_decay;
    tc.mp = MpConfig {
        enabled: mode == Mode::Mp,
        ..cfg.mp.clone()
    };
    let mut state = TrainState::new(net.params(), &tc);
    let (mut skipped, mut last) = (0, f64::NAN);
    let start = Instant::now();
    for _ in 0..cfg.steps {
        let r = match mode {
            Mode::Fp32 => train_step_fp32(&mut net, &batch, &mut state, &tc)?,
            Mode::Mp => {
                let (r, s) = train_step_mp(&mut net, &batch, &mut state, &tc)?;
                skipped += s as usize;
                r
            }
        };
        last = r.total;
    }
    Ok(result(mode, cfg.steps, skipped, start.elapsed().as_secs_f64(), last))
}

/// Run the requested modes in order and compare their final losses.
pub fn run(cfg: &BenchConfig, modes: &[Mode]) -> Result<BenchReport> {
    cfg.mp.validate()?;
    let modes = modes
        .iter()
        .map(|&m| match cfg.workload {
            Workload::Linear => linear(cfg, m),
            Workload::Model => model(cfg, m),
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = |m: Mode| modes.iter().find(|r| r.mode == m).map(|r| r.final_loss);
    let loss_delta_rel = match (loss(Mode::Fp32), loss(Mode::Mp)) {
        (Some(a), Some(b)) => Some((b - a).abs() / a.abs().max(f64::MIN_POSITIVE)),
        _ => None,
    };
    Ok(BenchReport {
        label: LABEL.into(),
        workload: cfg.workload,
        modes,
        loss_delta_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_modes_agree_and_repeat() {
        let cfg = BenchConfig::default();
        let a = run(&cfg, &[Mode::Fp32, Mode::Mp]).unwrap();
        assert_eq!(a.modes.len(), 2);
        let d = a.loss_delta_rel.unwrap();
        assert!(d < 1e-2, "{d}");
        let b = run(&cfg, &[Mode::Fp32, Mode::Mp]).unwrap();
        let losses = |r: &BenchReport| r.modes.iter().map(|m| m.final_loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert!(a.to_text().contains(LABEL));
    }

    #[test]
    fn single_mode_has_no_delta() {
        let cfg = BenchConfig {
            steps: 3,
            ..BenchConfig::default()
        };
        assert_eq!(run(&cfg, &[Mode::Mp]).unwrap().loss_delta_rel, None);
    }
}
