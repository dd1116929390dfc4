use lanekit_core::augment::AugmentParams;
use lanekit_core::model::{Model, ModelConfig};
use lanekit_core::optim::OptimConfig;
use lanekit_core::synth::{generate, SynthSpec};
use lanekit_core::train::{
    fit, gradients, train_step_fp32, train_step_mp_scaled, Batch, EpochRecord, FitObserver, LinearProblem, MpConfig,
    NoObserver, Sample, TrainConfig, TrainState,
};
use lanekit_core::{losses, model, DType, Error, LaneRecord, Tensor};

fn samples(count: usize, seed: u64) -> Vec<Sample> {
    let g = ModelConfig::tiny().grid;
    let spec = SynthSpec {
        count,
        seed,
        width: g.image_width,
        height: g.image_height,
        h_samples: g.h_samples,
        lanes_max: 4,
        ..SynthSpec::default()
    };
    generate(&spec)
        .unwrap()
        .into_iter()
        .map(|(image, record)| Sample { image, record })
        .collect()
}

fn batch(m: &Model, s: &[Sample]) -> Batch {
    let imgs: Vec<_> = s.iter().map(|s| &s.image).collect();
    let recs: Vec<&LaneRecord> = s.iter().map(|s| &s.record).collect();
    Batch::new(m, &imgs, &recs).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[test]
fn mixed_precision_linear_gradients_track_full_precision() {
    for seed in 0..5 {
        let p = LinearProblem::random(64, 8, seed);
        let w = p.init_params();
        let f = |tape: &mut _, v: &[_]| p.loss(tape, v).map(|l| (l, ()));
        let full = gradients(&w, DType::F32, 1.0, f).unwrap();
        let half = gradients(&w, DType::F16E, 1024.0, f).unwrap();
        assert!(half.finite);
        for (a, b) in half.grads.iter().zip(&full.grads) {
            assert!(rel_err(a, b) < 1e-2, "seed {seed}: {}", rel_err(a, b));
        }
    }
}

#[test]
fn unrounded_scaled_gradients_agree_exactly() {
    let p = LinearProblem::random(64, 8, 3);
    let w: Vec<Tensor> = p.init_params().iter().map(|t| t.cast(DType::F64)).collect();
    let f = |tape: &mut _, v: &[_]| p.loss(tape, v).map(|l| (l, ()));
    let plain = gradients(&w, DType::F64, 1.0, f).unwrap();
    let scaled = gradients(&w, DType::F64, 1024.0, f).unwrap();
    for (a, b) in scaled.grads.iter().zip(&plain.grads) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn overflowing_step_is_skipped() {
    let data = samples(2, 1);
    let mut m = Model::build(ModelConfig::tiny(), 0).unwrap();
    let b = batch(&m, &data);
    let cfg = TrainConfig {
        mp: MpConfig {
            enabled: true,
            ..MpConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(m.params(), &cfg);
    // one clean step first so the velocity is nonzero
    let (_, skipped) = train_step_mp_scaled(&mut m, &b, &mut state, &cfg, 1.0).unwrap();
    assert!(!skipped);
    let (params, velocity, running) = (m.params().to_vec(), state.velocity.clone(), m.running_stats().to_vec());
    let scale = state.scaler.scale;
    let (_, skipped) = train_step_mp_scaled(&mut m, &b, &mut state, &cfg, 1e30).unwrap();
    assert!(skipped);
    assert_eq!(state.scaler.scale, scale * 0.5);
    assert_eq!(state.scaler.clean_steps, 0);
    for (a, b) in m.params().iter().zip(&params) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(state.velocity, velocity);
    assert_eq!(m.running_stats(), &running[..]);
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        optim: OptimConfig {
            epochs,
            batch_size: 4,
            lr0: 0.006,
            ..OptimConfig::default()
        },
        augment: Some(AugmentParams::default()),
        ..TrainConfig::default()
    }
}

#[test]
fn fit_counts_steps_and_validates_each_epoch() {
    let data = samples(9, 2);
    let (train, val) = data.split_at(8);
    let mut m = Model::build(ModelConfig::tiny(), 0).unwrap();
    let cfg = small_config(1);
    let mut state = TrainState::new(m.params(), &cfg);
    let h = fit::<Error>(&mut m, &mut state, train, val, &cfg, &mut NoObserver).unwrap();
    assert_eq!(h.steps.len(), 2);
    assert_eq!(h.epochs.len(), 1);
    assert_eq!(h.epochs[0].steps, 2);
    assert!(h.epochs[0].val_detection.is_some());
    assert_eq!((state.epoch, state.step), (1, 2));
}

struct Snapshot {
    at: usize,
    saved: Option<(Model, TrainState)>,
}

impl FitObserver<Error> for Snapshot {
    fn on_epoch(&mut self, e: &EpochRecord, m: &Model, s: &TrainState, _: bool) -> lanekit_core::Result<()> {
        if e.epoch == self.at {
            self.saved = Some((m.clone(), s.clone()));
        }
        Ok(())
    }
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let data = samples(9, 4);
    let (train, val) = data.split_at(8);
    let cfg = small_config(3);
    let run = |obs: &mut dyn FitObserver<Error>| {
        let mut m = Model::build(ModelConfig::tiny(), 7).unwrap();
        let mut s = TrainState::new(m.params(), &cfg);
        let h = fit::<Error>(&mut m, &mut s, train, val, &cfg, obs).unwrap();
        (m, s, h)
    };
    let mut snap = Snapshot { at: 0, saved: None };
    let (full, full_state, full_hist) = run(&mut snap);
    let (again, _, again_hist) = run(&mut NoObserver);
    assert_eq!(full.params(), again.params());
    assert_eq!(full_hist, again_hist);

    let (mut m, mut s) = snap.saved.unwrap();
    assert_eq!(s.epoch, 1);
    let h = fit::<Error>(&mut m, &mut s, train, val, &cfg, &mut NoObserver).unwrap();
    assert_eq!(m.params(), full.params());
    assert_eq!(m.running_stats(), full.running_stats());
    assert_eq!(s, full_state);
    assert_eq!(h.epochs[..], full_hist.epochs[1..]);
}

#[test]
fn every_parameter_receives_gradient() {
    let data = samples(4, 5);
    for seed in 0..5 {
        let m = Model::build(ModelConfig::tiny(), seed).unwrap();
        let b = batch(&m, &data);
        let g = gradients(m.params(), DType::F32, 1.0, |tape, p| {
            let x = tape.constant(b.images.clone());
            let f = m.forward(tape, p, x, model::Mode::Train)?;
            let t = losses::compute(tape, f.det, f.cls, &b.targets, &Default::default())?;
            Ok((t.total, ()))
        })
        .unwrap();
        for (name, grad) in m.param_names().iter().zip(&g.grads) {
            assert!(grad.iter().any(|v| *v != 0.0), "seed {seed}: {name} has zero gradient");
        }
    }
}

#[test]
fn overfits_a_small_batch() {
    let data = samples(10, 6);
    let mut m = Model::build(ModelConfig::tiny(), 0).unwrap();
    let b = batch(&m, &data);
    let cfg = small_config(1);
    let mut state = TrainState::new(m.params(), &cfg);
    let first = train_step_fp32(&mut m, &b, &mut state, &cfg).unwrap().total;
    let mut last = first;
    for _ in 1..50 {
        last = train_step_fp32(&mut m, &b, &mut state, &cfg).unwrap().total;
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}
