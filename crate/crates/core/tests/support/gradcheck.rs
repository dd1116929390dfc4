//! Finite-difference checks of every differentiable op and loss in F64.
//!
//! Each check panics on the first failing case.

#![allow(dead_code)]

use lanekit_core::geometry::encode;
use lanekit_core::losses::{self, BatchTargets, LossWeights};
use lanekit_core::tape::BatchNormMode;
use lanekit_core::{DType, GridTarget, RowAnchorGrid, Tape, Tensor, Var, ABSENT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 20;
const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::new(shape, data, DType::F64).unwrap()
}

/// Values with magnitude in [0.1, 1], away from the kinks of relu and abs.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..1.0);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data, DType::F64).unwrap()
}

/// Distinct values on a shuffled lattice, so max pooling has no ties.
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..n).rev() {
        data.swap(i, r.random_range(0..=i));
    }
    Tensor::new(shape, data, DType::F64).unwrap()
}

/// Compare analytic and central-difference gradients of
/// `sum(f(inputs) * weights)` with respect to every input.
fn check<F>(name: &str, case: u64, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let scalar = |ins: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|x| t.param(x.clone())).collect();
        let out = f(&mut t, &vars);
        let n = t.value(out).len();
        let mut wr = rng(0xface ^ n as u64);
        let w = (0..n).map(|_| wr.random_range(-1.0..1.0)).collect();
        let out = t.mul_const(out, w).unwrap();
        let s = t.sum(out);
        (t, vars, s)
    };
    let (t, vars, s) = scalar(inputs);
    let grads = t.backward(s).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let eval = |delta: f64| {
                let mut ins = inputs.to_vec();
                ins[k].map_inplace(|i, v| if i == j { v + delta } else { v });
                let (t, _, s) = scalar(&ins);
                t.value(s).item().unwrap()
            };
            numeric[j] = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / norm_a.max(norm_n).max(1e-8);
        assert!(
            rel < TOL,
            "{name} case {case} input {k}: relative error {rel:e}\nanalytic {analytic:?}\nnumeric {numeric:?}"
        );
    }
}

fn dims(r: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| r.random_range(1..4)).collect()
}

pub fn add_sub_mul() {
    for case in 0..CASES {
        let mut r = rng(case);
        let rank = r.random_range(1..4);
        let s = dims(&mut r, rank);
        let a = random(&mut r, &s, -2.0, 2.0);
        let b = random(&mut r, &s, -2.0, 2.0);
        check("add", case, &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
        check("sub", case, &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
        check("mul", case, &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
        check("mul_self", case, &[a], |t, v| t.mul(v[0], v[0]).unwrap());
    }
}

pub fn scale_and_mul_const() {
    for case in 0..CASES {
        let mut r = rng(100 + case);
        let s = dims(&mut r, 2);
        let a = random(&mut r, &s, -2.0, 2.0);
        let c: f64 = r.random_range(-3.0..3.0);
        let k: Vec<f64> = (0..a.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        check("scale", case, &[a.clone()], |t, v| t.scale(v[0], c));
        check("mul_const", case, &[a], |t, v| t.mul_const(v[0], k.clone()).unwrap());
    }
}

pub fn relu_and_abs() {
    for case in 0..CASES {
        let mut r = rng(200 + case);
        let s = dims(&mut r, 3);
        let a = away_from_zero(&mut r, &s);
        check("relu", case, &[a.clone()], |t, v| t.relu(v[0]));
        check("abs", case, &[a], |t, v| t.abs(v[0]));
    }
}

pub fn reshape_flatten_cast() {
    for case in 0..CASES {
        let mut r = rng(300 + case);
        let s = dims(&mut r, 3);
        let n: usize = s.iter().product();
        let a = random(&mut r, &s, -1.0, 1.0);
        check("reshape", case, &[a.clone()], |t, v| t.reshape(v[0], &[n]).unwrap());
        check("flatten", case, &[a.clone()], |t, v| t.flatten(v[0]).unwrap());
        check("cast", case, &[a], |t, v| t.cast(v[0], DType::F64));
    }
}

pub fn reductions() {
    for case in 0..CASES {
        let mut r = rng(400 + case);
        let s = dims(&mut r, 3);
        let last = s[2];
        let a = random(&mut r, &s, -1.0, 1.0);
        let w: Vec<f64> = (0..last).map(|_| r.random_range(-2.0..2.0)).collect();
        check("sum", case, &[a.clone()], |t, v| t.sum(v[0]));
        check("mean", case, &[a.clone()], |t, v| t.mean(v[0]).unwrap());
        check("weighted_sum_last", case, &[a], |t, v| t.weighted_sum_last(v[0], w.clone()).unwrap());
    }
}

pub fn narrow() {
    for case in 0..CASES {
        let mut r = rng(500 + case);
        let s: Vec<usize> = (0..3).map(|_| r.random_range(2..5)).collect();
        let axis = r.random_range(0..3);
        let start = r.random_range(0..s[axis]);
        let len = r.random_range(1..=s[axis] - start);
        let a = random(&mut r, &s, -1.0, 1.0);
        check("narrow", case, &[a], |t, v| t.narrow(v[0], axis, start, len).unwrap());
    }
}

pub fn softmax_and_cross_entropy() {
    for case in 0..CASES {
        let mut r = rng(600 + case);
        let s: Vec<usize> = (0..3).map(|_| r.random_range(2..5)).collect();
        let axis = r.random_range(0..3);
        let a = random(&mut r, &s, -3.0, 3.0);
        check("softmax", case, &[a.clone()], |t, v| t.softmax(v[0], axis).unwrap());
        let rows = s[0] * s[1];
        let targets: Vec<usize> = (0..rows).map(|_| r.random_range(0..s[2])).collect();
        check("cross_entropy", case, &[a], |t, v| t.cross_entropy(v[0], &targets).unwrap());
    }
}

pub fn dense() {
    for case in 0..CASES {
        let mut r = rng(700 + case);
        let (n, i, o) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
        let x = random(&mut r, &[n, i], -1.0, 1.0);
        let w = random(&mut r, &[o, i], -1.0, 1.0);
        let b = random(&mut r, &[o], -1.0, 1.0);
        check("dense", case, &[x.clone(), w.clone(), b], |t, v| t.dense(v[0], v[1], Some(v[2])).unwrap());
        check("dense_nobias", case, &[x, w], |t, v| t.dense(v[0], v[1], None).unwrap());
    }
}

pub fn conv2d() {
    for case in 0..CASES {
        let mut r = rng(800 + case);
        let (n, ci, co) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let (h, w) = (r.random_range(k..k + 3), r.random_range(k..k + 3));
        let x = random(&mut r, &[n, ci, h, w], -1.0, 1.0);
        let wt = random(&mut r, &[co, ci, k, k], -1.0, 1.0);
        let b = random(&mut r, &[co], -1.0, 1.0);
        check("conv2d", case, &[x.clone(), wt.clone(), b], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()
        });
        check("conv2d_nobias", case, &[x, wt], |t, v| t.conv2d(v[0], v[1], None, stride, pad).unwrap());
    }
}

pub fn max_pool2d() {
    for case in 0..CASES {
        let mut r = rng(900 + case);
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let k = r.random_range(1..4);
        let stride = r.random_range(1..=k);
        let (h, w) = (r.random_range(k..k + 4), r.random_range(k..k + 4));
        let x = distinct(&mut r, &[n, c, h, w]);
        check("max_pool2d", case, &[x], |t, v| t.max_pool2d(v[0], k, stride).unwrap());
    }
}

pub fn batch_norm() {
    for case in 0..CASES {
        let mut r = rng(1000 + case);
        let n = r.random_range(2..4);
        let c = r.random_range(1..4);
        let shape = if case % 2 == 0 {
            vec![n, c]
        } else {
            vec![n, c, r.random_range(1..3), r.random_range(1..3)]
        };
        let x = random(&mut r, &shape, -2.0, 2.0);
        let g = random(&mut r, &[c], 0.5, 1.5);
        let b = random(&mut r, &[c], -1.0, 1.0);
        check("batch_norm_train", case, &[x.clone(), g.clone(), b.clone()], |t, v| {
            t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train).unwrap().0
        });
        let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
        check("batch_norm_eval", case, &[x, g, b], |t, v| {
            t.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var })
                .unwrap()
                .0
        });
    }
}

fn small_grid(r: &mut ChaCha8Rng) -> RowAnchorGrid {
    let h = r.random_range(3..6);
    RowAnchorGrid {
        image_width: 100,
        image_height: 100,
        h_samples: (0..h).map(|i| 10 + 15 * i as u32).collect(),
        cells: r.random_range(3..7),
    }
}

fn random_targets(r: &mut ChaCha8Rng, n: usize, m: usize, g: &RowAnchorGrid) -> Vec<GridTarget> {
    (0..n)
        .map(|_| {
            let lanes: Vec<Vec<f64>> = (0..r.random_range(0..=m))
                .map(|_| {
                    (0..g.anchors())
                        .map(|_| if r.random_bool(0.2) { ABSENT } else { r.random_range(0.0..100.0) })
                        .collect()
                })
                .collect();
            encode(&lanes, g, m).unwrap()
        })
        .collect()
}

fn det_logits(r: &mut ChaCha8Rng, n: usize, m: usize, g: &RowAnchorGrid) -> Tensor {
    random(r, &[n, m, g.anchors(), g.cells + 1], -2.0, 2.0)
}

pub fn loc_loss() {
    for case in 0..CASES {
        let mut r = rng(1100 + case);
        let g = small_grid(&mut r);
        let (n, m) = (r.random_range(1..3), r.random_range(1..3));
        let det = det_logits(&mut r, n, m, &g);
        let targets = random_targets(&mut r, n, m, &g);
        check("loc_loss", case, &[det], |t, v| losses::loc_loss(t, v[0], &targets).unwrap());
    }
}

pub fn sim_loss() {
    for case in 0..CASES {
        let mut r = rng(1200 + case);
        let g = small_grid(&mut r);
        let det = det_logits(&mut r, 2, 2, &g);
        check("sim_loss", case, &[det], |t, v| losses::sim_loss(t, v[0]).unwrap());
    }
}

pub fn shp_loss() {
    for case in 0..CASES {
        let mut r = rng(1300 + case);
        let g = small_grid(&mut r);
        let det = det_logits(&mut r, 2, 2, &g);
        check("expected_location", case, &[det.clone()], |t, v| losses::expected_location(t, v[0]).unwrap());
        check("shp_loss", case, &[det], |t, v| losses::shp_loss(t, v[0]).unwrap());
    }
}

pub fn classification_loss() {
    for case in 0..CASES {
        let mut r = rng(1400 + case);
        let (n, m, c) = (r.random_range(1..3), r.random_range(1..4), r.random_range(2..5));
        let cls = random(&mut r, &[n, m, c], -2.0, 2.0);
        let mut targets: Vec<Option<usize>> =
            (0..n * m).map(|_| r.random_bool(0.7).then(|| r.random_range(0..c))).collect();
        targets[0] = Some(r.random_range(0..c));
        check("classification_loss", case, &[cls], |t, v| losses::classification_loss(t, v[0], &targets).unwrap());
    }
}

pub fn total_loss() {
    for case in 0..CASES {
        let mut r = rng(1500 + case);
        let g = small_grid(&mut r);
        let (n, m, c) = (2, 2, 3);
        let det = det_logits(&mut r, n, m, &g);
        let cls = random(&mut r, &[n, m, c], -2.0, 2.0);
        let targets = BatchTargets {
            grids: random_targets(&mut r, n, m, &g),
            classes: (0..n * m).map(|i| (i % 3 != 2).then_some(i % c)).collect(),
        };
        let w = LossWeights {
            alpha: r.random_range(0.0..2.0),
            lambda: r.random_range(0.0..2.0),
            gamma: 0.6,
        };
        check("total_loss", case, &[det, cls], |t, v| losses::compute(t, v[0], v[1], &targets, &w).unwrap().total);
    }
}

/// Every check, by name.
pub const SUITE: &[(&str, fn())] = &[
    ("add_sub_mul", add_sub_mul),
    ("scale_and_mul_const", scale_and_mul_const),
    ("relu_and_abs", relu_and_abs),
    ("reshape_flatten_cast", reshape_flatten_cast),
    ("reductions", reductions),
    ("narrow", narrow),
    ("softmax_and_cross_entropy", softmax_and_cross_entropy),
    ("dense", dense),
    ("conv2d", conv2d),
    ("max_pool2d", max_pool2d),
    ("batch_norm", batch_norm),
    ("loc_loss", loc_loss),
    ("sim_loss", sim_loss),
    ("shp_loss", shp_loss),
    ("classification_loss", classification_loss),
    ("total_loss", total_loss),
];
