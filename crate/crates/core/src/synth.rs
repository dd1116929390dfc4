//! Synthetic road scenes with exact lane ground truth.
//!
//! Lanes are straight-in-perspective lines converging to a vanishing point,
//! bent by a shared quadratic term that vanishes at the bottom edge:
//!
//! `x(t) = vp + (bottom - vp) * t + bend * (1 - t)^2`, with
//! `t = (y - horizon) / (height - 1 - horizon)`.
//!
//! Records are the analytic `x` at each anchor row, so they are exact by
//! construction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ABSENT;
use crate::image::RgbImage;
use crate::record::{ClassId, LaneRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    /// Anchor rows of the generated records.
    pub h_samples: Vec<u32>,
    pub lanes_min: usize,
    pub lanes_max: usize,
    /// Largest |bend| in pixels at the horizon.
    pub max_bend: f64,
    /// Relative weights of the seven base classes.
    pub class_weights: [f64; 7],
    /// Per-pixel noise amplitude in grey levels.
    pub noise: f64,
    /// Horizon row as a fraction of the height.
    pub horizon: f64,
    /// Half-width of a plain stripe at the bottom row, as a fraction of the
    /// image width.
    pub stripe_width: f64,
    /// Dash period in perspective depth `1/t` (dots use 0.4 of it).
    pub dash_period: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            count: 200,
            width: 640,
            height: 360,
            h_samples: (0..8).map(|i| 180 + 25 * i).collect(),
            lanes_min: 2,
            lanes_max: 4,
            max_bend: 60.0,
            class_weights: [1.0; 7],
            noise: 8.0,
            horizon: 0.45,
            stripe_width: 0.0125,
            dash_period: 0.55,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if self.lanes_min > self.lanes_max {
            return bad("lanes_min exceeds lanes_max");
        }
        if self.h_samples.is_empty() || self.h_samples.windows(2).any(|w| w[0] >= w[1]) {
            return bad("h_samples must be non-empty and strictly increasing");
        }
        if *self.h_samples.last().unwrap() >= self.height {
            return bad("h_samples must lie inside the image");
        }
        if !(0.0..0.9).contains(&self.horizon) {
            return bad("horizon must lie in [0, 0.9)");
        }
        if (self.h_samples[0] as f64) <= self.horizon_y() {
            return bad("h_samples must lie below the horizon");
        }
        let total: f64 = self.class_weights.iter().sum();
        if self.class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return bad("class weights must be non-negative with a positive sum");
        }
        if !(self.stripe_width > 0.0 && self.stripe_width < 0.1) {
            return bad("stripe_width must lie in (0, 0.1)");
        }
        if !(self.dash_period > 0.0 && self.dash_period.is_finite()) {
            return bad("dash_period must be positive");
        }
        if !self.max_bend.is_finite() || self.max_bend < 0.0 || !self.noise.is_finite() || self.noise < 0.0 {
            return bad("max_bend and noise must be finite and non-negative");
        }
        Ok(())
    }

    fn horizon_y(&self) -> f64 {
        self.horizon * self.height as f64
    }

    /// Normalized class distribution.
    pub fn class_probabilities(&self) -> [f64; 7] {
        let total: f64 = self.class_weights.iter().sum();
        let mut p = self.class_weights;
        for v in &mut p {
            *v /= total;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkStyle {
    Solid,
    Dashed,
    Dots,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marking {
    pub style: MarkStyle,
    pub double: bool,
    pub color: [u8; 3],
    /// Stripe width relative to a plain marking.
    pub width_scale: f64,
}

const WHITE: [u8; 3] = [235, 235, 230];
const YELLOW: [u8; 3] = [225, 185, 40];
const EDGE: [u8; 3] = [165, 160, 150];

impl Marking {
    pub fn for_class(c: ClassId) -> Marking {
        let m = |style, double, color, width_scale| Marking {
            style,
            double,
            color,
            width_scale,
        };
        match c {
            ClassId::SolidYellow => m(MarkStyle::Solid, false, YELLOW, 1.0),
            ClassId::SolidWhite => m(MarkStyle::Solid, false, WHITE, 1.0),
            ClassId::Dashed => m(MarkStyle::Dashed, false, WHITE, 1.0),
            ClassId::DoubleDashed => m(MarkStyle::Dashed, true, WHITE, 0.7),
            ClassId::BottsDots => m(MarkStyle::Dots, false, WHITE, 1.2),
            ClassId::DoubleYellow => m(MarkStyle::Solid, true, YELLOW, 0.7),
            ClassId::RoadEdgeUnknown => m(MarkStyle::Solid, false, EDGE, 1.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLane {
    /// x where the lane meets the bottom row (may lie outside the image).
    pub bottom_x: f64,
    pub class: ClassId,
}

/// One image's drawable content.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub horizon_y: f64,
    pub vanishing_x: f64,
    pub bend: f64,
    /// Dash phase in `[0, 1)`.
    pub phase: f64,
    pub lanes: Vec<SceneLane>,
    /// Road brightness and per-pixel noise amplitude.
    pub road_level: f64,
    pub noise: f64,
    pub stripe_width: f64,
    pub dash_period: f64,
}

impl Scene {
    fn t_of(&self, y: f64) -> f64 {
        (y - self.horizon_y) / (self.height as f64 - 1.0 - self.horizon_y)
    }

    /// Lane center at row `y` (meaningful below the horizon).
    pub fn lane_x(&self, lane: &SceneLane, y: f64) -> f64 {
        let t = self.t_of(y);
        let s = 1.0 - t;
        self.vanishing_x + (lane.bottom_x - self.vanishing_x) * t + self.bend * s * s
    }

    /// Analytic record at `h_samples`; lanes with no in-image point are
    /// dropped.
    pub fn record(&self, raw_file: &str, h_samples: &[u32]) -> LaneRecord {
        let mut lanes = Vec::new();
        let mut classes = Vec::new();
        for lane in &self.lanes {
            let xs: Vec<f64> = h_samples
                .iter()
                .map(|&y| {
                    let x = self.lane_x(lane, y as f64);
                    if (y as f64) > self.horizon_y && (0.0..self.width as f64).contains(&x) {
                        x
                    } else {
                        ABSENT
                    }
                })
                .collect();
            if xs.iter().any(|&x| x != ABSENT) {
                lanes.push(xs);
                classes.push(lane.class.as_u8());
            }
        }
        LaneRecord {
            raw_file: raw_file.into(),
            h_samples: h_samples.to_vec(),
            lanes,
            classes: Some(classes),
        }
    }

    /// Rasterize; `rng` drives only the per-pixel noise.
    pub fn render(&self, rng: &mut impl Rng) -> RgbImage {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut buf = vec![0.0f64; w * h * 3];
        let road = self.road_level;
        for y in 0..h {
            let yf = y as f64;
            let base = if yf <= self.horizon_y {
                [150.0, 175.0, 205.0]
            } else {
                let t = self.t_of(yf);
                let v = road * (0.85 + 0.15 * t);
                [v, v, v * 1.02]
            };
            for x in 0..w {
                buf[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&base);
            }
        }
        let base_half = self.stripe_width * self.width as f64;
        for lane in &self.lanes {
            let mk = Marking::for_class(lane.class);
            let y0 = (libm::floor(self.horizon_y) as usize + 1).min(h);
            for y in y0..h {
                let yf = y as f64;
                let t = self.t_of(yf);
                if t <= 0.0 || !self.marking_on(mk.style, t) {
                    continue;
                }
                let xc = self.lane_x(lane, yf);
                let half = (base_half * mk.width_scale * t).max(0.35);
                let centers: &[f64] = if mk.double { &[-1.4, 1.4] } else { &[0.0] };
                for &off in centers {
                    let c = xc + off * half;
                    let (lo, hi) = (c - half, c + half);
                    let x_start = libm::floor(lo - 0.5).max(0.0) as usize;
                    let x_end = (libm::ceil(hi + 0.5).max(0.0) as usize).min(w);
                    for x in x_start..x_end {
                        let xf = x as f64;
                        let cov = ((xf + 0.5).min(hi) - (xf - 0.5).max(lo)).clamp(0.0, 1.0);
                        if cov > 0.0 {
                            let px = &mut buf[(y * w + x) * 3..(y * w + x) * 3 + 3];
                            for k in 0..3 {
                                px[k] += cov * (mk.color[k] as f64 - px[k]);
                            }
                        }
                    }
                }
            }
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for v in buf {
            let n = if self.noise > 0.0 {
                (rng.random::<f64>() * 2.0 - 1.0) * self.noise
            } else {
                0.0
            };
            data.push(libm::round(v + n).clamp(0.0, 255.0) as u8);
        }
        RgbImage::from_raw(self.width, self.height, data).expect("buffer sized from scene")
    }

    /// Dash and dot patterns in perspective depth `1/t`.
    fn marking_on(&self, style: MarkStyle, t: f64) -> bool {
        let (period, duty) = match style {
            MarkStyle::Solid => return true,
            MarkStyle::Dashed => (self.dash_period, 0.5),
            MarkStyle::Dots => (0.4 * self.dash_period, 0.3),
        };
        let u = 1.0 / t / period + self.phase;
        u - libm::floor(u) < duty
    }
}

/// Draw a random scene.
pub fn sample_scene(spec: &SynthSpec, rng: &mut impl Rng) -> Scene {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n = if spec.lanes_max == spec.lanes_min {
        spec.lanes_min
    } else {
        rng.random_range(spec.lanes_min..=spec.lanes_max)
    };
    let spacing = w * (0.42 + 0.12 * rng.random::<f64>());
    let center = w / 2.0 + (rng.random::<f64>() - 0.5) * 0.5 * spacing;
    let vanishing_x = w / 2.0 + (rng.random::<f64>() - 0.5) * 0.15 * w;
    let bend = (rng.random::<f64>() * 2.0 - 1.0) * spec.max_bend;
    let phase = rng.random::<f64>();
    let road_level = 70.0 + 40.0 * rng.random::<f64>();
    let probs = spec.class_probabilities();
    let lanes = (0..n)
        .map(|k| {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut class = ClassId::RoadEdgeUnknown;
            for (c, p) in ClassId::ALL.iter().zip(probs) {
                acc += p;
                if u < acc && p > 0.0 {
                    class = *c;
                    break;
                }
            }
            if acc < 1.0 && u >= acc {
                // rounding left a sliver above the cumulative sum
                class = *ClassId::ALL.iter().zip(probs).rev().find(|(_, p)| *p > 0.0).unwrap().0;
            }
            SceneLane {
                bottom_x: center + (k as f64 - (n as f64 - 1.0) / 2.0) * spacing,
                class,
            }
        })
        .collect();
    Scene {
        width: spec.width,
        height: spec.height,
        horizon_y: spec.horizon * h,
        vanishing_x,
        bend,
        phase,
        lanes,
        road_level,
        noise: spec.noise,
        stripe_width: spec.stripe_width,
        dash_period: spec.dash_period,
    }
}

/// Generate image `index` of the dataset described by `spec`.
pub fn generate_one(spec: &SynthSpec, index: usize) -> (RgbImage, LaneRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let scene = sample_scene(spec, &mut rng);
    let image = scene.render(&mut rng);
    let record = scene.record(&format!("images/{index:05}.ppm"), &spec.h_samples);
    (image, record)
}

/// Generate the whole dataset.
pub fn generate(spec: &SynthSpec) -> Result<Vec<(RgbImage, LaneRecord)>> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| generate_one(spec, i)).collect())
}
