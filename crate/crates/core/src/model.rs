//! The detector: a small convolutional backbone, a shared 1×1 convolution,
//! a row-anchor detection head and a lane-type classification branch.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decode_slice, is_absent, RowAnchorGrid};
use crate::image::RgbImage;
use crate::record::{ClassId, ClassScheme, LaneRecord};
use crate::tape::{BatchNormMode, BatchStats, Tape, Var};
use crate::tensor::{shape_str, DType, Tensor};

/// Running-statistics momentum of batch-norm layers.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Convolution (no bias) followed by batch norm and ReLU.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool { kernel: usize, stride: usize },
}

impl LayerSpec {
    pub fn conv3(out_channels: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool { kernel: 2, stride: 2 }
    }
}

fn strided(out_channels: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel: 3,
        stride: 2,
        padding: 1,
    }
}

fn stages(channels: &[usize]) -> Vec<LayerSpec> {
    channels
        .iter()
        .flat_map(|&c| [LayerSpec::conv3(c), LayerSpec::pool2()])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    /// Grid in original image coordinates.
    pub grid: RowAnchorGrid,
    /// Lane slots M.
    pub max_lanes: usize,
    /// Class grouping; the branch predicts `scheme.num_classes()` classes.
    pub scheme: ClassScheme,
    pub backbone: Vec<LayerSpec>,
    /// Channels of the shared 1×1 convolution.
    pub shared_channels: usize,
    /// Optional hidden width of the detection head.
    pub det_hidden: Option<usize>,
    /// The two dense widths of the classification branch.
    pub branch_hidden: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_width: 256,
            input_height: 128,
            grid: RowAnchorGrid::tusimple(),
            max_lanes: 6,
            scheme: ClassScheme::Two,
            backbone: stages(&[8, 16, 32, 64]),
            shared_channels: 8,
            det_hidden: Some(256),
            branch_hidden: [256, 128],
        }
    }
}

impl ModelConfig {
    /// 64×32 input, 25 cells, 8 anchors over a 640×360 frame, 4 lanes, 2 classes.
    /// The backbone downsamples with strided convolutions to a 4×8 map.
    pub fn tiny() -> Self {
        ModelConfig {
            input_width: 64,
            input_height: 32,
            grid: RowAnchorGrid {
                image_width: 640,
                image_height: 360,
                h_samples: (0..8).map(|i| 180 + 25 * i).collect(),
                cells: 25,
            },
            max_lanes: 4,
            scheme: ClassScheme::Two,
            backbone: vec![LayerSpec::conv3(16), strided(32), strided(64), strided(64)],
            shared_channels: 32,
            det_hidden: None,
            branch_hidden: [256, 128],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.scheme.num_classes()
    }

    /// Detection outputs per image: `M · h · (w + 1)`.
    pub fn det_outputs(&self) -> usize {
        self.max_lanes * self.grid.anchors() * (self.grid.cells + 1)
    }

    /// Validate and return the layer plan.
    pub fn plan(&self) -> Result<Plan> {
        self.grid.validate()?;
        let cfg_err = |m: String| Err(Error::InvalidConfig(m));
        if self.max_lanes < 1 {
            return cfg_err("max_lanes must be at least 1".into());
        }
        if self.input_width == 0 || self.input_height == 0 {
            return cfg_err("input size must be positive".into());
        }
        if self.shared_channels == 0 || self.branch_hidden.contains(&0) || self.det_hidden == Some(0) {
            return cfg_err("layer widths must be positive".into());
        }
        let (mut c, mut h, mut w) = (3usize, self.input_height, self.input_width);
        let mut convs = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return cfg_err(format!("backbone layer {i} (conv): zero-sized parameter"));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return cfg_err(format!(
                            "backbone layer {i} (conv {kernel}x{kernel}): kernel exceeds padded input {}x{}",
                            h + 2 * padding,
                            w + 2 * padding
                        ));
                    }
                    convs.push((c, out_channels, kernel));
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                    c = out_channels;
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    if kernel == 0 || stride == 0 {
                        return cfg_err(format!("backbone layer {i} (max pool): zero-sized parameter"));
                    }
                    if kernel > h || kernel > w {
                        return cfg_err(format!(
                            "backbone layer {i} (max pool {kernel}x{kernel}): input is only {h}x{w}"
                        ));
                    }
                    h = (h - kernel) / stride + 1;
                    w = (w - kernel) / stride + 1;
                }
            }
        }
        Ok(Plan {
            convs,
            backbone_out: [c, h, w],
            features: self.shared_channels * h * w,
        })
    }
}

/// Derived layer dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    /// `(in, out, kernel)` of each backbone convolution.
    pub convs: Vec<(usize, usize, usize)>,
    /// Backbone output `[channels, height, width]`.
    pub backbone_out: [usize; 3],
    /// Flattened shared-conv feature length.
    pub features: usize,
}

/// Running mean and (unbiased) variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(c: usize) -> Self {
        RunningStats {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    fn update(&mut self, s: &BatchStats) {
        let unbias = if s.count > 1 {
            s.count as f64 / (s.count - 1) as f64
        } else {
            1.0
        };
        for i in 0..self.mean.len() {
            let m = (1.0 - BN_MOMENTUM) * self.mean[i] + BN_MOMENTUM * s.mean[i];
            let v = (1.0 - BN_MOMENTUM) * self.var[i] + BN_MOMENTUM * s.var[i] * unbias;
            self.mean[i] = DType::F32.round(m);
            self.var[i] = DType::F32.round(v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[n, M, h, w + 1]`
    pub det: Var,
    /// `[n, M, C]`
    pub cls: Var,
    /// Batch statistics of every batch-norm layer (training mode only).
    pub stats: Vec<BatchStats>,
}

/// Per-image prediction in original image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lanes: Vec<Vec<f64>>,
    pub classes: Vec<ClassId>,
}

impl Prediction {
    pub fn to_record(&self, raw_file: &str, h_samples: &[u32]) -> LaneRecord {
        LaneRecord {
            raw_file: raw_file.into(),
            h_samples: h_samples.to_vec(),
            lanes: self.lanes.clone(),
            classes: Some(self.classes.iter().map(|c| c.as_u8()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    plan: Plan,
    names: Vec<String>,
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect();
    Tensor::new(shape, data, DType::F32).expect("shape and data agree")
}

impl Model {
    /// Build with deterministic initialization from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        let plan = config.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut push = |names: &mut Vec<String>, name: String, t: Tensor| {
            names.push(name);
            params.push(t);
        };
        // He-uniform for layers feeding a ReLU, LeCun-uniform for outputs.
        let relu_bound = |fan_in: usize| libm::sqrt(6.0 / fan_in as f64);
        let out_bound = |fan_in: usize| libm::sqrt(3.0 / fan_in as f64);
        for (i, &(cin, cout, k)) in plan.convs.iter().enumerate() {
            push(&mut names, format!("backbone.{i}.conv.w"), uniform(&mut rng, &[cout, cin, k, k], relu_bound(cin * k * k)));
            push(&mut names, format!("backbone.{i}.bn.gamma"), Tensor::full(&[cout], 1.0, DType::F32));
            push(&mut names, format!("backbone.{i}.bn.beta"), Tensor::zeros(&[cout], DType::F32));
            running.push(RunningStats::new(cout));
        }
        let bc = plan.backbone_out[0];
        let s = config.shared_channels;
        push(&mut names, "shared.w".into(), uniform(&mut rng, &[s, bc, 1, 1], out_bound(bc)));
        push(&mut names, "shared.b".into(), Tensor::zeros(&[s], DType::F32));
        let f = plan.features;
        let det_out = config.det_outputs();
        match config.det_hidden {
            Some(hid) => {
                push(&mut names, "det.fc1.w".into(), uniform(&mut rng, &[hid, f], relu_bound(f)));
                push(&mut names, "det.fc1.b".into(), Tensor::zeros(&[hid], DType::F32));
                push(&mut names, "det.fc2.w".into(), uniform(&mut rng, &[det_out, hid], out_bound(hid)));
                push(&mut names, "det.fc2.b".into(), Tensor::zeros(&[det_out], DType::F32));
            }
            None => {
                push(&mut names, "det.fc.w".into(), uniform(&mut rng, &[det_out, f], out_bound(f)));
                push(&mut names, "det.fc.b".into(), Tensor::zeros(&[det_out], DType::F32));
            }
        }
        let [h1, h2] = config.branch_hidden;
        let cls_out = config.max_lanes * config.num_classes();
        push(&mut names, "cls.fc1.w".into(), uniform(&mut rng, &[h1, f], relu_bound(f)));
        push(&mut names, "cls.fc1.b".into(), Tensor::zeros(&[h1], DType::F32));
        push(&mut names, "cls.bn.gamma".into(), Tensor::full(&[h1], 1.0, DType::F32));
        push(&mut names, "cls.bn.beta".into(), Tensor::zeros(&[h1], DType::F32));
        running.push(RunningStats::new(h1));
        push(&mut names, "cls.fc2.w".into(), uniform(&mut rng, &[h2, h1], relu_bound(h1)));
        push(&mut names, "cls.fc2.b".into(), Tensor::zeros(&[h2], DType::F32));
        push(&mut names, "cls.fc3.w".into(), uniform(&mut rng, &[cls_out, h2], out_bound(h2)));
        push(&mut names, "cls.fc3.b".into(), Tensor::zeros(&[cls_out], DType::F32));
        Ok(Model {
            config,
            plan,
            names,
            params,
            running,
        })
    }

    /// Reassemble a model from stored parameters and statistics.
    pub fn from_parts(config: ModelConfig, params: Vec<Vec<f64>>, running: Vec<RunningStats>) -> Result<Model> {
        let mut m = Model::build(config, 0)?;
        if params.len() != m.params.len() || running.len() != m.running.len() {
            return Err(Error::InvalidValue(format!(
                "expected {} parameter tensors and {} statistics, got {} and {}",
                m.params.len(),
                m.running.len(),
                params.len(),
                running.len()
            )));
        }
        for (i, (t, p)) in m.params.iter_mut().zip(params).enumerate() {
            t.assign(&p)
                .map_err(|_| Error::InvalidValue(format!("parameter {} has the wrong length", m.names[i])))?;
        }
        for (r, s) in m.running.iter_mut().zip(running) {
            if s.mean.len() != r.mean.len() || s.var.len() != r.var.len() {
                return Err(Error::InvalidValue("running statistics have the wrong length".into()));
            }
            *r = s;
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Fold one training step's batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(Error::InvalidValue(format!(
                "{} batch statistics for {} batch-norm layers",
                stats.len(),
                self.running.len()
            )));
        }
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s);
        }
        Ok(())
    }

    /// Put every parameter on the tape in `dtype`; trainable when `grad`.
    pub fn bind(&self, tape: &mut Tape, dtype: DType, grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = p.cast(dtype);
                if grad {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Run the network on `x: [n, 3, H, W]` with parameters bound by [`Model::bind`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, mode: Mode) -> Result<Forward> {
        let cfg = &self.config;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != 3 || xs[2] != cfg.input_height || xs[3] != cfg.input_width {
            return Err(Error::shape(
                "forward",
                format!(
                    "input {} for model expecting [n, 3, {}, {}]",
                    shape_str(&xs),
                    cfg.input_height,
                    cfg.input_width
                ),
            ));
        }
        if params.len() != self.params.len() {
            return Err(Error::InvalidValue("parameter handles do not match the model".into()));
        }
        let n = xs[0];
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter count checked");
        let mut stats = Vec::new();
        let mut bn_index = 0;
        let mut bn = |tape: &mut Tape, h: Var, g: Var, b: Var, stats: &mut Vec<BatchStats>| -> Result<Var> {
            let r = &self.running[bn_index];
            bn_index += 1;
            let m = match mode {
                Mode::Train => BatchNormMode::Train,
                Mode::Eval => BatchNormMode::Eval {
                    mean: &r.mean,
                    var: &r.var,
                },
            };
            let (y, s) = tape.batch_norm(h, g, b, m)?;
            stats.extend(s);
            Ok(y)
        };
        let mut h = x;
        for l in &cfg.backbone {
            h = match *l {
                LayerSpec::Conv { stride, padding, .. } => {
                    let w = next();
                    let (g, b) = (next(), next());
                    let c = tape.conv2d(h, w, None, stride, padding)?;
                    let y = bn(tape, c, g, b, &mut stats)?;
                    tape.relu(y)
                }
                LayerSpec::MaxPool { kernel, stride } => tape.max_pool2d(h, kernel, stride)?,
            };
        }
        let (sw, sb) = (next(), next());
        let shared = tape.conv2d(h, sw, Some(sb), 1, 0)?;
        let feat = tape.flatten(shared)?;
        let det = match cfg.det_hidden {
            Some(_) => {
                let (w1, b1, w2, b2) = (next(), next(), next(), next());
                let a = tape.dense(feat, w1, Some(b1))?;
                let a = tape.relu(a);
                tape.dense(a, w2, Some(b2))?
            }
            None => {
                let (w, b) = (next(), next());
                tape.dense(feat, w, Some(b))?
            }
        };
        let det = tape.reshape(det, &[n, cfg.max_lanes, cfg.grid.anchors(), cfg.grid.cells + 1])?;
        let (w1, b1, g, be, w2, b2, w3, b3) = (next(), next(), next(), next(), next(), next(), next(), next());
        let c = tape.dense(feat, w1, Some(b1))?;
        let c = bn(tape, c, g, be, &mut stats)?;
        let c = tape.relu(c);
        let c = tape.dense(c, w2, Some(b2))?;
        let c = tape.relu(c);
        let c = tape.dense(c, w3, Some(b3))?;
        let cls = tape.reshape(c, &[n, cfg.max_lanes, cfg.num_classes()])?;
        Ok(Forward { det, cls, stats })
    }

    /// Eval-mode logits `(det, cls)` in `dtype`.
    pub fn infer_logits(&self, images: &Tensor, dtype: DType) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, dtype, false);
        let x = tape.constant(images.cast(dtype));
        let f = self.forward(&mut tape, &params, x, Mode::Eval)?;
        Ok((tape.value(f.det).clone(), tape.value(f.cls).clone()))
    }

    /// Decode lanes and classes for a batch of prepared images.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<Prediction>> {
        let (det, cls) = self.infer_logits(images, DType::F32)?;
        predict_from_logits(&det, &cls, &self.config.grid, self.config.scheme)
    }

    /// Resize images to the network input, `[n, 3, H, W]` in `[0, 1]`.
    pub fn prepare(&self, images: &[&RgbImage]) -> Tensor {
        prepare_images(images, self.config.input_width, self.config.input_height)
    }
}

pub fn prepare_images(images: &[&RgbImage], width: usize, height: usize) -> Tensor {
    let mut data = Vec::with_capacity(images.len() * 3 * width * height);
    for img in images {
        data.extend(img.to_planar(width, height));
    }
    Tensor::new(&[images.len(), 3, height, width], data, DType::F32).expect("planar size")
}

/// Turn logits into per-image lanes and classes.
///
/// Lane slots whose anchors all decode to background are omitted together
/// with their class. Classes are reported as the scheme's representative
/// base class.
pub fn predict_from_logits(
    det: &Tensor,
    cls: &Tensor,
    grid: &RowAnchorGrid,
    scheme: ClassScheme,
) -> Result<Vec<Prediction>> {
    let ds = det.shape();
    let cs = cls.shape();
    let c = scheme.num_classes();
    let (h, k) = (grid.anchors(), grid.cells + 1);
    if ds.len() != 4 || ds[2] != h || ds[3] != k || cs.len() != 3 || cs[0] != ds[0] || cs[1] != ds[1] || cs[2] != c {
        return Err(Error::shape(
            "predict",
            format!(
                "det {} and cls {} for grid [n, M, {h}, {k}] with {c} classes",
                shape_str(ds),
                shape_str(cs)
            ),
        ));
    }
    let (n, m) = (ds[0], ds[1]);
    let per = m * h * k;
    Ok((0..n)
        .map(|i| {
            let lanes = decode_slice(&det.data()[i * per..(i + 1) * per], m, grid);
            let mut out = Prediction {
                lanes: Vec::new(),
                classes: Vec::new(),
            };
            for (slot, lane) in lanes.into_iter().enumerate() {
                if lane.iter().all(|&x| is_absent(x)) {
                    continue;
                }
                let row = &cls.data()[(i * m + slot) * c..(i * m + slot + 1) * c];
                let mut arg = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                out.lanes.push(lane);
                out.classes.push(scheme.representative(arg).expect("index below class count"));
            }
            out
        })
        .collect())
}
