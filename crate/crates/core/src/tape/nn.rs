//! Layer primitives: dense, convolution, pooling and batch normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{accumulate, Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::shape_str;

pub const BN_EPS: f64 = 1e-5;

/// How a batch-norm node normalizes its input.
#[derive(Debug, Clone)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running mean and variance.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub(super) struct BatchNormSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    spatial: usize,
    train: bool,
}

/// Per-channel batch statistics returned by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

impl Tape {
    /// `y = x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(
                "dense",
                format!("input {} vs weight {}", shape_str(&xs), shape_str(&ws)),
            ));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape(
                    "dense",
                    format!("bias {} for {fout} outputs", shape_str(self.shape(b))),
                ));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; n * fout];
        for r in 0..n {
            let xr = &xd[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let wr = &wd[o * fin..(o + 1) * fin];
                out[r * fout + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                for (v, bb) in row.iter_mut().zip(bd) {
                    *v += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let dt = self.out_dtype(&inputs);
        Ok(self.record(&[n, fout], out, dt, &inputs, Op::Dense { x, w, b }))
    }

    /// 2-D cross-correlation, `x: [n, c, h, w]`, `w: [o, c, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!("input {} vs kernel {}", shape_str(&xs), shape_str(&ws)),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d stride must be positive".into()));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
        if k > ph || k > pw {
            return Err(Error::KernelTooLarge {
                kernel: k,
                padded: ph.min(pw),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {} for {o} channels", shape_str(self.shape(b))),
                ));
            }
        }
        let ho = (ph - k) / stride + 1;
        let wo = (pw - k) / stride + 1;
        let geo = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            k,
            ho,
            wo,
            stride,
            pad,
        };
        let mut out = vec![0.0; n * o * ho * wo];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        geo.for_each_tap(|xbase, wi, ybase, lo, hi| {
            let wv = wdat[wi];
            for ox in lo..hi {
                out[ybase + ox] += wv * xd[xbase.wrapping_add(ox * stride)];
            }
        });
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (i, plane) in out.chunks_mut(ho * wo).enumerate() {
                let bv = bd[i % o];
                for v in plane {
                    *v += bv;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let dt = self.out_dtype(&inputs);
        Ok(self.record(
            &[n, o, ho, wo],
            out,
            dt,
            &inputs,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Max pooling without padding over `[n, c, h, w]`.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("max_pool2d", format!("input {}", shape_str(&xs))));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidConfig("max_pool2d kernel and stride must be positive".into()));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if kernel > h || kernel > w {
            return Err(Error::KernelTooLarge {
                kernel,
                padded: h.min(w),
            });
        }
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let dt = self.dtype(x);
        Ok(self.record(&[n, c, ho, wo], out, dt, &[x], Op::MaxPool2d { x, argmax }))
    }

    /// Per-channel batch normalization over axis 1 of `[n, c, ...]`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batch_norm", format!("input {}", shape_str(&xs))));
        }
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "{c} channels vs gamma {} / beta {}",
                    shape_str(self.shape(gamma)),
                    shape_str(self.shape(beta))
                ),
            ));
        }
        let count = n * spatial;
        if count == 0 {
            return Err(Error::EmptyAxis { op: "batch_norm", axis: 0 });
        }
        let xd = self.value(x).data();
        let idx = |b: usize, ch: usize, s: usize| (b * c + ch) * spatial + s;

        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        for p in 0..spatial {
                            s += xd[idx(b, ch, p)];
                        }
                    }
                    let m = s / count as f64;
                    let mut v = 0.0;
                    for b in 0..n {
                        for p in 0..spatial {
                            let d = xd[idx(b, ch, p)] - m;
                            v += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / count as f64;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats of length {} for {c} channels", mean.len()),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..spatial {
                    let i = idx(b, ch, p);
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let dt = self.out_dtype(&[x, gamma, beta]);
        let train = stats.is_some();
        let v = self.record(
            &xs,
            out,
            dt,
            &[x, gamma, beta],
            Op::BatchNorm(BatchNormSaved {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels: c,
                spatial,
                train,
            }),
        );
        Ok((v, stats))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Visit every (output row, kernel tap) pair.
    ///
    /// The callback gets `(xbase, wi, ybase, lo, hi)`: for `ox` in `lo..hi`
    /// the input element is `xbase.wrapping_add(ox * stride)` and the output
    /// element is `ybase + ox`. `xbase` may wrap below zero when the tap sits
    /// in the left padding; every in-range `ox` brings it back into bounds.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let ConvGeom {
            n,
            c,
            h,
            w,
            o,
            k,
            ho,
            wo,
            stride,
            pad,
        } = *self;
        for b in 0..n {
            for oc in 0..o {
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = ((oc * c + ic) * k + ky) * k + kx;
                            // ix = ox * stride + kx - pad must lie in [0, w)
                            let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
                            let hi = if w + pad > kx {
                                ((w + pad - kx - 1) / stride + 1).min(wo)
                            } else {
                                0
                            };
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let row = ((b * c + ic) * h + (iy - pad)) * w;
                                let xbase = (row + kx).wrapping_sub(pad);
                                let ybase = ((b * o + oc) * ho + oy) * wo;
                                f(xbase, wi, ybase, lo, hi);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn dense_backward(
    nodes: &[Node],
    _node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    x: Var,
    w: Var,
    b: Option<Var>,
) {
    let xs = nodes[x.0].value.shape();
    let (n, fin) = (xs[0], xs[1]);
    let fout = nodes[w.0].value.shape()[0];
    let xd = nodes[x.0].value.data();
    let wd = nodes[w.0].value.data();
    if nodes[x.0].requires_grad {
        let mut gx = vec![0.0; n * fin];
        for r in 0..n {
            let gxr = &mut gx[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let gv = g[r * fout + o];
                if gv == 0.0 {
                    continue;
                }
                for (a, wv) in gxr.iter_mut().zip(&wd[o * fin..(o + 1) * fin]) {
                    *a += gv * wv;
                }
            }
        }
        accumulate(nodes, grads, x, gx);
    }
    if nodes[w.0].requires_grad {
        let mut gw = vec![0.0; fout * fin];
        for r in 0..n {
            let xr = &xd[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let gv = g[r * fout + o];
                if gv == 0.0 {
                    continue;
                }
                for (a, xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                    *a += gv * xv;
                }
            }
        }
        accumulate(nodes, grads, w, gw);
    }
    if let Some(b) = b {
        if nodes[b.0].requires_grad {
            let mut gb = vec![0.0; fout];
            for row in g.chunks(fout) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            accumulate(nodes, grads, b, gb);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward(
    nodes: &[Node],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
) {
    let xs = nodes[x.0].value.shape();
    let ws = nodes[w.0].value.shape();
    let geo = ConvGeom {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        o: ws[0],
        k: ws[2],
        ho: out_shape[2],
        wo: out_shape[3],
        stride,
        pad,
    };
    let xd = nodes[x.0].value.data();
    let wd = nodes[w.0].value.data();
    if nodes[x.0].requires_grad {
        let mut gx = vec![0.0; xd.len()];
        geo.for_each_tap(|xbase, wi, ybase, lo, hi| {
            let wv = wd[wi];
            for ox in lo..hi {
                gx[xbase.wrapping_add(ox * stride)] += wv * g[ybase + ox];
            }
        });
        accumulate(nodes, grads, x, gx);
    }
    if nodes[w.0].requires_grad {
        let mut gw = vec![0.0; wd.len()];
        geo.for_each_tap(|xbase, wi, ybase, lo, hi| {
            let mut s = 0.0;
            for ox in lo..hi {
                s += xd[xbase.wrapping_add(ox * stride)] * g[ybase + ox];
            }
            gw[wi] += s;
        });
        accumulate(nodes, grads, w, gw);
    }
    if let Some(b) = b {
        if nodes[b.0].requires_grad {
            let o = geo.o;
            let plane = geo.ho * geo.wo;
            let mut gb = vec![0.0; o];
            for (i, chunk) in g.chunks(plane).enumerate() {
                gb[i % o] += chunk.iter().sum::<f64>();
            }
            accumulate(nodes, grads, b, gb);
        }
    }
}

pub(super) fn batch_norm_backward(
    nodes: &[Node],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    s: &BatchNormSaved,
) {
    let c = s.channels;
    let spatial = s.spatial;
    let n = s.xhat.len() / (c * spatial);
    let count = (n * spatial) as f64;
    let idx = |b: usize, ch: usize, p: usize| (b * c + ch) * spatial + p;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..spatial {
                let i = idx(b, ch, p);
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * s.xhat[i];
            }
        }
    }
    if nodes[s.x.0].requires_grad {
        let gamma = nodes[s.gamma.0].value.data();
        let mut gx = vec![0.0; g.len()];
        for b in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * s.inv_std[ch];
                for p in 0..spatial {
                    let i = idx(b, ch, p);
                    gx[i] = if s.train {
                        k * (g[i] - sum_g[ch] / count - s.xhat[i] * sum_gx[ch] / count)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        accumulate(nodes, grads, s.x, gx);
    }
    accumulate(nodes, grads, s.gamma, sum_gx);
    accumulate(nodes, grads, s.beta, sum_g);
}
