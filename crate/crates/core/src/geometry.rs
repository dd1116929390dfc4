//! Row-anchor geometry: the discretization grid, natural cubic splines for
//! polyline annotations, target encoding, logit decoding and label-consistent
//! affine transforms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::LaneRecord;
use crate::tensor::{shape_str, Tensor};

/// Marker for "no lane at this anchor".
pub const ABSENT: f64 = -2.0;

#[inline]
pub fn is_absent(x: f64) -> bool {
    x == ABSENT
}

/// Image size, row anchors and horizontal gridding of the detector output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowAnchorGrid {
    pub image_width: u32,
    pub image_height: u32,
    /// Anchor rows in pixels, strictly increasing.
    pub h_samples: Vec<u32>,
    /// Number of gridding cells; the background index equals this.
    pub cells: usize,
}

impl RowAnchorGrid {
    pub fn new(image_width: u32, image_height: u32, h_samples: Vec<u32>, cells: usize) -> Result<Self> {
        let g = RowAnchorGrid {
            image_width,
            image_height,
            h_samples,
            cells,
        };
        g.validate()?;
        Ok(g)
    }

    /// 1280×720 with anchors at 160, 170, …, 710 and 100 cells.
    pub fn tusimple() -> Self {
        RowAnchorGrid {
            image_width: 1280,
            image_height: 720,
            h_samples: (0..56).map(|i| 160 + 10 * i).collect(),
            cells: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells < 2 {
            return Err(Error::InvalidConfig(format!("grid needs at least 2 cells, got {}", self.cells)));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidConfig("grid image size must be positive".into()));
        }
        if self.h_samples.is_empty() {
            return Err(Error::InvalidConfig("grid has no row anchors".into()));
        }
        if self.h_samples.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("h_samples must be strictly increasing".into()));
        }
        if *self.h_samples.last().unwrap() >= self.image_height {
            return Err(Error::InvalidConfig(format!(
                "h_samples must lie inside [0, {})",
                self.image_height
            )));
        }
        Ok(())
    }

    pub fn anchors(&self) -> usize {
        self.h_samples.len()
    }

    pub fn background(&self) -> usize {
        self.cells
    }

    pub fn cell_width(&self) -> f64 {
        self.image_width as f64 / self.cells as f64
    }

    /// Grid cell holding `x`; `x == image_width` lands in the last cell.
    pub fn cell_of(&self, x: f64) -> usize {
        let c = libm::floor(x / self.cell_width());
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.cells - 1)
        }
    }
}

/// Ordered annotation points `(x, y)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<(f64, f64)>,
}

impl Polyline {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Polyline { points }
    }

    /// Clamp every point into `[0, width-1] × [0, height-1]`.
    pub fn clamped(points: &[(f64, f64)], width: u32, height: u32) -> Self {
        let (wm, hm) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
        Polyline {
            points: points
                .iter()
                .map(|&(x, y)| (x.clamp(0.0, wm), y.clamp(0.0, hm)))
                .collect(),
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Sort by y and average the x of points sharing a y value.
    pub fn canonical(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        let mut i = 0;
        while i < pts.len() {
            let y = pts[i].1;
            let mut j = i;
            let mut sx = 0.0;
            while j < pts.len() && pts[j].1 - y <= 1e-9 {
                sx += pts[j].0;
                j += 1;
            }
            out.push((sx / (j - i) as f64, y));
            i = j;
        }
        out
    }
}

/// Natural cubic spline `x(y)` through polyline knots.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneCurve {
    ys: Vec<f64>,
    xs: Vec<f64>,
    /// Second derivative at each knot; zero at both ends.
    m: Vec<f64>,
}

impl LaneCurve {
    pub fn domain(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    fn segment(&self, y: f64) -> usize {
        // index i with ys[i] <= y <= ys[i+1]
        let n = self.ys.len();
        match self.ys.binary_search_by(|v| v.total_cmp(&y)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Spline value at `y`, or `None` outside the knot range.
    pub fn eval(&self, y: f64) -> Option<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&y) {
            return None;
        }
        let i = self.segment(y);
        if y == self.ys[i] {
            return Some(self.xs[i]);
        }
        if y == self.ys[i + 1] {
            return Some(self.xs[i + 1]);
        }
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let h = y1 - y0;
        let a = (y1 - y) / h;
        let b = (y - y0) / h;
        Some(
            a * self.xs[i]
                + b * self.xs[i + 1]
                + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0,
        )
    }

    /// Second derivative `d²x/dy²` at `y` (linear between knots).
    pub fn second_derivative(&self, y: f64) -> Option<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&y) {
            return None;
        }
        let i = self.segment(y);
        let t = (y - self.ys[i]) / (self.ys[i + 1] - self.ys[i]);
        Some(self.m[i] * (1.0 - t) + self.m[i + 1] * t)
    }
}

/// Fit a natural cubic spline `x(y)` to a polyline.
///
/// Points are sorted by y and duplicate-y points averaged first; two knots
/// give the straight segment.
pub fn fit_spline(p: &Polyline) -> Result<LaneCurve> {
    let pts = p.canonical();
    if pts.len() < 2 {
        return Err(Error::TooFewPoints { distinct: pts.len() });
    }
    let n = pts.len();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut m = vec![0.0; n];
    if n > 2 {
        // Thomas algorithm on the interior second derivatives.
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for j in 0..k {
            let i = j + 1;
            let h0 = ys[i] - ys[i - 1];
            let h1 = ys[i + 1] - ys[i];
            diag[j] = 2.0 * (h0 + h1);
            upper[j] = h1;
            rhs[j] = 6.0 * ((xs[i + 1] - xs[i]) / h1 - (xs[i] - xs[i - 1]) / h0);
        }
        for j in 1..k {
            let lower = ys[j + 1] - ys[j];
            let f = lower / diag[j - 1];
            diag[j] -= f * upper[j - 1];
            rhs[j] -= f * rhs[j - 1];
        }
        let mut sol = vec![0.0; k];
        sol[k - 1] = rhs[k - 1] / diag[k - 1];
        for j in (0..k - 1).rev() {
            sol[j] = (rhs[j] - upper[j] * sol[j + 1]) / diag[j];
        }
        m[1..n - 1].copy_from_slice(&sol);
    }
    Ok(LaneCurve { ys, xs, m })
}

/// Sample a curve at the grid's anchors.
///
/// Anchors inside the curve's y-range get the spline x clamped to
/// `[0, image_width - 1]`; anchors outside get [`ABSENT`].
pub fn sample_at_anchors(c: &LaneCurve, g: &RowAnchorGrid) -> Vec<f64> {
    let xmax = g.image_width as f64 - 1.0;
    g.h_samples
        .iter()
        .map(|&y| match c.eval(y as f64) {
            Some(x) => x.clamp(0.0, xmax),
            None => ABSENT,
        })
        .collect()
}

/// Per-lane, per-anchor cell indices; `cells` (the background index) marks
/// absence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridTarget {
    lanes: usize,
    anchors: usize,
    cells: Vec<usize>,
}

impl GridTarget {
    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn get(&self, lane: usize, anchor: usize) -> usize {
        self.cells[lane * self.anchors + anchor]
    }

    /// Row-major `[lanes, anchors]` indices.
    pub fn as_slice(&self) -> &[usize] {
        &self.cells
    }
}

/// Encode per-lane x lists into grid cells, padding to `slots` lanes.
pub fn encode(lanes: &[Vec<f64>], g: &RowAnchorGrid, slots: usize) -> Result<GridTarget> {
    if lanes.len() > slots {
        return Err(Error::InvalidValue(format!(
            "{} lanes exceed the {slots} available slots",
            lanes.len()
        )));
    }
    let h = g.anchors();
    let width = g.image_width as f64;
    let mut cells = vec![g.background(); slots * h];
    for (i, lane) in lanes.iter().enumerate() {
        if lane.len() != h {
            return Err(Error::shape(
                "encode",
                format!("lane {i} has {} points for {h} anchors", lane.len()),
            ));
        }
        for (j, &x) in lane.iter().enumerate() {
            if is_absent(x) {
                continue;
            }
            if !(0.0..=width).contains(&x) {
                return Err(Error::InvalidValue(format!(
                    "lane {i} anchor {j}: x = {x} is neither -2 nor inside [0, {width}]"
                )));
            }
            cells[i * h + j] = g.cell_of(x);
        }
    }
    Ok(GridTarget {
        lanes: slots,
        anchors: h,
        cells,
    })
}

/// Decode one image's detection logits `[lanes, anchors, cells + 1]`.
///
/// The argmax over all outputs decides presence; the position is the
/// expected cell index under the softmax over the real cells only.
pub fn decode(det_logits: &Tensor, g: &RowAnchorGrid) -> Result<Vec<Vec<f64>>> {
    let s = det_logits.shape();
    let h = g.anchors();
    let k = g.cells + 1;
    if s.len() != 3 || s[1] != h || s[2] != k {
        return Err(Error::shape(
            "decode",
            format!("logits {} for grid [*, {h}, {k}]", shape_str(s)),
        ));
    }
    Ok(decode_slice(det_logits.data(), s[0], g))
}

pub(crate) fn decode_slice(data: &[f64], lanes: usize, g: &RowAnchorGrid) -> Vec<Vec<f64>> {
    let h = g.anchors();
    let w = g.cells;
    let k = w + 1;
    let cw = g.cell_width();
    let xmax = g.image_width as f64 - 1.0;
    (0..lanes)
        .map(|i| {
            (0..h)
                .map(|j| {
                    let row = &data[(i * h + j) * k..(i * h + j + 1) * k];
                    let mut arg = 0;
                    for (c, &v) in row.iter().enumerate() {
                        if v > row[arg] {
                            arg = c;
                        }
                    }
                    if arg == w {
                        return ABSENT;
                    }
                    let cells = &row[..w];
                    let m = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    let mut e = 0.0;
                    for (c, &v) in cells.iter().enumerate() {
                        let p = libm::exp(v - m);
                        z += p;
                        e += p * c as f64;
                    }
                    ((e / z + 0.5) * cw).clamp(0.0, xmax)
                })
                .collect()
        })
        .collect()
}

/// Linearly resample a lane from one set of anchor rows onto another.
///
/// Rows outside the lane's present extent, or between two samples where one
/// is absent, come out absent.
pub fn resample_lane(xs: &[f64], from: &[u32], to: &[u32]) -> Vec<f64> {
    to.iter()
        .map(|&y| {
            match from.binary_search(&y) {
                Ok(i) => xs[i],
                Err(i) => {
                    if i == 0 || i >= from.len() {
                        return ABSENT;
                    }
                    let (x0, x1) = (xs[i - 1], xs[i]);
                    if is_absent(x0) || is_absent(x1) {
                        return ABSENT;
                    }
                    let (y0, y1) = (from[i - 1] as f64, from[i] as f64);
                    let t = (y as f64 - y0) / (y1 - y0);
                    x0 + (x1 - x0) * t
                }
            }
        })
        .collect()
}

/// 2×3 affine map `(x, y) -> (a x + b y + c, d x + e y + f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    /// Counter-clockwise (in image coordinates, y down) rotation about a point.
    pub fn rotation_about(cx: f64, cy: f64, degrees: f64) -> Self {
        let r = degrees.to_radians();
        let (s, c) = (libm::sin(r), libm::cos(r));
        Affine::translation(-cx, -cy)
            .then(&Affine([c, s, 0.0, -s, c, 0.0]))
            .then(&Affine::translation(cx, cy))
    }

    pub fn scale_about(cx: f64, cy: f64, s: f64) -> Self {
        Affine([s, 0.0, cx * (1.0 - s), 0.0, s, cy * (1.0 - s)])
    }

    /// Mirror `x -> width - 1 - x`.
    pub fn flip_horizontal(width: u32) -> Self {
        Affine([-1.0, 0.0, width as f64 - 1.0, 0.0, 1.0, 0.0])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.0;
        (a * x + b * y + c, d * x + e * y + f)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        let [a, b, c, d, e, f] = self.0;
        let [p, q, r, s, t, u] = next.0;
        Affine([
            p * a + q * d,
            p * b + q * e,
            p * c + q * f + r,
            s * a + t * d,
            s * b + t * e,
            s * c + t * f + u,
        ])
    }

    pub fn det(&self) -> f64 {
        self.0[0] * self.0[4] - self.0[1] * self.0[3]
    }

    pub fn inverse(&self) -> Option<Affine> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let [a, b, c, d, e, f] = self.0;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Some(Affine([ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)]))
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine::IDENTITY
    }
}

/// Map a record's lanes through `a` and resample them at the original rows.
///
/// Mapped points outside the image are dropped; each lane is refit with a
/// spline and sampled at `rec.h_samples`, rows outside the refit extent or
/// outside the image becoming absent. Lanes left with fewer than two
/// distinct rows become all-absent. A mirroring map reverses lane order (and
/// classes) so lanes stay ordered left to right.
pub fn transform_record(a: &Affine, rec: &LaneRecord, g: &RowAnchorGrid) -> Result<LaneRecord> {
    if a.inverse().is_none() {
        return Err(Error::InvalidValue("affine map is not invertible".into()));
    }
    if a.is_identity() {
        return Ok(rec.clone());
    }
    let (w, h) = (g.image_width as f64, g.image_height as f64);
    let mut lanes = Vec::with_capacity(rec.lanes.len());
    for lane in &rec.lanes {
        let pts: Vec<(f64, f64)> = lane
            .iter()
            .zip(&rec.h_samples)
            .filter(|(x, _)| !is_absent(**x))
            .map(|(&x, &y)| a.apply(x, y as f64))
            .filter(|&(x, y)| (0.0..w).contains(&x) && (0.0..h).contains(&y))
            .collect();
        let out = match fit_spline(&Polyline::new(pts)) {
            Ok(curve) => rec
                .h_samples
                .iter()
                .map(|&y| match curve.eval(y as f64) {
                    Some(x) if (0.0..w).contains(&x) => x,
                    _ => ABSENT,
                })
                .collect(),
            Err(_) => vec![ABSENT; rec.h_samples.len()],
        };
        lanes.push(out);
    }
    let mut classes = rec.classes.clone();
    if a.det() < 0.0 {
        lanes.reverse();
        if let Some(c) = classes.as_mut() {
            c.reverse();
        }
    }
    Ok(LaneRecord {
        raw_file: rec.raw_file.clone(),
        h_samples: rec.h_samples.clone(),
        lanes,
        classes,
    })
}
