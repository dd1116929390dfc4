//! 8-bit RGB rasters: resizing to network input and affine warping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::Affine;

/// Interleaved RGB, row-major, one byte per channel. Pixel `(x, y)` has its
/// center at integer coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let want = width as usize * height as usize * 3;
        if data.len() != want {
            return Err(Error::InvalidValue(format!(
                "{width}x{height} RGB image needs {want} bytes, got {}",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Area-average resize to `out_w × out_h`, returned as planar
    /// `[3, out_h, out_w]` floats in `[0, 1]`.
    pub fn to_planar(&self, out_w: usize, out_h: usize) -> Vec<f64> {
        let wx = area_weights(self.width as usize, out_w);
        let wy = area_weights(self.height as usize, out_h);
        let (sw, sh) = (self.width as usize, self.height as usize);
        // horizontal pass: [sh, out_w, 3]
        let mut rows = vec![0.0; sh * out_w * 3];
        for y in 0..sh {
            for (ox, taps) in wx.iter().enumerate() {
                for &(sx, wgt) in taps {
                    let o = (y * sw + sx) * 3;
                    for c in 0..3 {
                        rows[(y * out_w + ox) * 3 + c] += wgt * self.data[o + c] as f64;
                    }
                }
            }
        }
        let mut out = vec![0.0; 3 * out_h * out_w];
        let plane = out_h * out_w;
        for (oy, taps) in wy.iter().enumerate() {
            for &(sy, wgt) in taps {
                for ox in 0..out_w {
                    for c in 0..3 {
                        out[c * plane + oy * out_w + ox] += wgt * rows[(sy * out_w + ox) * 3 + c];
                    }
                }
            }
        }
        for v in &mut out {
            *v /= 255.0;
        }
        out
    }

    /// Warp through `a` (source to destination), bilinear sampling, `fill`
    /// outside the source.
    pub fn warp(&self, a: &Affine, fill: [u8; 3]) -> Result<RgbImage> {
        let inv = a
            .inverse()
            .ok_or_else(|| Error::InvalidValue("affine map is not invertible".into()))?;
        let mut out = RgbImage::new(self.width, self.height);
        let (wm, hm) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                let px = if sx < -0.5 || sy < -0.5 || sx > wm + 0.5 || sy > hm + 0.5 {
                    fill
                } else {
                    self.bilinear(sx.clamp(0.0, wm), sy.clamp(0.0, hm))
                };
                out.put(x, y, px);
            }
        }
        Ok(out)
    }

    fn bilinear(&self, x: f64, y: f64) -> [u8; 3] {
        let x0 = libm::floor(x) as u32;
        let y0 = libm::floor(y) as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0u8; 3];
        for k in 0..3 {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            out[k] = libm::round(top * (1.0 - fy) + bot * fy).clamp(0.0, 255.0) as u8;
        }
        out
    }
}

/// For each output sample, the source indices and weights (summing to one)
/// of the source interval it covers.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut taps = Vec::new();
            let mut s = libm::floor(lo) as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((s, overlap / scale));
                }
                s += 1;
            }
            taps
        })
        .collect()
}
