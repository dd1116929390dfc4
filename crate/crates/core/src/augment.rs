//! Label-consistent geometric augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_record, Affine, RowAnchorGrid};
use crate::image::RgbImage;
use crate::record::LaneRecord;

/// Ranges and probabilities of the random transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    /// Rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translation drawn from `±max_translate_x` / `±max_translate_y` pixels.
    pub max_translate_x: f64,
    pub max_translate_y: f64,
    pub p_rotate: f64,
    pub p_scale: f64,
    pub p_translate: f64,
    pub p_flip: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 6.0,
            scale_min: 0.9,
            scale_max: 1.1,
            max_translate_x: 60.0,
            max_translate_y: 20.0,
            p_rotate: 0.5,
            p_scale: 0.5,
            p_translate: 0.5,
            p_flip: 0.5,
        }
    }
}

impl AugmentParams {
    /// All probabilities zero.
    pub fn none() -> Self {
        AugmentParams {
            p_rotate: 0.0,
            p_scale: 0.0,
            p_translate: 0.0,
            p_flip: 0.0,
            ..AugmentParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_rotate, self.p_scale, self.p_translate, self.p_flip];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        let mags = [self.max_rotation_deg, self.max_translate_x, self.max_translate_y];
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidConfig("augmentation ranges must be finite and non-negative".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::InvalidConfig("augmentation scale range must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }

    /// Draw one affine for a `width × height` image.
    pub fn sample(&self, width: u32, height: u32, rng: &mut impl Rng) -> Affine {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let mut a = Affine::IDENTITY;
        // Every draw is made regardless of the coin so the stream position
        // does not depend on which transforms fired.
        let (r_on, r) = (rng.random_bool(self.p_rotate), rng.random::<f64>());
        let (s_on, s) = (rng.random_bool(self.p_scale), rng.random::<f64>());
        let (t_on, tx, ty) = (rng.random_bool(self.p_translate), rng.random::<f64>(), rng.random::<f64>());
        let f_on = rng.random_bool(self.p_flip);
        if r_on {
            a = a.then(&Affine::rotation_about(cx, cy, (2.0 * r - 1.0) * self.max_rotation_deg));
        }
        if s_on {
            let k = self.scale_min + s * (self.scale_max - self.scale_min);
            a = a.then(&Affine::scale_about(cx, cy, k));
        }
        if t_on {
            a = a.then(&Affine::translation(
                (2.0 * tx - 1.0) * self.max_translate_x,
                (2.0 * ty - 1.0) * self.max_translate_y,
            ));
        }
        if f_on {
            a = a.then(&Affine::flip_horizontal(width));
        }
        a
    }
}

/// Apply one seeded random affine to an image and its labels.
pub fn augment(
    rec: &LaneRecord,
    image: &RgbImage,
    grid: &RowAnchorGrid,
    params: &AugmentParams,
    seed: u64,
) -> Result<(RgbImage, LaneRecord)> {
    params.validate()?;
    if image.width() != grid.image_width || image.height() != grid.image_height {
        return Err(Error::shape(
            "augment",
            alloc::format!(
                "image {}x{} but grid expects {}x{}",
                image.width(),
                image.height(),
                grid.image_width,
                grid.image_height
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = params.sample(image.width(), image.height(), &mut rng);
    if a.is_identity() {
        return Ok((image.clone(), rec.clone()));
    }
    let out_rec = transform_record(&a, rec, grid)?;
    let out_img = image.warp(&a, [0, 0, 0])?;
    Ok((out_img, out_rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ABSENT;
    use alloc::string::ToString;
    use alloc::vec;

    fn setup() -> (RowAnchorGrid, LaneRecord, RgbImage) {
        let g = RowAnchorGrid::new(64, 48, vec![10, 20, 30, 40], 16).unwrap();
        let rec = LaneRecord {
            raw_file: "x.ppm".to_string(),
            h_samples: g.h_samples.clone(),
            lanes: vec![vec![ABSENT, 10.0, 12.0, 14.0], vec![50.0, 48.0, 46.0, 44.0]],
            classes: Some(vec![0, 2]),
        };
        let mut img = RgbImage::new(64, 48);
        img.put(10, 20, [255, 255, 255]);
        (g, rec, img)
    }

    #[test]
    fn zero_probabilities_is_identity() {
        let (g, rec, img) = setup();
        let (i2, r2) = augment(&rec, &img, &g, &AugmentParams::none(), 7).unwrap();
        assert_eq!(i2, img);
        assert_eq!(r2, rec);
    }

    #[test]
    fn flip_twice_is_involution() {
        let (g, rec, img) = setup();
        let p = AugmentParams {
            p_flip: 1.0,
            ..AugmentParams::none()
        };
        let (i1, r1) = augment(&rec, &img, &g, &p, 3).unwrap();
        assert_eq!(r1.classes, Some(vec![2, 0]));
        let (i2, r2) = augment(&r1, &i1, &g, &p, 3).unwrap();
        assert_eq!(i2, img);
        assert_eq!(r2.classes, rec.classes);
        for (a, b) in r2.lanes.iter().flatten().zip(rec.lanes.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_result_and_lane_count_kept() {
        let (g, rec, img) = setup();
        let p = AugmentParams::default();
        for seed in 0..20 {
            let a = augment(&rec, &img, &g, &p, seed).unwrap();
            let b = augment(&rec, &img, &g, &p, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.1.lanes.len(), 2);
            for &x in a.1.lanes.iter().flatten() {
                assert!(x == ABSENT || (0.0..64.0).contains(&x));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let (g, rec, img) = setup();
        let p = AugmentParams {
            p_flip: 1.5,
            ..AugmentParams::default()
        };
        assert!(augment(&rec, &img, &g, &p, 0).is_err());
    }
}
