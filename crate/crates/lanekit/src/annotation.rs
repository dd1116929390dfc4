//! Annotation interchange documents and their conversion to dataset
//! records.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use lanekit_core::geometry::{fit_spline, sample_at_anchors, Polyline};
use lanekit_core::{ClassId, LaneRecord, RowAnchorGrid};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedLane {
    /// Polyline vertices `[x, y]` in pixels.
    pub points: Vec<[f64; 2]>,
    pub class: u8,
}

/// One annotated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub lanes: Vec<AnnotatedLane>,
}

impl Annotation {
    pub fn validate(&self) -> lanekit_core::Result<()> {
        use lanekit_core::Error as E;
        if self.width == 0 || self.height == 0 {
            return Err(E::InvalidValue("image size must be positive".into()));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if ClassId::from_u8(lane.class).is_none() {
                return Err(E::InvalidValue(format!("lane {i}: class {} is not in 0..=6", lane.class)));
            }
            for (k, &[x, y]) in lane.points.iter().enumerate() {
                let inside = (0.0..=self.width as f64).contains(&x) && (0.0..=self.height as f64).contains(&y);
                if !inside {
                    return Err(E::InvalidValue(format!(
                        "lane {i} point {k}: ({x}, {y}) lies outside the {}x{} image",
                        self.width, self.height
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_annotation(text: &str, path: &Path) -> Result<Annotation> {
    let doc: Annotation = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    doc.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(doc)
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&text, path)
}

/// Anchor rows written as `start:end:step`, end inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HSamples(pub Vec<u32>);

impl Default for HSamples {
    fn default() -> Self {
        HSamples((160..=710).step_by(10).collect())
    }
}

impl FromStr for HSamples {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let nums: Vec<u32> = parts
            .iter()
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("{s:?}: {e}"))?;
        match nums[..] {
            [start, end, step] if step > 0 && start <= end => Ok(HSamples((start..=end).step_by(step as usize).collect())),
            _ => Err(format!("{s:?} is not start:end:step with step > 0 and start <= end")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvertStats {
    pub converted: usize,
    /// Lanes with fewer than two distinct rows.
    pub dropped: usize,
}

/// Fit a spline per lane and sample it at `h_samples`.
pub fn convert(doc: &Annotation, h_samples: &HSamples) -> (LaneRecord, ConvertStats) {
    let grid = RowAnchorGrid {
        image_width: doc.width,
        image_height: doc.height,
        h_samples: h_samples.0.clone(),
        cells: 1,
    };
    let mut stats = ConvertStats::default();
    let mut lanes = Vec::new();
    let mut classes = Vec::new();
    for (i, lane) in doc.lanes.iter().enumerate() {
        let poly = Polyline::new(lane.points.iter().map(|&[x, y]| (x, y)).collect());
        match fit_spline(&poly) {
            Ok(curve) => {
                lanes.push(sample_at_anchors(&curve, &grid));
                classes.push(lane.class);
                stats.converted += 1;
            }
            Err(e) => {
                log::warn!("{}: lane {i} dropped: {e}", doc.image);
                stats.dropped += 1;
            }
        }
    }
    let rec = LaneRecord {
        raw_file: doc.image.clone(),
        h_samples: h_samples.0.clone(),
        lanes,
        classes: Some(classes),
    };
    (rec, stats)
}
