//! Ground-truth records, lane marking classes and class grouping schemes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::is_absent;

/// One image's annotation in row-anchor form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRecord {
    pub raw_file: String,
    pub h_samples: Vec<u32>,
    /// Per-lane x at each of `h_samples`; `-2` where the lane is absent.
    pub lanes: Vec<Vec<f64>>,
    /// Raw class ids (0..=6), one per lane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<u8>>,
}

impl LaneRecord {
    /// Check structural invariants. `max_lanes` and `image_width` are
    /// enforced when given.
    pub fn validate(&self, max_lanes: Option<usize>, image_width: Option<u32>) -> Result<()> {
        let h = self.h_samples.len();
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.len() != h {
                return Err(Error::InvalidValue(format!(
                    "{}: lane {i} has {} points but h_samples has {h}",
                    self.raw_file,
                    lane.len()
                )));
            }
            for (j, &x) in lane.iter().enumerate() {
                let bad = if is_absent(x) {
                    false
                } else if !x.is_finite() || x < 0.0 {
                    true
                } else {
                    image_width.is_some_and(|w| x >= w as f64)
                };
                if bad {
                    return Err(Error::InvalidValue(format!(
                        "{}: lane {i} anchor {j} has x = {x}",
                        self.raw_file
                    )));
                }
            }
        }
        if let Some(c) = &self.classes {
            if c.len() != self.lanes.len() {
                return Err(Error::InvalidValue(format!(
                    "{}: {} classes for {} lanes",
                    self.raw_file,
                    c.len(),
                    self.lanes.len()
                )));
            }
            if let Some(&bad) = c.iter().find(|&&v| ClassId::from_u8(v).is_none()) {
                return Err(Error::InvalidValue(format!("{}: unknown class id {bad}", self.raw_file)));
            }
        }
        if let Some(m) = max_lanes {
            if self.lanes.len() > m {
                return Err(Error::InvalidValue(format!(
                    "{}: {} lanes exceed the maximum of {m}",
                    self.raw_file,
                    self.lanes.len()
                )));
            }
        }
        Ok(())
    }

    /// Whether lane `i` has at least one present point.
    pub fn lane_present(&self, i: usize) -> bool {
        self.lanes[i].iter().any(|&x| !is_absent(x))
    }

    pub fn point_count(&self) -> usize {
        self.lanes
            .iter()
            .map(|l| l.iter().filter(|&&x| !is_absent(x)).count())
            .sum()
    }
}

/// The seven base lane marking types, serialized as 0..=6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ClassId {
    SolidYellow = 0,
    SolidWhite = 1,
    Dashed = 2,
    DoubleDashed = 3,
    BottsDots = 4,
    DoubleYellow = 5,
    RoadEdgeUnknown = 6,
}

impl ClassId {
    pub const ALL: [ClassId; 7] = [
        ClassId::SolidYellow,
        ClassId::SolidWhite,
        ClassId::Dashed,
        ClassId::DoubleDashed,
        ClassId::BottsDots,
        ClassId::DoubleYellow,
        ClassId::RoadEdgeUnknown,
    ];

    pub fn from_u8(v: u8) -> Option<ClassId> {
        ClassId::ALL.get(v as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::SolidYellow => "solid-yellow",
            ClassId::SolidWhite => "solid-white",
            ClassId::Dashed => "dashed",
            ClassId::DoubleDashed => "double-dashed",
            ClassId::BottsDots => "botts-dots",
            ClassId::DoubleYellow => "double-yellow",
            ClassId::RoadEdgeUnknown => "road-edge-unknown",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grouping of base classes into training/evaluation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassScheme {
    Seven,
    Six,
    Two,
}

const SEVEN_INDEX: [usize; 7] = [0, 1, 2, 3, 4, 5, 6];
const SIX_INDEX: [usize; 7] = [0, 1, 2, 2, 3, 4, 5];
const TWO_INDEX: [usize; 7] = [0, 0, 1, 1, 1, 0, 0];

impl ClassScheme {
    pub fn num_classes(self) -> usize {
        match self {
            ClassScheme::Seven => 7,
            ClassScheme::Six => 6,
            ClassScheme::Two => 2,
        }
    }

    fn table(self) -> &'static [usize; 7] {
        match self {
            ClassScheme::Seven => &SEVEN_INDEX,
            ClassScheme::Six => &SIX_INDEX,
            ClassScheme::Two => &TWO_INDEX,
        }
    }

    /// Contiguous class index in `0..num_classes()`.
    pub fn index(self, c: ClassId) -> usize {
        self.table()[c as usize]
    }

    /// Lowest base class mapping to `index`.
    pub fn representative(self, index: usize) -> Option<ClassId> {
        ClassId::ALL.iter().copied().find(|&c| self.index(c) == index)
    }

    /// Base class after grouping, expressed as its group's representative.
    pub fn map(self, c: ClassId) -> ClassId {
        self.representative(self.index(c)).expect("every index has a representative")
    }

    pub fn label(self, index: usize) -> &'static str {
        match self {
            ClassScheme::Two => ["solid", "dashed"][index],
            _ => self.representative(index).map_or("?", ClassId::name),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassScheme::Seven => "SEVEN",
            ClassScheme::Six => "SIX",
            ClassScheme::Two => "TWO",
        }
    }
}

impl FromStr for ClassScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seven" | "7" => Ok(ClassScheme::Seven),
            "six" | "6" => Ok(ClassScheme::Six),
            "two" | "2" => Ok(ClassScheme::Two),
            _ => Err(Error::InvalidConfig(format!("unknown class scheme {s:?}"))),
        }
    }
}

impl fmt::Display for ClassScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Replace each lane class by its group representative under `scheme`.
pub fn map_classes(rec: &LaneRecord, scheme: ClassScheme) -> Result<LaneRecord> {
    let classes = rec.classes.as_ref().ok_or_else(|| Error::MissingClasses {
        raw_file: rec.raw_file.clone(),
    })?;
    let mapped = classes
        .iter()
        .map(|&v| {
            ClassId::from_u8(v)
                .map(|c| scheme.map(c).as_u8())
                .ok_or_else(|| Error::InvalidValue(format!("{}: unknown class id {v}", rec.raw_file)))
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(LaneRecord {
        classes: Some(mapped),
        ..rec.clone()
    })
}
