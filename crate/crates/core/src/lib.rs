//! Row-anchor lane detection and lane-type classification.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: a small reverse-mode autodiff engine with emulated binary16
//! arithmetic, row-anchor geometry and spline conversion, the detector with
//! its classification branch, the training objectives, the evaluation
//! metrics, a synthetic road generator and the optimizer / mixed-precision
//! training loop. File formats, checkpoints and the command-line tool live in
//! the `lanekit` crate.
#![no_std]

extern crate alloc;

pub mod augment;
pub mod error;
pub mod geometry;
pub mod half;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod record;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{GridTarget, LaneCurve, Polyline, RowAnchorGrid, ABSENT};
pub use record::{ClassId, ClassScheme, LaneRecord};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Tensor};
