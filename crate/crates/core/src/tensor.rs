use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half;

/// Numeric precision of a tensor.
///
/// All values are held as `f64`; the dtype decides how every stored value is
/// rounded. `F16E` is emulated IEEE binary16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DType {
    F16E,
    F32,
    F64,
}

impl DType {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F64 => x,
            DType::F32 => x as f32 as f64,
            DType::F16E => half::round(x),
        }
    }

    pub fn round_slice(self, xs: &mut [f64]) {
        if self != DType::F64 {
            for x in xs {
                *x = self.round(*x);
            }
        }
    }

    /// The wider of two precisions.
    pub fn promote(self, other: DType) -> DType {
        self.max(other)
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], mut data: Vec<f64>, dtype: DType) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {} needs {n} values, got {}", shape_str(shape), data.len()),
            ));
        }
        dtype.round_slice(&mut data);
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype,
            data,
        })
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: vec![dtype.round(value); n],
        }
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Tensor {
            shape: Vec::new(),
            dtype,
            data: vec![dtype.round(value)],
        }
    }

    pub fn from_vec(data: Vec<f64>, dtype: DType) -> Self {
        let n = data.len();
        Tensor::new(&[n], data, dtype).expect("1-d length always matches")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Overwrite the values, rounding each to this tensor's dtype.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::shape(
                "assign",
                format!("{} values into {}", values.len(), shape_str(&self.shape)),
            ));
        }
        for (d, &v) in self.data.iter_mut().zip(values) {
            *d = self.dtype.round(v);
        }
        Ok(())
    }

    /// Apply `f` to every value in place; results are re-rounded.
    pub fn map_inplace(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        let dt = self.dtype;
        for (i, d) in self.data.iter_mut().enumerate() {
            *d = dt.round(f(i, *d));
        }
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar {
                shape: shape_str(&self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Convert to another precision.
    ///
    /// Casting to `F16E` rounds to nearest-even with overflow to infinity;
    /// non-finite values pass through unchanged.
    pub fn cast(&self, dtype: DType) -> Tensor {
        let mut data = self.data.clone();
        dtype.round_slice(&mut data);
        Tensor {
            shape: self.shape.clone(),
            dtype,
            data,
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} into {}", shape_str(&self.shape), shape_str(shape)),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
