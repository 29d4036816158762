//! Dense row-major tensors and the reverse-mode tape that differentiates them.
//!
//! Values are held in a shared `f64` buffer. A tensor tagged [`DType::F32`]
//! has every element rounded to single precision at creation, so it behaves
//! like 32-bit storage while sharing one code path with 64-bit tensors.

mod graph;
mod kernels;

pub use graph::{ElementwiseOp, Gradients, Graph, Var};
pub use kernels::Conv2dGeometry;

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Scalar precision of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }

    /// The wider of two precisions; op outputs take the promoted dtype of their inputs.
    pub fn promote(self, other: DType) -> DType {
        if self == DType::F64 || other == DType::F64 {
            DType::F64
        } else {
            DType::F32
        }
    }
}

thread_local! {
    static DEFAULT_DTYPE: Cell<DType> = const { Cell::new(DType::F32) };
}

/// Precision given to tensors created without an explicit dtype on this thread.
pub fn default_dtype() -> DType {
    DEFAULT_DTYPE.with(|d| d.get())
}

pub fn set_default_dtype(dtype: DType) {
    DEFAULT_DTYPE.with(|d| d.set(dtype));
}

/// Runs `f` with `dtype` as the thread default, restoring the previous one afterwards.
pub fn with_default_dtype<R>(dtype: DType, f: impl FnOnce() -> R) -> R {
    let prev = default_dtype();
    set_default_dtype(dtype);
    let out = f();
    set_default_dtype(prev);
    out
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    dtype: DType,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype)
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor in the thread's default precision.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::from_vec_dtype(shape, data, default_dtype())
    }

    pub fn from_vec_dtype(shape: &[usize], mut data: Vec<f64>, dtype: DType) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            ));
        }
        if dtype == DType::F32 {
            data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            dtype,
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0).expect("zeros with valid shape")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0).expect("ones with valid shape")
    }

    pub fn zeros_dtype(shape: &[usize], dtype: DType) -> Self {
        let n = shape.iter().product();
        Self::from_vec_dtype(shape, vec![0.0; n], dtype).expect("zeros with valid shape")
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::from_vec(&[], vec![v])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_vec(shape, (0..n).map(&mut f).collect())
    }

    /// Internal constructor used by ops: rounds to `dtype` and rejects non-finite output.
    pub(crate) fn from_op(shape: Vec<usize>, mut data: Vec<f64>, dtype: DType, op: &'static str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut finite = true;
        for v in data.iter_mut() {
            *v = dtype.round(*v);
            finite &= v.is_finite();
        }
        if !finite {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            dtype,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        self.data[off]
    }

    /// A view with a new shape over the same values.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            dtype: self.dtype,
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype {
            return self.clone();
        }
        Tensor::from_op(self.shape.clone(), self.to_vec(), dtype, "to_dtype").expect("finite values stay finite")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::from_op(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), self.dtype, "map")
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest element; the earliest wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut dtype = first.dtype;
        for t in items {
            if t.shape != first.shape {
                return shape_err(format!("stack: {:?} vs {:?}", t.shape, first.shape));
            }
            dtype = dtype.promote(t.dtype);
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_op(shape, data, dtype, "stack")
    }

    /// Slice `index` of the leading axis.
    pub fn index0(&self, index: usize) -> Result<Tensor> {
        if self.shape.is_empty() || index >= self.shape[0] {
            return shape_err(format!("index0({index}) on {:?}", self.shape));
        }
        let inner: usize = self.shape[1..].iter().product();
        let data = self.data[index * inner..(index + 1) * inner].to_vec();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: Arc::new(data),
            dtype: self.dtype,
        })
    }

    /// Rows `rows` of the leading axis, in the given order (repeats allowed).
    pub fn gather0(&self, rows: &[usize]) -> Result<Tensor> {
        if self.shape.is_empty() || rows.is_empty() {
            return shape_err(format!("gather0 of {} rows on {:?}", rows.len(), self.shape));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            if r >= self.shape[0] {
                return shape_err(format!("gather0 row {r} on {:?}", self.shape));
            }
            data.extend_from_slice(&self.data[r * inner..(r + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            dtype: self.dtype,
        })
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.dtype == other.dtype
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return shape_err(format!("dimension sizes must be positive, got {shape:?}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_shape() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[0, 3], vec![]).is_err());
        assert_eq!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(matches!(
            Tensor::from_vec(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn f32_values_are_rounded() {
        let t = Tensor::from_vec_dtype(&[1], vec![0.1], DType::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let t = Tensor::from_vec_dtype(&[1], vec![0.1], DType::F64).unwrap();
        assert_eq!(t.data()[0], 0.1);
    }

    #[test]
    fn reshape_shares_values() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert!(Arc::ptr_eq(&t.data, &r.data));
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(r.at(&[2, 1]), 5.0);
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
