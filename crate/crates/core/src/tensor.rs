//! Dense row-major tensor storage.
//!
//! `Tensor` is the raw value buffer; gradient tracking lives on the [`crate::Tape`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// N-dimensional dense array, row-major, channels-first for image data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::new(shape.to_vec(), data)
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn scalar_value(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place elementwise accumulation; shapes must match exactly.
    pub fn accumulate(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    /// Reinterprets the buffer under a new shape with identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Sums `self` down to `target` shape, inverting broadcast expansion.
    pub fn reduce_to_shape(&self, target: &[usize]) -> Tensor<T> {
        if self.shape == target {
            return self.clone();
        }
        let mut out = Tensor::zeros(target);
        let t_strides = strides_of(target);
        let offset = self.shape.len() - target.len();
        let mut idx = vec![0usize; self.shape.len()];
        for &v in self.data.iter() {
            // Map the full index onto the target index (broadcast dims -> 0).
            let mut t_flat = 0usize;
            for (k, &dim) in target.iter().enumerate() {
                let i = if dim == 1 { 0 } else { idx[offset + k] };
                t_flat += i * t_strides[k];
            }
            out.data[t_flat] = out.data[t_flat] + v;
            increment_index(&mut idx, &self.shape);
        }
        out
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for i in (0..shape.len()).rev() {
        idx[i] += 1;
        if idx[i] < shape[i] {
            return;
        }
        idx[i] = 0;
    }
}

/// Broadcast shape of two operands under trailing-dimension rules.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot broadcast {a:?} with {b:?}"
            )));
        };
    }
    Ok(out)
}

/// Strides for iterating `shape` as if broadcast to `out_shape`
/// (stride 0 along expanded dimensions).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let base = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { base[i] };
    }
    out
}

/// Applies `f` over two broadcast operands, producing the broadcast shape.
pub fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice() {
        // Fast path: no broadcasting.
        let data = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(out_shape, data);
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        let mut fa = 0usize;
        let mut fb = 0usize;
        for (k, &i) in idx.iter().enumerate() {
            fa += i * sa[k];
            fb += i * sb[k];
        }
        data.push(f(a.data()[fa], b.data()[fb]));
        increment_index(&mut idx, &out_shape);
    }
    Tensor::new(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn shape_data_length_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[5, 1]).unwrap(), vec![2, 5, 4]);
        assert!(broadcast_shape(&[2, 3], &[4]).is_err());
    }

    #[test]
    fn reduce_to_shape_inverts_broadcast() {
        let g = Tensor::<f64>::from_f64_slice(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = g.reduce_to_shape(&[3]);
        assert_eq!(r.data(), &[5.0, 7.0, 9.0]);
        let r2 = g.reduce_to_shape(&[2, 1]);
        assert_eq!(r2.data(), &[6.0, 15.0]);
    }
}
