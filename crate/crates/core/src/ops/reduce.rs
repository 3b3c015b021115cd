//! Reductions over arbitrary axis sets; reduced dimensions are removed.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{strides_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    Min,
}

fn check_axes(axes: &[usize], ndim: usize) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= ndim {
            return Err(TensorError::InvalidAxis { axis: a, ndim });
        }
        if axes[..i].contains(&a) {
            return Err(TensorError::InvalidAxis { axis: a, ndim });
        }
    }
    Ok(())
}

/// Reduced output shape (reduced axes removed; scalar stays rank 0).
fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect()
}

/// Visits every element in row-major order, yielding (input flat index,
/// output flat index) without materializing a map.
fn for_each_mapped(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let out_shape = reduced_shape(shape, axes);
    let out_strides = strides_of(&out_shape);
    // Per-dimension output stride (0 along reduced axes).
    let mut dim_stride = vec![0usize; shape.len()];
    let mut k = 0usize;
    for d in 0..shape.len() {
        if !axes.contains(&d) {
            dim_stride[d] = out_strides[k];
            k += 1;
        }
    }
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut out_flat = 0usize;
    for flat in 0..numel {
        f(flat, out_flat);
        // Incremental row-major index update.
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            out_flat += dim_stride[d];
            if idx[d] < shape[d] {
                break;
            }
            out_flat -= shape[d] * dim_stride[d];
            idx[d] = 0;
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reduce(self, kind: ReduceKind, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        check_axes(axes, shape.len())?;
        let axes: Vec<usize> = axes.to_vec();
        let out_shape = reduced_shape(&shape, &axes);
        let out_numel: usize = out_shape.iter().product();
        let count: usize = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| axes.contains(i))
            .map(|(_, &d)| d)
            .product();

        let out = self.tape.with_value(self.id, |v| match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut acc = vec![T::zero(); out_numel];
                for_each_mapped(&shape, &axes, |i, o| {
                    acc[o] = acc[o] + v.data()[i];
                });
                if kind == ReduceKind::Mean {
                    let c = T::from_usize_(count);
                    for a in acc.iter_mut() {
                        *a = *a / c;
                    }
                }
                Tensor::new(out_shape.clone(), acc).expect("reduce shape")
            }
            ReduceKind::Max | ReduceKind::Min => {
                let mut acc = vec![None::<T>; out_numel];
                for_each_mapped(&shape, &axes, |i, o| {
                    let e = v.data()[i];
                    acc[o] = Some(match acc[o] {
                        None => e,
                        // Strict comparison keeps the first attaining element.
                        Some(cur) => {
                            let better = match kind {
                                ReduceKind::Max => e > cur,
                                _ => e < cur,
                            };
                            if better {
                                e
                            } else {
                                cur
                            }
                        }
                    });
                });
                let data: Vec<T> = acc.into_iter().map(|v| v.expect("nonempty")).collect();
                Tensor::new(out_shape.clone(), data).expect("reduce shape")
            }
        });

        let bwd_shape = shape.clone();
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, out, pvals| {
                let x = pvals[0];
                let mut grad = Tensor::zeros(x.shape());
                match kind {
                    ReduceKind::Sum => {
                        for_each_mapped(&bwd_shape, &axes, |i, o| {
                            grad.data_mut()[i] = gout.data()[o];
                        });
                    }
                    ReduceKind::Mean => {
                        let c = T::from_usize_(count);
                        for_each_mapped(&bwd_shape, &axes, |i, o| {
                            grad.data_mut()[i] = gout.data()[o] / c;
                        });
                    }
                    ReduceKind::Max | ReduceKind::Min => {
                        // Route to the first element attaining the extremum.
                        let mut taken = vec![false; out.numel()];
                        for_each_mapped(&bwd_shape, &axes, |i, o| {
                            if !taken[o] && x.data()[i] == out.data()[o] {
                                taken[o] = true;
                                grad.data_mut()[i] = gout.data()[o];
                            }
                        });
                    }
                }
                vec![grad]
            }),
        ))
    }

    pub fn reduce_sum(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Sum, axes)
    }
    pub fn reduce_mean(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Mean, axes)
    }
    pub fn reduce_max(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Max, axes)
    }
    pub fn reduce_min(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Min, axes)
    }

    /// Sum over every axis, yielding a scalar (rank-0) tensor.
    pub fn sum_all(self) -> Result<Var<'t, T>> {
        let ndim = self.shape().len();
        let axes: Vec<usize> = (0..ndim).collect();
        self.reduce(ReduceKind::Sum, &axes)
    }

    pub fn mean_all(self) -> Result<Var<'t, T>> {
        let ndim = self.shape().len();
        let axes: Vec<usize> = (0..ndim).collect();
        self.reduce(ReduceKind::Mean, &axes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn mean_over_all() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(&[4], &[1.0, 2.0, 3.0, 6.0]).unwrap(),
            false,
        );
        let m = x.mean_all().unwrap();
        assert_eq!(m.value().scalar_value(), 3.0);
    }

    #[test]
    fn max_over_axis0() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(&[2, 2], &[1.0, 4.0, 3.0, 2.0]).unwrap(),
            false,
        );
        let m = x.reduce_max(&[0]).unwrap();
        assert_eq!(m.value().data(), &[3.0, 4.0]);
    }

    #[test]
    fn reduce_middle_axis() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(&[2, 3, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>())
                .unwrap(),
            false,
        );
        let s = x.reduce_sum(&[1]).unwrap();
        assert_eq!(s.value().shape(), &[2, 2]);
        assert_eq!(s.value().data(), &[6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_slice(&[3], &[1.0, -2.0, 5.0]).unwrap(), true);
        let s = x.sum_all().unwrap();
        tape.backward(s).unwrap();
        assert_eq!(x.grad().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn invalid_axis_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), false);
        assert!(x.reduce_sum(&[2]).is_err());
        assert!(x.reduce_sum(&[0, 0]).is_err());
    }

    #[test]
    fn max_tie_routes_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_slice(&[3], &[2.0, 5.0, 5.0]).unwrap(), true);
        let m = x.reduce_max(&[0]).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(x.grad().data(), &[0.0, 1.0, 0.0]);
    }
}
