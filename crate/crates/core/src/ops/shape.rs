//! Shape manipulation: reshape, permute, narrow, concat.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{strides_of, Tensor};

fn permute_tensor<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let mut out = Tensor::zeros(&out_shape);
    let numel = x.numel();
    let ndim = shape.len();
    let mut idx = vec![0usize; ndim]; // index in output space
    for o in 0..numel {
        let mut i_flat = 0usize;
        for d in 0..ndim {
            i_flat += idx[d] * in_strides[perm[d]];
        }
        out.data_mut()[o] = x.data()[i_flat];
        // row-major increment of the output index
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.tape.with_value(self.id, |v| v.reshaped(shape))?;
        let in_shape = self.shape();
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, _| vec![gout.reshaped(&in_shape).expect("reshape bwd")]),
        ))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if perm.len() != shape.len() {
            return Err(TensorError::InvalidAxis {
                axis: perm.len(),
                ndim: shape.len(),
            });
        }
        let mut seen = vec![false; shape.len()];
        for &p in perm {
            if p >= shape.len() || seen[p] {
                return Err(TensorError::InvalidAxis {
                    axis: p,
                    ndim: shape.len(),
                });
            }
            seen[p] = true;
        }
        let perm: Vec<usize> = perm.to_vec();
        let mut inv = vec![0usize; perm.len()];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        let out = self.tape.with_value(self.id, |v| permute_tensor(v, &perm));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, _| vec![permute_tensor(gout, &inv)]),
        ))
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                ndim: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::Dimension(format!(
                "narrow [{start}, {}) exceeds axis {axis} of size {}",
                start + len,
                shape[axis]
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let axis_size = shape[axis];

        let out = self.tape.with_value(self.id, |v| {
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * axis_size + start) * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            Tensor::new(out_shape.clone(), data).expect("narrow shape")
        });
        let in_shape = shape.clone();
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, _| {
                let mut grad = Tensor::zeros(&in_shape);
                for o in 0..outer {
                    let dst = (o * axis_size + start) * inner;
                    let src = o * len * inner;
                    grad.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&gout.data()[src..src + len * inner]);
                }
                vec![grad]
            }),
        ))
    }
}

impl<T: Scalar> Tape<T> {
    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        if vars.is_empty() {
            return Err(TensorError::Arity("concat of zero tensors".into()));
        }
        let first = vars[0].shape();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                ndim: first.len(),
            });
        }
        let mut sizes = Vec::with_capacity(vars.len());
        for v in vars {
            let s = v.shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &x)| d != axis && x != first[d])
            {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat operand {s:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();

        let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
        let out = self.with_values(&ids, |vals| {
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (v, &sz) in vals.iter().zip(sizes.iter()) {
                    let base = o * sz * inner;
                    data.extend_from_slice(&v.data()[base..base + sz * inner]);
                }
            }
            Tensor::new(out_shape.clone(), data).expect("concat shape")
        });
        let sizes_bwd = sizes.clone();
        Ok(self.push(
            out,
            ids,
            Box::new(move |gout, _, pvals| {
                let mut grads: Vec<Tensor<T>> =
                    pvals.iter().map(|p| Tensor::zeros(p.shape())).collect();
                let total: usize = sizes_bwd.iter().sum();
                for o in 0..outer {
                    let mut off = 0usize;
                    for (gi, &sz) in sizes_bwd.iter().enumerate() {
                        let src = (o * total + off) * inner;
                        let dst = o * sz * inner;
                        grads[gi].data_mut()[dst..dst + sz * inner]
                            .copy_from_slice(&gout.data()[src..src + sz * inner]);
                        off += sz;
                    }
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn concat_channels() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(&[1, 2, 2, 2], 1.0), false);
        let b = tape.leaf(Tensor::full(&[1, 3, 2, 2], 2.0), false);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![1, 5, 2, 2]);
        // Slicing the concat reproduces the inputs bit-exactly.
        let sa = c.narrow(1, 0, 2).unwrap();
        let sb = c.narrow(1, 2, 3).unwrap();
        assert_eq!(sa.value(), a.value());
        assert_eq!(sb.value(), b.value());
    }

    #[test]
    fn concat_single_is_identity() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let c = tape.concat(&[a], 0).unwrap();
        assert_eq!(c.value(), a.value());
    }

    #[test]
    fn concat_shape_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]), false);
        let b = tape.leaf(Tensor::zeros(&[1, 2, 3, 2]), false);
        assert!(tape.concat(&[a, b], 1).is_err());
    }

    #[test]
    fn permute_roundtrip() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            true,
        );
        let p = x.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), vec![3, 2]);
        assert_eq!(p.value().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = p.permute(&[1, 0]).unwrap();
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn narrow_backward_pads_zeros() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_slice(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let s = x.narrow(0, 1, 2).unwrap().sum_all().unwrap();
        tape.backward(s).unwrap();
        assert_eq!(x.grad().data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
