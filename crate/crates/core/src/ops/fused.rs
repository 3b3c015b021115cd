//! Fused operations with hand-written backward rules: the two-way softmax,
//! spatial min-max normalization, and batch normalization.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Numerically stable sigmoid; `pairwise_softmax(a, b).0 == sigmoid(a - b)`.
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Element-wise logistic sigmoid.
    pub fn sigmoid_elem(self) -> Result<Var<'t, T>> {
        let out = self.tape.with_value(self.id, |x| x.map(|v| sigmoid(v)));
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, out_val, _| {
                let mut grad = Tensor::zeros(out_val.shape());
                for i in 0..grad.data().len() {
                    let s = out_val.data()[i];
                    grad.data_mut()[i] = gout.data()[i] * s * (T::one() - s);
                }
                vec![grad]
            }),
        ))
    }
}

/// Element-wise two-way softmax: at every position,
/// `(m_a, m_b) = (e^a, e^b) / (e^a + e^b)`, stabilized so arbitrarily
/// large logits do not overflow. The two outputs sum to 1 per element.
pub fn pairwise_softmax<'t, T: Scalar>(
    a: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "pairwise_softmax expects identical shapes, got {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let tape = a.tape();
    let make = |first: bool| {
        let out = tape.with_values(&[a.id, b.id], |vals| {
            let (av, bv) = (vals[0], vals[1]);
            let data: Vec<T> = av
                .data()
                .iter()
                .zip(bv.data().iter())
                .map(|(&x, &y)| if first { sigmoid(x - y) } else { sigmoid(y - x) })
                .collect();
            Tensor::new(av.shape().to_vec(), data).expect("softmax shape")
        });
        tape.push(
            out,
            vec![a.id, b.id],
            Box::new(move |gout, out, _| {
                // dm/dz = m (1 - m) with z the owning logit; the other logit
                // receives the negated contribution.
                let mut da = Tensor::zeros(out.shape());
                let mut db = Tensor::zeros(out.shape());
                for i in 0..out.numel() {
                    let m = out.data()[i];
                    let g = gout.data()[i] * m * (T::one() - m);
                    if first {
                        da.data_mut()[i] = g;
                        db.data_mut()[i] = -g;
                    } else {
                        da.data_mut()[i] = -g;
                        db.data_mut()[i] = g;
                    }
                }
                vec![da, db]
            }),
        )
    };
    Ok((make(true), make(false)))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Min-max normalization over the H×W positions of every (b, c) slice:
    /// `y = (x - min) / (max - min)`. Slices with `max - min <= epsilon`
    /// are filled with the constant 0.5 (no spatial preference).
    pub fn minmax_normalize_spatial(self, epsilon: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch(format!(
                "minmax_normalize_spatial expects [B,C,H,W], got {shape:?}"
            )));
        }
        let eps = T::of_f64(epsilon);
        let plane = shape[2] * shape[3];
        let slices = shape[0] * shape[1];
        let out = self.tape.with_value(self.id, |x| {
            let mut y = Tensor::zeros(x.shape());
            let half = T::of_f64(0.5);
            for s in 0..slices {
                let xs = &x.data()[s * plane..(s + 1) * plane];
                let mut lo = xs[0];
                let mut hi = xs[0];
                for &v in xs.iter() {
                    if v < lo {
                        lo = v;
                    }
                    if v > hi {
                        hi = v;
                    }
                }
                let ys = &mut y.data_mut()[s * plane..(s + 1) * plane];
                if hi - lo <= eps {
                    for o in ys.iter_mut() {
                        *o = half;
                    }
                } else {
                    let r = hi - lo;
                    for (o, &v) in ys.iter_mut().zip(xs.iter()) {
                        *o = (v - lo) / r;
                    }
                }
            }
            y
        });
        Ok(self.tape.push(
            out,
            vec![self.id],
            Box::new(move |gout, _, pvals| {
                let x = pvals[0];
                let mut grad = Tensor::zeros(x.shape());
                for s in 0..slices {
                    let xs = &x.data()[s * plane..(s + 1) * plane];
                    let gs = &gout.data()[s * plane..(s + 1) * plane];
                    // Extremum positions: first attaining element wins.
                    let (mut imin, mut imax) = (0usize, 0usize);
                    for (i, &v) in xs.iter().enumerate() {
                        if v < xs[imin] {
                            imin = i;
                        }
                        if v > xs[imax] {
                            imax = i;
                        }
                    }
                    let (lo, hi) = (xs[imin], xs[imax]);
                    if hi - lo <= eps {
                        continue; // constant output, zero gradient
                    }
                    let r = hi - lo;
                    // y_i = (x_i - lo) / r with lo = x[imin], hi = x[imax]:
                    //   dy_i/dx_j = δ_ij / r
                    //             - δ_{j,imin} / r
                    //             - (x_i - lo) (δ_{j,imax} - δ_{j,imin}) / r²
                    let mut sum_g = T::zero();
                    let mut sum_gy = T::zero();
                    for (i, &g) in gs.iter().enumerate() {
                        sum_g = sum_g + g;
                        sum_gy = sum_gy + g * (xs[i] - lo) / r;
                    }
                    let grad_s = &mut grad.data_mut()[s * plane..(s + 1) * plane];
                    for (i, &g) in gs.iter().enumerate() {
                        grad_s[i] = grad_s[i] + g / r;
                    }
                    grad_s[imin] = grad_s[imin] - sum_g / r + sum_gy / r;
                    grad_s[imax] = grad_s[imax] - sum_gy / r;
                }
                vec![grad]
            }),
        ))
    }

    /// Batch normalization in train mode: normalizes with batch statistics.
    /// Accepts [B,C,H,W] (per-channel stats over B,H,W) or [B,D] (per-feature
    /// stats over B). Requires a batch of at least two samples.
    pub fn batchnorm_train(
        self,
        scale: Var<'t, T>,
        shift: Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (c, layout_4d) = match shape.len() {
            4 => (shape[1], true),
            2 => (shape[1], false),
            _ => {
                return Err(TensorError::ShapeMismatch(format!(
                    "batchnorm expects [B,C,H,W] or [B,D], got {shape:?}"
                )))
            }
        };
        if shape[0] < 2 {
            return Err(TensorError::Batch(
                "batchnorm train mode requires batch size >= 2".into(),
            ));
        }
        if scale.shape() != [c] || shift.shape() != [c] {
            return Err(TensorError::ShapeMismatch(format!(
                "batchnorm scale/shift must have shape [{c}]"
            )));
        }
        let epsv = T::of_f64(eps);
        let stats = self
            .tape
            .with_value(self.id, |x| batch_stats(x, c, layout_4d));
        let (mean, var) = stats;
        let n_per_c = shape.iter().product::<usize>() / c;

        let out = self.tape.with_values(&[self.id, scale.id, shift.id], |vals| {
            let (x, g, b) = (vals[0], vals[1], vals[2]);
            let mut y = Tensor::zeros(x.shape());
            for_each_channel(x.shape(), layout_4d, |i, ch| {
                let xh = (x.data()[i] - mean[ch]) / (var[ch] + epsv).sqrt();
                y.data_mut()[i] = xh * g.data()[ch] + b.data()[ch];
            });
            y
        });
        Ok(self.tape.push(
            out,
            vec![self.id, scale.id, shift.id],
            Box::new(move |gout, _, pvals| {
                let (x, g, _b) = (pvals[0], pvals[1], pvals[2]);
                let n = T::from_usize_(n_per_c);
                // Recompute normalized inputs and reduce per channel.
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xh = vec![T::zero(); c];
                for_each_channel(x.shape(), layout_4d, |i, ch| {
                    let xh = (x.data()[i] - mean[ch]) / (var[ch] + epsv).sqrt();
                    sum_dy[ch] = sum_dy[ch] + gout.data()[i];
                    sum_dy_xh[ch] = sum_dy_xh[ch] + gout.data()[i] * xh;
                });
                let mut dx = Tensor::zeros(x.shape());
                for_each_channel(x.shape(), layout_4d, |i, ch| {
                    let inv_std = T::one() / (var[ch] + epsv).sqrt();
                    let xh = (x.data()[i] - mean[ch]) * inv_std;
                    let dy = gout.data()[i];
                    dx.data_mut()[i] = g.data()[ch] * inv_std
                        * (dy - sum_dy[ch] / n - xh * sum_dy_xh[ch] / n);
                });
                let dscale = Tensor::new(vec![c], sum_dy_xh.clone()).expect("dscale");
                let dshift = Tensor::new(vec![c], sum_dy.clone()).expect("dshift");
                vec![dx, dscale, dshift]
            }),
        ))
    }

    /// Batch normalization in eval mode: a deterministic affine map using
    /// running statistics.
    pub fn batchnorm_eval(
        self,
        scale: Var<'t, T>,
        shift: Var<'t, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (c, layout_4d) = match shape.len() {
            4 => (shape[1], true),
            2 => (shape[1], false),
            _ => {
                return Err(TensorError::ShapeMismatch(format!(
                    "batchnorm expects [B,C,H,W] or [B,D], got {shape:?}"
                )))
            }
        };
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(TensorError::ShapeMismatch(format!(
                "running stats must have shape [{c}]"
            )));
        }
        let epsv = T::of_f64(eps);
        let rm: Vec<T> = running_mean.data().to_vec();
        let rv: Vec<T> = running_var.data().to_vec();
        let out = self.tape.with_values(&[self.id, scale.id, shift.id], |vals| {
            let (x, g, b) = (vals[0], vals[1], vals[2]);
            let mut y = Tensor::zeros(x.shape());
            for_each_channel(x.shape(), layout_4d, |i, ch| {
                let xh = (x.data()[i] - rm[ch]) / (rv[ch] + epsv).sqrt();
                y.data_mut()[i] = xh * g.data()[ch] + b.data()[ch];
            });
            y
        });
        Ok(self.tape.push(
            out,
            vec![self.id, scale.id, shift.id],
            Box::new(move |gout, _, pvals| {
                let (x, g, _b) = (pvals[0], pvals[1], pvals[2]);
                let mut dx = Tensor::zeros(x.shape());
                let mut dscale = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                for_each_channel(x.shape(), layout_4d, |i, ch| {
                    let inv_std = T::one() / (rv[ch] + epsv).sqrt();
                    let dy = gout.data()[i];
                    dx.data_mut()[i] = dy * g.data()[ch] * inv_std;
                    dscale[ch] = dscale[ch] + dy * (x.data()[i] - rm[ch]) * inv_std;
                    dshift[ch] = dshift[ch] + dy;
                });
                vec![
                    dx,
                    Tensor::new(vec![c], dscale).expect("dscale"),
                    Tensor::new(vec![c], dshift).expect("dshift"),
                ]
            }),
        ))
    }
}

/// Per-channel batch mean and (population) variance.
pub fn batch_stats<T: Scalar>(x: &Tensor<T>, c: usize, layout_4d: bool) -> (Vec<T>, Vec<T>) {
    let n = x.numel() / c;
    let nv = T::from_usize_(n);
    let mut mean = vec![T::zero(); c];
    for_each_channel(x.shape(), layout_4d, |i, ch| {
        mean[ch] = mean[ch] + x.data()[i];
    });
    for m in mean.iter_mut() {
        *m = *m / nv;
    }
    let mut var = vec![T::zero(); c];
    for_each_channel(x.shape(), layout_4d, |i, ch| {
        let d = x.data()[i] - mean[ch];
        var[ch] = var[ch] + d * d;
    });
    for v in var.iter_mut() {
        *v = *v / nv;
    }
    (mean, var)
}

fn for_each_channel(shape: &[usize], layout_4d: bool, mut f: impl FnMut(usize, usize)) {
    if layout_4d {
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                for p in 0..plane {
                    f(base + p, ch);
                }
            }
        }
    } else {
        let (b, d) = (shape[0], shape[1]);
        for bi in 0..b {
            for ch in 0..d {
                f(bi * d + ch, ch);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn pairwise_softmax_symmetry_and_analytic() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_f64_slice(&[3], &[0.0, 3f64.ln(), 1000.0]).unwrap(), false);
        let b = tape.leaf(Tensor::from_f64_slice(&[3], &[0.0, 0.0, 1000.0]).unwrap(), false);
        let (ma, mb) = pairwise_softmax(a, b).unwrap();
        let mav = ma.value();
        let mbv = mb.value();
        assert!((mav.data()[0] - 0.5).abs() < 1e-12);
        assert!((mav.data()[1] - 0.75).abs() < 1e-12);
        assert!((mbv.data()[1] - 0.25).abs() < 1e-12);
        // Stabilization: huge equal logits stay finite and balanced.
        assert!((mav.data()[2] - 0.5).abs() < 1e-12);
        for i in 0..3 {
            assert!((mav.data()[i] + mbv.data()[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn minmax_slices() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 5.0]).unwrap(),
            false,
        );
        let y = x.minmax_normalize_spatial(1e-6).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.25, 0.5, 1.0]);

        let x2 = tape.leaf(
            Tensor::from_f64_slice(&[1, 1, 1, 3], &[-1.0, 0.0, 1.0]).unwrap(),
            false,
        );
        assert_eq!(
            x2.minmax_normalize_spatial(1e-6).unwrap().value().data(),
            &[0.0, 0.5, 1.0]
        );

        // Degenerate (constant) slice fills with 0.5.
        let x3 = tape.leaf(Tensor::full(&[1, 1, 1, 3], 2.0), false);
        assert_eq!(
            x3.minmax_normalize_spatial(1e-6).unwrap().value().data(),
            &[0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn batchnorm_eval_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_slice(&[2, 2], &[1.0, -2.0, 0.5, 3.0]).unwrap(), false);
        let scale = tape.leaf(Tensor::full(&[2], 1.0), false);
        let shift = tape.leaf(Tensor::zeros(&[2]), false);
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::full(&[2], 1.0);
        let y = x.batchnorm_eval(scale, shift, &rm, &rv, 0.0).unwrap();
        for (a, b) in y.value().data().iter().zip(x.value().data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = crate::rng::Rng::new(3);
        let tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_f64_slice(
                &[4, 3, 2, 2],
                &(0..48).map(|_| rng.normal() * 3.0 + 1.0).collect::<Vec<_>>(),
            )
            .unwrap(),
            false,
        );
        let scale = tape.leaf(Tensor::full(&[3], 1.0), false);
        let shift = tape.leaf(Tensor::zeros(&[3]), false);
        let y = x.batchnorm_train(scale, shift, 1e-12).unwrap();
        let (mean, var) = batch_stats(&y.value(), 3, true);
        for ch in 0..3 {
            assert!(mean[ch].abs() < 1e-5, "mean {}", mean[ch]);
            assert!((var[ch] - 1.0).abs() < 1e-5, "var {}", var[ch]);
        }
    }

    #[test]
    fn batchnorm_rejects_singleton_batch() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2]), false);
        let scale = tape.leaf(Tensor::full(&[2], 1.0), false);
        let shift = tape.leaf(Tensor::zeros(&[2]), false);
        assert!(matches!(
            x.batchnorm_train(scale, shift, 1e-5),
            Err(TensorError::Batch(_))
        ));
    }
}
