//! Dense linear maps, including the per-part variant used by the gait head.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;

use crate::error::{Result, TensorError};
use crate::ops::kernels;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Scalar> Var<'t, T> {
    /// y[N, Cout] = x[N, Cin] · w[Cout, Cin]^T  (no bias)
    pub fn linear(self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "linear expects x[N,Cin], w[Cout,Cin]; got {xs:?} and {ws:?}"
            )));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[0]);
        let out = self.tape.with_values(&[self.id, weight.id], |vals| {
            let mut y = vec![T::zero(); n * cout];
            kernels::matmul_bt_acc(vals[0].data(), vals[1].data(), &mut y, n, cin, cout);
            Tensor::new(vec![n, cout], y).expect("linear shape")
        });
        Ok(self.tape.push(
            out,
            vec![self.id, weight.id],
            Box::new(move |gout, _, pvals| {
                let (x, w) = (pvals[0], pvals[1]);
                // dx = dy · w ; dw = dy^T · x
                let mut dx = vec![T::zero(); n * cin];
                kernels::matmul_acc(gout.data(), w.data(), &mut dx, n, cout, cin);
                let mut dw = vec![T::zero(); cout * cin];
                kernels::matmul_tn_acc(gout.data(), x.data(), &mut dw, n, cout, cin);
                vec![
                    Tensor::new(vec![n, cin], dx).expect("dx shape"),
                    Tensor::new(vec![cout, cin], dw).expect("dw shape"),
                ]
            }),
        ))
    }

    /// Separate fully connected layers: part p is mapped only by weight
    /// matrix p, with no cross-part sharing.
    ///
    /// y[B, P, D] = x[B, P, C] · w[P, D, C]^T per part.
    pub fn per_part_linear(self, weight: Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "per_part_linear expects x[B,P,C], w[P,D,C]; got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[0] || xs[2] != ws[2] {
            return Err(TensorError::ShapeMismatch(format!(
                "part count / channel mismatch: x {xs:?} vs w {ws:?}"
            )));
        }
        let (b, p, c, d) = (xs[0], xs[1], xs[2], ws[1]);
        let out = self.tape.with_values(&[self.id, weight.id], |vals| {
            let (x, w) = (vals[0], vals[1]);
            let mut y = vec![T::zero(); b * p * d];
            for pi in 0..p {
                let wp = &w.data()[pi * d * c..(pi + 1) * d * c];
                for bi in 0..b {
                    let xr = &x.data()[(bi * p + pi) * c..(bi * p + pi + 1) * c];
                    let yr = &mut y[(bi * p + pi) * d..(bi * p + pi + 1) * d];
                    kernels::matmul_bt_acc(xr, wp, yr, 1, c, d);
                }
            }
            Tensor::new(vec![b, p, d], y).expect("ppl shape")
        });
        Ok(self.tape.push(
            out,
            vec![self.id, weight.id],
            Box::new(move |gout, _, pvals| {
                let (x, w) = (pvals[0], pvals[1]);
                let mut dx = vec![T::zero(); b * p * c];
                let mut dw = vec![T::zero(); p * d * c];
                for pi in 0..p {
                    let wp = &w.data()[pi * d * c..(pi + 1) * d * c];
                    let dwp = &mut dw[pi * d * c..(pi + 1) * d * c];
                    for bi in 0..b {
                        let g = &gout.data()[(bi * p + pi) * d..(bi * p + pi + 1) * d];
                        let xr = &x.data()[(bi * p + pi) * c..(bi * p + pi + 1) * c];
                        let dxr = &mut dx[(bi * p + pi) * c..(bi * p + pi + 1) * c];
                        kernels::matmul_acc(g, wp, dxr, 1, d, c);
                        kernels::matmul_tn_acc(g, xr, dwp, 1, d, c);
                    }
                }
                vec![
                    Tensor::new(vec![b, p, c], dx).expect("dx shape"),
                    Tensor::new(vec![p, d, c], dw).expect("dw shape"),
                ]
            }),
        ))
    }
}
