//! 2D convolution (zero padding, no bias) over [B, C, H, W] tensors.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;

use crate::error::{Result, TensorError};
use crate::ops::kernels;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<ConvDims> {
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::ShapeMismatch(format!(
            "conv2d expects x[B,Cin,H,W], w[Cout,Cin,kH,kW]; got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(TensorError::ShapeMismatch(format!(
            "input channels {} != kernel channels {}",
            xs[1], ws[1]
        )));
    }
    if stride < 1 {
        return Err(TensorError::Dimension("stride must be >= 1".into()));
    }
    let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(TensorError::Dimension(format!(
            "kernel {kh}x{kw} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok(ConvDims {
        b: xs[0],
        cin: xs[1],
        h,
        w,
        cout: ws[0],
        kh,
        kw,
        stride,
        pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn conv2d(self, weight: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let d = conv_dims(&self.shape(), &weight.shape(), stride, pad)?;
        let out = self.tape.with_values(&[self.id, weight.id], |vals| {
            let (x, w) = (vals[0], vals[1]);
            let img = d.cin * d.h * d.w;
            let plane = d.oh * d.ow;
            let kdim = d.cin * d.kh * d.kw;
            let mut y = vec![T::zero(); d.b * d.cout * plane];
            for bi in 0..d.b {
                let col = kernels::im2col(
                    &x.data()[bi * img..(bi + 1) * img],
                    d.cin,
                    d.h,
                    d.w,
                    d.kh,
                    d.kw,
                    d.stride,
                    d.pad,
                    d.oh,
                    d.ow,
                );
                kernels::matmul_acc(
                    w.data(),
                    &col,
                    &mut y[bi * d.cout * plane..(bi + 1) * d.cout * plane],
                    d.cout,
                    kdim,
                    plane,
                );
            }
            Tensor::new(vec![d.b, d.cout, d.oh, d.ow], y).expect("conv shape")
        });
        Ok(self.tape.push(
            out,
            vec![self.id, weight.id],
            Box::new(move |gout, _, pvals| {
                let (x, w) = (pvals[0], pvals[1]);
                let img = d.cin * d.h * d.w;
                let plane = d.oh * d.ow;
                let kdim = d.cin * d.kh * d.kw;
                let mut dx = Tensor::zeros(x.shape());
                let mut dw = vec![T::zero(); d.cout * kdim];
                for bi in 0..d.b {
                    let gslice = &gout.data()[bi * d.cout * plane..(bi + 1) * d.cout * plane];
                    let col = kernels::im2col(
                        &x.data()[bi * img..(bi + 1) * img],
                        d.cin,
                        d.h,
                        d.w,
                        d.kh,
                        d.kw,
                        d.stride,
                        d.pad,
                        d.oh,
                        d.ow,
                    );
                    // dW += dY · col^T   (dot products over the output plane)
                    kernels::matmul_bt_acc(gslice, &col, &mut dw, d.cout, plane, kdim);
                    // dCol = W^T · dY, then scatter back into the image.
                    let mut dcol = vec![T::zero(); kdim * plane];
                    kernels::matmul_tn_acc(w.data(), gslice, &mut dcol, d.cout, kdim, plane);
                    kernels::col2im_acc(
                        &dcol,
                        &mut dx.data_mut()[bi * img..(bi + 1) * img],
                        d.cin,
                        d.h,
                        d.w,
                        d.kh,
                        d.kw,
                        d.stride,
                        d.pad,
                        d.oh,
                        d.ow,
                    );
                }
                vec![
                    dx,
                    Tensor::new(vec![d.cout, d.cin, d.kh, d.kw], dw).expect("dw shape"),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use alloc::vec::Vec;

    #[test]
    fn ones_kernel_no_pad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let w = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let y = x.conv2d(w, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.value().data(), &[9.0]);
    }

    #[test]
    fn ones_kernel_pad_one() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let w = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let y = x.conv2d(w, 1, 1).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert_eq!(
            y.value().data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn kernel_exceeding_padded_input_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
        let w = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]), false);
        assert!(x.conv2d(w, 1, 0).is_err());
        assert!(x.conv2d(w, 1, 1).is_ok());
    }

    /// Direct nested-loop convolution, the independent oracle for random cases.
    fn conv_reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut y = Tensor::zeros(&[b, cout, oh, ow]);
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy * stride + ky;
                                    let ix = ox * stride + kx;
                                    if iy < pad || ix < pad {
                                        continue;
                                    }
                                    let (iy, ix) = (iy - pad, ix - pad);
                                    if iy >= h || ix >= wd {
                                        continue;
                                    }
                                    acc += x.data()[((bi * cin + ci) * h + iy) * wd + ix]
                                        * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        y.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn random_conv_matches_loop_reference() {
        let mut rng = crate::rng::Rng::new(7);
        let x = Tensor::<f64>::from_f64_slice(
            &[2, 3, 8, 6],
            &(0..2 * 3 * 8 * 6).map(|_| rng.normal()).collect::<Vec<_>>(),
        )
        .unwrap();
        let w = Tensor::<f64>::from_f64_slice(
            &[4, 3, 3, 3],
            &(0..4 * 3 * 3 * 3).map(|_| rng.normal()).collect::<Vec<_>>(),
        )
        .unwrap();
        let tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone(), false);
        let wv = tape.leaf(w.clone(), false);
        let y = xv.conv2d(wv, 2, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4, 3]);
        let r = conv_reference(&x, &w, 2, 1);
        for (a, b) in y.value().data().iter().zip(r.data().iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
