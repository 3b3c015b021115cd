//! Dense kernels shared by the linear and convolution operations.
//!
//! Loop orders are chosen so the innermost loop runs over contiguous
//! output/input memory and auto-vectorizes.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// c[m,n] += a[m,k] * b[k,n]
///
/// Register-tiled 4 rows at a time: each loaded b element feeds four
/// multiply-adds, which is what makes the convolution path compute- rather
/// than load-bound.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (block, _) = c[i * n..].split_at_mut(4 * n);
        let (r0, rest) = block.split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        let (a0, a1, a2, a3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for p in 0..k {
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                r0[j] = r0[j] + v0 * bv;
                r1[j] = r1[j] + v1 * bv;
                r2[j] = r2[j] + v2 * bv;
                r3[j] = r3[j] + v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv = *cv + av * bv;
            }
        }
        i += 1;
    }
}

/// c[m,n] = a[m,k] * b[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// c[m,n] += a[m,k] * b[n,k]^T  (dot products over contiguous rows)
///
/// 2x4 register tile: each loaded a/b element feeds several of the eight
/// accumulators, which roughly quadruples throughput over the plain
/// one-dot-per-cell loop.
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let dot = |x: &[T], y: &[T]| {
        let mut acc = T::zero();
        for (&xv, &yv) in x.iter().zip(y.iter()) {
            acc = acc + xv * yv;
        }
        acc
    };
    let mut i = 0;
    while i + 2 <= m {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let mut j = 0;
        while j + 4 <= n {
            let b0 = &b[j * k..(j + 1) * k];
            let b1 = &b[(j + 1) * k..(j + 2) * k];
            let b2 = &b[(j + 2) * k..(j + 3) * k];
            let b3 = &b[(j + 3) * k..(j + 4) * k];
            let (mut c00, mut c01, mut c02, mut c03) = (T::zero(), T::zero(), T::zero(), T::zero());
            let (mut c10, mut c11, mut c12, mut c13) = (T::zero(), T::zero(), T::zero(), T::zero());
            for p in 0..k {
                let (x0, x1) = (a0[p], a1[p]);
                let (y0, y1, y2, y3) = (b0[p], b1[p], b2[p], b3[p]);
                c00 = c00 + x0 * y0;
                c01 = c01 + x0 * y1;
                c02 = c02 + x0 * y2;
                c03 = c03 + x0 * y3;
                c10 = c10 + x1 * y0;
                c11 = c11 + x1 * y1;
                c12 = c12 + x1 * y2;
                c13 = c13 + x1 * y3;
            }
            let r0 = i * n + j;
            let r1 = (i + 1) * n + j;
            c[r0] = c[r0] + c00;
            c[r0 + 1] = c[r0 + 1] + c01;
            c[r0 + 2] = c[r0 + 2] + c02;
            c[r0 + 3] = c[r0 + 3] + c03;
            c[r1] = c[r1] + c10;
            c[r1 + 1] = c[r1 + 1] + c11;
            c[r1 + 2] = c[r1 + 2] + c12;
            c[r1 + 3] = c[r1 + 3] + c13;
            j += 4;
        }
        while j < n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(a0, brow);
            c[(i + 1) * n + j] = c[(i + 1) * n + j] + dot(a1, brow);
            j += 1;
        }
        i += 2;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = c[i * n + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
        i += 1;
    }
}

/// c[k,n] += a[m,k]^T * b[m,n]
///
/// Same four-way fusion as [`matmul_acc`], here over the m rows feeding
/// each output row.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for p in 0..k {
        let crow = &mut c[p * n..(p + 1) * n];
        let mut i = 0;
        while i + 4 <= m {
            let (a0, a1, a2, a3) = (
                a[i * k + p],
                a[(i + 1) * k + p],
                a[(i + 2) * k + p],
                a[(i + 3) * k + p],
            );
            let b0 = &b[i * n..(i + 1) * n];
            let b1 = &b[(i + 1) * n..(i + 2) * n];
            let b2 = &b[(i + 2) * n..(i + 3) * n];
            let b3 = &b[(i + 3) * n..(i + 4) * n];
            for j in 0..n {
                crow[j] = crow[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            i += 4;
        }
        while i < m {
            let av = a[i * k + p];
            if av != T::zero() {
                let brow = &b[i * n..(i + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv = *cv + av * bv;
                }
            }
            i += 1;
        }
    }
}

/// Unrolls one image [C,H,W] into columns [C*kh*kw, oh*ow] for a
/// convolution with the given stride/padding (zero padding).
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut col = vec![T::zero(); c * kh * kw * oh * ow];
    let plane = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        col[dst + ox] = img[(ch * h + iy) * w + (ix - pad)];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds columns back into an image; inverse of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc<T: Scalar>(
    col: &[T],
    img: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let plane = oh * ow;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        let d = (ch * h + iy) * w + (ix - pad);
                        img[d] = img[d] + col[src + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0f64, 6.0, 7.0, 8.0]; // 2x2
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0f64, 0.5, -1.0, 2.0, 0.0, 3.0]; // 3x2
        let c = matmul(&a, &b, 2, 3, 2);
        // bt: b' is 2x3 with b'[j][p] = b[p][j]
        let bt = [1.0f64, -1.0, 0.0, 0.5, 2.0, 3.0];
        let mut c2 = vec![0.0; 4];
        matmul_bt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);
        // tn: a' is 3x2 with a'[p][i] = a[i][p]
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = vec![0.0; 4];
        matmul_tn_acc(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c, c3);
    }
}
