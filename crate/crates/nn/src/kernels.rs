//! Raw compute kernels behind the graph ops.

use crate::tensor::gemm;
use crate::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one `[cin, h, w]` image into `[cin*k*k, ho*wo]` columns.
fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let out = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let dst = &mut out[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image.
fn col2im<T: Float>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, k, k2) = w.dims4();
    assert_eq!(cin, wcin, "conv input channels");
    assert_eq!(k, k2, "square kernels only");
    let g = ConvGeom { cin, h, w: wd, k, stride, pad };
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let kk = cin * k * k;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw] };
    let in_per = cin * h * wd;
    for i in 0..n {
        let xi = &x.data()[i * in_per..(i + 1) * in_per];
        let oi = &mut out.data_mut()[i * cout * hw..(i + 1) * cout * hw];
        if let Some(b) = b {
            for (co, row) in oi.chunks_mut(hw).enumerate() {
                row.fill(b.data()[co]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, &g, &mut cols);
            &cols
        };
        gemm(false, false, cout, hw, kk, T::one(), w.data(), src, beta, oi);
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, cin, h, wd) = x.dims4();
    let (cout, _, k, _) = w.dims4();
    let g = ConvGeom { cin, h, w: wd, k, stride, pad };
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let kk = cin * k * k;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![T::zero(); kk * hw] } else { Vec::new() };
    let in_per = cin * h * wd;
    for i in 0..n {
        let xi = &x.data()[i * in_per..(i + 1) * in_per];
        let dyi = &dy.data()[i * cout * hw..(i + 1) * cout * hw];
        for (co, row) in dyi.chunks(hw).enumerate() {
            db.data_mut()[co] += row.iter().copied().sum::<T>();
        }
        let src: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, &g, &mut cols);
            &cols
        };
        gemm(false, true, cout, kk, hw, T::one(), dyi, src, T::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[i * in_per..(i + 1) * in_per];
            if g.is_pointwise() {
                gemm(true, false, kk, hw, cout, T::one(), w.data(), dyi, T::one(), dxi);
            } else {
                gemm(true, false, kk, hw, cout, T::one(), w.data(), dyi, T::zero(), &mut dcols);
                col2im(&dcols, &g, dxi);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn upsample2_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..2 * h {
            let srow = &src[p * h * w + (y / 2) * w..p * h * w + (y / 2 + 1) * w];
            let drow = &mut dst[p * 4 * h * w + y * 2 * w..p * 4 * h * w + (y + 1) * 2 * w];
            for (xo, d) in drow.iter_mut().enumerate() {
                *d = srow[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Float>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = dy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for p in 0..n * c {
        for y in 0..h2 {
            for xo in 0..w2 {
                dst[p * h * w + (y / 2) * w + xo / 2] += src[p * h2 * w2 + y * w2 + xo];
            }
        }
    }
    dx
}

/// Per-(sample, group) mean and reciprocal standard deviation.
pub(crate) fn group_stats<T: Float>(x: &Tensor<T>, groups: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let (n, c, h, w) = x.dims4();
    assert_eq!(c % groups, 0, "channels must divide into groups");
    let len = c / groups * h * w;
    let mut mean = Vec::with_capacity(n * groups);
    let mut rstd = Vec::with_capacity(n * groups);
    for chunk in x.data().chunks(len) {
        let m = chunk.iter().map(|v| v.f64()).sum::<f64>() / len as f64;
        let var = chunk.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / len as f64;
        mean.push(T::of(m));
        rstd.push(T::of(1.0 / (var + eps).sqrt()));
    }
    (mean, rstd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, k, _) = w.dims4();
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for i in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((i * cin + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((co * cin + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((i * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
            let x = Tensor::from_vec(&[2, 3, 7, 6], (0..252).map(|i| ((i * 37) % 17) as f64 - 8.0).collect());
            let w = Tensor::from_vec(&[4, 3, k, k], (0..12 * k * k).map(|i| ((i * 13) % 7) as f64 * 0.1).collect());
            let b = Tensor::from_vec(&[4], vec![0.5, -1.0, 0.0, 2.0]);
            let got = conv2d_forward(&x, &w, Some(&b), s, p);
            let want = naive_conv(&x, &w, &b, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-9, "k={k} s={s} p={p}");
            }
        }
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = Tensor::from_vec(&[1, 2, 3, 3], (0..18).map(|i| i as f64).collect());
        let dy = Tensor::from_vec(&[1, 2, 6, 6], (0..72).map(|i| (i as f64).cos()).collect());
        let lhs: f64 = upsample2_forward(&x).data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(upsample2_backward(&dy).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
