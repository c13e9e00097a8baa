//! Dense NCHW `f32` tensors and the raw kernels the layers are built from.

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{aligned_source, taps, Grid};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::InvalidValue("tensor buffer length does not match shape"));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stacks single-channel grids into an `N×1×H×W` tensor.
    pub fn from_grids(grids: &[&Grid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or(Error::InvalidValue("cannot stack zero grids"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            first.check_same_dims(g)?;
            data.extend(g.as_slice().iter().map(|&v| v as f32));
        }
        Self::from_vec(grids.len(), 1, h, w, data)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let start = (n * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// One channel plane of one sample as an `f64` grid.
    pub fn plane_grid(&self, n: usize, c: usize) -> Grid {
        let data = self.plane(n, c).iter().map(|&v| v as f64).collect();
        Grid::from_vec(self.h, self.w, data).expect("plane length matches dims")
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Reorders samples: output sample `i` is input sample `order[i]`.
    pub fn select(&self, order: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(order.len() * self.sample_len());
        for &i in order {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            n: order.len(),
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// Channel concatenation of two tensors with equal batch and spatial size.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch {
            expected: (a.h, a.w),
            actual: (b.h, b.w),
        });
    }
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        let dst = out.sample_mut(n);
        let split = a.sample_len();
        dst[..split].copy_from_slice(a.sample(n));
        dst[split..].copy_from_slice(b.sample(n));
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(t: &Tensor, first: usize) -> (Tensor, Tensor) {
    let (n, c, h, w) = t.shape();
    let mut a = Tensor::zeros(n, first, h, w);
    let mut b = Tensor::zeros(n, c - first, h, w);
    let split = first * h * w;
    for i in 0..n {
        let src = t.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..split]);
        b.sample_mut(i).copy_from_slice(&src[split..]);
    }
    (a, b)
}

/// `C = A·B (+ C)` on row-major buffers; `a_t`/`b_t` read the stored operand
/// transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the assertion above guarantees every strided access stays in
    // bounds of the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// True when the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad` lies
/// inside the plane.
fn valid_columns(g: &ConvGeometry, kx: usize, ow: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let reach = g.width - 1 + g.pad;
    if reach < kx {
        return (0, 0);
    }
    let hi = ((reach - kx) / g.stride + 1).min(ow);
    (lo.min(hi), hi)
}

/// Unfolds one `C×H×W` sample into a `(C·k·k) × (OH·OW)` column matrix.
pub(crate) fn im2col(x: &[f32], g: &ConvGeometry, col: &mut [f32]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_columns(g, kx, ow);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if lo < hi {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                                *v = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into a sample.
pub(crate) fn col2im(col: &[f32], g: &ConvGeometry, dx: &mut [f32]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_columns(g, kx, ow);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * ow + lo..oy * ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f32,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            let (lo, hi, t) = taps(aligned_source(i, src, dst), src);
            Tap { lo, hi, t: t as f32 }
        })
        .collect()
}

/// Corner-aligned bilinear resize of every plane.
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (n, c, h, w) = x.shape();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut out = Tensor::zeros(n, c, out_h, out_w);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (oy, ry) in rows.iter().enumerate() {
                let top = &src[ry.lo * w..(ry.lo + 1) * w];
                let bottom = &src[ry.hi * w..(ry.hi + 1) * w];
                for (ox, cx) in cols.iter().enumerate() {
                    let a = top[cx.lo] + (top[cx.hi] - top[cx.lo]) * cx.t;
                    let b = bottom[cx.lo] + (bottom[cx.hi] - bottom[cx.lo]) * cx.t;
                    dst[oy * out_w + ox] = a + (b - a) * ry.t;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`], mapping `dy` back to an `h×w` input.
pub fn upsample_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, out_h, out_w) = dy.shape();
    if (h, w) == (out_h, out_w) {
        return dy.clone();
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut dx = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let src = dy.plane(ni, ci);
            let dst = dx.plane_mut(ni, ci);
            for (oy, ry) in rows.iter().enumerate() {
                for (ox, cx) in cols.iter().enumerate() {
                    let g = src[oy * out_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    let gt = g * (1.0 - ry.t);
                    let gb = g * ry.t;
                    dst[ry.lo * w + cx.lo] += gt * (1.0 - cx.t);
                    dst[ry.lo * w + cx.hi] += gt * cx.t;
                    dst[ry.hi * w + cx.lo] += gb * (1.0 - cx.t);
                    dst[ry.hi * w + cx.hi] += gb * cx.t;
                }
            }
        }
    }
    dx
}

/// Mean over each plane; returns an `N×C×1×1` tensor.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, _, _) = x.shape();
    let inv = 1.0 / x.plane_len() as f32;
    let mut out = Tensor::zeros(n, c, 1, 1);
    for ni in 0..n {
        for ci in 0..c {
            out.data[ni * c + ci] = x.plane(ni, ci).iter().sum::<f32>() * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, _, _) = dy.shape();
    let inv = 1.0 / (h * w) as f32;
    let mut dx = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            let g = dy.data[ni * c + ci] * inv;
            dx.plane_mut(ni, ci).fill(g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
    }

    #[test]
    fn gemm_with_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn im2col_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (3, 1, 0)] {
            let g = ConvGeometry {
                channels: 2,
                height: 6,
                width: 5,
                kernel: k,
                stride: s,
                pad: p,
            };
            let x = random(&mut rng, 1, 2, 6, 5);
            let mut col = vec![0.0; g.col_rows() * g.col_cols()];
            im2col(x.as_slice(), &g, &mut col);
            let v: Vec<f32> = (0..col.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut back = vec![0.0; x.as_slice().len()];
            col2im(&v, &g, &mut back);
            assert!((dot(&col, &v) - dot(x.as_slice(), &back)).abs() < 1e-4);
        }
    }

    #[test]
    fn upsample_adjoint_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 2, 3, 4, 5);
        assert_eq!(upsample_bilinear(&x, 4, 5), x);
        let y = upsample_bilinear(&x, 16, 20);
        let v = random(&mut rng, 2, 3, 16, 20);
        let back = upsample_bilinear_backward(&v, 4, 5);
        assert!((dot(y.as_slice(), v.as_slice()) - dot(x.as_slice(), back.as_slice())).abs() < 1e-3);
    }

    #[test]
    fn upsample_matches_grid_resize() {
        let g = Grid::from_fn(3, 4, |y, x| (y * 4 + x) as f64 * 0.25);
        let t = Tensor::from_grids(&[&g]).unwrap();
        let up = upsample_bilinear(&t, 7, 9);
        let reference = crate::raster::resize_bilinear(&g, 7, 9).unwrap();
        for (a, b) in up.as_slice().iter().zip(reference.as_slice()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 2, 3, 4, 4);
        let b = random(&mut rng, 2, 1, 4, 4);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.channels(), 4);
        let (a2, b2) = split_channels(&c, 3);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(concat_channels(&a, &random(&mut rng, 2, 1, 4, 5)).is_err());
    }

    #[test]
    fn pooling_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 2, 3, 5, 4);
        let p = global_avg_pool(&x);
        let v = random(&mut rng, 2, 3, 1, 1);
        let back = global_avg_pool_backward(&v, 5, 4);
        assert!((dot(p.as_slice(), v.as_slice()) - dot(x.as_slice(), back.as_slice())).abs() < 1e-5);
    }
}
