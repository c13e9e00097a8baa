//! Raster types shared by every other module.
//!
//! [`Grid`] is a plain row-major `H×W` map of `f64`. [`Image`] is an
//! interleaved RGB raster in `[0, 1]`, and [`MaskMap`] tags a grid with the
//! role it plays (target, attention, confidence).

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Row-major `height × width` scalar map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidValue("buffer length does not match height*width"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row/column transpose.
    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |y, x| self[(x, y)])
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn check_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    #[inline]
    fn index(&self, (y, x): (usize, usize)) -> &f64 {
        &self.data[y * self.width + x]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    #[inline]
    fn index_mut(&mut self, (y, x): (usize, usize)) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }
}

/// Interleaved RGB image with every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB samples, validating range and size.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::TooSmall {
                height,
                width,
                min: MIN_IMAGE_SIDE,
            });
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidValue("buffer length does not match height*width*3"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidValue("image samples must be finite and within [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Stacks three channel grids; values are clamped into `[0, 1]`.
    pub fn from_channels(channels: [&Grid; 3]) -> Result<Self> {
        let (h, w) = channels[0].dims();
        for c in &channels[1..] {
            channels[0].check_same_dims(c)?;
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for c in &channels {
                data.push(c.as_slice()[i].clamp(0.0, 1.0));
            }
        }
        Self::new(h, w, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn channel(&self, c: usize) -> Grid {
        assert!(c < 3, "channel index out of range");
        Grid::from_fn(self.height, self.width, |y, x| self.pixel(y, x)[c])
    }

    pub fn channels(&self) -> [Grid; 3] {
        [self.channel(0), self.channel(1), self.channel(2)]
    }

    /// Per-pixel mean of R, G and B.
    pub fn channel_mean(&self) -> Grid {
        Grid::from_fn(self.height, self.width, |y, x| {
            let [r, g, b] = self.pixel(y, x);
            (r + g + b) / 3.0
        })
    }

    /// Multiplies every sample by `factor`, clamping back into `[0, 1]`.
    pub fn scale_clamped(&self, factor: f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v * factor).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

/// What a [`MaskMap`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskRole {
    SegTarget,
    BoundaryTarget,
    Attention,
    Confidence,
}

impl MaskRole {
    pub fn is_target(self) -> bool {
        matches!(self, MaskRole::SegTarget | MaskRole::BoundaryTarget)
    }
}

/// Scalar map in `[0, 1]` tagged with its role. Target roles are binary.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMap {
    grid: Grid,
    role: MaskRole,
}

impl MaskMap {
    pub fn new(grid: Grid, role: MaskRole) -> Result<Self> {
        if grid
            .as_slice()
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidValue("mask values must be finite and within [0, 1]"));
        }
        if role.is_target() && !grid.is_binary() {
            return Err(Error::InvalidValue("target masks must be binary"));
        }
        Ok(Self { grid, role })
    }

    /// Thresholds 8-bit samples: `> 127` becomes 1 for target roles, other
    /// roles keep `v / 255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8], role: MaskRole) -> Result<Self> {
        if bytes.len() != height * width {
            return Err(Error::InvalidValue("buffer length does not match height*width"));
        }
        let data = bytes
            .iter()
            .map(|&b| {
                if role.is_target() {
                    if b > 127 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    b as f64 / 255.0
                }
            })
            .collect();
        Self::new(Grid::from_vec(height, width, data)?, role)
    }

    /// 8-bit encoding: 0/255 for binary maps, rounded `v * 255` otherwise.
    pub fn to_u8(&self) -> Vec<u8> {
        self.grid
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// `1 - m` with the same role.
    pub fn complement(&self) -> MaskMap {
        MaskMap {
            grid: self.grid.map(|v| 1.0 - v),
            role: self.role,
        }
    }
}

/// `(v - min) / (max - min)`; a constant map normalizes to all zeros.
pub fn minmax_normalize(map: &Grid) -> Grid {
    let (lo, hi) = map.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return Grid::zeros(map.height(), map.width());
    }
    map.map(|v| (v - lo) / range)
}

/// Vector-Jacobian product of [`minmax_normalize`].
///
/// `upstream` is the gradient with respect to the normalized output. The
/// minimum and maximum are treated as the first pixel attaining them.
pub fn minmax_normalize_backward(input: &Grid, upstream: &Grid) -> Grid {
    let (h, w) = input.dims();
    let mut grad = Grid::zeros(h, w);
    let (lo, hi) = input.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return grad;
    }
    let values = input.as_slice();
    let argmin = values.iter().position(|&v| v == lo).unwrap_or(0);
    let argmax = values.iter().position(|&v| v == hi).unwrap_or(0);
    let mut d_lo = 0.0;
    let mut d_hi = 0.0;
    for ((g, &v), &u) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(values)
        .zip(upstream.as_slice())
    {
        let y = (v - lo) / range;
        *g = u / range;
        d_lo -= u * (1.0 - y) / range;
        d_hi -= u * y / range;
    }
    grad.as_mut_slice()[argmin] += d_lo;
    grad.as_mut_slice()[argmax] += d_hi;
    grad
}

/// Corner-aligned source coordinate for output index `i`.
#[inline]
pub(crate) fn aligned_source(i: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len <= 1 || src_len <= 1 {
        0.0
    } else {
        i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Interpolation taps `(lower index, upper index, upper weight)`.
#[inline]
pub(crate) fn taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let lo = (pos.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    let t = (pos - lo as f64).clamp(0.0, 1.0);
    (lo, hi, t)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

/// Bilinear resize with corner-aligned sampling.
///
/// Output corners coincide with input corners, so a same-size resize is the
/// identity and every output value lies between the input's min and max.
pub fn resize_bilinear(map: &Grid, new_height: usize, new_width: usize) -> Result<Grid> {
    if new_height == 0 || new_width == 0 {
        return Err(Error::InvalidValue("resize target must be at least 1x1"));
    }
    if map.is_empty() {
        return Err(Error::InvalidValue("cannot resize an empty map"));
    }
    if map.dims() == (new_height, new_width) {
        return Ok(map.clone());
    }
    let (h, w) = map.dims();
    let cols: Vec<(usize, usize, f64)> = (0..new_width)
        .map(|x| taps(aligned_source(x, w, new_width), w))
        .collect();
    Ok(Grid::from_fn(new_height, new_width, |y, x| {
        let (y0, y1, ty) = taps(aligned_source(y, h, new_height), h);
        let (x0, x1, tx) = cols[x];
        let top = lerp(map[(y0, x0)], map[(y0, x1)], tx);
        let bottom = lerp(map[(y1, x0)], map[(y1, x1)], tx);
        lerp(top, bottom, ty)
    }))
}

/// Nearest-neighbour resize with the same corner-aligned coordinates.
pub fn resize_nearest(map: &Grid, new_height: usize, new_width: usize) -> Result<Grid> {
    if new_height == 0 || new_width == 0 || map.is_empty() {
        return Err(Error::InvalidValue("resize requires non-empty input and output"));
    }
    let (h, w) = map.dims();
    Ok(Grid::from_fn(new_height, new_width, |y, x| {
        let sy = aligned_source(y, h, new_height).round() as usize;
        let sx = aligned_source(x, w, new_width).round() as usize;
        map[(sy.min(h - 1), sx.min(w - 1))]
    }))
}

/// Resizes each channel of an image bilinearly.
pub fn resize_image(image: &Image, new_height: usize, new_width: usize) -> Result<Image> {
    let [r, g, b] = image.channels();
    let r = resize_bilinear(&r, new_height, new_width)?;
    let g = resize_bilinear(&g, new_height, new_width)?;
    let b = resize_bilinear(&b, new_height, new_width)?;
    Image::from_channels([&r, &g, &b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> Grid {
        Grid::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&row(&[2.0, 4.0, 6.0])).as_slice(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&row(&[-1.0, 0.0, 3.0])).as_slice(), &[0.0, 0.25, 1.0]);
        assert_eq!(minmax_normalize(&Grid::filled(3, 3, 5.0)), Grid::zeros(3, 3));
    }

    #[test]
    fn minmax_backward_matches_finite_differences() {
        let input = row(&[0.3, -1.2, 2.5, 0.7, 1.1]);
        let upstream = row(&[0.5, -0.25, 1.0, 2.0, -1.5]);
        let analytic = minmax_normalize_backward(&input, &upstream);
        let objective = |g: &Grid| {
            minmax_normalize(g)
                .as_slice()
                .iter()
                .zip(upstream.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        for i in 0..input.len() {
            let step = 1e-6;
            let mut plus = input.clone();
            plus.as_mut_slice()[i] += step;
            let mut minus = input.clone();
            minus.as_mut_slice()[i] -= step;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
            assert!((numeric - analytic.as_slice()[i]).abs() < 1e-7, "pixel {i}");
        }
    }

    #[test]
    fn mask_thresholding() {
        let m = MaskMap::from_u8(1, 3, &[255, 0, 127], MaskRole::SegTarget).unwrap();
        assert_eq!(m.grid().as_slice(), &[1.0, 0.0, 0.0]);
        let m = MaskMap::from_u8(1, 2, &[128, 255], MaskRole::Confidence).unwrap();
        assert_eq!(m.grid().as_slice(), &[128.0 / 255.0, 1.0]);
    }

    #[test]
    fn binary_mask_u8_round_trip() {
        let bytes = [0u8, 255, 255, 0, 255, 0];
        let m = MaskMap::from_u8(2, 3, &bytes, MaskRole::BoundaryTarget).unwrap();
        assert_eq!(m.to_u8(), bytes);
    }

    #[test]
    fn target_roles_reject_soft_values() {
        let g = Grid::filled(2, 2, 0.5);
        assert!(MaskMap::new(g.clone(), MaskRole::SegTarget).is_err());
        assert!(MaskMap::new(g, MaskRole::Attention).is_ok());
    }

    #[test]
    fn image_validation() {
        assert!(matches!(
            Image::new(4, 8, vec![0.0; 96]),
            Err(Error::TooSmall { .. })
        ));
        assert!(Image::new(8, 8, vec![1.5; 192]).is_err());
        assert!(Image::new(8, 8, vec![0.5; 192]).is_ok());
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let g = Grid::from_fn(5, 7, |y, x| (y * 7 + x) as f64 * 0.13);
        assert_eq!(resize_bilinear(&g, 5, 7).unwrap(), g);
        let c = Grid::filled(3, 4, 0.375);
        let r = resize_bilinear(&c, 9, 2).unwrap();
        assert!(r.as_slice().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn bilinear_two_by_two_to_two_by_four() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&g, 2, 4).unwrap();
        let third = 1.0 / 3.0;
        let expected = [0.0, third, 2.0 * third, 1.0];
        for y in 0..2 {
            for x in 0..4 {
                assert!((r[(y, x)] - expected[x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_sized_resize_is_rejected() {
        assert!(resize_bilinear(&Grid::zeros(2, 2), 0, 3).is_err());
    }

    proptest! {
        #[test]
        fn bilinear_stays_in_convex_hull(
            values in prop::collection::vec(-5.0f64..5.0, 12),
            nh in 1usize..20,
            nw in 1usize..20,
        ) {
            let g = Grid::from_vec(3, 4, values).unwrap();
            let (lo, hi) = g.min_max();
            let r = resize_bilinear(&g, nh, nw).unwrap();
            prop_assert_eq!(r.dims(), (nh, nw));
            for &v in r.as_slice() {
                prop_assert!(v >= lo && v <= hi);
            }
        }

        #[test]
        fn minmax_idempotent_on_unit_span(values in prop::collection::vec(0.0f64..1.0, 2..30)) {
            let mut values = values;
            values[0] = 0.0;
            values[1] = 1.0;
            let g = Grid::from_vec(1, values.len(), values).unwrap();
            let once = minmax_normalize(&g);
            prop_assert_eq!(&once, &g);
            prop_assert_eq!(minmax_normalize(&once), once);
        }
    }
}
