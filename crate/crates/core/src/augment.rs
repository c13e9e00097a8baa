//! Paired image/mask augmentation and stride padding.
//!
//! Geometry (rotation, horizontal flip) is applied identically to the image
//! and the segmentation target; lightness touches only the image. The
//! boundary target is always regenerated from the transformed mask rather
//! than transformed itself, so its width keeps following the area rule.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::boundary::{make_boundary_target, BoundaryMask};
use crate::raster::{Grid, Image, MaskMap, MaskRole};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub seg_target: MaskMap,
    pub boundary_target: BoundaryMask,
    pub source_id: String,
}

impl Sample {
    /// Builds a sample, deriving the boundary target from the mask.
    pub fn new(
        image: Image,
        seg_target: MaskMap,
        canonical_width: u32,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if image.dims() != seg_target.dims() {
            return Err(Error::ShapeMismatch {
                expected: image.dims(),
                actual: seg_target.dims(),
            });
        }
        let boundary_target = make_boundary_target(&seg_target, canonical_width)?;
        Ok(Self {
            image,
            seg_target,
            boundary_target,
            source_id: source_id.into(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    /// Rotation angle is drawn from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    pub flip_probability: f64,
    /// Multiplicative lightness range.
    pub lightness_range: (f64, f64),
    pub enabled: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_degrees: 45.0,
            flip_probability: 0.5,
            lightness_range: (0.7, 1.3),
            enabled: true,
        }
    }
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidValue("flip probability must lie in [0, 1]"));
        }
        if self.rotation_degrees < 0.0 || !self.rotation_degrees.is_finite() {
            return Err(Error::InvalidValue("rotation range must be non-negative"));
        }
        let (lo, hi) = self.lightness_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidValue("lightness range must be positive and ordered"));
        }
        Ok(())
    }

    /// Draws one set of transform parameters.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        if !self.enabled {
            return AugmentDraw::identity();
        }
        let angle_degrees = if self.rotation_degrees > 0.0 {
            rng.gen_range(-self.rotation_degrees..=self.rotation_degrees)
        } else {
            0.0
        };
        let flip = rng.gen_bool(self.flip_probability);
        let (lo, hi) = self.lightness_range;
        let lightness = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        AugmentDraw {
            angle_degrees,
            flip,
            lightness,
        }
    }
}

/// Concrete transform parameters for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub angle_degrees: f64,
    pub flip: bool,
    pub lightness: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            angle_degrees: 0.0,
            flip: false,
            lightness: 1.0,
        }
    }
}

/// Mirror an out-of-range coordinate back into `[0, n - 1]` (edge pixel not
/// repeated).
fn reflect(mut v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    v = v.abs() % period;
    if v > last {
        period - v
    } else {
        v
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    reflect(i as f64, n) as usize
}

fn bilinear_sample(g: &Grid, y: f64, x: f64) -> f64 {
    let (h, w) = g.dims();
    let y0 = y.floor();
    let x0 = x.floor();
    let ty = y - y0;
    let tx = x - x0;
    let (y0, x0) = (y0 as usize, x0 as usize);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let top = g[(y0, x0)] * (1.0 - tx) + g[(y0, x1)] * tx;
    let bottom = g[(y1, x0)] * (1.0 - tx) + g[(y1, x1)] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Source coordinate of output pixel `(y, x)` under a rotation by `angle`
/// about the image centre.
fn rotate_source(y: usize, x: usize, cy: f64, cx: f64, cos: f64, sin: f64) -> (f64, f64) {
    let dy = y as f64 - cy;
    let dx = x as f64 - cx;
    (cos * dy - sin * dx + cy, sin * dy + cos * dx + cx)
}

/// Rotates a grid; samples falling outside are reflected back inside.
pub fn rotate_reflect(g: &Grid, angle_degrees: f64) -> Grid {
    if angle_degrees == 0.0 {
        return g.clone();
    }
    let (h, w) = g.dims();
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    Grid::from_fn(h, w, |y, x| {
        let (sy, sx) = rotate_source(y, x, cy, cx, cos, sin);
        bilinear_sample(g, reflect(sy, h), reflect(sx, w))
    })
}

/// Rotates a binary mask with nearest-neighbour sampling and zero fill.
pub fn rotate_nearest_zero(g: &Grid, angle_degrees: f64) -> Grid {
    if angle_degrees == 0.0 {
        return g.clone();
    }
    let (h, w) = g.dims();
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    Grid::from_fn(h, w, |y, x| {
        let (sy, sx) = rotate_source(y, x, cy, cx, cos, sin);
        let (ry, rx) = (sy.round(), sx.round());
        if ry < 0.0 || rx < 0.0 || ry >= h as f64 || rx >= w as f64 {
            0.0
        } else {
            g[(ry as usize, rx as usize)]
        }
    })
}

pub fn flip_horizontal(g: &Grid) -> Grid {
    let (h, w) = g.dims();
    Grid::from_fn(h, w, |y, x| g[(y, w - 1 - x)])
}

fn map_channels(image: &Image, f: impl Fn(&Grid) -> Grid) -> Result<Image> {
    let [r, g, b] = image.channels();
    Image::from_channels([&f(&r), &f(&g), &f(&b)])
}

/// Applies a drawn transform to an image/mask pair.
pub fn apply_draw(image: &Image, seg_target: &MaskMap, draw: &AugmentDraw) -> Result<(Image, MaskMap)> {
    let geometric = |g: &Grid, mask: bool| {
        let rotated = if mask {
            rotate_nearest_zero(g, draw.angle_degrees)
        } else {
            rotate_reflect(g, draw.angle_degrees)
        };
        if draw.flip {
            flip_horizontal(&rotated)
        } else {
            rotated
        }
    };
    let mut out_image = if draw.angle_degrees != 0.0 || draw.flip {
        map_channels(image, |g| geometric(g, false))?
    } else {
        image.clone()
    };
    if draw.lightness != 1.0 {
        out_image = out_image.scale_clamped(draw.lightness);
    }
    let mask_grid = geometric(seg_target.grid(), true).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    Ok((out_image, MaskMap::new(mask_grid, seg_target.role())?))
}

/// Draws and applies a random transform, regenerating the boundary target.
pub fn augment<R: Rng + ?Sized>(
    sample: &Sample,
    spec: &AugmentSpec,
    canonical_width: u32,
    rng: &mut R,
) -> Result<Sample> {
    if !spec.enabled {
        return Ok(sample.clone());
    }
    let draw = spec.draw(rng);
    let (image, seg_target) = apply_draw(&sample.image, &sample.seg_target, &draw)?;
    Sample::new(image, seg_target, canonical_width, sample.source_id.clone())
}

/// Bottom/right padding applied to reach a multiple; used to crop back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    pub original: (usize, usize),
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl PadRecord {
    pub fn for_dims(height: usize, width: usize, multiple: usize) -> Self {
        let up = |v: usize| v.div_ceil(multiple) * multiple;
        Self {
            original: (height, width),
            pad_bottom: up(height) - height,
            pad_right: up(width) - width,
        }
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.original.0 + self.pad_bottom, self.original.1 + self.pad_right)
    }

    pub fn is_identity(&self) -> bool {
        self.pad_bottom == 0 && self.pad_right == 0
    }
}

fn pad_grid(g: &Grid, record: &PadRecord, reflect_fill: bool) -> Grid {
    let (h, w) = g.dims();
    let (ph, pw) = record.padded();
    Grid::from_fn(ph, pw, |y, x| {
        if y < h && x < w {
            g[(y, x)]
        } else if reflect_fill {
            g[(reflect_index(y as isize, h), reflect_index(x as isize, w))]
        } else {
            0.0
        }
    })
}

/// Reflect-pads an image at the bottom/right to the next multiple.
pub fn pad_image(image: &Image, multiple: usize) -> Result<(Image, PadRecord)> {
    let (h, w) = image.dims();
    let record = PadRecord::for_dims(h, w, multiple);
    if record.is_identity() {
        return Ok((image.clone(), record));
    }
    Ok((map_channels(image, |g| pad_grid(g, &record, true))?, record))
}

/// Pads a sample: reflected image, zero-filled mask, regenerated boundary.
pub fn pad_to_multiple(sample: &Sample, multiple: usize, canonical_width: u32) -> Result<(Sample, PadRecord)> {
    let (image, record) = pad_image(&sample.image, multiple)?;
    if record.is_identity() {
        return Ok((sample.clone(), record));
    }
    let mask = MaskMap::new(pad_grid(sample.seg_target.grid(), &record, false), MaskRole::SegTarget)?;
    Ok((
        Sample::new(image, mask, canonical_width, sample.source_id.clone())?,
        record,
    ))
}

/// Crops a padded map back to its original size.
pub fn crop_to_original(g: &Grid, record: &PadRecord) -> Result<Grid> {
    if g.dims() != record.padded() {
        return Err(Error::ShapeMismatch {
            expected: record.padded(),
            actual: g.dims(),
        });
    }
    let (h, w) = record.original;
    Ok(Grid::from_fn(h, w, |y, x| g[(y, x)]))
}

/// Deterministic Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::make_boundary_target;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize) -> Sample {
        let image = Image::from_fn(h, w, |y, x| {
            [(x as f64) / w as f64, (y as f64) / h as f64, ((x + y) % 5) as f64 / 5.0]
        })
        .unwrap();
        let mask = MaskMap::new(
            Grid::from_fn(h, w, |y, x| {
                let (dy, dx) = (y as f64 - h as f64 / 2.0, x as f64 - w as f64 / 3.0);
                (dy * dy + dx * dx < (h * h) as f64 / 10.0) as u8 as f64
            }),
            MaskRole::SegTarget,
        )
        .unwrap();
        Sample::new(image, mask, 50, "s").unwrap()
    }

    #[test]
    fn disabled_spec_is_identity() {
        let s = sample(16, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, &AugmentSpec::disabled(), 50, &mut rng).unwrap();
        assert_eq!(out.image, s.image);
        assert_eq!(out.seg_target, s.seg_target);
    }

    #[test]
    fn identity_draw_is_identity() {
        let s = sample(16, 20);
        let (img, mask) = apply_draw(&s.image, &s.seg_target, &AugmentDraw::identity()).unwrap();
        assert_eq!(img, s.image);
        assert_eq!(mask, s.seg_target);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample(16, 20);
        let draw = AugmentDraw {
            flip: true,
            ..AugmentDraw::identity()
        };
        let (img, mask) = apply_draw(&s.image, &s.seg_target, &draw).unwrap();
        assert_ne!(img, s.image);
        let (img, mask) = apply_draw(&img, &mask, &draw).unwrap();
        assert_eq!(img, s.image);
        assert_eq!(mask, s.seg_target);
    }

    #[test]
    fn lightness_touches_only_the_image() {
        let s = sample(16, 16);
        let draw = AugmentDraw {
            lightness: 1.3,
            ..AugmentDraw::identity()
        };
        let (img, mask) = apply_draw(&s.image, &s.seg_target, &draw).unwrap();
        assert_eq!(mask, s.seg_target);
        assert!(img.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(img.as_slice()[3] > s.image.as_slice()[3]);
    }

    #[test]
    fn padding_records_and_crops_back() {
        let (_, r) = pad_image(&sample(32, 64).image, 32).unwrap();
        assert!(r.is_identity());
        let s = sample(20, 27);
        let (p, r) = pad_to_multiple(&s, 32, 50).unwrap();
        assert_eq!(p.dims(), (32, 32));
        assert_eq!((r.pad_bottom, r.pad_right), (12, 5));
        let back = crop_to_original(p.seg_target.grid(), &r).unwrap();
        assert_eq!(&back, s.seg_target.grid());
        assert_eq!(p.boundary_target, make_boundary_target(&p.seg_target, 50).unwrap());
        assert_eq!(PadRecord::for_dims(500, 500, 32).padded(), (512, 512));
        assert_eq!(PadRecord::for_dims(500, 500, 32).pad_bottom, 12);
    }

    #[test]
    fn reflection_stays_in_range() {
        for v in [-40.0, -3.5, 0.0, 7.0, 9.0, 100.25] {
            let r = reflect(v, 8);
            assert!((0.0..=7.0).contains(&r));
        }
        assert_eq!(reflect(-1.0, 8), 1.0);
        assert_eq!(reflect(8.0, 8), 6.0);
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let a = shuffled_indices(10, &mut ChaCha8Rng::seed_from_u64(5));
        let b = shuffled_indices(10, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn augmented_labels_stay_consistent(seed in any::<u64>()) {
            let s = sample(24, 24);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&s, &AugmentSpec::default(), 50, &mut rng).unwrap();
            prop_assert!(out.seg_target.grid().is_binary());
            prop_assert_eq!(&out.boundary_target, &make_boundary_target(&out.seg_target, 50).unwrap());
            prop_assert!(out.image.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
