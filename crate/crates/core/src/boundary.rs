//! Boundary-area targets derived from binary portrait annotations.
//!
//! Edges are the pixels whose 4-neighbourhood contains both classes. They are
//! dilated with a square structuring element whose side scales with the
//! fraction of the image covered by the portrait, so small subjects get thin
//! bands and large subjects wide ones.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::raster::{Grid, MaskMap, MaskRole};
use crate::{Error, Result};

/// Default canonical boundary width in pixels.
pub const DEFAULT_CANONICAL_WIDTH: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationSpec {
    pub canonical_width: u32,
    pub portrait_area: usize,
    pub background_area: usize,
}

impl DilationSpec {
    /// Reads the portrait/background areas off a binary segmentation target.
    pub fn from_mask(seg_target: &MaskMap, canonical_width: u32) -> Self {
        let portrait_area = seg_target
            .grid()
            .as_slice()
            .iter()
            .filter(|&&v| v > 0.5)
            .count();
        Self {
            canonical_width,
            portrait_area,
            background_area: seg_target.grid().len() - portrait_area,
        }
    }

    pub fn portrait_fraction(&self) -> f64 {
        self.portrait_area as f64 / (self.portrait_area + self.background_area) as f64
    }
}

/// Binary boundary band; doubles as the refine-loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    mask: MaskMap,
    kernel_size: usize,
}

impl BoundaryMask {
    pub fn mask(&self) -> &MaskMap {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    pub fn into_mask(self) -> MaskMap {
        self.mask
    }

    /// Side of the square structuring element that produced this band.
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn area(&self) -> usize {
        self.grid().as_slice().iter().filter(|&&v| v > 0.5).count()
    }
}

/// Marks every pixel that has a 4-neighbour of the other class.
pub fn detect_edges(seg_target: &MaskMap) -> Grid {
    let g = seg_target.grid();
    let (h, w) = g.dims();
    let mut edges = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let here = g[(y, x)] > 0.5;
            let differs = |yy: usize, xx: usize| (g[(yy, xx)] > 0.5) != here;
            let edge = (y > 0 && differs(y - 1, x))
                || (y + 1 < h && differs(y + 1, x))
                || (x > 0 && differs(y, x - 1))
                || (x + 1 < w && differs(y, x + 1));
            if edge {
                edges[(y, x)] = 1.0;
            }
        }
    }
    edges
}

/// Area-adaptive kernel side: `round(fraction * W)` bumped up to the next odd
/// integer, never below 1.
pub fn dilation_kernel_size(spec: &DilationSpec) -> Result<usize> {
    if spec.canonical_width == 0 {
        return Err(Error::InvalidValue("canonical width must be positive"));
    }
    if spec.portrait_area + spec.background_area == 0 {
        return Err(Error::InvalidValue("dilation spec covers zero pixels"));
    }
    let raw = (spec.portrait_fraction() * spec.canonical_width as f64).round() as usize;
    Ok(if raw % 2 == 0 { raw + 1 } else { raw })
}

/// Sliding-window "any set" along one axis, using prefix counts.
fn dilate_line(line: &[bool], radius: usize, out: &mut [bool]) {
    let n = line.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &v) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v as usize;
    }
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        *o = prefix[hi] > prefix[lo];
    }
}

/// Binary dilation with a `kernel_size × kernel_size` square centred on each
/// pixel. `kernel_size` must be odd.
pub fn dilate_square(binary: &Grid, kernel_size: usize) -> Result<Grid> {
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidValue("structuring element side must be odd"));
    }
    let radius = kernel_size / 2;
    let (h, w) = binary.dims();
    let mut rows = vec![false; h * w];
    let mut scratch = vec![false; w.max(h)];
    for y in 0..h {
        let line: Vec<bool> = (0..w).map(|x| binary[(y, x)] > 0.5).collect();
        dilate_line(&line, radius, &mut scratch[..w]);
        rows[y * w..(y + 1) * w].copy_from_slice(&scratch[..w]);
    }
    let mut out = Grid::zeros(h, w);
    for x in 0..w {
        let line: Vec<bool> = (0..h).map(|y| rows[y * w + x]).collect();
        dilate_line(&line, radius, &mut scratch[..h]);
        for y in 0..h {
            if scratch[y] {
                out[(y, x)] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Edges of `seg_target` dilated with a fixed odd kernel side.
pub fn boundary_band(seg_target: &MaskMap, kernel_size: usize) -> Result<Grid> {
    dilate_square(&detect_edges(seg_target), kernel_size)
}

/// Edge detection followed by area-adaptive square dilation.
pub fn make_boundary_target(seg_target: &MaskMap, canonical_width: u32) -> Result<BoundaryMask> {
    if !seg_target.grid().is_binary() {
        return Err(Error::InvalidValue("segmentation target must be binary"));
    }
    let spec = DilationSpec::from_mask(seg_target, canonical_width);
    let kernel_size = dilation_kernel_size(&spec)?;
    let band = boundary_band(seg_target, kernel_size)?;
    Ok(BoundaryMask {
        mask: MaskMap::new(band, MaskRole::BoundaryTarget)?,
        kernel_size,
    })
}
