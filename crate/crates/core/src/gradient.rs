//! Gradient calculation layer: Sobel responses, magnitude, and unit direction.
//!
//! Both kernels are applied as cross-correlations exactly as written below,
//! with edge-replicated borders so the output keeps the input size.

#[allow(unused_imports)]
use num_traits::Float;

use crate::raster::{minmax_normalize, Grid, Image};
use crate::{Error, Result};

/// Horizontal Sobel kernel, indexed `[dy + 1][dx + 1]`.
pub const SOBEL_X: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
/// Vertical Sobel kernel, indexed `[dy + 1][dx + 1]`.
pub const SOBEL_Y: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Magnitudes at or below this are treated as flat.
pub const FLAT_EPSILON: f64 = 1e-8;

#[inline]
fn clamp_index(i: usize, d: isize, len: usize) -> usize {
    (i as isize + d).clamp(0, len as isize - 1) as usize
}

fn check_size(map: &Grid) -> Result<()> {
    let (h, w) = map.dims();
    if h < 3 || w < 3 {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            min: 3,
        });
    }
    Ok(())
}

/// Both Sobel kernels are point-antisymmetric, so each tap is paired with
/// its reflection and the difference is taken first. A constant map then
/// gives exact zeros regardless of its value.
fn correlate(map: &Grid, kernel: &[[f64; 3]; 3]) -> Grid {
    let (h, w) = map.dims();
    Grid::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for tap in 0..4 {
            let (ky, kx) = (tap / 3, tap % 3);
            let k = kernel[ky][kx];
            if k != 0.0 {
                let a = map[(clamp_index(y, ky as isize - 1, h), clamp_index(x, kx as isize - 1, w))];
                let b = map[(clamp_index(y, 1 - ky as isize, h), clamp_index(x, 1 - kx as isize, w))];
                acc += k * (a - b);
            }
        }
        acc
    })
}

/// Sobel responses `(G_x, G_y)` with edge replication at the border.
pub fn sobel(map: &Grid) -> Result<(Grid, Grid)> {
    check_size(map)?;
    Ok((correlate(map, &SOBEL_X), correlate(map, &SOBEL_Y)))
}

/// Adjoint of [`sobel`]: maps gradients w.r.t. `(G_x, G_y)` back onto the input.
pub fn sobel_adjoint(grad_x: &Grid, grad_y: &Grid) -> Result<Grid> {
    check_size(grad_x)?;
    grad_x.check_same_dims(grad_y)?;
    let (h, w) = grad_x.dims();
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let gx = grad_x[(y, x)];
            let gy = grad_y[(y, x)];
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            for ky in 0..3 {
                let yy = clamp_index(y, ky as isize - 1, h);
                for kx in 0..3 {
                    let xx = clamp_index(x, kx as isize - 1, w);
                    out[(yy, xx)] += SOBEL_X[ky][kx] * gx + SOBEL_Y[ky][kx] * gy;
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel gradient magnitude and unit direction of a scalar map.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    gx: Grid,
    gy: Grid,
    magnitude: Grid,
    dir_x: Grid,
    dir_y: Grid,
}

impl GradientField {
    /// Builds a field from raw Sobel responses.
    pub fn from_components(gx: Grid, gy: Grid) -> Result<Self> {
        gx.check_same_dims(&gy)?;
        let (h, w) = gx.dims();
        let mut magnitude = Grid::zeros(h, w);
        let mut dir_x = Grid::zeros(h, w);
        let mut dir_y = Grid::zeros(h, w);
        for i in 0..gx.len() {
            let (a, b) = (gx.as_slice()[i], gy.as_slice()[i]);
            let m = (a * a + b * b).sqrt();
            magnitude.as_mut_slice()[i] = m;
            if m > FLAT_EPSILON {
                dir_x.as_mut_slice()[i] = a / m;
                dir_y.as_mut_slice()[i] = b / m;
            }
        }
        Ok(Self {
            gx,
            gy,
            magnitude,
            dir_x,
            dir_y,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.magnitude.dims()
    }

    pub fn magnitude(&self) -> &Grid {
        &self.magnitude
    }

    pub fn direction_x(&self) -> &Grid {
        &self.dir_x
    }

    pub fn direction_y(&self) -> &Grid {
        &self.dir_y
    }

    /// Raw horizontal response `G_x`.
    pub fn gx(&self) -> &Grid {
        &self.gx
    }

    /// Raw vertical response `G_y`.
    pub fn gy(&self) -> &Grid {
        &self.gy
    }

    /// Direction angle `atan2(ν_y, ν_x)` in radians.
    pub fn angle(&self) -> Grid {
        let (h, w) = self.dims();
        Grid::from_fn(h, w, |y, x| self.dir_y[(y, x)].atan2(self.dir_x[(y, x)]))
    }
}

/// Sobel responses turned into magnitude and direction.
pub fn gradient_field(map: &Grid) -> Result<GradientField> {
    let (gx, gy) = sobel(map)?;
    GradientField::from_components(gx, gy)
}

/// Gradient field of an image: channel mean, min-max normalization, then GCL.
pub fn image_gradient(image: &Image) -> Result<GradientField> {
    gradient_field(&minmax_normalize(&image.channel_mean()))
}

/// Gradient field of a confidence map after its own min-max normalization.
pub fn prediction_gradient(confidence: &Grid) -> Result<GradientField> {
    gradient_field(&minmax_normalize(confidence))
}
