//! Procedural portrait-like datasets with pixel-exact masks.

use std::path::Path;

use banet_core::raster::{Grid, Image, MaskMap, MaskRole};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BanetError, Result};
use crate::io::{save_image, save_mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disc,
    /// Head ellipse above a wide shoulder ellipse cut by the bottom edge.
    #[default]
    HeadShoulders,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    /// Linear ramp in a random direction.
    #[default]
    Gradient,
    /// Additive Gaussian noise with standard deviation `sigma`.
    Noise { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub size: usize,
    pub family: ShapeFamily,
    pub background: Background,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_images: 8,
            size: 128,
            family: ShapeFamily::HeadShoulders,
            background: Background::Gradient,
            seed: 0,
        }
    }
}

/// Ellipse with centre `(cx, cy)` and semi-axes `(rx, ry)`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub id: String,
    #[serde(skip)]
    pub image: Option<Image>,
    #[serde(skip)]
    pub mask: Option<MaskMap>,
    /// The ellipses whose union is the foreground.
    pub shapes: Vec<Ellipse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub items: Vec<SyntheticItem>,
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(index as u64).to_le_bytes());
    bytes[16..20].copy_from_slice(b"SYNT");
    ChaCha8Rng::from_seed(bytes)
}

fn shapes<R: Rng>(family: ShapeFamily, size: f64, rng: &mut R) -> Vec<Ellipse> {
    match family {
        ShapeFamily::Disc => {
            let r = rng.gen_range(0.2..0.35) * size;
            let margin = r + 2.0;
            let cx = rng.gen_range(margin..size - margin);
            let cy = rng.gen_range(margin..size - margin);
            vec![Ellipse { cx, cy, rx: r, ry: r }]
        }
        ShapeFamily::HeadShoulders => {
            let cx = size * rng.gen_range(0.4..0.6);
            let head_r = size * rng.gen_range(0.13..0.18);
            let head = Ellipse {
                cx,
                cy: size * rng.gen_range(0.32..0.42),
                rx: head_r,
                ry: head_r * rng.gen_range(1.15..1.35),
            };
            let shoulders = Ellipse {
                cx: cx + size * rng.gen_range(-0.05..0.05),
                cy: size * rng.gen_range(0.95..1.05),
                rx: size * rng.gen_range(0.36..0.46),
                ry: size * rng.gen_range(0.3..0.38),
            };
            vec![head, shoulders]
        }
    }
}

fn color<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

/// Generates one image/mask pair.
pub fn generate_item(spec: &SyntheticSpec, index: usize) -> Result<SyntheticItem> {
    let n = spec.size;
    let mut rng = item_rng(spec.seed, index);
    let shapes = shapes(spec.family, n as f64, &mut rng);
    let mask = Grid::from_fn(n, n, |y, x| shapes.iter().any(|e| e.contains(y, x)) as u8 as f64);
    // Keep a clear contrast: one side bright, the other dark.
    let bright_fg = rng.gen_bool(0.5);
    let (fg, bg) = if bright_fg {
        (color(&mut rng, 0.6, 0.9), color(&mut rng, 0.1, 0.35))
    } else {
        (color(&mut rng, 0.1, 0.35), color(&mut rng, 0.6, 0.9))
    };
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let noise = match spec.background {
        Background::Noise { sigma } => Some(
            Normal::new(0.0, sigma).map_err(|e| BanetError::Usage(format!("noise sigma: {e}")))?,
        ),
        _ => None,
    };
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let inside = mask[(y, x)] > 0.5;
            let base = if inside { fg } else { bg };
            let ramp = match spec.background {
                Background::Gradient if !inside => {
                    0.2 * ((x as f64 / n as f64 - 0.5) * dx + (y as f64 / n as f64 - 0.5) * dy)
                }
                _ => 0.0,
            };
            for c in base {
                let jitter = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                data.push((c + ramp + jitter).clamp(0.0, 1.0));
            }
        }
    }
    Ok(SyntheticItem {
        id: format!("{index:04}"),
        image: Some(Image::new(n, n, data)?),
        mask: Some(MaskMap::new(mask, MaskRole::SegTarget)?),
        shapes,
    })
}

/// Generates the whole dataset in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticItem>> {
    if spec.size < banet_core::raster::MIN_IMAGE_SIDE {
        return Err(BanetError::Usage(format!("synthetic size {} is below 8", spec.size)));
    }
    if let Background::Noise { sigma } = spec.background {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(BanetError::Usage(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
    }
    (0..spec.n_images).map(|i| generate_item(spec, i)).collect()
}

/// Writes a `folder_pairs` dataset plus `manifest.json` under `out`.
pub fn write_dataset(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<Manifest> {
    let out = out.as_ref();
    let items = generate(spec)?;
    for item in &items {
        save_image(out.join("images").join(format!("{}.png", item.id)), item.image.as_ref().expect("generated"))?;
        save_mask(out.join("masks").join(format!("{}.png", item.id)), item.mask.as_ref().expect("generated"))?;
    }
    let manifest = Manifest {
        spec: *spec,
        items: items
            .into_iter()
            .map(|i| SyntheticItem {
                image: None,
                mask: None,
                ..i
            })
            .collect(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| BanetError::io(&path, e))?;
    Ok(manifest)
}
