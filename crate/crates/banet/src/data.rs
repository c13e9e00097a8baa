//! Dataset layouts, loading, deterministic epoch ordering and batching.
//!
//! Two on-disk layouts are understood:
//!
//! - `folder_pairs`: `<dir>/images/<stem>.{png,jpg,jpeg}` paired with
//!   `<dir>/masks/<stem>.png`.
//! - `pfcn_like`: images and masks side by side in `<dir>`, the mask of
//!   `<stem>.{png,jpg,jpeg}` being `<stem>_matte.png`.
//!
//! All randomness is derived statelessly from `(seed, epoch, index)`, so the
//! sample stream at any iteration can be reproduced without replaying the
//! preceding ones.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use banet_core::augment::{augment, pad_to_multiple, shuffled_indices, AugmentSpec, Sample};
use banet_core::model::{image_tensor, INPUT_MULTIPLE};
use banet_core::raster::{resize_image, resize_nearest, Grid, MaskMap, MaskRole};
use banet_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BanetError, Result};
use crate::io::{load_image, load_mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    PfcnLike,
    #[default]
    FolderPairs,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pfcn_like" => Ok(Layout::PfcnLike),
            "folder_pairs" => Ok(Layout::FolderPairs),
            other => Err(format!("unknown layout `{other}` (expected pfcn_like or folder_pairs)")),
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
const MATTE_SUFFIX: &str = "_matte";

/// One image/mask pair on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| BanetError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| BanetError::io(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_and_ext(path: &Path) -> Option<(String, String)> {
    let stem = path.file_stem()?.to_str()?.to_string();
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some((stem, ext))
}

/// Lists the pairs in `dir` in lexicographic stem order.
pub fn scan_dataset(dir: impl AsRef<Path>, layout: Layout) -> Result<Vec<SampleRef>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(BanetError::Data(format!("{}: dataset directory not found", dir.display())));
    }
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut masks: BTreeMap<String, PathBuf> = BTreeMap::new();
    match layout {
        Layout::FolderPairs => {
            let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
            if img_dir.is_dir() {
                for p in list_files(&img_dir)? {
                    if let Some((stem, ext)) = stem_and_ext(&p) {
                        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                            images.insert(stem, p);
                        }
                    }
                }
            }
            if mask_dir.is_dir() {
                for p in list_files(&mask_dir)? {
                    if let Some((stem, ext)) = stem_and_ext(&p) {
                        if ext == "png" {
                            masks.insert(stem, p);
                        }
                    }
                }
            }
        }
        Layout::PfcnLike => {
            for p in list_files(dir)? {
                let Some((stem, ext)) = stem_and_ext(&p) else { continue };
                if let Some(base) = stem.strip_suffix(MATTE_SUFFIX) {
                    if ext == "png" {
                        masks.insert(base.to_string(), p);
                    }
                } else if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                    images.insert(stem, p);
                }
            }
        }
    }
    if images.is_empty() && masks.is_empty() {
        return Err(BanetError::Data(format!("{}: empty dataset", dir.display())));
    }
    if let Some(stem) = images.keys().find(|s| !masks.contains_key(*s)) {
        return Err(BanetError::Data(format!("image `{stem}` has no mask")));
    }
    if let Some(stem) = masks.keys().find(|s| !images.contains_key(*s)) {
        return Err(BanetError::Data(format!("mask `{stem}` has no image")));
    }
    Ok(images
        .into_iter()
        .map(|(id, image)| {
            let mask = masks.remove(&id).expect("checked above");
            SampleRef { id, image, mask }
        })
        .collect())
}

/// Resolves the directory of a split: `<root>/<split>` when it exists,
/// otherwise `root` itself.
pub fn split_dir(root: &Path, split: &str) -> PathBuf {
    let candidate = root.join(split);
    if !split.is_empty() && candidate.is_dir() {
        candidate
    } else {
        root.to_path_buf()
    }
}

/// Reads one pair. With `resize`, both rasters are resized to a square of
/// that side (bilinear image, nearest mask); otherwise they are padded to a
/// multiple of 32.
pub fn load_sample(r: &SampleRef, resize: Option<usize>, canonical_width: u32) -> Result<Sample> {
    let image = load_image(&r.image)?;
    let mask = load_mask(&r.mask, MaskRole::SegTarget)?;
    if image.dims() != mask.dims() {
        return Err(BanetError::Data(format!(
            "`{}`: image is {:?} but mask is {:?}",
            r.id,
            image.dims(),
            mask.dims()
        )));
    }
    prepare_sample(image, mask, resize, canonical_width, &r.id)
}

/// Brings an in-memory pair to network-compatible size.
pub fn prepare_sample(
    image: banet_core::raster::Image,
    mask: MaskMap,
    resize: Option<usize>,
    canonical_width: u32,
    id: &str,
) -> Result<Sample> {
    match resize {
        Some(side) if image.dims() != (side, side) => {
            let image = resize_image(&image, side, side)?;
            let mask = MaskMap::new(resize_nearest(mask.grid(), side, side)?, MaskRole::SegTarget)?;
            Ok(Sample::new(image, mask, canonical_width, id)?)
        }
        Some(_) => Ok(Sample::new(image, mask, canonical_width, id)?),
        None => {
            let sample = Sample::new(image, mask, canonical_width, id)?;
            Ok(pad_to_multiple(&sample, INPUT_MULTIPLE, canonical_width)?.0)
        }
    }
}

/// Scans and loads a whole split into memory.
pub fn load_dataset(dir: &Path, layout: Layout, resize: Option<usize>, canonical_width: u32) -> Result<Vec<Sample>> {
    scan_dataset(dir, layout)?
        .iter()
        .map(|r| load_sample(r, resize, canonical_width))
        .collect()
}

fn seed_bytes(parts: &[u64]) -> [u8; 32] {
    let mut seed = [0u8; 32];
    for (chunk, part) in seed.chunks_mut(8).zip(parts) {
        chunk.copy_from_slice(&part.to_le_bytes());
    }
    seed
}

/// Shuffle stream of one epoch.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(&[seed, epoch, u64::MAX, 0x5348_5546]))
}

/// Augmentation stream of one sample draw.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(&[seed, epoch, index, 0x4155_4731]))
}

/// Deterministic order of sample indices within an epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    shuffled_indices(n, &mut epoch_rng(seed, epoch))
}

/// Maps a global iteration to `(epoch, sample indices)`. The final batch of
/// an epoch may be short; nothing is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub dataset_len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(dataset_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if dataset_len == 0 {
            return Err(BanetError::Data("empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(BanetError::Config("data.batch_size: must be >= 1".into()));
        }
        Ok(Self {
            dataset_len,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.dataset_len.div_ceil(self.batch_size) as u64
    }

    pub fn batch(&self, iteration: u64) -> (u64, Vec<usize>) {
        let per_epoch = self.batches_per_epoch();
        let epoch = iteration / per_epoch;
        let k = (iteration % per_epoch) as usize;
        let order = epoch_order(self.dataset_len, self.seed, epoch);
        let end = ((k + 1) * self.batch_size).min(self.dataset_len);
        (epoch, order[k * self.batch_size..end].to_vec())
    }
}

/// Stacked network inputs and per-sample targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seg_targets(&self) -> Vec<&Grid> {
        self.samples.iter().map(|s| s.seg_target.grid()).collect()
    }
}

/// Stacks samples of identical size.
pub fn make_batch(samples: Vec<Sample>) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| BanetError::Data("cannot build an empty batch".into()))?
        .dims();
    if let Some(s) = samples.iter().find(|s| s.dims() != first) {
        return Err(BanetError::Data(format!(
            "heterogeneous batch: `{}` is {:?}, expected {:?}",
            s.source_id,
            s.dims(),
            first
        )));
    }
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let images = image_tensor(&images)?;
    Ok(Batch { images, samples })
}

/// Builds the (augmented) batch for a training iteration.
pub fn training_batch(
    data: &[Sample],
    plan: &BatchPlan,
    iteration: u64,
    spec: &AugmentSpec,
    canonical_width: u32,
) -> Result<Batch> {
    let (epoch, indices) = plan.batch(iteration);
    let samples = indices
        .iter()
        .map(|&i| {
            let mut rng = sample_rng(plan.seed, epoch, i as u64);
            augment(&data[i], spec, canonical_width, &mut rng).map_err(BanetError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    make_batch(samples)
}
