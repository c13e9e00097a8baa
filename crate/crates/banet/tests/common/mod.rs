#![allow(dead_code)]

use std::path::Path;

use banet::config::RunConfig;
use banet::synth::{write_dataset, Background, ShapeFamily, SyntheticSpec};

/// A small synthetic dataset in `folder_pairs` layout.
pub fn synth_dataset(dir: &Path, n: usize, size: usize, seed: u64) {
    let spec = SyntheticSpec {
        n_images: n,
        size,
        family: ShapeFamily::HeadShoulders,
        background: Background::Gradient,
        seed,
    };
    write_dataset(&spec, dir).unwrap();
}

/// TOML for a fast, tiny network trained on `root` at 64×64.
pub fn tiny_toml(root: &Path, out_dir: &Path) -> String {
    format!(
        r#"
[data]
root = "{}"
train_split = ""
test_split = ""
batch_size = 2
resize = 64

[model]
variant = "custom"
stem_channels = 8
stage_channels = [8, 8, 16, 16]
bottlenecks_per_stage = [1, 1, 1, 1]
mining_channels = 8
fusion_channels = 8

[trainer]
iterations_per_phase = 6
warmup_iterations = 2
checkpoint_every = 3
out_dir = "{}"

[eval]
resolution = 64
warmup_runs = 1
"#,
        root.display(),
        out_dir.display()
    )
}

pub fn tiny_config(root: &Path, out_dir: &Path) -> RunConfig {
    RunConfig::from_toml_str(&tiny_toml(root, out_dir), &[]).unwrap()
}
