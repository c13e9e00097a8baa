mod common;

use banet::checkpoint::{Checkpoint, FORMAT_VERSION};
use banet::config::Phase;
use banet::error::BanetError;
use banet::train::Trainer;
use banet_core::model::image_tensor;
use banet_core::raster::Image;

fn trainer() -> (tempfile::TempDir, Trainer) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(&dir.path().join("data"), &dir.path().join("out"));
    (dir, Trainer::new(cfg, Phase::Finetune).unwrap())
}

#[test]
fn bytes_round_trip() {
    let (_d, mut t) = trainer();
    let ckpt = t.checkpoint();
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.header.format_version, FORMAT_VERSION);
    assert_eq!(back.header.param_count, t.model_mut().count_parameters());
}

#[test]
fn restored_model_predicts_identically() {
    let (dir, mut t) = trainer();
    let path = dir.path().join("m.ckpt");
    t.checkpoint().save(&path).unwrap();
    let mut restored = Checkpoint::load(&path).unwrap().build_model().unwrap();
    let img = Image::from_fn(64, 64, |y, x| [y as f64 / 64.0, x as f64 / 64.0, 0.5]).unwrap();
    let x = image_tensor(&[&img]).unwrap();
    let a = t.model_mut().forward(&x, false).unwrap();
    let b = restored.forward(&x, false).unwrap();
    assert_eq!(a.seg_logits, b.seg_logits);
}

#[test]
fn any_flipped_byte_fails_the_integrity_check() {
    let (_d, mut t) = trainer();
    let bytes = t.checkpoint().to_bytes();
    for pos in [0, 9, 30, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x20;
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(matches!(err, BanetError::Checkpoint(_)), "{err}");
        assert!(err.to_string().contains("integrity"), "{err}");
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"BANETCKP").is_err());
}

#[test]
fn architecture_mismatch_is_explicit() {
    let (_d, mut t) = trainer();
    let mut ckpt = t.checkpoint();
    ckpt.header.config.model.mining_channels = Some(4);
    let err = ckpt.build_model().unwrap_err().to_string();
    assert!(err.contains("architecture mismatch"), "{err}");
}

#[test]
fn header_embeds_the_resolved_config() {
    let (_d, mut t) = trainer();
    let ckpt = t.checkpoint();
    assert_eq!(&ckpt.header.config, t.config());
    assert_eq!(ckpt.header.phase, Phase::Finetune);
    assert!(ckpt.velocity.is_empty(), "no step taken yet");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = Checkpoint::load("/nonexistent/x.ckpt").unwrap_err();
    assert!(matches!(err, BanetError::Io { .. }));
}
