mod common;

use banet::checkpoint::Checkpoint;
use banet::config::{Phase, RunConfig};
use banet::data::load_dataset;
use banet::error::BanetError;
use banet::train::{train_phase, RunOutputs, StepRecord, Trainer};
use banet_core::augment::Sample;

fn setup(n: usize) -> (tempfile::TempDir, RunConfig, Vec<Sample>) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::synth_dataset(&data, n, 64, 0);
    let cfg = common::tiny_config(&data, &dir.path().join("out"));
    let samples = load_dataset(&data, cfg.data.layout, cfg.data.resize, cfg.boundary.canonical_width).unwrap();
    (dir, cfg, samples)
}

fn totals(records: &[StepRecord]) -> Vec<f64> {
    records.iter().map(|r| r.total).collect()
}

#[test]
fn pretraining_gates_the_refine_term() {
    let (_dir, cfg, samples) = setup(2);
    let mut t = Trainer::new(cfg, Phase::Pretrain).unwrap();
    let r = t.step(&samples).unwrap();
    let w = t.weights();
    assert!(r.refine > 0.0, "refine is still reported");
    let expected = w.alpha * r.seg + w.beta * r.bound;
    assert!((r.total - expected).abs() < 1e-9, "{r:?}");
}

#[test]
fn finetuning_includes_the_refine_term() {
    let (_dir, cfg, samples) = setup(2);
    let mut t = Trainer::new(cfg, Phase::Finetune).unwrap();
    let r = t.step(&samples).unwrap();
    let w = t.weights();
    let expected = w.alpha * r.seg + w.beta * r.bound + w.gamma * r.refine;
    assert!((r.total - expected).abs() < 1e-9);
}

#[test]
fn identical_runs_produce_identical_loss_streams() {
    let (_dir, cfg, samples) = setup(3);
    let run = || {
        let mut t = Trainer::new(cfg.clone(), Phase::Pretrain).unwrap();
        train_phase(&mut t, &samples, None, &RunOutputs::default()).unwrap().0
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 6);
    assert_eq!(totals(&a), totals(&b));
}

#[test]
fn resume_matches_the_uninterrupted_run() {
    let (dir, cfg, samples) = setup(3);
    let mut full = Trainer::new(cfg.clone(), Phase::Finetune).unwrap();
    let all = train_phase(&mut full, &samples, None, &RunOutputs::default()).unwrap().0;

    let outputs = RunOutputs {
        dir: Some(dir.path().join("ckpt")),
    };
    let mut first = Trainer::new(cfg.clone(), Phase::Finetune).unwrap();
    let (head, ckpt) = train_phase(&mut first, &samples, Some(3), &outputs).unwrap();
    let ckpt = Checkpoint::load(ckpt.unwrap()).unwrap();
    assert_eq!(ckpt.header.iteration, 3);
    let mut second = Trainer::resume(&ckpt, cfg, Phase::Finetune).unwrap();
    let tail = train_phase(&mut second, &samples, None, &RunOutputs::default()).unwrap().0;
    let joined: Vec<f64> = head.iter().chain(&tail).map(|r| r.total).collect();
    assert_eq!(joined, totals(&all));
}

#[test]
fn resume_rejects_a_different_phase_or_config() {
    let (_dir, cfg, _) = setup(1);
    let mut t = Trainer::new(cfg.clone(), Phase::Pretrain).unwrap();
    let ckpt = t.checkpoint();
    let err = Trainer::resume(&ckpt, cfg.clone(), Phase::Finetune).err().unwrap().to_string();
    assert!(err.contains("phase"), "{err}");
    let mut other = cfg.clone();
    other.data.batch_size = 3;
    let err = Trainer::resume(&ckpt, other, Phase::Pretrain).err().unwrap().to_string();
    assert!(err.contains("data.batch_size"), "{err}");
    let mut relocated = cfg;
    relocated.data.root = Some("/elsewhere".into());
    Trainer::resume(&ckpt, relocated, Phase::Pretrain).unwrap();
}

#[test]
fn train_phase_writes_log_and_checkpoints() {
    let (dir, cfg, samples) = setup(2);
    let out = dir.path().join("run");
    let mut t = Trainer::new(cfg, Phase::Pretrain).unwrap();
    let (records, last) = train_phase(&mut t, &samples, None, &RunOutputs { dir: Some(out.clone()) }).unwrap();
    assert_eq!(last.unwrap(), out.join("pretrain_000006.ckpt"));
    assert!(out.join("pretrain_000003.ckpt").exists());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let parsed: Vec<StepRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len(), records.len());
    assert_eq!(parsed[0].iteration, 0);
    assert!(t.is_finished());
}

#[test]
fn learning_rate_follows_the_warmup() {
    let (_dir, cfg, samples) = setup(2);
    let mut t = Trainer::new(cfg, Phase::Pretrain).unwrap();
    let records = train_phase(&mut t, &samples, None, &RunOutputs::default()).unwrap().0;
    assert_eq!(records[0].lr, 0.0);
    assert!((records[2].lr - 0.1).abs() < 1e-12);
    assert!(records[5].lr < records[2].lr);
}

#[test]
fn divergence_is_a_numeric_error_with_a_snapshot() {
    let (dir, mut cfg, samples) = setup(2);
    cfg.trainer.lr_max = 1e30;
    cfg.trainer.warmup_iterations = Some(0);
    let out = dir.path().join("diverge");
    let mut t = Trainer::new(cfg, Phase::Pretrain).unwrap();
    let err = train_phase(&mut t, &samples, None, &RunOutputs { dir: Some(out.clone()) }).unwrap_err();
    assert!(matches!(err, BanetError::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let snapshot = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .any(|n| n.starts_with("nonfinite_"));
    assert!(snapshot);
}

#[test]
fn init_weights_must_match_the_architecture() {
    let (_dir, cfg, _) = setup(1);
    let model = Trainer::new(cfg.clone(), Phase::Pretrain).unwrap().into_model();
    let mut other = cfg;
    other.model.fusion_channels = Some(4);
    assert!(Trainer::with_model(other, Phase::Finetune, model).is_err());
}
