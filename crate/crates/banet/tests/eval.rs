mod common;

use banet::config::Phase;
use banet::data::load_dataset;
use banet::eval::{ablation_run, evaluate, measure_fps, AblationVariant, EvalOptions};
use banet::train::Trainer;
use banet_core::metrics::IouMode;
use banet_core::model::param_megabytes;

#[test]
fn evaluate_reports_every_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::synth_dataset(&data, 3, 64, 1);
    let cfg = common::tiny_config(&data, &dir.path().join("out"));
    let samples = load_dataset(&data, cfg.data.layout, Some(64), 50).unwrap();
    let mut model = Trainer::new(cfg.clone(), Phase::Pretrain).unwrap().into_model();
    let opts = EvalOptions::from_config(&cfg);
    let report = evaluate(&mut model, &samples, &opts).unwrap();
    assert_eq!(report.per_image_iou.len(), 3);
    assert_eq!(report.ids, ["0000", "0001", "0002"]);
    assert!(report.per_image_iou.iter().all(|v| (0.0..=1.0).contains(v)));
    let mean = report.per_image_iou.iter().sum::<f64>() / 3.0;
    assert!((report.miou - mean).abs() < 1e-12);
    assert!(report.fps > 0.0);
    assert_eq!(report.resolution, (64, 64));
    assert_eq!(report.param_mb, 4.0 * report.param_count as f64 / (1u64 << 20) as f64);
    let json = serde_json::to_string(&report).unwrap();
    let back: banet::eval::EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.ids, report.ids);
    assert_eq!(back.param_count, report.param_count);

    let two_class = EvalOptions {
        mode: IouMode::TwoClass,
        ..opts
    };
    assert!(evaluate(&mut model, &samples, &two_class).unwrap().miou.is_finite());
    assert!(evaluate(&mut model, &[], &opts).is_err());
}

#[test]
fn eval_mode_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::synth_dataset(&data, 2, 64, 2);
    let cfg = common::tiny_config(&data, &dir.path().join("out"));
    let samples = load_dataset(&data, cfg.data.layout, Some(64), 50).unwrap();
    let mut model = Trainer::new(cfg.clone(), Phase::Pretrain).unwrap().into_model();
    let opts = EvalOptions::from_config(&cfg);
    let a = evaluate(&mut model, &samples, &opts).unwrap();
    let b = evaluate(&mut model, &samples, &opts).unwrap();
    assert_eq!(a.per_image_iou, b.per_image_iou);
}

#[test]
fn fps_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), dir.path());
    let mut model = Trainer::new(cfg, Phase::Pretrain).unwrap().into_model();
    assert!(measure_fps(&mut model, 64, 64, 1, 2).unwrap() > 0.0);
}

#[test]
fn megabytes_formula() {
    assert_eq!(param_megabytes(1 << 18), 1.0);
}

#[test]
fn ablation_has_three_rows_and_base_mines_rgb() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::synth_dataset(&data, 2, 64, 3);
    let cfg = common::tiny_config(&data, &dir.path().join("out"));
    let samples = load_dataset(&data, cfg.data.layout, Some(64), 50).unwrap();
    let (base, phase) = AblationVariant::Base.apply(&cfg);
    assert_eq!(phase, Phase::Pretrain);
    assert_eq!(base.model_config().mining_input_channels(), 3);
    assert_eq!(base.loss.beta, 0.0);
    let (full, phase) = AblationVariant::AttentionRefine.apply(&cfg);
    assert_eq!(phase, Phase::Finetune);
    assert_eq!(full.model_config().mining_input_channels(), 4);

    let mut opts = EvalOptions::from_config(&cfg);
    opts.warmup_runs = 0;
    let table = ablation_run(&cfg, &samples, &samples, 2, &opts).unwrap();
    assert_eq!(table.rows.len(), 3);
    let labels: Vec<_> = table.rows.iter().map(|r| r.variant.label()).collect();
    assert_eq!(labels, ["base", "+attention", "+attention+refine"]);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("variant,miou,fps"));
    assert_eq!(table.to_markdown().lines().count(), 5);
    assert!(table.rows[0].report.param_count < table.rows[1].report.param_count);
}
