mod common;

use std::path::Path;
use std::process::{Command, Output};

fn banet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_banet"))
        .args(args)
        .current_dir(cwd)
        .env("BANET_DETERMINISTIC", "1")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, common::tiny_toml(&dir.join("data"), &dir.join("run"))).unwrap();
    path
}

#[test]
fn make_targets_writes_one_file_per_mask_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    common::synth_dataset(&dir.path().join("data"), 3, 64, 0);
    let run = |out: &str| banet(&["make-targets", "--masks", "data/masks", "--out", out, "--width", "50"], dir.path());
    let o = run("t1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 3 boundary targets"), "{}", stdout(&o));
    assert!(stdout(&o).contains("mean kernel size"));
    assert_eq!(run("t2").status.code(), Some(0));
    let (a, b) = (files(&dir.path().join("t1")), files(&dir.path().join("t2")));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
}

#[test]
fn make_targets_rejects_zero_width_and_reports_bad_masks() {
    let dir = tempfile::tempdir().unwrap();
    common::synth_dataset(&dir.path().join("data"), 2, 32, 0);
    let o = banet(&["make-targets", "--masks", "data/masks", "--out", "t", "--width", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(dir.path().join("data/masks/zz.png"), b"garbage").unwrap();
    let o = banet(&["make-targets", "--masks", "data/masks", "--out", "t"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zz.png"), "{}", stderr(&o));
    assert_eq!(files(&dir.path().join("t")).len(), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(banet(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(banet(&["train", "--phase", "warmup"], dir.path()).status.code(), Some(1));
    assert_eq!(banet(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn train_reports_config_problems() {
    let dir = tempfile::tempdir().unwrap();
    let o = banet(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data.root"), "{}", stderr(&o));
    let o = banet(&["train", "--set", "data.root=x", "--phase", "finetune"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--init"), "{}", stderr(&o));
    let o = banet(&["train", "--set", "trainer.momentum=2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trainer.momentum"));
    let o = banet(&["train", "--set", "data.root=missing"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_dumps_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = banet(&["train", "--print-config", "--set", "trainer.lr_max=0.02"], dir.path());
    assert!(o.status.success());
    let cfg = banet::config::RunConfig::from_toml_str(&stdout(&o), &[]).unwrap();
    assert_eq!(cfg.trainer.lr_max, 0.02);
    assert_eq!(cfg.loss.lambda, 1.5);
}

#[test]
fn two_phase_training_then_infer_eval_and_gradients() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::synth_dataset(&d.join("data"), 3, 64, 0);
    let cfg = write_config(d);
    let cfg = cfg.to_str().unwrap();

    let o = banet(&["train", "--config", cfg, "--phase", "pretrain"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let pre = stdout(&o).trim().to_string();
    assert!(pre.ends_with("pretrain_000006.ckpt"), "{pre}");

    let o = banet(&["train", "--config", cfg, "--phase", "finetune", "--resume", &pre], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("phase"), "{}", stderr(&o));

    let o = banet(&["train", "--config", cfg, "--phase", "finetune", "--init", &pre], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let fine = stdout(&o).trim().to_string();
    assert!(fine.ends_with("finetune_000006.ckpt"));

    // Inference on an odd-sized image keeps its size.
    let img = image::RgbImage::from_fn(50, 37, |x, y| image::Rgb([(x * 5) as u8, (y * 6) as u8, 128]));
    std::fs::create_dir(d.join("in")).unwrap();
    img.save(d.join("in/odd.png")).unwrap();
    std::fs::write(d.join("in/broken.png"), b"nope").unwrap();
    for (out, soft) in [("hard", false), ("soft", true), ("soft2", true)] {
        let mut args = vec!["infer", "--checkpoint", &fine, "--input", "in", "--out", out];
        if soft {
            args.push("--soft");
        }
        let o = banet(&args, d);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("broken.png"));
        let mask = image::open(d.join(out).join("odd.png")).unwrap().to_luma8();
        assert_eq!(mask.dimensions(), (50, 37));
        let mut levels: Vec<u8> = mask.pixels().map(|p| p.0[0]).collect();
        levels.sort();
        levels.dedup();
        if soft {
            assert!(levels.len() > 2, "{levels:?}");
        } else {
            assert!(levels.iter().all(|v| *v == 0 || *v == 255));
        }
    }
    assert_eq!(files(&d.join("soft")), files(&d.join("soft2")));

    let o = banet(&["eval", "--checkpoint", &fine, "--data", "data", "--out", "report"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: banet::eval::EvalReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report.per_image_iou.len(), 3);
    assert!(d.join("report/eval.json").exists());

    let o = banet(&["gradients", "--input", "in/odd.png", "--out", "grads"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("grads/odd_magnitude.png").exists());
    assert!(d.join("grads/odd_direction.png").exists());

    let mut bytes = std::fs::read(&fine).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(d.join("bad.ckpt"), bytes).unwrap();
    let o = banet(&["infer", "--checkpoint", "bad.ckpt", "--input", "in", "--out", "x"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("integrity"));
}

#[test]
fn eval_ablation_prints_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::synth_dataset(&d.join("data"), 2, 64, 0);
    let cfg = write_config(d);
    let o = banet(
        &[
            "eval",
            "--ablation",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "eval.ablation_iterations=2",
            "--set",
            "trainer.warmup_iterations=0",
            "--out",
            "abl",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(stdout(&o).contains("+attention+refine"));
}

#[test]
fn hidden_synth_and_oracles_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = banet(&["synth", "--out", "s", "--n", "3", "--size", "32", "--family", "disc"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&dir.path().join("s/images")).len(), 3);
    let o = banet(&["oracles"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
    let help = stdout(&banet(&["--help"], dir.path()));
    assert!(!help.contains("oracles"));
}
