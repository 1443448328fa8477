use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

fn hggdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hggdp"))
        .args(args)
        .env_remove("HGGDP_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(dir: &Path, name: &str, v: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, v.to_string()).unwrap();
    path
}

/// A 32x32 dataset with 4 training and 2 test images.
fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = write_json(dir, "gen.json", json!({"phantom": {"size": 32}, "train_count": 4, "test_count": 2}));
    let out = dir.join("data");
    ok(&hggdp(&["gen-data", "--config", p(&cfg), "--out", p(&out)]));
    out
}

fn tiny_train_config(dir: &Path, manifest: &Path, replicas: usize) -> PathBuf {
    write_json(
        dir,
        &format!("train{replicas}.json"),
        json!({
            "manifest": manifest,
            "patch_count": 40,
            "train": {
                "network": {"replicas": replicas, "widths": [4, 4], "depth": 1},
                "batch_size": 4,
                "iterations": 6,
                "patch_size": 32,
                "log_every": 2
            }
        }),
    )
}

#[test]
fn gen_data_writes_manifest_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["test"].as_array().unwrap().len(), 2);
    let first = fs::read(data.join("test/0001.c128")).unwrap();
    assert_eq!(first.len(), 32 * 32 * 16);

    // rerunning from the resolved snapshot reproduces every byte
    let again = dir.path().join("again");
    ok(&hggdp(&["gen-data", "--config", p(&data.join("resolved_config.json")), "--out", p(&again)]));
    for f in ["manifest.json", "train/0000.c128", "test/0001.c128", "test/0001.c128.json"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn default_gen_data_spec_writes_220_images() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "gen.json", json!({"phantom": {"size": 16}}));
    ok(&hggdp(&["gen-data", "--config", p(&cfg), "--out", p(dir.path())]));
    let count = |sub: &str| fs::read_dir(dir.path().join(sub)).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "c128")
    }).count();
    assert_eq!(count("train") + count("test"), 220);
}

#[test]
fn malformed_config_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"phantom\": {\"size\": \"big\"}").unwrap();
    let out = hggdp(&["gen-data", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed config"));

    let cfg = write_json(dir.path(), "unknown.json", json!({"train_cont": 3}));
    let out = hggdp(&["gen-data", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn make_mask_accepts_listed_rates_and_reports_them() {
    let dir = TempDir::new().unwrap();
    for kind in ["pseudo_radial", "cartesian1d"] {
        for r in ["1", "2", "3", "3.3", "4", "5", "6", "6.7", "8", "10"] {
            let out_dir = dir.path().join(format!("{kind}_{r}"));
            let out = hggdp(&["make-mask", "--kind", kind, "--size", "128", "-R", r, "--seed", "3", "--out", p(&out_dir)]);
            ok(&out);
            let text = String::from_utf8_lossy(&out.stdout);
            let dev: f64 = text
                .split("deviation ")
                .nth(1)
                .and_then(|s| s.trim().trim_end_matches('%').parse().ok())
                .unwrap_or_else(|| panic!("no rate line in {text}"));
            assert!(dev.abs() <= 10.0, "{kind} R={r}: {text}");
            assert!(out_dir.join("mask.bits").exists() && out_dir.join("mask.png").exists());
            if r == "1" {
                assert!(text.contains("selected 16384 of 16384"), "{text}");
            }
        }
    }
    let out = hggdp(&["make-mask", "-R", "0.5", "--out", p(&dir.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_reconstruct_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let manifest = data.join("manifest.json");
    let train_cfg = tiny_train_config(dir.path(), &manifest, 1);
    let model = dir.path().join("model");
    ok(&hggdp(&["train", "--config", p(&train_cfg), "--out", p(&model), "--seed", "9"]));
    let ckpt = model.join("model.ckpt");
    assert!(fs::read_to_string(model.join("loss.csv")).unwrap().lines().count() > 1);
    assert!(model.join("loss.png").exists());

    // the resolved snapshot carries the seed override and reproduces the weights
    let again = dir.path().join("model2");
    ok(&hggdp(&["train", "--config", p(&model.join("resolved_config.json")), "--out", p(&again)]));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("model.ckpt")).unwrap());

    let mask_dir = dir.path().join("mask");
    ok(&hggdp(&["make-mask", "--size", "32", "-R", "4", "--out", p(&mask_dir)]));
    let recon_cfg = write_json(
        dir.path(),
        "recon.json",
        json!({"recon": {"replicas": 1, "steps_per_level": 2, "log_every": 1}}),
    );
    let out_dir = dir.path().join("recon");
    let image = data.join("test/0000.c128");
    ok(&hggdp(&[
        "reconstruct", "--config", p(&recon_cfg), "--checkpoint", p(&ckpt), "--image", p(&image),
        "--mask", p(&mask_dir.join("mask.bits")), "--out", p(&out_dir),
    ]));
    for f in ["recon.c128", "recon.png", "zero_filled.png", "trace.csv", "trace_psnr.png", "report.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out_dir.join("trace.csv")).unwrap().lines().count(), 1 + 20);

    let rerun = dir.path().join("recon2");
    ok(&hggdp(&["reconstruct", "--config", p(&out_dir.join("resolved_config.json")), "--out", p(&rerun)]));
    assert_eq!(fs::read(out_dir.join("recon.c128")).unwrap(), fs::read(rerun.join("recon.c128")).unwrap());

    let out = hggdp(&["evaluate", "--recon", p(&image), "--ref", p(&image), "--id", "img0"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("psnr"));
    assert!(lines.next().unwrap().starts_with("img0,"));

    // a model with the wrong replica count is a config error
    let wrong = write_json(dir.path(), "wrong.json", json!({"recon": {"replicas": 3}}));
    let out = hggdp(&[
        "reconstruct", "--config", p(&wrong), "--checkpoint", p(&ckpt), "--image", p(&image),
        "--mask", p(&mask_dir.join("mask.bits")), "--out", p(&dir.path().join("r3")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // non-finite weights surface as a numeric failure
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    let broken = dir.path().join("broken.ckpt");
    fs::write(&broken, bytes).unwrap();
    let out = hggdp(&[
        "reconstruct", "--config", p(&recon_cfg), "--checkpoint", p(&broken), "--image", p(&image),
        "--mask", p(&mask_dir.join("mask.bits")), "--out", p(&dir.path().join("r4")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablate_tabulates_grid_and_names_missing_checkpoints() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let manifest = data.join("manifest.json");
    let model = dir.path().join("model");
    ok(&hggdp(&["train", "--config", p(&tiny_train_config(dir.path(), &manifest, 1)), "--out", p(&model)]));
    let cfg = write_json(
        dir.path(),
        "ablate.json",
        json!({"mask": {"height": 32, "width": 32}, "recon": {"replicas": 1}, "images": 2}),
    );
    let out_dir = dir.path().join("ablate");
    let out = hggdp(&[
        "ablate", "--config", p(&cfg), "--dimension", "T", "--grid", "1,2,3", "--manifest", p(&manifest),
        "--checkpoint", p(&model.join("model.ckpt")), "--jobs", "2", "--out", p(&out_dir),
    ]);
    ok(&out);
    let table = fs::read_to_string(out_dir.join("ablation_T.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "T,psnr,ssim,hfen");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("1,") && rows[3].starts_with("3,"));

    // job count does not change results
    let serial = dir.path().join("serial");
    ok(&hggdp(&["ablate", "--config", p(&out_dir.join("resolved_config.json")), "--out", p(&serial)]));
    assert_eq!(table, fs::read_to_string(serial.join("ablation_T.csv")).unwrap());

    // replica sweep needs one checkpoint per value
    let ckpts = dir.path().join("ckpts");
    fs::create_dir_all(&ckpts).unwrap();
    fs::copy(model.join("model.ckpt"), ckpts.join("N_1.ckpt")).unwrap();
    let out = hggdp(&[
        "ablate", "--config", p(&cfg), "--dimension", "N", "--grid", "1,2", "--manifest", p(&manifest),
        "--checkpoint-dir", p(&ckpts), "--out", p(&dir.path().join("n")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("N_2.ckpt") && err.contains("hggdp train"), "{err}");

    data_dir_env_fallback(dir.path(), &data, &model);
}

/// `HGGDP_DATA_DIR` stands in for a missing manifest path.
fn data_dir_env_fallback(dir: &Path, data: &Path, model: &Path) {
    let cfg = write_json(dir, "ablate_env.json", json!({"mask": {"height": 32, "width": 32}, "recon": {"replicas": 1, "steps_per_level": 1}, "images": 1}));
    let out = Command::new(env!("CARGO_BIN_EXE_hggdp"))
        .args(["ablate", "--config", p(&cfg), "--grid", "1", "--checkpoint", p(&model.join("model.ckpt")), "--out", p(&dir.join("env"))])
        .env("HGGDP_DATA_DIR", data)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(&out);
}
