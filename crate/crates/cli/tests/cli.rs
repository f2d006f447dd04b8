use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use glcm_cnn::{load_volume, save_image, save_mask, GridImage, RoiMask};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glcm-cnn"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Small, fast synthetic dataset config.
const SMALL: &str = r#"{
  "prepare": {"quantization": {"levels": 16, "range_lo": 0.0, "range_hi": 255.0}},
  "synth": {"width": 32, "height": 32, "samples": 30, "roi_min": 20, "roi_max": 40},
  "train": {"epochs": 2, "batch_size": 8}
}"#;

fn small_dataset(seed: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    ok(dir.path(), &["--config", "cfg.json", "--seed", seed, "synth", "--out", "data"]);
    dir
}

fn write_pair(dir: &Path, image: &GridImage, mask: &RoiMask) {
    save_image(dir.join("img.grd"), image).unwrap();
    save_mask(dir.join("roi.msk"), mask, image.spacing()).unwrap();
}

#[test]
fn ct_preset_gives_96_square_glcm_with_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let image = GridImage::from_2d(12, 10, (0..120).map(|v| (v * 2) as f32).collect()).unwrap();
    write_pair(dir.path(), &image, &RoiMask::full([12, 10, 1]));
    let stdout = ok(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--levels", "96", "--out", "g.grd"]);
    assert!(stdout.contains("levels 96 channels 1"), "{stdout}");
    let g = load_volume(dir.path().join("g.grd")).unwrap();
    assert_eq!((g.dims(), g.channels()), ([96, 96, 1], 1));
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.grd.json")).unwrap()).unwrap();
    assert_eq!(sidecar["regime"], "2d");
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("g.grd.config.json")).unwrap()).unwrap();
    assert_eq!(resolved["prepare"]["quantization"]["levels"], 96);
}

#[test]
fn four_channel_multichannel_gives_256_square_by_4() {
    let dir = tempfile::tempdir().unwrap();
    let values = (0..4 * 64).map(|v| (v % 256) as f32).collect();
    let image = GridImage::new([8, 8, 1], 4, [1.0; 3], values).unwrap();
    write_pair(dir.path(), &image, &RoiMask::full([8, 8, 1]));
    ok(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--regime", "multichannel", "--out", "g.grd"]);
    let g = load_volume(dir.path().join("g.grd")).unwrap();
    assert_eq!((g.dims(), g.channels()), ([256, 256, 1], 4));
}

#[test]
fn exit_codes_separate_validation_io_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let image = GridImage::from_2d(6, 6, vec![10.0; 36]).unwrap();
    write_pair(dir.path(), &image, &RoiMask::empty([6, 6, 1]));
    let empty = run(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--out", "g.grd"]);
    assert_eq!(code(&empty), 2);
    assert!(String::from_utf8_lossy(&empty.stderr).contains("empty"));

    let mut single = RoiMask::empty([6, 6, 1]);
    single.set(2, 2, 0, true);
    write_pair(dir.path(), &image, &single);
    let no_pairs = run(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--out", "g.grd"]);
    assert_eq!(code(&no_pairs), 4);

    let bytes = fs::read(dir.path().join("img.grd")).unwrap();
    fs::write(dir.path().join("img.grd"), &bytes[..bytes.len() - 3]).unwrap();
    let truncated = run(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--out", "g.grd"]);
    assert_eq!(code(&truncated), 3);
    assert!(String::from_utf8_lossy(&truncated.stderr).contains("truncated"));

    assert_eq!(code(&run(dir.path(), &["glcm", "--image", "missing.grd", "--mask", "roi.msk", "--out", "g.grd"])), 3);
}

#[test]
fn constant_roi_features() {
    let dir = tempfile::tempdir().unwrap();
    let image = GridImage::from_2d(6, 6, vec![100.0; 36]).unwrap();
    write_pair(dir.path(), &image, &RoiMask::full([6, 6, 1]));
    ok(dir.path(), &["features", "--image", "img.grd", "--mask", "roi.msk", "--out", "f.csv"]);
    let csv = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,channel,contrast,homogeneity,energy,entropy,correlation"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], ["img", "0", "0", "1"]);
}

#[test]
fn features_from_glcm_image_match_features_from_pair() {
    let dir = tempfile::tempdir().unwrap();
    let image = GridImage::from_2d(5, 5, (0..25).map(|v| ((v * 37) % 256) as f32).collect()).unwrap();
    write_pair(dir.path(), &image, &RoiMask::full([5, 5, 1]));
    ok(dir.path(), &["glcm", "--image", "img.grd", "--mask", "roi.msk", "--levels", "8", "--out", "g.grd"]);
    ok(dir.path(), &["features", "--glcm-image", "g.grd", "--out", "a.csv"]);
    ok(dir.path(), &["features", "--image", "img.grd", "--mask", "roi.msk", "--levels", "8", "--out", "b.csv"]);
    let cols = |name: &str| -> Vec<f64> {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        text.lines().nth(1).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect()
    };
    for (a, b) in cols("a.csv").iter().zip(cols("b.csv")) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn synth_is_byte_identical_per_seed_and_manifest_features_have_one_row_per_sample() {
    let a = small_dataset("3");
    let b = small_dataset("3");
    for name in ["manifest.csv", "images/s00004.grd", "masks/s00004.msk"] {
        assert_eq!(fs::read(a.path().join("data").join(name)).unwrap(), fs::read(b.path().join("data").join(name)).unwrap());
    }
    let c = small_dataset("4");
    assert_ne!(fs::read(a.path().join("data/images/s00004.grd")).unwrap(), fs::read(c.path().join("data/images/s00004.grd")).unwrap());

    ok(a.path(), &["features", "--manifest", "data/manifest.csv", "--out", "f.csv"]);
    let csv = fs::read_to_string(a.path().join("f.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn train_is_reproducible_and_ablation_reports_compare() {
    let dir = small_dataset("1");
    let p = dir.path();
    ok(p, &["--config", "cfg.json", "train", "--manifest", "data/manifest.csv", "--out", "a"]);
    ok(p, &["--config", "cfg.json", "train", "--manifest", "data/manifest.csv", "--out", "b"]);
    assert_eq!(fs::read(p.join("a/model.bin")).unwrap(), fs::read(p.join("b/model.bin")).unwrap());
    assert_eq!(fs::read(p.join("a/model.json")).unwrap(), fs::read(p.join("b/model.json")).unwrap());
    assert_eq!(fs::read(p.join("a/report.csv")).unwrap(), fs::read(p.join("b/report.csv")).unwrap());

    ok(p, &["--config", "cfg.json", "train", "--manifest", "data/manifest.csv", "--out", "solo", "--ablate-glcm", "--epochs", "3"]);
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("solo/config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["epochs"], 3);
    assert_eq!(resolved["train"]["ablate_glcm"], true);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("solo/model.json")).unwrap()).unwrap();
    assert_eq!(model["config"]["glcm_feature_width"], 0);

    let table = ok(p, &["compare", "a/report.csv", "solo/report.csv"]);
    assert_eq!(table.lines().count(), 3, "{table}");

    let eval = ok(p, &["--config", "a/config.json", "eval", "--checkpoint", "a/model.json", "--manifest", "data/manifest.csv", "--fold", "0", "--out", "m.json"]);
    assert!(eval.starts_with("n 6 "), "{eval}");
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("m.json")).unwrap()).unwrap();
    assert!(metrics["accuracy"].as_f64().unwrap() <= 1.0);
}

#[test]
fn xval_writes_one_row_per_fold_plus_mean() {
    let dir = small_dataset("2");
    let p = dir.path();
    let table = ok(p, &["--config", "cfg.json", "xval", "--manifest", "data/manifest.csv", "--out", "cv", "--epochs", "1"]);
    assert!(table.contains("best-epoch"));
    let csv = fs::read_to_string(p.join("cv/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "fold,n_test,loss,acc,auc0,auc1,best_epoch,best_loss,best_acc");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("mean,30,"));
    for (f, line) in lines[1..6].iter().enumerate() {
        assert!(line.starts_with(&format!("{f},6,")), "{line}");
    }
}

#[test]
fn bad_config_and_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"epochs": 3}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "cfg.json", "synth", "--out", "x"])), 3);
    assert_eq!(code(&run(dir.path(), &["synth", "--out", "x", "--classes", "1"])), 2);
    assert_eq!(code(&run(dir.path(), &["glcm", "--image", "a"])), 2);
}
