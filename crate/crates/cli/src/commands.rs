use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use glcm_cnn::features::feature_vector;
use glcm_cnn::glcm::{glcm_image_multichannel, save_glcm_image, GlcmProvenance};
use glcm_cnn::nn::{evaluate, load_checkpoint, save_checkpoint, train as fit, Sample};
use glcm_cnn::{
    cross_validate, generate_dataset, load_mask, load_samples, load_volume, read_manifest, Error, Manifest, Regime,
    Result,
};

use crate::config::RunConfig;

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `<file>.config.json` beside a single-file output.
fn config_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn to_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })
}

pub fn glcm(cfg: &RunConfig, image: &Path, mask: &Path, out: &Path, multichannel: bool) -> Result<()> {
    let img = load_volume(image)?;
    let roi = load_mask(mask)?;
    let p = &cfg.prepare;
    let regime = p.regime.unwrap_or_else(|| Regime::for_image(&img));
    let glcm = if multichannel {
        glcm_image_multichannel(&img, &roi, &p.quantization, regime, &p.glcm)?
    } else {
        p.glcm_image(&img, &roi)?
    };
    cfg.save(&config_beside(out))?;
    save_glcm_image(out, &glcm, &GlcmProvenance::new(&glcm, &p.quantization, regime, &p.glcm))?;
    println!("levels {} channels {} pairs {:?}", glcm.levels(), glcm.channels(), glcm.pair_counts());
    Ok(())
}

pub enum FeatureSource {
    GlcmImage(PathBuf),
    Pair(PathBuf, PathBuf),
    Manifest(PathBuf),
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Appends one CSV row per channel of a `C x L x L` stack.
fn feature_rows(out: &mut String, id: &str, channels: &[Vec<f64>]) -> Result<()> {
    for (c, p) in channels.iter().enumerate() {
        let f = feature_vector(p)?;
        write!(out, "{id},{c}").unwrap();
        for v in f.values() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(())
}

pub fn features(cfg: &RunConfig, source: FeatureSource, out: &Path) -> Result<()> {
    let mut csv = String::from("id,channel,contrast,homogeneity,energy,entropy,correlation\n");
    let mut prepare = cfg.prepare;
    prepare.glcm.normalization = glcm_cnn::Normalization::Probability;
    let pair_rows = |csv: &mut String, id: &str, image: &Path, mask: &Path| -> Result<()> {
        let g = prepare.glcm_image(&load_volume(image)?, &load_mask(mask)?)?;
        let channels: Vec<Vec<f64>> = (0..g.channels()).map(|c| g.channel(c).to_vec()).collect();
        feature_rows(csv, id, &channels)
    };
    match source {
        FeatureSource::GlcmImage(path) => {
            let g = load_volume(&path)?;
            let channels: Vec<Vec<f64>> =
                (0..g.channels()).map(|c| g.channel(c).iter().map(|&v| v as f64).collect()).collect();
            feature_rows(&mut csv, &stem(&path), &channels)?;
        }
        FeatureSource::Pair(image, mask) => pair_rows(&mut csv, &stem(&image), &image, &mask)?,
        FeatureSource::Manifest(path) => {
            let m = read_manifest(&path)?;
            for e in &m.entries {
                pair_rows(&mut csv, &e.id, &m.image_path(e), &m.mask_path(e))?;
            }
        }
    }
    cfg.save(&config_beside(out))?;
    write(out, &csv)?;
    println!("{} rows -> {}", csv.lines().count() - 1, out.display());
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.synth.validate()?;
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    let entries = generate_dataset(&cfg.synth, out)?;
    println!("{} samples -> {}", entries.len(), out.join("manifest.csv").display());
    Ok(())
}

struct Loaded {
    manifest: Manifest,
    samples: Vec<Sample<f32>>,
    classes: usize,
}

fn load(cfg: &RunConfig, manifest: &Path, k: Option<usize>) -> Result<Loaded> {
    let manifest = read_manifest(manifest)?;
    if manifest.entries.is_empty() {
        return Err(Error::invalid("manifest", "no entries"));
    }
    let classes = cfg.network.classes.unwrap_or(manifest.classes());
    manifest.validate(classes, k)?;
    let samples = load_samples(&manifest, &cfg.prepare)?;
    Ok(Loaded { manifest, samples, classes })
}

fn shape3(s: &[usize]) -> [usize; 3] {
    [s[0], s[1], s[2]]
}

fn input_shapes(samples: &[Sample<f32>]) -> ([usize; 3], [usize; 3]) {
    let s = &samples[0];
    (shape3(s.image.shape()), shape3(s.glcm.as_ref().expect("prepared samples carry a GLCM image").shape()))
}

pub fn train(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let data = load(cfg, manifest, None)?;
    let (image_shape, glcm_shape) = input_shapes(&data.samples);
    let net = cfg.network_config(image_shape, glcm_shape, data.classes);
    let (mut train_set, mut test_set) = (Vec::new(), Vec::new());
    for (e, s) in data.manifest.entries.iter().zip(data.samples) {
        if Some(e.fold) == cfg.train.test_fold {
            test_set.push(s);
        } else {
            train_set.push(s);
        }
    }
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    let report = fit(&net, &train_set, &test_set, &cfg.train_config())?;
    save_checkpoint(&out.join("model.json"), &report.model, report.epochs())?;
    write(&out.join("report.csv"), &report.to_csv())?;
    let history = out.join("history.json");
    write(&history, &to_json(&history, &report.history)?)?;
    match report.last() {
        Some(r) => println!(
            "{} train / {} test, epoch {}: train loss {:.4}, test loss {}, test acc {}",
            train_set.len(),
            test_set.len(),
            r.epoch,
            r.train_loss,
            r.test_loss.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
            r.test_acc.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
        ),
        None => println!("0 epochs; wrote the initial model"),
    }
    Ok(())
}

pub fn xval(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let k = cfg.train.k;
    let data = load(cfg, manifest, Some(k))?;
    let (image_shape, glcm_shape) = input_shapes(&data.samples);
    let net = cfg.network_config(image_shape, glcm_shape, data.classes);
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    let result = cross_validate(&net, &cfg.train_config(), &data.samples, &data.manifest.folds(), k, cfg.train.parallel_folds)?;
    write(&out.join("results.csv"), &result.to_csv())?;
    let json = out.join("results.json");
    write(&json, &to_json(&json, &result)?)?;
    print!("{}", result.to_table());
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, fold: Option<usize>, out: Option<&Path>) -> Result<()> {
    let (net, _) = load_checkpoint(checkpoint)?;
    let mut data = load(cfg, manifest, None)?;
    if let Some(f) = fold {
        let keep: Vec<bool> = data.manifest.entries.iter().map(|e| e.fold == f).collect();
        let mut it = keep.iter();
        data.samples.retain(|_| *it.next().unwrap());
    }
    if data.samples.is_empty() {
        return Err(Error::invalid("evaluation set", "no samples selected"));
    }
    let m = evaluate(&net, &data.samples)?;
    let auc: Vec<String> = m.auc.iter().map(|a| a.map(|v| format!("{v:.4}")).unwrap_or("NA".into())).collect();
    println!("n {} loss {:.4} acc {:.4} auc [{}]", data.samples.len(), m.loss, m.accuracy, auc.join(", "));
    if let Some(out) = out {
        cfg.save(&config_beside(out))?;
        write(out, &to_json(out, &m)?)?;
    }
    Ok(())
}

struct ReportSummary {
    final_acc: f64,
    best_epoch: usize,
    best_acc: f64,
}

fn read_report(path: &Path) -> Result<ReportSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = |reason: &str| Error::Header { path: path.into(), reason: reason.into() };
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,test_loss,test_acc") {
        return Err(header("not a training report"));
    }
    let mut rows = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|_| header("missing test metrics"));
        if cols.len() != 4 {
            return Err(header("expected 4 columns"));
        }
        rows.push((cols[0].parse::<usize>().map_err(|_| header("bad epoch"))?, parse(cols[2])?, parse(cols[3])?));
    }
    let last = rows.last().ok_or_else(|| header("no epochs"))?;
    let best = rows.iter().fold(rows[0], |b, r| if r.1 < b.1 { *r } else { b });
    Ok(ReportSummary { final_acc: last.2, best_epoch: best.0, best_acc: best.2 })
}

pub fn compare(reports: &[PathBuf]) -> Result<()> {
    let summaries = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    println!("{:<40}{:>10}{:>12}{:>10}{:>10}", "report", "final acc", "best epoch", "best acc", "delta");
    for (p, s) in reports.iter().zip(&summaries) {
        println!(
            "{:<40}{:>10.4}{:>12}{:>10.4}{:>+10.4}",
            p.display(),
            s.final_acc,
            s.best_epoch,
            s.best_acc,
            s.final_acc - summaries[0].final_acc
        );
    }
    Ok(())
}
