use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glcm_cnn::{Error, ErrorKind, Normalization, Regime, Result};

mod commands;
mod config;

use config::RunConfig;

/// GLCM images from masked volumes, texture features, and a dual-branch CNN
/// trained on image + GLCM image pairs.
#[derive(Debug, Parser)]
#[command(name = "glcm-cnn", version)]
struct Cli {
    /// JSON run configuration. Flags override values read from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    #[value(name = "2d")]
    Planar,
    #[value(name = "3d-iso")]
    Isotropic,
    #[value(name = "3d-aniso")]
    Anisotropic,
    /// One GLCM per channel, each built in the regime implied by the geometry.
    Multichannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Probability,
    Raw,
    Log1p,
}

#[derive(Debug, Clone, Args)]
struct GlcmFlags {
    /// Number of gray levels (GLCM side length).
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    range_lo: Option<f64>,
    #[arg(long)]
    range_hi: Option<f64>,
    /// Reject out-of-range intensities instead of clamping them.
    #[arg(long)]
    strict_range: bool,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    /// Count each pair once, in offset direction only.
    #[arg(long)]
    asymmetric: bool,
    #[arg(long)]
    distance: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train the image-only baseline (no GLCM branch).
    #[arg(long)]
    ablate_glcm: bool,
    /// Evaluate mini-batch samples on the worker pool.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the GLCM image of one image/mask pair.
    Glcm {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        glcm: GlcmFlags,
    },
    /// Texture features per channel, as CSV.
    Features {
        /// A GLCM image written by `glcm`.
        #[arg(long, conflicts_with_all = ["image", "manifest"])]
        glcm_image: Option<PathBuf>,
        #[arg(long, requires = "mask", conflicts_with = "manifest")]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        glcm: GlcmFlags,
    },
    /// Write a synthetic dataset (volumes, masks, manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Train one model, holding out one fold for testing.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out fold; omit in the config (`null`) to train on everything.
        #[arg(long)]
        test_fold: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        glcm: GlcmFlags,
    },
    /// k-fold cross-validation over the manifest's folds.
    Xval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Train folds concurrently.
        #[arg(long)]
        parallel_folds: bool,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        glcm: GlcmFlags,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only evaluate this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Metrics JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        glcm: GlcmFlags,
    },
    /// Compare the final and best-epoch test accuracy of training reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
}

impl GlcmFlags {
    /// Applies the flags; returns whether the multichannel regime was asked
    /// for.
    fn apply(&self, cfg: &mut RunConfig) -> bool {
        let p = &mut cfg.prepare;
        if let Some(l) = self.levels {
            p.quantization.levels = l;
        }
        if let Some(v) = self.range_lo {
            p.quantization.range_lo = v;
        }
        if let Some(v) = self.range_hi {
            p.quantization.range_hi = v;
        }
        if self.strict_range {
            p.quantization.clamp = false;
        }
        if let Some(n) = self.normalization {
            p.glcm.normalization = match n {
                NormArg::Probability => Normalization::Probability,
                NormArg::Raw => Normalization::Raw,
                NormArg::Log1p => Normalization::Log1p,
            };
        }
        if self.asymmetric {
            p.glcm.symmetric = false;
        }
        if let Some(d) = self.distance {
            p.glcm.distance = d;
        }
        match self.regime {
            Some(RegimeArg::Planar) => p.regime = Some(Regime::Planar),
            Some(RegimeArg::Isotropic) => p.regime = Some(Regime::Isotropic),
            Some(RegimeArg::Anisotropic) => p.regime = Some(Regime::Anisotropic),
            Some(RegimeArg::Multichannel) => {
                p.regime = None;
                return true;
            }
            None => {}
        }
        false
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        if let Some(lr) = self.lr {
            t.learning_rate = lr;
        }
        t.ablate_glcm |= self.ablate_glcm;
        t.parallel_batches |= self.parallel;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.synth.seed = cfg.seed;
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid("threads", e.to_string()))?;
    }
    match cli.command {
        Command::Glcm { image, mask, out, glcm } => {
            let multichannel = glcm.apply(&mut cfg);
            commands::glcm(&cfg, &image, &mask, &out, multichannel)
        }
        Command::Features { glcm_image, image, mask, manifest, out, glcm } => {
            glcm.apply(&mut cfg);
            let source = match (glcm_image, image, mask, manifest) {
                (Some(g), ..) => commands::FeatureSource::GlcmImage(g),
                (None, Some(i), Some(m), _) => commands::FeatureSource::Pair(i, m),
                (None, None, _, Some(m)) => commands::FeatureSource::Manifest(m),
                _ => return Err(Error::invalid("features input", "give --glcm-image, --image with --mask, or --manifest")),
            };
            commands::features(&cfg, source, &out)
        }
        Command::Synth { out, samples, classes, folds } => {
            if let Some(n) = samples {
                cfg.synth.samples = n;
            }
            if let Some(k) = classes {
                cfg.synth.classes = k;
            }
            if let Some(k) = folds {
                cfg.synth.folds = k;
            }
            commands::synth(&cfg, &out)
        }
        Command::Train { manifest, out, test_fold, train, glcm } => {
            glcm.apply(&mut cfg);
            train.apply(&mut cfg);
            if test_fold.is_some() {
                cfg.train.test_fold = test_fold;
            }
            commands::train(&cfg, &manifest, &out)
        }
        Command::Xval { manifest, out, k, parallel_folds, train, glcm } => {
            glcm.apply(&mut cfg);
            train.apply(&mut cfg);
            if let Some(k) = k {
                cfg.train.k = k;
            }
            cfg.train.parallel_folds |= parallel_folds;
            commands::xval(&cfg, &manifest, &out)
        }
        Command::Eval { checkpoint, manifest, fold, out, glcm } => {
            glcm.apply(&mut cfg);
            commands::eval(&cfg, &checkpoint, &manifest, fold, out.as_deref())
        }
        Command::Compare { reports } => commands::compare(&reports),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
