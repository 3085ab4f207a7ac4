//! Command-line front end. Exit codes: 0 success, 2 usage or validation
//! error, 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bayesopt::Acquisition;
use crate::error::{Error, Result};
use crate::experiment::{
    build_sets, gen_dataset, load_dataset, metrics_csv, prediction_columns, run_manifest, save_grid, tune_cyclegan,
    write_dataset, DatasetSpec, ExperimentManifest, ImageKind, MetricRow, RunOptions, TuneSettings,
};
use crate::image::{load_png, save_png};
use crate::models::{ModelParams, NetKind};
use crate::stego::{decode_with, encode_images, BitDepth, Fill};
use crate::training::{
    evaluate, new_autoencoder, train_autoencoder, train_cyclegan, BitRange, CycleGan, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn parse_bits(s: &str) -> std::result::Result<BitDepth, String> {
    s.parse::<BitDepth>().map_err(|e| e.to_string())
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW, e.g. 32x32")?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

#[derive(Parser, Debug)]
#[command(name = "stegocrack", version, about = "LSB steganography codec and GAN steganalysis workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hide the high bits of HIDDEN in the low bits of COVER.
    Encode {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        hidden: PathBuf,
        /// Bit depth, 0-8.
        #[arg(long, value_parser = parse_bits)]
        bits: BitDepth,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the hidden image from an encoded one.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        /// Bit depth, 0-8.
        #[arg(long, value_parser = parse_bits)]
        bits: BitDepth,
        #[arg(long)]
        out: PathBuf,
        /// Value for the unrecoverable low bits.
        #[arg(long, value_enum, default_value = "zero")]
        fill: FillArg,
    },
    /// Write a synthetic cover/hidden dataset as PNGs.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n_train: usize,
        #[arg(long, default_value_t = 5)]
        n_test: usize,
        #[arg(long, value_parser = parse_resolution, default_value = "32x32")]
        resolution: (usize, usize),
        /// gradients, shapes, noise-textures or mixed.
        #[arg(long, default_value = "mixed")]
        kind: ImageKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the protocol described by a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Parallel per-depth workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Record real elapsed seconds in metrics.csv (breaks byte-for-byte reruns).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Train one model at one depth and save its weights.
    Train {
        #[arg(long, value_enum, default_value = "cyclegan")]
        model: ModelArg,
        /// Bit depth, 0-8.
        #[arg(long, value_parser = parse_bits)]
        bits: BitDepth,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV to write.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Checkpoint directory (default: next to --out).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Progress line every N steps on stderr; 0 is silent.
        #[arg(long, default_value_t = 0)]
        log_every: usize,
        #[command(flatten)]
        setup: Setup,
    },
    /// Score saved weights on the dataset at one depth.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        /// Bit depth, 0-8.
        #[arg(long, value_parser = parse_bits)]
        bits: BitDepth,
        /// metrics.csv-style output file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        setup: Setup,
    },
    /// Bayesian optimization of CycleGAN hyperparameters.
    Tune {
        /// Search-space file (`name = lower, upper[, log|linear]` per line).
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, default_value_t = 5)]
        init: usize,
        /// ucb or ei.
        #[arg(long, default_value = "ucb")]
        acq: Acquisition,
        /// Seed of the optimizer's own random draws; --seed seeds data and training.
        #[arg(long, default_value_t = 0)]
        tune_seed: u64,
        /// Bit depth to tune at, 0-8.
        #[arg(long, value_parser = parse_bits, default_value = "8")]
        bits: BitDepth,
        /// Report CSV; grids and best weights go next to it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        setup: Setup,
    },
    /// Render a labeled prediction grid from saved weights.
    Grid {
        #[arg(long)]
        pred_weights: PathBuf,
        /// Bit depth, 0-8.
        #[arg(long, value_parser = parse_bits)]
        bits: BitDepth,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Add the F(G(x)) column when the file holds a generator pair.
        #[arg(long)]
        cycle: bool,
        #[command(flatten)]
        setup: Setup,
    },
}

/// Dataset and training settings shared by train, eval, tune and grid.
#[derive(Args, Debug, Clone)]
pub struct Setup {
    /// Manifest supplying dataset and training settings.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Read PNGs from this directory instead of generating data.
    #[arg(long)]
    pub import_dir: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub lambda_cyc: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FillArg {
    Zero,
    Midpoint,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    Cyclegan,
    Autoencoder,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
}

impl Setup {
    fn manifest(&self) -> Result<ExperimentManifest> {
        let mut m = match &self.manifest {
            Some(p) => ExperimentManifest::load(p)?,
            None => ExperimentManifest::default(),
        };
        m.apply_seed_override()?;
        if let Some(d) = &self.import_dir {
            m.import_dir = Some(d.clone());
        }
        let t = &mut m.train;
        if let Some(v) = self.steps {
            t.steps = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
            m.dataset.seed = v;
        }
        if let Some(v) = self.lr_g {
            t.lr_g = v;
        }
        if let Some(v) = self.lr_d {
            t.lr_d = v;
        }
        if let Some(v) = self.lambda_cyc {
            t.lambda_cyc = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.pretrain_steps {
            t.pretrain_steps = v;
        }
        m.validate()?;
        Ok(m)
    }
}

/// The translator in a weights file, plus F when it holds a generator pair.
fn load_predictor(path: &Path) -> Result<(ModelParams, Option<ModelParams>)> {
    let mut nets = ModelParams::load_many(path)?.into_iter();
    let first = nets
        .next()
        .ok_or_else(|| Error::Weights(format!("{} holds no networks", path.display())))?;
    if !matches!(first.kind(), NetKind::Generator | NetKind::Autoencoder) {
        return Err(Error::validation(format!("{} does not start with a generator or autoencoder", path.display())));
    }
    let second = nets.find(|n| n.kind() == NetKind::Generator);
    Ok((first, second))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Encode { cover, hidden, bits, out } => {
            let e = encode_images(&load_png(&cover)?, &load_png(&hidden)?, bits)?;
            save_png(&e, &out)
        }
        Command::Decode { input, bits, out, fill } => {
            let fill = match fill {
                FillArg::Zero => Fill::Zero,
                FillArg::Midpoint => Fill::Midpoint,
            };
            save_png(&decode_with(&load_png(&input)?, bits, fill), &out)
        }
        Command::GenData { out, n_train, n_test, resolution, kind, seed } => {
            let spec = DatasetSpec {
                n_train,
                n_test,
                resolution,
                kind,
                seed,
            };
            spec.validate()?;
            write_dataset(&gen_dataset(&spec)?, &out)
        }
        Command::Run { manifest, jobs, output, wall_clock } => {
            let mut m = ExperimentManifest::load(&manifest)?;
            if let Some(seed) = m.apply_seed_override()? {
                eprintln!("using seed {seed} from {}", crate::experiment::SEED_ENV);
            }
            if let Some(o) = output {
                m.output = o;
            }
            if jobs == 0 {
                return Err(Error::validation("--jobs must be at least 1"));
            }
            let s = run_manifest(&m, &RunOptions { jobs, wall_clock })?;
            eprintln!("{} protocol finished; report in {}", m.protocol, s.output.display());
            Ok(())
        }
        Command::Train { model, bits, out, trace, checkpoint_every, checkpoint_dir, log_every, setup } => {
            let m = setup.manifest()?;
            let mut cfg = TrainConfig {
                bits: BitRange::fixed(bits),
                log_every,
                ..m.train.clone()
            };
            if let Some(n) = checkpoint_every {
                cfg.checkpoint_every = n;
                cfg.checkpoint_dir =
                    Some(checkpoint_dir.unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).join("checkpoints")));
            }
            cfg.validate()?;
            let data = load_dataset(&m)?;
            let (train, test) = build_sets(&data, bits)?;
            let (report, eval_model) = match model {
                ModelArg::Cyclegan => {
                    let mut s = CycleGan::initialized(&cfg, &train)?;
                    let r = train_cyclegan(&mut s, &train, &cfg)?;
                    ModelParams::save_many(&out, &[&s.g, &s.f])?;
                    (r, s.g)
                }
                ModelArg::Autoencoder => {
                    let mut ae = new_autoencoder(&cfg, train.resolution())?;
                    let r = train_autoencoder(&mut ae, &train, None, &cfg)?;
                    ae.save(&out)?;
                    (r, ae)
                }
            };
            if let Some(t) = trace {
                crate::experiment::write_text(&t, &report.trace.to_csv())?;
            }
            let q = evaluate(&eval_model, &test)?.mean;
            eprintln!("trained {} steps; test mae {:.4} psnr {:.2} dB", cfg.steps, q.mae, q.psnr);
            Ok(())
        }
        Command::Eval { weights, bits, out, setup } => {
            let m = setup.manifest()?;
            let (model, _) = load_predictor(&weights)?;
            let data = load_dataset(&m)?;
            let (train, test) = build_sets(&data, bits)?;
            let mut rows = Vec::new();
            for (split, set) in [("train", &train), ("test", &test)] {
                let q = evaluate(&model, set)?.mean;
                eprintln!("{split}: mae {:.4} psnr {:.2} dB", q.mae, q.psnr);
                rows.push(MetricRow {
                    protocol: m.protocol,
                    model: model.name().to_lowercase(),
                    bit_size: bits.bits(),
                    split,
                    mae: q.mae,
                    psnr: q.psnr,
                    steps: 0,
                    seed: m.train.seed,
                    wall_s: 0.0,
                });
            }
            crate::experiment::write_text(&out, &metrics_csv(&rows))
        }
        Command::Tune { space, budget, init, acq, tune_seed, bits, out, setup } => {
            let m = setup.manifest()?;
            let settings = TuneSettings {
                budget,
                init,
                acq,
                seed: tune_seed,
                space: space.or(m.tune.space.clone()),
            };
            let space = crate::experiment::load_space(&settings)?;
            let data = load_dataset(&m)?;
            let outcome = tune_cyclegan(&m.train, &data, bits, &space, &settings)?;
            crate::experiment::write_tune_report(&outcome, &settings, &data, &out)?;
            eprintln!(
                "best objective {:.3} dB (initial best {:.3} dB); report in {}",
                outcome.best_final(),
                outcome.best_initial,
                out.display()
            );
            Ok(())
        }
        Command::Grid { pred_weights, bits, out, split, cycle, setup } => {
            let m = setup.manifest()?;
            let (model, f) = load_predictor(&pred_weights)?;
            if cycle && f.is_none() {
                return Err(Error::validation("--cycle needs a weights file holding both generators"));
            }
            let data = load_dataset(&m)?;
            let (train, test) = build_sets(&data, bits)?;
            let (sp, set) = match split {
                SplitArg::Train => (&data.train, &train),
                SplitArg::Test => (&data.test, &test),
            };
            let f = if cycle { f.as_ref() } else { None };
            save_grid(&prediction_columns(sp, set, &model, f)?, &out)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
