//! Bayesian optimization of CycleGAN training hyperparameters.

use std::path::Path;

use super::dataset::Dataset;
use super::grid::save_grid;
use super::manifest::{ExperimentManifest, TuneSettings};
use super::protocol::{build_sets, prediction_columns, write_file, MetricRow};
use crate::bayesopt::{optimize, Dim, OptimizeResult, SearchSpace};
use crate::error::{Error, Result};
use crate::image::QualityReport;
use crate::models::ModelParams;
use crate::stego::BitDepth;
use crate::training::{evaluate, train_cyclegan, BitRange, CycleGan, TrainConfig};

pub const TUNE_HEADER: &str = "trial,lr_g,lr_d,lambda_cyc,batch_size,objective_psnr,best_so_far";

/// Names a search space may use.
pub const TUNABLE: [&str; 4] = ["lr_g", "lr_d", "lambda_cyc", "batch_size"];

pub fn default_tune_space() -> SearchSpace {
    SearchSpace::new(vec![
        Dim::new("lr_g", 1e-5, 1e-2, true).expect("valid"),
        Dim::new("lr_d", 1e-5, 1e-2, true).expect("valid"),
        Dim::new("lambda_cyc", 1.0, 50.0, true).expect("valid"),
        Dim::new("batch_size", 1.0, 8.0, false).expect("valid"),
    ])
    .expect("valid")
}

pub fn check_space(space: &SearchSpace) -> Result<()> {
    match space.dims().iter().find(|d| !TUNABLE.contains(&d.name.as_str())) {
        Some(d) => Err(Error::validation(format!(
            "cannot tune {:?}; tunable names are {}",
            d.name,
            TUNABLE.join(", ")
        ))),
        None => Ok(()),
    }
}

/// Nearest power of two in log space, within 1..=8.
pub fn snap_batch(v: f64) -> usize {
    let e = v.clamp(1.0, 8.0).log2().round() as u32;
    1 << e
}

/// `base` with the dimensions of `x` (internal coordinates) applied.
pub fn apply_point(base: &TrainConfig, space: &SearchSpace, x: &[f64]) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    for (d, v) in space.dims().iter().zip(space.values(x)) {
        match d.name.as_str() {
            "lr_g" => cfg.lr_g = v,
            "lr_d" => cfg.lr_d = v,
            "lambda_cyc" => cfg.lambda_cyc = v,
            "batch_size" => cfg.batch_size = snap_batch(v),
            other => return Err(Error::validation(format!("cannot tune {other:?}"))),
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneRow {
    pub trial: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_cyc: f64,
    pub batch_size: usize,
    pub objective_psnr: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug)]
pub struct TunedModel {
    pub config: TrainConfig,
    pub g: ModelParams,
    pub f: ModelParams,
    pub train: QualityReport,
    pub test: QualityReport,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub depth: BitDepth,
    pub result: OptimizeResult,
    pub rows: Vec<TuneRow>,
    /// Best objective among the random initial trials.
    pub best_initial: f64,
    pub before: Option<TunedModel>,
    pub after: Option<TunedModel>,
}

impl TuneOutcome {
    pub fn best_final(&self) -> f64 {
        self.rows.last().map_or(f64::NEG_INFINITY, |r| r.best_so_far)
    }

    pub fn to_csv(&self, settings: &TuneSettings) -> String {
        let mut s = format!(
            "# bit_depth={} acq={} seed={} budget={} init={}\n{TUNE_HEADER}\n",
            self.depth, settings.acq, settings.seed, settings.budget, settings.init
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:e},{:e},{:.6},{},{:.6},{:.6}\n",
                r.trial, r.lr_g, r.lr_d, r.lambda_cyc, r.batch_size, r.objective_psnr, r.best_so_far
            ));
        }
        s
    }
}

fn train_trial(cfg: &TrainConfig, data: &Dataset, depth: BitDepth) -> Result<TunedModel> {
    let (train, test) = build_sets(data, depth)?;
    let mut state = CycleGan::initialized(cfg, &train)?;
    train_cyclegan(&mut state, &train, cfg)?;
    let tr = evaluate(&state.g, &train)?.mean;
    let te = evaluate(&state.g, &test)?.mean;
    Ok(TunedModel {
        config: cfg.clone(),
        g: state.g,
        f: state.f,
        train: tr,
        test: te,
    })
}

/// Maximizes mean test PSNR of a CycleGAN trained at `depth` from `base`.
/// Trials that fail (divergence or any other error) count as −∞.
pub fn tune_cyclegan(
    base: &TrainConfig,
    data: &Dataset,
    depth: BitDepth,
    space: &SearchSpace,
    settings: &TuneSettings,
) -> Result<TuneOutcome> {
    check_space(space)?;
    let mut base = base.clone();
    base.bits = BitRange::fixed(depth);
    base.checkpoint_every = 0;
    base.validate()?;
    let mut trial = 0usize;
    let mut before: Option<TunedModel> = None;
    let mut after: Option<TunedModel> = None;
    let mut configs = Vec::new();
    let mut objective = |x: &[f64]| -> f64 {
        let initial = trial < settings.init;
        trial += 1;
        let run = apply_point(&base, space, x).and_then(|cfg| {
            configs.push(cfg.clone());
            train_trial(&cfg, data, depth)
        });
        match run {
            Ok(model) => {
                let y = model.test.psnr;
                if initial && before.as_ref().is_none_or(|b| y > b.test.psnr) {
                    before = Some(model.clone());
                }
                if after.as_ref().is_none_or(|b| y > b.test.psnr) {
                    after = Some(model);
                }
                y
            }
            Err(e) => {
                eprintln!("[tune] trial {trial} failed: {e}");
                if configs.len() < trial {
                    configs.push(base.clone());
                }
                f64::NAN
            }
        }
    };
    let result = optimize(&mut objective, space, settings.budget, settings.init, settings.acq, settings.seed)?;
    let rows: Vec<TuneRow> = result
        .history
        .iter()
        .zip(&configs)
        .enumerate()
        .map(|(i, (t, c))| TuneRow {
            trial: i,
            lr_g: c.lr_g,
            lr_d: c.lr_d,
            lambda_cyc: c.lambda_cyc,
            batch_size: c.batch_size,
            objective_psnr: t.y,
            best_so_far: t.best_so_far,
        })
        .collect();
    let best_initial = result
        .history
        .iter()
        .filter(|t| t.initial)
        .map(|t| t.y)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TuneOutcome {
        depth,
        result,
        rows,
        best_initial,
        before,
        after,
    })
}

/// Writes `csv_path` and, next to it, `<stem>_before.png` / `<stem>_after.png`
/// test grids for the best initial and best overall models.
pub fn write_tune_report(
    outcome: &TuneOutcome,
    settings: &TuneSettings,
    data: &Dataset,
    csv_path: &Path,
) -> Result<()> {
    write_file(csv_path, outcome.to_csv(settings).as_bytes())?;
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("tune");
    let (_, test) = build_sets(data, outcome.depth)?;
    for (label, model) in [("before", &outcome.before), ("after", &outcome.after)] {
        if let Some(m) = model {
            save_grid(&prediction_columns(&data.test, &test, &m.g, None)?, &dir.join(format!("{stem}_{label}.png")))?;
        }
    }
    if let Some(m) = &outcome.after {
        ModelParams::save_many(&dir.join(format!("{stem}_best.sgw")), &[&m.g, &m.f])?;
    }
    Ok(())
}

pub fn load_space(settings: &TuneSettings) -> Result<SearchSpace> {
    match &settings.space {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::io(format!("reading {}", p.display()), e))?
            .parse(),
        None => Ok(default_tune_space()),
    }
}

/// Tune protocol: tunes at the top depth of `train.bit_depth` and reports
/// the best model as `cyclegan-tuned`.
pub(crate) fn run_tune(
    m: &ExperimentManifest,
    data: &Dataset,
    out: &Path,
    wall_clock: bool,
) -> Result<(TuneOutcome, Vec<MetricRow>)> {
    let start = std::time::Instant::now();
    let space = load_space(&m.tune)?;
    let outcome = tune_cyclegan(&m.train, data, m.train.bits.hi, &space, &m.tune)?;
    write_tune_report(&outcome, &m.tune, data, &out.join("tune.csv"))?;
    let wall_s = if wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
    let rows = match &outcome.after {
        Some(best) => [("train", best.train), ("test", best.test)]
            .into_iter()
            .map(|(split, q)| MetricRow {
                protocol: m.protocol,
                model: "cyclegan-tuned".into(),
                bit_size: outcome.depth.bits(),
                split,
                mae: q.mae,
                psnr: q.psnr,
                steps: best.config.steps,
                seed: m.train.seed,
                wall_s,
            })
            .collect(),
        None => Vec::new(),
    };
    Ok((outcome, rows))
}
