//! Protocol runners. Each run writes into the manifest's output directory:
//!
//! ```text
//! manifest.cfg            the manifest as run
//! metrics.csv             protocol,model,bit_size,split,mae,psnr,steps,seed,wall_s
//! comparison.csv          comparison protocol only
//! tune.csv                tune protocol only
//! weights/<model>_b<B>.sgw
//! traces/<model>_b<B>.csv
//! grids/<model>_b<B>_<split>.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::dataset::{gen_dataset, import_dataset, Dataset, Split};
use super::grid::{save_grid, GridColumn};
use super::manifest::{ExperimentManifest, Protocol};
use super::tune::{run_tune, TuneOutcome};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::image::{from_unit_tensor, QualityReport, RgbImage};
use crate::models::{generator_forward, ModelParams, NetKind};
use crate::stego::BitDepth;
use crate::training::{
    diversity, evaluate, new_autoencoder, predict, train_autoencoder, train_cyclegan, train_varying_bits, BitRange,
    CycleGan, Evaluation, StegoSet, TrainConfig, TrainReport,
};

/// Images per grid column; the first five of each split by index.
pub const GRID_ROWS: usize = 5;

pub const METRICS_HEADER: &str = "protocol,model,bit_size,split,mae,psnr,steps,seed,wall_s";
pub const COMPARISON_HEADER: &str =
    "bit_size,cyclegan_test_mae,cyclegan_diversity,autoencoder_test_mae,autoencoder_diversity";

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads for per-depth jobs.
    pub jobs: usize,
    /// Record real elapsed seconds in metrics.csv instead of 0.
    pub wall_clock: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            wall_clock: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub protocol: Protocol,
    pub model: String,
    pub bit_size: u8,
    pub split: &'static str,
    pub mae: f64,
    pub psnr: f64,
    pub steps: usize,
    pub seed: u64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub bit_size: u8,
    pub cyclegan_test_mae: f64,
    pub cyclegan_diversity: f64,
    pub autoencoder_test_mae: f64,
    pub autoencoder_diversity: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output: PathBuf,
    pub metrics: Vec<MetricRow>,
    pub comparison: Vec<ComparisonRow>,
    pub tune: Option<TuneOutcome>,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{},{},{:.3}\n",
            r.protocol, r.model, r.bit_size, r.split, r.mae, r.psnr, r.steps, r.seed, r.wall_s
        ));
    }
    s
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.bit_size, r.cyclegan_test_mae, r.cyclegan_diversity, r.autoencoder_test_mae, r.autoencoder_diversity
        ));
    }
    s
}

pub fn load_dataset(m: &ExperimentManifest) -> Result<Dataset> {
    match &m.import_dir {
        Some(dir) => import_dataset(dir, &m.dataset),
        None => gen_dataset(&m.dataset),
    }
}

/// (train, test) pairs at one depth.
pub fn build_sets(data: &Dataset, depth: BitDepth) -> Result<(StegoSet, StegoSet)> {
    Ok((
        StegoSet::build(&data.train.covers, &data.train.hiddens, depth)?,
        StegoSet::build(&data.test.covers, &data.test.hiddens, depth)?,
    ))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

fn images_to_tensor(imgs: &[RgbImage]) -> Result<Tensor> {
    Tensor::stack(&imgs.iter().map(crate::image::to_unit_tensor).collect::<Vec<_>>())
}

/// Grid columns for the first [`GRID_ROWS`] pairs of a split: cover,
/// hidden, encoded, decoded, predicted, and with `cycle` given (a generator
/// pair), the F(G(encoded)) reconstruction.
pub fn prediction_columns(
    split: &Split,
    set: &StegoSet,
    model: &ModelParams,
    cycle: Option<&ModelParams>,
) -> Result<Vec<GridColumn>> {
    let n = GRID_ROWS.min(set.len());
    let (h, w) = set.resolution();
    let hidden = split.hiddens[..n]
        .iter()
        .map(|im| if im.dims() == (h, w) { Ok(im.clone()) } else { im.resize_nearest(h, w) })
        .collect::<Result<Vec<_>>>()?;
    let predicted = predict(model, &set.inputs()[..n])?;
    let mut cols = vec![
        GridColumn::new("cover", split.covers[..n].to_vec()),
        GridColumn::new("hidden", hidden),
        GridColumn::new("encoded", set.encoded()[..n].to_vec()),
        GridColumn::new("decoded", set.decoded()[..n].to_vec()),
        GridColumn::new("predicted", predicted),
    ];
    if let Some(f) = cycle {
        if model.kind() != NetKind::Generator {
            return Err(Error::validation("cycle column needs a generator pair"));
        }
        let x = images_to_tensor(&set.encoded()[..n])?;
        let back = generator_forward(f, &generator_forward(model, &x)?)?;
        let imgs = back.unstack().iter().map(from_unit_tensor).collect::<Result<Vec<_>>>()?;
        cols.push(GridColumn::new("cycle", imgs));
    }
    Ok(cols)
}

struct Ctx<'a> {
    m: &'a ExperimentManifest,
    data: &'a Dataset,
    out: &'a Path,
    opts: &'a RunOptions,
}

struct JobOut {
    rows: Vec<MetricRow>,
    test_predictions: Vec<RgbImage>,
}

impl Ctx<'_> {
    fn rows(&self, model: &str, b: BitDepth, steps: usize, train: QualityReport, test: QualityReport, wall: f64) -> Vec<MetricRow> {
        let wall_s = if self.opts.wall_clock { wall } else { 0.0 };
        [("train", train), ("test", test)]
            .into_iter()
            .map(|(split, q)| MetricRow {
                protocol: self.m.protocol,
                model: model.to_string(),
                bit_size: b.bits(),
                split,
                mae: q.mae,
                psnr: q.psnr,
                steps,
                seed: self.m.train.seed,
                wall_s,
            })
            .collect()
    }

    fn config_at(&self, tag: &str, b: BitDepth) -> TrainConfig {
        let mut cfg = self.m.train.clone();
        cfg.bits = BitRange::fixed(b);
        if cfg.checkpoint_every > 0 && cfg.checkpoint_dir.is_none() {
            cfg.checkpoint_dir = Some(self.out.join("checkpoints").join(tag));
        }
        cfg
    }

    fn save_trace(&self, tag: &str, report: &TrainReport) -> Result<()> {
        write_file(&self.out.join("traces").join(format!("{tag}.csv")), report.trace.to_csv().as_bytes())
    }

    fn save_grids(
        &self,
        tag: &str,
        model: &ModelParams,
        cycle: Option<&ModelParams>,
        train: &StegoSet,
        test: &StegoSet,
    ) -> Result<()> {
        let dir = self.out.join("grids");
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        save_grid(
            &prediction_columns(&self.data.train, train, model, cycle)?,
            &dir.join(format!("{tag}_train.png")),
        )?;
        save_grid(&prediction_columns(&self.data.test, test, model, None)?, &dir.join(format!("{tag}_test.png")))
    }

    fn cyclegan_job(&self, b: BitDepth) -> Result<JobOut> {
        let tag = format!("cyclegan_b{}", b.bits());
        let (train, test) = build_sets(self.data, b)?;
        let cfg = self.config_at(&tag, b);
        let start = Instant::now();
        let mut state = CycleGan::initialized(&cfg, &train)?;
        let report = train_cyclegan(&mut state, &train, &cfg)?;
        let ev_train = evaluate(&state.g, &train)?;
        let ev_test = evaluate(&state.g, &test)?;
        let wall = start.elapsed().as_secs_f64();
        ModelParams::save_many(&self.out.join("weights").join(format!("{tag}.sgw")), &[&state.g, &state.f])?;
        self.save_trace(&tag, &report)?;
        self.save_grids(&tag, &state.g, Some(&state.f), &train, &test)?;
        Ok(JobOut {
            rows: self.rows("cyclegan", b, cfg.steps, ev_train.mean, ev_test.mean, wall),
            test_predictions: ev_test.predictions,
        })
    }

    fn autoencoder_job(&self, b: BitDepth) -> Result<JobOut> {
        let tag = format!("autoencoder_b{}", b.bits());
        let (train, test) = build_sets(self.data, b)?;
        let cfg = self.config_at(&tag, b);
        let start = Instant::now();
        let mut ae = new_autoencoder(&cfg, train.resolution())?;
        let report = train_autoencoder(&mut ae, &train, None, &cfg)?;
        let ev_train = evaluate(&ae, &train)?;
        let ev_test = evaluate(&ae, &test)?;
        let wall = start.elapsed().as_secs_f64();
        ae.save(&self.out.join("weights").join(format!("{tag}.sgw")))?;
        self.save_trace(&tag, &report)?;
        self.save_grids(&tag, &ae, None, &train, &test)?;
        Ok(JobOut {
            rows: self.rows("autoencoder", b, cfg.steps, ev_train.mean, ev_test.mean, wall),
            test_predictions: ev_test.predictions,
        })
    }

    /// Runs `job` for every depth on a pool of `opts.jobs` threads; results
    /// come back in depth order.
    fn per_depth<T: Send>(&self, job: impl Fn(BitDepth) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let depths = self.m.train.bits.depths();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.opts.jobs.max(1))
            .build()
            .map_err(|e| Error::validation(format!("cannot start {} workers: {e}", self.opts.jobs)))?;
        pool.install(|| {
            depths
                .par_iter()
                .map(|&b| {
                    job(b).map_err(|e| Error::AtDepth {
                        depth: b.bits(),
                        source: Box::new(e),
                    })
                })
                .collect()
        })
    }

    fn varying(&self) -> Result<Vec<MetricRow>> {
        let cfg = {
            let mut c = self.m.train.clone();
            if c.checkpoint_every > 0 && c.checkpoint_dir.is_none() {
                c.checkpoint_dir = Some(self.out.join("checkpoints").join("cyclegan_varying"));
            }
            c
        };
        let epochs = cfg.steps.div_ceil(cfg.epoch_steps);
        let start = Instant::now();
        let (pre_train, _) = build_sets(self.data, cfg.bits.hi)?;
        let mut state = CycleGan::initialized(&cfg, &pre_train)?;
        let mut factory = |b: BitDepth| StegoSet::build(&self.data.train.covers, &self.data.train.hiddens, b);
        let report = train_varying_bits(&mut state, &mut factory, &cfg, epochs)?;
        let wall = start.elapsed().as_secs_f64();
        ModelParams::save_many(&self.out.join("weights").join("cyclegan_varying.sgw"), &[&state.g, &state.f])?;
        self.save_trace("cyclegan_varying", &report)?;
        let mut rows = Vec::new();
        for b in cfg.bits.depths() {
            let (train, test) = build_sets(self.data, b)?;
            let ev_train: Evaluation = evaluate(&state.g, &train)?;
            let ev_test = evaluate(&state.g, &test)?;
            self.save_grids(&format!("cyclegan_varying_b{}", b.bits()), &state.g, Some(&state.f), &train, &test)?;
            rows.extend(self.rows("cyclegan-varying", b, epochs * cfg.epoch_steps, ev_train.mean, ev_test.mean, wall));
        }
        Ok(rows)
    }
}

/// Runs the manifest's protocol and writes its report directory.
pub fn run_manifest(m: &ExperimentManifest, opts: &RunOptions) -> Result<RunSummary> {
    m.validate()?;
    let data = load_dataset(m)?;
    let out = m.output.as_path();
    for sub in ["weights", "traces", "grids"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    write_file(&out.join("manifest.cfg"), m.to_text().as_bytes())?;
    let ctx = Ctx {
        m,
        data: &data,
        out,
        opts,
    };
    let mut comparison = Vec::new();
    let mut tune = None;
    let mut metrics = match m.protocol {
        Protocol::PerBit => ctx.per_depth(|b| ctx.cyclegan_job(b))?.into_iter().flat_map(|j| j.rows).collect(),
        Protocol::AutoencoderPerBit => {
            ctx.per_depth(|b| ctx.autoencoder_job(b))?.into_iter().flat_map(|j| j.rows).collect()
        }
        Protocol::VaryingBit => ctx.varying()?,
        Protocol::Comparison => {
            let pairs = ctx.per_depth(|b| Ok((b, ctx.cyclegan_job(b)?, ctx.autoencoder_job(b)?)))?;
            let mut rows = Vec::new();
            for (b, cg, ae) in pairs {
                let test_mae = |j: &JobOut| j.rows.iter().find(|r| r.split == "test").map_or(f64::NAN, |r| r.mae);
                comparison.push(ComparisonRow {
                    bit_size: b.bits(),
                    cyclegan_test_mae: test_mae(&cg),
                    cyclegan_diversity: diversity(&cg.test_predictions)?,
                    autoencoder_test_mae: test_mae(&ae),
                    autoencoder_diversity: diversity(&ae.test_predictions)?,
                });
                rows.extend(cg.rows);
                rows.extend(ae.rows);
            }
            write_file(&out.join("comparison.csv"), comparison_csv(&comparison).as_bytes())?;
            rows
        }
        Protocol::Tune => {
            let (outcome, rows) = run_tune(m, &data, out, opts.wall_clock)?;
            tune = Some(outcome);
            rows
        }
    };
    metrics.sort_by(|a, b| (&a.model, a.bit_size, a.split).cmp(&(&b.model, b.bit_size, b.split)));
    write_file(&out.join("metrics.csv"), metrics_csv(&metrics).as_bytes())?;
    Ok(RunSummary {
        output: out.to_path_buf(),
        metrics,
        comparison,
        tune,
    })
}
