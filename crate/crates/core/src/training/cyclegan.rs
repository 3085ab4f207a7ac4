use std::collections::HashMap;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use super::losses::{gan_loss_d, gan_loss_g};
use super::pix2pix::{new_conditional_discriminator, pretrain_pix2pix};
use super::{
    at_step, check_finite, log_progress, sample_indices, stream_rng, Adam, LossTrace, StegoSet, TrainConfig,
    TrainReport, STREAM_BATCH, STREAM_BITS, STREAM_NOISE, STREAM_PRETRAIN_F, STREAM_PRETRAIN_G,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{dropout_mask, init_params, Bound, ModelParams, NetKind};
use crate::stego::BitDepth;

const TAG_G: u64 = 1;
const TAG_F: u64 = 2;
const TAG_DX: u64 = 3;
const TAG_DY: u64 = 4;

pub(crate) const COLUMNS: [&str; 8] = [
    "d_x", "d_y", "gan_g", "gan_f", "cycle", "gen_total", "objective", "minimax_value",
];

/// G: X→Y, F: Y→X and their discriminators, with one optimizer per phase.
#[derive(Clone, Debug)]
pub struct CycleGan {
    pub g: ModelParams,
    pub f: ModelParams,
    pub d_x: ModelParams,
    pub d_y: ModelParams,
    opt_d: Adam,
    opt_g: Adam,
    noise_rng: ChaCha8Rng,
    step: usize,
}

/// Loss values of one alternating update, all read before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub d_x: f64,
    pub d_y: f64,
    pub gan_g: f64,
    pub gan_f: f64,
    pub cycle: f64,
    pub gen_total: f64,
    /// d_x + d_y + λ·cycle.
    pub objective: f64,
    /// The two-player value: log-likelihood terms (= −d_x − d_y) + λ·cycle.
    pub minimax_value: f64,
}

impl StepLosses {
    fn row(&self) -> Vec<f64> {
        vec![
            self.d_x,
            self.d_y,
            self.gan_g,
            self.gan_f,
            self.cycle,
            self.gen_total,
            self.objective,
            self.minimax_value,
        ]
    }
}

impl CycleGan {
    /// Fresh networks seeded from `cfg.seed`.
    pub fn new(cfg: &TrainConfig, resolution: (usize, usize)) -> Result<Self> {
        cfg.validate()?;
        let disc_cfg = |tag| {
            let mut c = cfg.net_config(tag, resolution);
            c.skip = false;
            c
        };
        Ok(CycleGan {
            g: init_params(NetKind::Generator, "G", &cfg.net_config(TAG_G, resolution))?,
            f: init_params(NetKind::Generator, "F", &cfg.net_config(TAG_F, resolution))?,
            d_x: init_params(NetKind::Discriminator, "DX", &disc_cfg(TAG_DX))?,
            d_y: init_params(NetKind::Discriminator, "DY", &disc_cfg(TAG_DY))?,
            opt_d: Adam::default(),
            opt_g: Adam::default(),
            noise_rng: stream_rng(cfg.seed, STREAM_NOISE),
            step: 0,
        })
    }

    /// Fresh networks, with G and F warm-started by conditional pretraining
    /// on the paired set when `cfg.pretrain_steps > 0`.
    pub fn initialized(cfg: &TrainConfig, data: &StegoSet) -> Result<Self> {
        let mut state = CycleGan::new(cfg, data.resolution())?;
        if cfg.pretrain_steps > 0 {
            let mut dg = new_conditional_discriminator(cfg, data.resolution(), 0)?;
            pretrain_pix2pix(&mut state.g, &mut dg, data, cfg, STREAM_PRETRAIN_G)?;
            let mut df = new_conditional_discriminator(cfg, data.resolution(), 1)?;
            pretrain_pix2pix(&mut state.f, &mut df, &data.swapped(), cfg, STREAM_PRETRAIN_F)?;
        }
        Ok(state)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn nets(&self) -> [&ModelParams; 4] {
        [&self.g, &self.f, &self.d_x, &self.d_y]
    }
}

/// Generator forward passes for one batch, recorded once and shared by
/// both phases of the step.
pub struct GeneratorPass<'t> {
    g: Bound<'t>,
    f: Bound<'t>,
    x: Var<'t>,
    y: Var<'t>,
    pub fake_y: Var<'t>,
    pub fake_x: Var<'t>,
    pub rec_x: Var<'t>,
    pub rec_y: Var<'t>,
}

impl<'t> GeneratorPass<'t> {
    pub fn forward(tape: &'t Tape, state: &mut CycleGan, x: &Tensor, y: &Tensor, noise: f64) -> Result<Self> {
        let g = state.g.bind(tape)?;
        let f = state.f.bind(tape)?;
        let xv = tape.constant(x)?;
        let yv = tape.constant(y)?;
        let (xin, yin) = if noise > 0.0 {
            let mx = tape.constant(&dropout_mask(x.shape(), noise, &mut state.noise_rng))?;
            let my = tape.constant(&dropout_mask(y.shape(), noise, &mut state.noise_rng))?;
            (xv.mul(mx)?, yv.mul(my)?)
        } else {
            (xv, yv)
        };
        let fake_y = g.translate(xin)?;
        let fake_x = f.translate(yin)?;
        let rec_x = f.translate(fake_y)?;
        let rec_y = g.translate(fake_x)?;
        Ok(GeneratorPass {
            g,
            f,
            x: xv,
            y: yv,
            fake_y,
            fake_x,
            rec_x,
            rec_y,
        })
    }
}

/// Phase 1: one Adam update of D_X and D_Y on their descent losses against
/// the current (detached) fakes. Returns (d_x, d_y) before the update.
pub fn discriminator_phase(
    state: &mut CycleGan,
    x: &Tensor,
    y: &Tensor,
    fake_x: &Tensor,
    fake_y: &Tensor,
    lr: f64,
) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let dx = state.d_x.bind(&tape)?;
    let dy = state.d_y.bind(&tape)?;
    let loss_x = gan_loss_d(&dx, tape.constant(x)?, tape.constant(fake_x)?)?;
    let loss_y = gan_loss_d(&dy, tape.constant(y)?, tape.constant(fake_y)?)?;
    tape.backward(loss_x.add(loss_y)?)?;
    state.d_x.collect_grads(&tape, &dx)?;
    state.d_y.collect_grads(&tape, &dy)?;
    let CycleGan { d_x, d_y, opt_d, .. } = state;
    opt_d.step(&mut [d_x, d_y], lr)?;
    Ok((loss_x.item(), loss_y.item()))
}

/// Phase 2: one joint Adam update of G and F against the frozen
/// discriminators. Returns (gan_g, gan_f, cycle, total) before the update.
pub fn generator_phase<'t>(
    state: &mut CycleGan,
    tape: &'t Tape,
    pass: &GeneratorPass<'t>,
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64, f64)> {
    let dx = state.d_x.bind_frozen(tape)?;
    let dy = state.d_y.bind_frozen(tape)?;
    let gan_g = gan_loss_g(&dy, pass.fake_y)?;
    let gan_f = gan_loss_g(&dx, pass.fake_x)?;
    let cycle = pass.rec_x.l1_loss(pass.x)?.add(pass.rec_y.l1_loss(pass.y)?)?;
    let total = gan_g.add(gan_f)?.add(cycle.scalar_mul(cfg.lambda_cyc)?)?;
    tape.backward(total)?;
    state.g.collect_grads(tape, &pass.g)?;
    state.f.collect_grads(tape, &pass.f)?;
    let CycleGan { g, f, opt_g, .. } = state;
    opt_g.step(&mut [g, f], cfg.lr_g)?;
    Ok((gan_g.item(), gan_f.item(), cycle.item(), total.item()))
}

/// One alternating update: discriminators first, then both generators.
pub fn train_step_cyclegan(state: &mut CycleGan, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<StepLosses> {
    let step = state.step;
    let run = |state: &mut CycleGan| -> Result<StepLosses> {
        let tape = Tape::new();
        let pass = GeneratorPass::forward(&tape, state, x, y, cfg.noise_dropout)?;
        let (d_x, d_y) = discriminator_phase(state, x, y, &pass.fake_x.value(), &pass.fake_y.value(), cfg.lr_d)?;
        let (gan_g, gan_f, cycle, gen_total) = generator_phase(state, &tape, &pass, cfg)?;
        Ok(StepLosses {
            d_x,
            d_y,
            gan_g,
            gan_f,
            cycle,
            gen_total,
            objective: d_x + d_y + cfg.lambda_cyc * cycle,
            minimax_value: -d_x - d_y + cfg.lambda_cyc * cycle,
        })
    };
    let losses = run(state).map_err(|e| at_step(step, e))?;
    check_finite(
        step,
        &[
            ("d_x", losses.d_x),
            ("d_y", losses.d_y),
            ("gan_g", losses.gan_g),
            ("gan_f", losses.gan_f),
            ("cycle", losses.cycle),
        ],
    )?;
    state.step += 1;
    Ok(losses)
}

fn maybe_checkpoint(state: &CycleGan, cfg: &TrainConfig) -> Result<()> {
    if cfg.checkpoint_every == 0 || state.step % cfg.checkpoint_every != 0 {
        return Ok(());
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(format!("step{:06}.sgw", state.step));
        ModelParams::save_many(&path, &state.nets())?;
    }
    Ok(())
}

/// `cfg.steps` updates on unpaired batches: x and y indices are drawn
/// independently from the batch stream.
pub fn train_cyclegan(state: &mut CycleGan, data: &StegoSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = TrainReport::new(&COLUMNS, cfg);
    let mut rng = stream_rng(cfg.seed, STREAM_BATCH);
    for _ in 0..cfg.steps {
        run_one(state, data, cfg, &mut rng, &mut report.trace)?;
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn run_one(
    state: &mut CycleGan,
    data: &StegoSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut LossTrace,
) -> Result<()> {
    let xi = sample_indices(rng, data.len(), cfg.batch_size);
    let yi = sample_indices(rng, data.len(), cfg.batch_size);
    let losses = train_step_cyclegan(state, &data.batch_x(&xi)?, &data.batch_y(&yi)?, cfg)?;
    let row = losses.row();
    log_progress(cfg, "cyclegan", state.step - 1, &row, &trace.columns);
    trace.rows.push(row);
    maybe_checkpoint(state, cfg)
}

/// Each epoch draws a depth uniformly from `cfg.bits` on its own stream,
/// takes that depth's data from `factory`, and runs `cfg.epoch_steps`
/// updates. Batches come from the same stream as [`train_cyclegan`], so a
/// single-depth range reproduces a fixed-depth run exactly.
pub fn train_varying_bits(
    state: &mut CycleGan,
    factory: &mut dyn FnMut(BitDepth) -> Result<StegoSet>,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let depths = cfg.bits.depths();
    let mut report = TrainReport::new(&COLUMNS, cfg);
    report.trace.columns.insert(0, "bit_size".into());
    let mut bit_rng = stream_rng(cfg.seed, STREAM_BITS);
    let mut rng = stream_rng(cfg.seed, STREAM_BATCH);
    let mut cache: HashMap<BitDepth, StegoSet> = HashMap::new();
    let mut trace = LossTrace::new(&COLUMNS);
    for _ in 0..epochs {
        let b = depths[sample_indices(&mut bit_rng, depths.len(), 1)[0]];
        report.epoch_depths.push(b);
        if !cache.contains_key(&b) {
            let set = factory(b).map_err(|e| Error::AtDepth {
                depth: b.bits(),
                source: Box::new(e),
            })?;
            cache.insert(b, set);
        }
        let data = &cache[&b];
        for _ in 0..cfg.epoch_steps {
            run_one(state, data, cfg, &mut rng, &mut trace)?;
            let mut row = trace.rows.last().expect("just pushed").clone();
            row.insert(0, b.bits() as f64);
            report.trace.rows.push(row);
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
