use std::time::Instant;

use super::losses::{cgan_loss_d, cgan_loss_g};
use super::{at_step, check_finite, log_progress, sample_indices, stream_rng, Adam, StegoSet, TrainConfig, TrainReport};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::models::{init_params, ModelParams, NetKind};

const TAG_DCOND: u64 = 6;

/// Six-channel patch discriminator judging (condition, image) pairs.
pub fn new_conditional_discriminator(cfg: &TrainConfig, resolution: (usize, usize), index: u64) -> Result<ModelParams> {
    let mut nc = cfg.net_config(TAG_DCOND + 16 * index, resolution);
    nc.input_channels = 6;
    nc.skip = false;
    init_params(NetKind::Discriminator, "DC", &nc)
}

/// Conditional GAN training of `g` on the paired set (inputs → targets) for
/// `cfg.pretrain_steps` steps, alternating a `d_cond` update and a `g`
/// update on bce + λ_L1·l1. Batches come from `stream` of the run seed.
pub fn pretrain_pix2pix(
    g: &mut ModelParams,
    d_cond: &mut ModelParams,
    data: &StegoSet,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = TrainReport::new(&["d", "gan_g", "l1", "gen_total"], cfg);
    let mut rng = stream_rng(cfg.seed, stream);
    let (mut opt_d, mut opt_g) = (Adam::default(), Adam::default());
    for step in 0..cfg.pretrain_steps {
        let idx = sample_indices(&mut rng, data.len(), cfg.batch_size);
        let (xb, yb) = (data.batch_x(&idx)?, data.batch_y(&idx)?);
        let row = (|| -> Result<Vec<f64>> {
            let tape = Tape::new();
            let gb = g.bind(&tape)?;
            let x = tape.constant(&xb)?;
            let y = tape.constant(&yb)?;
            let fake = gb.translate(x)?;

            let dtape = Tape::new();
            let db = d_cond.bind(&dtape)?;
            let d_loss = cgan_loss_d(
                &db,
                dtape.constant(&xb)?,
                dtape.constant(&yb)?,
                dtape.constant(&fake.value())?,
            )?;
            dtape.backward(d_loss)?;
            d_cond.collect_grads(&dtape, &db)?;
            opt_d.step(&mut [d_cond], cfg.lr_d)?;

            let dfrozen = d_cond.bind_frozen(&tape)?;
            let (adv, l1, total) = cgan_loss_g(&dfrozen, x, fake, y, cfg.lambda_l1)?;
            tape.backward(total)?;
            g.collect_grads(&tape, &gb)?;
            opt_g.step(&mut [&mut *g], cfg.lr_g)?;
            Ok(vec![d_loss.item(), adv.item(), l1.item(), total.item()])
        })()
        .map_err(|e| at_step(step, e))?;
        check_finite(step, &[("d", row[0]), ("gen_total", row[3])])?;
        log_progress(cfg, "pix2pix", step, &row, &report.trace.columns);
        report.trace.rows.push(row);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
