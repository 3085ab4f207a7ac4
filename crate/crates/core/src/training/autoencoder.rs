use std::time::Instant;

use super::eval::evaluate;
use super::{at_step, check_finite, log_progress, sample_indices, stream_rng, Adam, StegoSet, TrainConfig, TrainReport, STREAM_BATCH};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::models::{init_params, ModelParams, NetKind};

const TAG_AE: u64 = 5;

pub fn new_autoencoder(cfg: &TrainConfig, resolution: (usize, usize)) -> Result<ModelParams> {
    let mut nc = cfg.net_config(TAG_AE, resolution);
    nc.skip = false;
    init_params(NetKind::Autoencoder, "AE", &nc)
}

/// Supervised reconstruction: `cfg.steps` Adam updates on
/// mse(AE(encoded), decoded) over paired batches, then train/test scores.
pub fn train_autoencoder(
    ae: &mut ModelParams,
    data: &StegoSet,
    test: Option<&StegoSet>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = TrainReport::new(&["mse"], cfg);
    let mut rng = stream_rng(cfg.seed, STREAM_BATCH);
    let mut opt = Adam::default();
    for step in 0..cfg.steps {
        let idx = sample_indices(&mut rng, data.len(), cfg.batch_size);
        let (xb, yb) = (data.batch_x(&idx)?, data.batch_y(&idx)?);
        let loss = (|| -> Result<f64> {
            let tape = Tape::new();
            let b = ae.bind(&tape)?;
            let loss = b.translate(tape.constant(&xb)?)?.mse_loss(tape.constant(&yb)?)?;
            tape.backward(loss)?;
            ae.collect_grads(&tape, &b)?;
            opt.step(&mut [&mut *ae], cfg.lr_g)?;
            Ok(loss.item())
        })()
        .map_err(|e| at_step(step, e))?;
        check_finite(step, &[("mse", loss)])?;
        log_progress(cfg, "autoencoder", step, &[loss], &report.trace.columns);
        report.trace.rows.push(vec![loss]);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.train = Some(evaluate(ae, data)?.mean);
    if let Some(t) = test {
        report.test = Some(evaluate(ae, t)?.mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;
    use crate::stego::BitDepth;

    fn fixture(depth: u8) -> StegoSet {
        let covers: Vec<_> = (0..4u8).map(|i| RgbImage::filled(8, 8, [i * 60, 30, 200]).unwrap()).collect();
        let hiddens: Vec<_> = (0..4u8).map(|i| RgbImage::filled(8, 8, [250 - i * 50, 128, i * 20]).unwrap()).collect();
        StegoSet::build(&covers, &hiddens, BitDepth::new(depth).unwrap()).unwrap()
    }

    #[test]
    fn loss_falls_for_several_seeds() {
        let data = fixture(4);
        for seed in 0..3 {
            let cfg = TrainConfig {
                base_width: 4,
                batch_size: 2,
                steps: 60,
                lr_g: 1e-3,
                seed,
                ..Default::default()
            };
            let mut ae = new_autoencoder(&cfg, data.resolution()).unwrap();
            let r = train_autoencoder(&mut ae, &data, Some(&data), &cfg).unwrap();
            let t = r.trace.column("mse").unwrap();
            assert!(t.last().unwrap() < &t[0], "seed {seed}: {} -> {}", t[0], t.last().unwrap());
            assert!(r.train.is_some() && r.test.is_some());
        }
    }

    #[test]
    fn depth_zero_learns_black() {
        let data = fixture(0);
        let cfg = TrainConfig {
            base_width: 4,
            batch_size: 2,
            steps: 150,
            lr_g: 2e-3,
            ..Default::default()
        };
        let mut ae = new_autoencoder(&cfg, data.resolution()).unwrap();
        let r = train_autoencoder(&mut ae, &data, None, &cfg).unwrap();
        assert!(r.train.unwrap().mae < 0.05, "{:?}", r.train);
    }
}
