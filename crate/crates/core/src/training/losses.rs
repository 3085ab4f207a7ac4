//! Loss compositions on bound networks. All return scalar vars on the
//! caller's tape so they can be differentiated or just read.

use crate::autodiff::Var;
use crate::error::Result;
use crate::models::Bound;

/// Discriminator descent loss: bce(D(real), 1) + bce(D(fake), 0).
/// `fake` is detached, so no gradient reaches the generator.
pub fn gan_loss_d<'t>(d: &Bound<'t>, real: Var<'t>, fake: Var<'t>) -> Result<Var<'t>> {
    let real_term = d.discriminate(real)?.bce_with_logits(1.0)?;
    let fake_term = d.discriminate(fake.detach()?)?.bce_with_logits(0.0)?;
    real_term.add(fake_term)
}

/// Non-saturating generator loss: bce(D(fake), 1).
pub fn gan_loss_g<'t>(d: &Bound<'t>, fake: Var<'t>) -> Result<Var<'t>> {
    d.discriminate(fake)?.bce_with_logits(1.0)
}

/// l1(F(G(x)), x) + l1(G(F(y)), y).
pub fn cycle_loss<'t>(g: &Bound<'t>, f: &Bound<'t>, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let rec_x = f.translate(g.translate(x)?)?;
    let rec_y = g.translate(f.translate(y)?)?;
    rec_x.l1_loss(x)?.add(rec_y.l1_loss(y)?)
}

/// The terms of the full CycleGAN objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveParts<'t> {
    /// Adversarial term for G against D_Y.
    pub gan_g: Var<'t>,
    /// Adversarial term for F against D_X.
    pub gan_f: Var<'t>,
    pub cycle: Var<'t>,
    pub total: Var<'t>,
}

/// L_GAN(G, D_Y) + L_GAN(F, D_X) + λ·L_cyc, with each adversarial term in
/// its non-negative discriminator-loss form.
pub fn full_objective<'t>(
    g: &Bound<'t>,
    f: &Bound<'t>,
    d_x: &Bound<'t>,
    d_y: &Bound<'t>,
    x: Var<'t>,
    y: Var<'t>,
    lambda_cyc: f64,
) -> Result<ObjectiveParts<'t>> {
    let gan_g = gan_loss_d(d_y, y, g.translate(x)?)?;
    let gan_f = gan_loss_d(d_x, x, f.translate(y)?)?;
    let cycle = cycle_loss(g, f, x, y)?;
    let total = gan_g.add(gan_f)?.add(cycle.scalar_mul(lambda_cyc)?)?;
    Ok(ObjectiveParts {
        gan_g,
        gan_f,
        cycle,
        total,
    })
}

/// Conditional discriminator loss on channel-concatenated (condition, image).
pub fn cgan_loss_d<'t>(d: &Bound<'t>, cond: Var<'t>, real: Var<'t>, fake: Var<'t>) -> Result<Var<'t>> {
    gan_loss_d_pair(d, cond.concat_channels(real)?, cond.concat_channels(fake.detach()?)?)
}

fn gan_loss_d_pair<'t>(d: &Bound<'t>, real: Var<'t>, fake: Var<'t>) -> Result<Var<'t>> {
    let real_term = d.discriminate(real)?.bce_with_logits(1.0)?;
    let fake_term = d.discriminate(fake)?.bce_with_logits(0.0)?;
    real_term.add(fake_term)
}

/// Conditional generator loss: bce(D(cond, fake), 1) + λ·l1(fake, target).
/// Returns (adversarial, l1, total).
pub fn cgan_loss_g<'t>(
    d: &Bound<'t>,
    cond: Var<'t>,
    fake: Var<'t>,
    target: Var<'t>,
    lambda_l1: f64,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    let adv = d.discriminate(cond.concat_channels(fake)?)?.bce_with_logits(1.0)?;
    let l1 = fake.l1_loss(target)?;
    let total = adv.add(l1.scalar_mul(lambda_l1)?)?;
    Ok((adv, l1, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_with, GradCheckOptions, Tape, Tensor};
    use crate::models::{init_params, Bound, ModelParams, NetConfig, NetKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn small(seed: u64) -> NetConfig {
        NetConfig {
            base_width: 2,
            seed,
            resolution: (8, 8),
            ..Default::default()
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn zero_d() -> ModelParams {
        let mut d = init_params(NetKind::Discriminator, "D", &small(0)).unwrap();
        d.fill(0.0);
        d
    }

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn zero_logit_values() {
        let tape = Tape::new();
        let d = zero_d().bind(&tape).unwrap();
        let real = tape.constant(&rand_tensor(&[2, 3, 8, 8], 1)).unwrap();
        let fake = tape.constant(&rand_tensor(&[2, 3, 8, 8], 2)).unwrap();
        assert!((gan_loss_d(&d, real, fake).unwrap().item() - 2.0 * LN2).abs() < 1e-12);
        assert!((gan_loss_g(&d, fake).unwrap().item() - LN2).abs() < 1e-12);
    }

    /// Discriminator whose head has bias `b` and no weights: constant logit.
    fn constant_logit_d(b: f64) -> ModelParams {
        let mut d = zero_d();
        for (n, t) in d.entries_mut() {
            if n == "D.out.bias" {
                t.data_mut()[0] = b;
            }
        }
        d
    }

    #[test]
    fn confident_discriminator() {
        let tape = Tape::new();
        let x = tape.constant(&rand_tensor(&[3, 8, 8], 3)).unwrap();
        let fooled = constant_logit_d(40.0).bind(&tape).unwrap();
        assert!(gan_loss_g(&fooled, x).unwrap().item() < 1e-15);
    }

    #[test]
    fn perfect_discriminator() {
        // all-ones weights send a +1 image to a large positive logit and a -1 image to a large negative one
        let mut d = zero_d();
        for (n, t) in d.entries_mut() {
            if n.ends_with(".weight") {
                t.data_mut().iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let tape = Tape::new();
        let b = d.bind(&tape).unwrap();
        let real = tape.constant(&Tensor::full(&[3, 8, 8], 1.0)).unwrap();
        let fake = tape.constant(&Tensor::full(&[3, 8, 8], -1.0)).unwrap();
        let lr = b.discriminate(real).unwrap().value();
        let lf = b.discriminate(fake).unwrap().value();
        assert!(lr.data().iter().all(|&z| z > 40.0) && lf.data().iter().all(|&z| z < -40.0));
        assert!(gan_loss_d(&b, real, fake).unwrap().item() < 1e-15);
    }

    #[test]
    fn d_loss_matches_direct_formula() {
        let d = init_params(NetKind::Discriminator, "D", &small(5)).unwrap();
        let real = rand_tensor(&[3, 8, 8], 6);
        let fake = rand_tensor(&[3, 8, 8], 7);
        let tape = Tape::new();
        let b = d.bind(&tape).unwrap();
        let got = gan_loss_d(&b, tape.constant(&real).unwrap(), tape.constant(&fake).unwrap())
            .unwrap()
            .item();
        let lr = crate::models::discriminator_forward(&d, &real).unwrap();
        let lf = crate::models::discriminator_forward(&d, &fake).unwrap();
        let n = lr.numel() as f64;
        let direct = -lr.data().iter().map(|&z| sigmoid(z).ln()).sum::<f64>() / n
            - lf.data().iter().map(|&z| (1.0 - sigmoid(z)).ln()).sum::<f64>() / n;
        assert!((got - direct).abs() < 1e-10);
    }

    #[test]
    fn cycle_loss_constant_offset() {
        // Identity-like nets are hard to build; check the l1 arithmetic directly.
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[3, 4, 4], 0.2)).unwrap();
        let rx = tape.constant(&Tensor::full(&[3, 4, 4], 0.7)).unwrap();
        let total = rx.l1_loss(x).unwrap().add(rx.l1_loss(x).unwrap()).unwrap();
        assert!((total.item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_recomposes() {
        let g = init_params(NetKind::Generator, "G", &small(1)).unwrap();
        let f = init_params(NetKind::Generator, "F", &small(2)).unwrap();
        let (xt, yt) = (rand_tensor(&[2, 3, 8, 8], 3), rand_tensor(&[2, 3, 8, 8], 4));
        let tape = Tape::new();
        let (gb, fb) = (g.bind(&tape).unwrap(), f.bind(&tape).unwrap());
        let got = cycle_loss(&gb, &fb, tape.constant(&xt).unwrap(), tape.constant(&yt).unwrap())
            .unwrap()
            .item();
        let fwd = |p: &ModelParams, t: &Tensor| crate::models::generator_forward(p, t).unwrap();
        let l1 = |a: &Tensor, b: &Tensor| {
            a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.numel() as f64
        };
        let want = l1(&fwd(&f, &fwd(&g, &xt)), &xt) + l1(&fwd(&g, &fwd(&f, &yt)), &yt);
        assert!((got - want).abs() < 1e-12);
    }

    fn objective_value(lambda: f64, zero_disc: bool) -> (f64, f64, f64, f64) {
        let g = init_params(NetKind::Generator, "G", &small(1)).unwrap();
        let f = init_params(NetKind::Generator, "F", &small(2)).unwrap();
        let (dx, dy) = if zero_disc {
            (zero_d(), zero_d())
        } else {
            (
                init_params(NetKind::Discriminator, "DX", &small(3)).unwrap(),
                init_params(NetKind::Discriminator, "DY", &small(4)).unwrap(),
            )
        };
        let tape = Tape::new();
        let bs: Vec<Bound> = [&g, &f, &dx, &dy].iter().map(|p| p.bind(&tape).unwrap()).collect();
        let x = tape.constant(&rand_tensor(&[2, 3, 8, 8], 8)).unwrap();
        let y = tape.constant(&rand_tensor(&[2, 3, 8, 8], 9)).unwrap();
        let p = full_objective(&bs[0], &bs[1], &bs[2], &bs[3], x, y, lambda).unwrap();
        (p.gan_g.item(), p.gan_f.item(), p.cycle.item(), p.total.item())
    }

    #[test]
    fn full_objective_identities() {
        let (a, b, c, t) = objective_value(10.0, false);
        assert!((t - (a + b + 10.0 * c)).abs() < 1e-12);
        let (a0, b0, _, t0) = objective_value(0.0, false);
        assert!((t0 - (a0 + b0)).abs() < 1e-12);
        let (a2, b2, _, t2) = objective_value(20.0, false);
        assert!(((t2 - a2 - b2) - 2.0 * (t - a - b)).abs() < 1e-12);
        let (za, zb, _, _) = objective_value(1.0, true);
        assert!((za - 2.0 * LN2).abs() < 1e-12 && (zb - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_gradients() {
        let g = init_params(NetKind::Generator, "G", &small(11)).unwrap();
        let d = init_params(NetKind::Discriminator, "D", &small(12)).unwrap();
        let x = rand_tensor(&[3, 8, 8], 13);
        let names: Vec<String> = g.entries().iter().map(|(n, _)| n.clone()).collect();
        let mut inputs: Vec<Tensor> = g.entries().iter().map(|(_, t)| t.clone()).collect();
        inputs.push(x);
        let opts = GradCheckOptions {
            max_coords: Some(40),
            ..Default::default()
        };
        let err = grad_check_with(
            |tape, vars| {
                let (params, x) = vars.split_at(vars.len() - 1);
                let named: Vec<(String, _)> = names.iter().cloned().zip(params.iter().copied()).collect();
                let gb = Bound::from_vars(NetKind::Generator, &named)?;
                let db = d.bind_frozen(tape)?;
                gan_loss_g(&db, gb.translate(x[0])?)
            },
            &inputs,
            opts,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
