//! Finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// When a coordinate's central difference at `h` and `h/10` disagree
    /// (a relu/abs kink sits inside the stencil), retry at successively
    /// smaller steps and keep the first stable estimate.
    pub kink_guard: bool,
    /// Check at most this many coordinates per input, evenly strided.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            kink_guard: true,
            max_coords: None,
        }
    }
}

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
/// for a scalar function of one tensor, using plain central differences.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let opts = GradCheckOptions {
        h,
        kink_guard: false,
        max_coords: None,
    };
    grad_check_with(|_, xs| f(xs[0]), std::slice::from_ref(x), opts)
}

/// Multi-input gradient check. `f` receives one trainable var per input.
pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars = inputs.iter().map(|t| tape.param(t)).collect::<Result<Vec<_>>>()?;
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| {
                tape.grad(*v)
                    .map(|g| g.into_data())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect()
    };

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let mut vars = Vec::with_capacity(inputs.len());
        for (i, t) in inputs.iter().enumerate() {
            if i == which {
                let mut p = t.clone();
                p.data_mut()[coord] += delta;
                vars.push(tape.constant(&p)?);
            } else {
                vars.push(tape.constant(t)?);
            }
        }
        Ok(f(&tape, &vars)?.item())
    };
    let central = |which: usize, coord: usize, h: f64| -> Result<f64> {
        Ok((eval(which, coord, h)? - eval(which, coord, -h)?) / (2.0 * h))
    };

    let mut worst = 0.0f64;
    for (which, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let stride = match opts.max_coords {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        for coord in (0..n).step_by(stride) {
            let numeric = if opts.kink_guard {
                let mut h = opts.h;
                let mut est = central(which, coord, h)?;
                for _ in 0..3 {
                    let finer = central(which, coord, h / 10.0)?;
                    if (est - finer).abs() <= 1e-7 * est.abs().max(1.0) {
                        break;
                    }
                    est = finer;
                    h /= 10.0;
                }
                est
            } else {
                central(which, coord, opts.h)?
            };
            let a = analytic[which][coord];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn smooth_polynomial_is_tight() {
        let x = random(&[7], 3);
        let err = grad_check(|v| v.square()?.mean(), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_rule_is_caught() {
        let x = random(&[5], 4).reshape(&[5]).unwrap();
        let x = Tensor::new(&[5], x.data().iter().map(|v| v + 2.0).collect()).unwrap();
        let err = grad_check(|v| v.map(|a| a * a, |a| 3.0 * a)?.mean(), &x, 1e-5).unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = random(&[4], 5);
        let err = grad_check(|v| v.tape().constant(&Tensor::scalar(3.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }
}
