use std::fmt;
use std::str::FromStr;

use super::gp::{gp_fit, gp_posterior, GpModel, KernelParams, Observation};
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::training::stream_rng;

pub const DEFAULT_KAPPA: f64 = 2.576;
const CANDIDATES: usize = 2048;
const GOLDEN_ITERS: usize = 50;
const REFINE_HALF_WIDTH: f64 = 0.05;

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Expected improvement over `best_y` (maximization).
pub fn expected_improvement(m: &GpModel, x: &[f64], best_y: f64, xi: f64) -> f64 {
    let (mu, var) = gp_posterior(m, x);
    ei_from_moments(mu, var.sqrt(), best_y, xi)
}

pub fn ei_from_moments(mu: f64, sigma: f64, best_y: f64, xi: f64) -> f64 {
    let d = mu - best_y - xi;
    if sigma <= 0.0 {
        return d.max(0.0);
    }
    let z = d / sigma;
    (d * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// Upper confidence bound μ + κσ.
pub fn ucb(m: &GpModel, x: &[f64], kappa: f64) -> f64 {
    let (mu, var) = gp_posterior(m, x);
    mu + kappa * var.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Acquisition {
    Ei { xi: f64 },
    Ucb { kappa: f64 },
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition::Ucb { kappa: DEFAULT_KAPPA }
    }
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Acquisition::Ei { .. } => f.write_str("ei"),
            Acquisition::Ucb { .. } => f.write_str("ucb"),
        }
    }
}

impl FromStr for Acquisition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ei" => Ok(Acquisition::Ei { xi: 0.0 }),
            "ucb" => Ok(Acquisition::default()),
            other => Err(Error::validation(format!("unknown acquisition {other:?}; expected ei or ucb"))),
        }
    }
}

impl Acquisition {
    fn score(&self, m: &GpModel, u: &[f64], best: f64) -> f64 {
        match *self {
            Acquisition::Ei { xi } => expected_improvement(m, u, best, xi),
            Acquisition::Ucb { kappa } => ucb(m, u, kappa),
        }
    }
}

/// Maximizes the acquisition over the unit cube of `space`: the best of
/// 2048 seeded uniform candidates, then each coordinate refined by
/// golden-section search in a small bracket. `m` must be fitted on unit
/// coordinates; the result is in the space's internal coordinates.
pub fn suggest_next(m: &GpModel, space: &SearchSpace, acq: Acquisition, seed: u64) -> Vec<f64> {
    space.from_unit(&suggest_unit(m, space, acq, seed))
}

fn suggest_unit(m: &GpModel, space: &SearchSpace, acq: Acquisition, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let best = m.best_y().unwrap_or(0.0);
    let mut top = space.sample_unit(&mut rng);
    let mut top_score = acq.score(m, &top, best);
    for _ in 1..CANDIDATES {
        let u = space.sample_unit(&mut rng);
        let s = acq.score(m, &u, best);
        if s > top_score {
            top = u;
            top_score = s;
        }
    }
    if m.is_empty() {
        return top;
    }
    for d in 0..space.len() {
        let lo = (top[d] - REFINE_HALF_WIDTH).max(0.0);
        let hi = (top[d] + REFINE_HALF_WIDTH).min(1.0);
        let mut probe = top.clone();
        let mut f = |v: f64| {
            probe[d] = v;
            acq.score(m, &probe, best)
        };
        let v = golden_section_max(&mut f, lo, hi, GOLDEN_ITERS);
        let s = f(v);
        if s > top_score {
            top[d] = v;
            top_score = s;
        }
    }
    top
}

fn golden_section_max(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// Internal coordinates.
    pub x: Vec<f64>,
    /// Objective value; −∞ for a failed evaluation.
    pub y: f64,
    pub best_so_far: f64,
    pub failed: bool,
    /// Drawn at random rather than suggested by the surrogate.
    pub initial: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    pub history: Vec<Trial>,
}

/// Sequential maximization of a black-box objective: `init` seeded uniform
/// trials, then surrogate-guided trials up to `budget`. The GP works on
/// unit coordinates with standardized targets; failed (non-finite) trials
/// are recorded as −∞ and left out of the fit.
pub fn optimize(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    space: &SearchSpace,
    budget: usize,
    init: usize,
    acq: Acquisition,
    seed: u64,
) -> Result<OptimizeResult> {
    if init == 0 || budget < init {
        return Err(Error::validation(format!("need budget >= init >= 1, got budget {budget}, init {init}")));
    }
    let mut rng = stream_rng(seed, 1);
    let mut history: Vec<Trial> = Vec::with_capacity(budget);
    let mut best = f64::NEG_INFINITY;
    let theta = KernelParams::unit(space.len());
    for t in 0..budget {
        let initial = t < init;
        let u = if initial {
            space.sample_unit(&mut rng)
        } else {
            let ok: Vec<&Trial> = history.iter().filter(|h| !h.failed).collect();
            let m = if ok.is_empty() {
                gp_fit(&[], &theta)?
            } else {
                let ys: Vec<f64> = ok.iter().map(|h| h.y).collect();
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
                let sd = if sd > 1e-12 { sd } else { 1.0 };
                let obs: Vec<Observation> = ok
                    .iter()
                    .map(|h| Observation {
                        x: space.to_unit(&h.x),
                        y: (h.y - mean) / sd,
                    })
                    .collect();
                gp_fit(&obs, &theta)?
            };
            suggest_unit(&m, space, acq, seed.wrapping_add(t as u64))
        };
        let x = space.from_unit(&u);
        let raw = objective(&x);
        let failed = !raw.is_finite();
        let y = if failed { f64::NEG_INFINITY } else { raw };
        best = best.max(y);
        history.push(Trial {
            x,
            y,
            best_so_far: best,
            failed,
            initial,
        });
    }
    let top = history
        .iter()
        .filter(|h| !h.failed)
        .fold(None::<&Trial>, |acc, h| match acc {
            Some(a) if a.y >= h.y => Some(a),
            _ => Some(h),
        });
    let (best_x, best_y) = match top {
        Some(t) => (t.x.clone(), t.y),
        None => (history[0].x.clone(), f64::NEG_INFINITY),
    };
    Ok(OptimizeResult {
        best_x,
        best_y,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::space::Dim;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_space() -> SearchSpace {
        SearchSpace::new(vec![Dim::new("x", 0.0, 1.0, false).unwrap()]).unwrap()
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.max(0.0)
            })
            .sum::<f64>()
            / n as f64;
        let ei = ei_from_moments(0.0, 1.0, 0.0, 0.0);
        assert!((ei - 0.398942280401).abs() < 1e-9);
        assert!((ei - mc).abs() < 1e-3, "{ei} vs {mc}");
    }

    #[test]
    fn ei_edge_cases() {
        assert_eq!(ei_from_moments(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(ei_from_moments(2.0, 0.0, 1.0, 0.5), 0.5);
        let mut prev = 0.0;
        for s in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let e = ei_from_moments(-0.3, s, 0.0, 0.0);
            assert!(e > prev && e >= 0.0);
            prev = e;
        }
        assert!(ei_from_moments(-1.0, 1e-9, 0.0, 0.0) < 1e-12);
    }

    #[test]
    fn ucb_formula() {
        let m = gp_fit(&[Observation { x: vec![0.2], y: 1.0 }], &KernelParams::unit(1)).unwrap();
        let (mu, var) = gp_posterior(&m, &[0.9]);
        assert_eq!(ucb(&m, &[0.9], 0.0), mu);
        assert!((ucb(&m, &[0.9], 2.0) - (mu + 2.0 * var.sqrt())).abs() < 1e-15);
        assert!(ucb(&m, &[0.9], 1.0) >= mu);
    }

    #[test]
    fn suggestion_in_bounds_and_deterministic() {
        let s = SearchSpace::new(vec![
            Dim::new("a", -3.0, 2.0, false).unwrap(),
            Dim::new("b", 1e-4, 1.0, true).unwrap(),
        ])
        .unwrap();
        let empty = gp_fit(&[], &KernelParams::unit(2)).unwrap();
        let p = suggest_next(&empty, &s, Acquisition::default(), 3);
        assert!(s.contains(&p));
        assert_eq!(p, suggest_next(&empty, &s, Acquisition::default(), 3));
    }

    #[test]
    fn suggestion_finds_ei_peak() {
        let theta = KernelParams {
            length_scales: vec![0.1],
            ..KernelParams::unit(1)
        };
        let obs: Vec<_> = [0.0, 0.25, 0.5, 0.7, 1.0]
            .iter()
            .map(|&x: &f64| Observation {
                x: vec![x],
                y: -(x - 0.6).powi(2) * 10.0,
            })
            .collect();
        let m = gp_fit(&obs, &theta).unwrap();
        let best = m.best_y().unwrap();
        let acq = Acquisition::Ei { xi: 0.0 };
        let got = suggest_next(&m, &unit_space(), acq, 0)[0];
        let grid_best = (0..100_000)
            .map(|i| i as f64 / 99_999.0)
            .max_by(|a, b| {
                expected_improvement(&m, &[*a], best, 0.0).total_cmp(&expected_improvement(&m, &[*b], best, 0.0))
            })
            .unwrap();
        assert!((got - grid_best).abs() < 0.02, "{got} vs {grid_best}");
    }

    #[test]
    fn optimize_finds_quadratic_peak() {
        let mut f = |x: &[f64]| -(x[0] - 0.3).powi(2);
        let r = optimize(&mut f, &unit_space(), 20, 5, Acquisition::default(), 0).unwrap();
        assert!((r.best_x[0] - 0.3).abs() < 0.05, "{:?}", r.best_x);
        assert_eq!(r.history.len(), 20);
        assert!(r.history.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
        assert_eq!(r.best_y, r.history.last().unwrap().best_so_far);
    }

    #[test]
    fn budget_equal_init_is_random_search() {
        let mut f = |x: &[f64]| x[0];
        let r = optimize(&mut f, &unit_space(), 6, 6, Acquisition::default(), 1).unwrap();
        let max = r.history.iter().map(|t| t.y).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_y, max);
        assert!(r.history.iter().all(|t| t.initial));
        assert!(optimize(&mut f, &unit_space(), 3, 4, Acquisition::default(), 1).is_err());
    }

    #[test]
    fn failed_trials_are_flagged() {
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            if calls % 3 == 0 {
                f64::NAN
            } else {
                -x[0]
            }
        };
        let r = optimize(&mut f, &unit_space(), 9, 3, Acquisition::Ei { xi: 0.01 }, 2).unwrap();
        assert_eq!(r.history.iter().filter(|t| t.failed).count(), 3);
        assert!(r.history.iter().filter(|t| t.failed).all(|t| t.y == f64::NEG_INFINITY));
        assert!(r.best_y.is_finite());
    }

    #[test]
    fn same_seed_same_history() {
        let run = || {
            let mut f = |x: &[f64]| (6.0 * x[0]).sin();
            optimize(&mut f, &unit_space(), 10, 3, Acquisition::default(), 9).unwrap()
        };
        assert_eq!(run(), run());
    }
}
