use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Squared-exponential kernel hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    /// σ_f².
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    /// σ_n².
    pub noise_var: f64,
}

impl KernelParams {
    /// σ_f = 1, unit length scales, σ_n = 1e-4.
    pub fn unit(dim: usize) -> Self {
        KernelParams {
            signal_var: 1.0,
            length_scales: vec![1.0; dim],
            noise_var: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// k(a, b) = σ_f² · exp(−½ Σ (a_i − b_i)² / ℓ_i²).
pub fn kernel(a: &[f64], b: &[f64], theta: &KernelParams) -> Result<f64> {
    if a.len() != b.len() || a.len() != theta.length_scales.len() {
        return Err(Error::Shape(format!(
            "kernel inputs of dimension {} and {} with {} length scales",
            a.len(),
            b.len(),
            theta.length_scales.len()
        )));
    }
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&theta.length_scales)
        .map(|((p, q), l)| ((p - q) / l).powi(2))
        .sum();
    Ok(theta.signal_var * (-0.5 * r2).exp())
}

/// Zero-mean GP conditioned on a set of observations.
#[derive(Clone, Debug)]
pub struct GpModel {
    theta: KernelParams,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

const MAX_JITTER: f64 = 1e-6;

/// Factorizes K + σ_n²I, adding diagonal jitter from 1e-12 up to 1e-6 if
/// the plain factorization fails.
pub fn gp_fit(obs: &[Observation], theta: &KernelParams) -> Result<GpModel> {
    let n = obs.len();
    for o in obs {
        if !o.y.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("observations must be finite"));
        }
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&obs[i].x, &obs[j].x, theta)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.y));
    let mut jitter = 0.0;
    let chol = loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += theta.noise_var + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            break c;
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.0001 {
            return Err(Error::NotPositiveDefinite(MAX_JITTER));
        }
    };
    let alpha = chol.solve(&y);
    Ok(GpModel {
        theta: theta.clone(),
        xs: obs.iter().map(|o| o.x.clone()).collect(),
        ys: obs.iter().map(|o| o.y).collect(),
        chol: (n > 0).then_some(chol),
        alpha,
        jitter,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn theta(&self) -> &KernelParams {
        &self.theta
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn best_y(&self) -> Option<f64> {
        self.ys.iter().copied().fold(None, |m, y| Some(m.map_or(y, |m: f64| m.max(y))))
    }

    /// Posterior variance before clamping; may dip slightly below zero.
    pub fn raw_posterior(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.theta.signal_var;
        let Some(chol) = &self.chol else {
            return (0.0, prior);
        };
        let ks = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| kernel(xi, x, &self.theta).unwrap_or(0.0)),
        );
        let mean = ks.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&ks).expect("factor is non-singular");
        (mean, prior - v.dot(&v))
    }
}

/// Posterior (mean, variance) with the variance clamped at zero.
pub fn gp_posterior(m: &GpModel, x: &[f64]) -> (f64, f64) {
    let (mean, var) = m.raw_posterior(x);
    (mean, var.max(0.0))
}
