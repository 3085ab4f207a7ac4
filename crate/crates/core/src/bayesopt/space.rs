use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub log_scale: bool,
}

impl Dim {
    pub fn new(name: &str, lower: f64, upper: f64, log_scale: bool) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::validation(format!("{name}: need finite lower < upper, got [{lower}, {upper}]")));
        }
        if log_scale && lower <= 0.0 {
            return Err(Error::validation(format!("{name}: log scale needs a positive lower bound")));
        }
        Ok(Dim {
            name: name.to_string(),
            lower,
            upper,
            log_scale,
        })
    }

    /// Bounds in internal coordinates (log10 for log-scaled dims).
    pub fn internal_bounds(&self) -> (f64, f64) {
        if self.log_scale {
            (self.lower.log10(), self.upper.log10())
        } else {
            (self.lower, self.upper)
        }
    }

    pub fn to_internal(&self, value: f64) -> f64 {
        if self.log_scale {
            value.log10()
        } else {
            value
        }
    }

    pub fn to_value(&self, internal: f64) -> f64 {
        if self.log_scale {
            10f64.powf(internal)
        } else {
            internal
        }
    }
}

/// Ordered box of tunable dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::validation("search space has no dimensions"));
        }
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|e| e.name == d.name) {
                return Err(Error::validation(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(SearchSpace { dims })
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Internal coordinates → unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| {
                let (lo, hi) = d.internal_bounds();
                (v - lo) / (hi - lo)
            })
            .collect()
    }

    /// Unit cube → internal coordinates.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &v)| {
                let (lo, hi) = d.internal_bounds();
                lo + v.clamp(0.0, 1.0) * (hi - lo)
            })
            .collect()
    }

    /// Internal coordinates → user-facing values.
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(x).map(|(d, &v)| d.to_value(v)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && self.dims.iter().zip(x).all(|(d, &v)| {
                let (lo, hi) = d.internal_bounds();
                v >= lo && v <= hi
            })
    }

    pub fn sample_unit(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dims.len()).map(|_| rng.random::<f64>()).collect()
    }
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.dims {
            writeln!(f, "{} = {}, {}, {}", d.name, d.lower, d.upper, if d.log_scale { "log" } else { "linear" })?;
        }
        Ok(())
    }
}

impl FromStr for SearchSpace {
    type Err = Error;

    /// One dimension per line: `name = lower, upper[, log|linear]`; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self> {
        let mut dims = Vec::new();
        for (lineno, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::validation(format!("space line {}: {m}: {raw:?}", lineno + 1));
            let (name, rest) = line.split_once('=').ok_or_else(|| bad("expected name = lower, upper"))?;
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(bad("expected lower, upper[, log|linear]"));
            }
            let num = |p: &str| p.parse::<f64>().map_err(|_| bad("bounds must be numbers"));
            let log_scale = match parts.get(2).copied() {
                None | Some("linear") => false,
                Some("log") => true,
                Some(_) => return Err(bad("scale must be log or linear")),
            };
            dims.push(Dim::new(name.trim(), num(parts[0])?, num(parts[1])?, log_scale)?);
        }
        SearchSpace::new(dims)
    }
}
