//! Gaussian-process surrogate and acquisition-driven black-box maximization.

mod gp;
mod optimize;
mod space;

pub use gp::{gp_fit, gp_posterior, kernel, GpModel, KernelParams, Observation};
pub use optimize::{
    ei_from_moments, expected_improvement, optimize, suggest_next, ucb, Acquisition, OptimizeResult, Trial,
    DEFAULT_KAPPA,
};
pub use space::{Dim, SearchSpace};
