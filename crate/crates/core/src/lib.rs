//! LSB steganography codec plus a small steganalysis workbench: a reverse-mode
//! tensor core, CycleGAN and autoencoder models that learn to pull hidden
//! images out of encoded ones, Gaussian-process Bayesian optimisation for
//! their hyperparameters, and the experiment harness tying it together.

pub mod autodiff;
pub mod bayesopt;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod image;
pub mod models;
pub mod stego;
pub mod training;

pub use error::{Error, Result};
