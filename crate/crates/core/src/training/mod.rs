//! Losses, the Adam optimizer and the training loops: alternating CycleGAN
//! updates, conditional (pix2pix) pretraining, the supervised autoencoder
//! baseline and training across randomly drawn bit depths.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::image::{to_unit_tensor, QualityReport, RgbImage};
use crate::models::NetConfig;
use crate::stego::{decode, encode_images, BitDepth};

pub mod adam;
mod autoencoder;
mod cyclegan;
mod eval;
pub mod losses;
mod pix2pix;

pub use adam::Adam;
pub use autoencoder::{new_autoencoder, train_autoencoder};
pub use cyclegan::{
    discriminator_phase, generator_phase, train_cyclegan, train_step_cyclegan, train_varying_bits, CycleGan,
    GeneratorPass, StepLosses,
};
pub use eval::{diversity, evaluate, predict, Evaluation};
pub use losses::{cycle_loss, full_objective, gan_loss_d, gan_loss_g, ObjectiveParts};
pub use pix2pix::{new_conditional_discriminator, pretrain_pix2pix};

/// Inclusive range of bit depths; a single depth is the common case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitRange {
    pub lo: BitDepth,
    pub hi: BitDepth,
}

impl BitRange {
    pub fn fixed(d: BitDepth) -> Self {
        BitRange { lo: d, hi: d }
    }

    pub fn new(lo: BitDepth, hi: BitDepth) -> Result<Self> {
        if lo > hi {
            return Err(Error::validation(format!("empty bit range {lo}..{hi}")));
        }
        Ok(BitRange { lo, hi })
    }

    pub fn depths(&self) -> Vec<BitDepth> {
        (self.lo.bits()..=self.hi.bits())
            .map(|b| BitDepth::new(b).expect("within range"))
            .collect()
    }

    pub fn is_fixed(&self) -> bool {
        self.lo == self.hi
    }
}

impl fmt::Display for BitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_fixed() {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

impl FromStr for BitRange {
    type Err = Error;

    /// Accepts `b`, `lo..hi` or `lo-hi` (inclusive).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s.split_once("..").or_else(|| s.split_once('-').filter(|(a, _)| !a.is_empty()));
        match split {
            Some((a, b)) => BitRange::new(a.parse()?, b.parse()?),
            None => Ok(BitRange::fixed(s.parse()?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_cyc: f64,
    /// L1 weight of the conditional pretraining objective.
    pub lambda_l1: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub bits: BitRange,
    pub pretrain_steps: usize,
    /// Updates per drawn depth when training across a bit range.
    pub epoch_steps: usize,
    /// Input dropout probability acting as generator noise.
    pub noise_dropout: f64,
    pub base_width: usize,
    pub depth: usize,
    pub skip: bool,
    /// Write weights every N steps (0 disables) into `checkpoint_dir`.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Progress line on stderr every N steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_g: 2e-4,
            lr_d: 2e-4,
            lambda_cyc: 10.0,
            lambda_l1: 100.0,
            batch_size: 4,
            steps: 500,
            seed: 0,
            bits: BitRange::fixed(BitDepth::new(8).expect("valid")),
            pretrain_steps: 0,
            epoch_steps: 20,
            noise_dropout: 0.0,
            base_width: 16,
            depth: 2,
            skip: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("lambda_cyc", self.lambda_cyc), ("lambda_l1", self.lambda_l1)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epoch_steps == 0 {
            return bad("epoch_steps must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.noise_dropout) {
            return bad(format!("noise_dropout must lie in [0, 1), got {}", self.noise_dropout));
        }
        if self.base_width == 0 || self.depth == 0 {
            return bad("base_width and depth must be >= 1".into());
        }
        Ok(())
    }

    /// Network configuration for the net identified by `tag`.
    pub fn net_config(&self, tag: u64, resolution: (usize, usize)) -> NetConfig {
        NetConfig {
            input_channels: 3,
            base_width: self.base_width,
            depth: self.depth,
            seed: derive_seed(self.seed, tag),
            skip: self.skip,
            resolution,
        }
    }
}

/// SplitMix64 of `seed` mixed with `tag`; gives each net its own init stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_BATCH: u64 = 1;
pub(crate) const STREAM_BITS: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_PRETRAIN_G: u64 = 4;
pub(crate) const STREAM_PRETRAIN_F: u64 = 5;

/// ChaCha8 generator for `seed` on an independent `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Encoded inputs (domain X) and ground-truth decoded targets (domain Y)
/// at one bit depth, with their unit-range tensors.
#[derive(Clone, Debug)]
pub struct StegoSet {
    depth: BitDepth,
    encoded: Vec<RgbImage>,
    decoded: Vec<RgbImage>,
    x: Vec<Tensor>,
    y: Vec<Tensor>,
}

impl StegoSet {
    /// Embeds each hidden image into its cover at `depth`.
    pub fn build(covers: &[RgbImage], hiddens: &[RgbImage], depth: BitDepth) -> Result<Self> {
        if covers.len() != hiddens.len() {
            return Err(Error::validation(format!(
                "{} covers but {} hidden images",
                covers.len(),
                hiddens.len()
            )));
        }
        let mut encoded = Vec::with_capacity(covers.len());
        for (c, h) in covers.iter().zip(hiddens) {
            let h = h.resize_nearest(c.height(), c.width())?;
            encoded.push(encode_images(c, &h, depth)?);
        }
        let decoded: Vec<_> = encoded.iter().map(|e| decode(e, depth)).collect();
        StegoSet::from_pairs(depth, encoded, decoded)
    }

    /// Pairs of (input, target) images; all must share one resolution.
    pub fn from_pairs(depth: BitDepth, encoded: Vec<RgbImage>, decoded: Vec<RgbImage>) -> Result<Self> {
        if encoded.is_empty() {
            return Err(Error::validation("empty dataset"));
        }
        if encoded.len() != decoded.len() {
            return Err(Error::validation("inputs and targets differ in count"));
        }
        let dims = encoded[0].dims();
        if encoded.iter().chain(&decoded).any(|im| im.dims() != dims) {
            return Err(Error::Shape("dataset images differ in resolution".into()));
        }
        let x = encoded.iter().map(to_unit_tensor).collect();
        let y = decoded.iter().map(to_unit_tensor).collect();
        Ok(StegoSet {
            depth,
            encoded,
            decoded,
            x,
            y,
        })
    }

    /// Same pairs with input and target exchanged.
    pub fn swapped(&self) -> StegoSet {
        StegoSet {
            depth: self.depth,
            encoded: self.decoded.clone(),
            decoded: self.encoded.clone(),
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.encoded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoded.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.encoded[0].dims()
    }

    pub fn encoded(&self) -> &[RgbImage] {
        &self.encoded
    }

    pub fn decoded(&self) -> &[RgbImage] {
        &self.decoded
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.x
    }

    pub fn targets(&self) -> &[Tensor] {
        &self.y
    }

    pub(crate) fn batch_x(&self, idx: &[usize]) -> Result<Tensor> {
        Tensor::stack(&idx.iter().map(|&i| self.x[i].clone()).collect::<Vec<_>>())
    }

    pub(crate) fn batch_y(&self, idx: &[usize]) -> Result<Tensor> {
        Tensor::stack(&idx.iter().map(|&i| self.y[i].clone()).collect::<Vec<_>>())
    }
}

pub(crate) fn sample_indices(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// Named loss columns, one row per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn new(columns: &[&str]) -> Self {
        LossTrace {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV with a leading `step` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: LossTrace,
    pub train: Option<QualityReport>,
    pub test: Option<QualityReport>,
    pub wall_seconds: f64,
    pub config: TrainConfig,
    /// Depth drawn for each epoch of a varying-depth run.
    pub epoch_depths: Vec<BitDepth>,
}

impl TrainReport {
    pub(crate) fn new(columns: &[&str], config: &TrainConfig) -> Self {
        TrainReport {
            trace: LossTrace::new(columns),
            train: None,
            test: None,
            wall_seconds: 0.0,
            config: config.clone(),
            epoch_depths: Vec::new(),
        }
    }
}

/// Turns an arithmetic failure into a divergence error carrying the step.
pub(crate) fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

pub(crate) fn check_finite(step: usize, values: &[(&str, f64)]) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::Diverged {
            step,
            detail: format!("{name} = {v}"),
        }),
        None => Ok(()),
    }
}

pub(crate) fn log_progress(cfg: &TrainConfig, what: &str, step: usize, row: &[f64], columns: &[String]) {
    if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
        let parts: Vec<String> = columns.iter().zip(row).map(|(c, v)| format!("{c}={v:.4}")).collect();
        eprintln!("[{what}] step {}/{} {}", step + 1, cfg.steps, parts.join(" "));
    }
}
