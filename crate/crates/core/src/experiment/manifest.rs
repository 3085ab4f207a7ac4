//! `key = value` experiment manifests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::dataset::{DatasetSpec, ImageKind};
use crate::bayesopt::Acquisition;
use crate::error::{Error, Result};
use crate::stego::BitDepth;
use crate::training::{BitRange, TrainConfig};

pub const SEED_ENV: &str = "STEGOCRACK_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    PerBit,
    VaryingBit,
    AutoencoderPerBit,
    Tune,
    /// CycleGAN and autoencoder side by side at every depth.
    Comparison,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::PerBit => "per-bit",
            Protocol::VaryingBit => "varying-bit",
            Protocol::AutoencoderPerBit => "autoencoder-per-bit",
            Protocol::Tune => "tune",
            Protocol::Comparison => "comparison",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-bit" => Ok(Protocol::PerBit),
            "varying-bit" => Ok(Protocol::VaryingBit),
            "autoencoder-per-bit" => Ok(Protocol::AutoencoderPerBit),
            "tune" => Ok(Protocol::Tune),
            "comparison" => Ok(Protocol::Comparison),
            other => Err(Error::validation(format!(
                "unknown protocol {other:?}; expected per-bit, varying-bit, autoencoder-per-bit, tune or comparison"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneSettings {
    pub budget: usize,
    pub init: usize,
    pub acq: Acquisition,
    pub seed: u64,
    /// Search-space file; the built-in learning-rate/λ/batch box when absent.
    pub space: Option<PathBuf>,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            budget: 20,
            init: 5,
            acq: Acquisition::default(),
            seed: 0,
            space: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub protocol: Protocol,
    pub output: PathBuf,
    pub dataset: DatasetSpec,
    /// Read images from here instead of generating them.
    pub import_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub tune: TuneSettings,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            protocol: Protocol::PerBit,
            output: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            import_dir: None,
            train: TrainConfig {
                bits: BitRange::new(BitDepth::new(0).expect("valid"), BitDepth::new(8).expect("valid")).expect("valid"),
                ..TrainConfig::default()
            },
            tune: TuneSettings::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::validation(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::validation(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_resolution(v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::validation(format!("dataset.resolution: expected HxW, got {v:?}")))?;
    Ok((parse_num("dataset.resolution", h.trim())?, parse_num("dataset.resolution", w.trim())?))
}

impl ExperimentManifest {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.dataset;
        match key {
            "protocol" => self.protocol = v.parse()?,
            "output" => self.output = PathBuf::from(v),
            "dataset.n_train" => d.n_train = parse_num(key, v)?,
            "dataset.n_test" => d.n_test = parse_num(key, v)?,
            "dataset.resolution" => d.resolution = parse_resolution(v)?,
            "dataset.generator_kind" => d.kind = v.parse::<ImageKind>()?,
            "dataset.seed" => d.seed = parse_num(key, v)?,
            "dataset.import_dir" => self.import_dir = Some(PathBuf::from(v)),
            "train.lr_g" => t.lr_g = parse_num(key, v)?,
            "train.lr_d" => t.lr_d = parse_num(key, v)?,
            "train.lambda_cyc" => t.lambda_cyc = parse_num(key, v)?,
            "train.lambda_l1" => t.lambda_l1 = parse_num(key, v)?,
            "train.batch_size" => t.batch_size = parse_num(key, v)?,
            "train.steps" => t.steps = parse_num(key, v)?,
            "train.seed" => t.seed = parse_num(key, v)?,
            "train.bit_depth" => t.bits = v.parse::<BitRange>()?,
            "train.pretrain_steps" => t.pretrain_steps = parse_num(key, v)?,
            "train.epoch_steps" => t.epoch_steps = parse_num(key, v)?,
            "train.noise_dropout" => t.noise_dropout = parse_num(key, v)?,
            "train.base_width" => t.base_width = parse_num(key, v)?,
            "train.depth" => t.depth = parse_num(key, v)?,
            "train.skip" => t.skip = parse_bool(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_num(key, v)?,
            "tune.budget" => self.tune.budget = parse_num(key, v)?,
            "tune.init" => self.tune.init = parse_num(key, v)?,
            "tune.acq" => self.tune.acq = v.parse()?,
            "tune.seed" => self.tune.seed = parse_num(key, v)?,
            "tune.space" => self.tune.space = Some(PathBuf::from(v)),
            other => return Err(Error::validation(format!("unknown manifest key {other:?}"))),
        }
        Ok(())
    }

    /// Parses manifest text; unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = ExperimentManifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("manifest line {}: expected key = value", i + 1)))?;
            m.set(k.trim(), v.trim())?;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ExperimentManifest::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.tune.init == 0 || self.tune.budget < self.tune.init {
            return Err(Error::validation("tune.budget must be >= tune.init >= 1"));
        }
        Ok(())
    }

    /// Applies `STEGOCRACK_SEED` to both the dataset and training seeds.
    /// Returns the seed when the variable was set.
    pub fn apply_seed_override(&mut self) -> Result<Option<u64>> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed: u64 = parse_num(SEED_ENV, v.trim())?;
                self.dataset.seed = seed;
                self.train.seed = seed;
                Ok(Some(seed))
            }
            Err(_) => Ok(None),
        }
    }

    /// Textual form; parses back to an equal manifest.
    pub fn to_text(&self) -> String {
        let (d, t) = (&self.dataset, &self.train);
        let mut lines = vec![
            format!("protocol = {}", self.protocol),
            format!("output = {}", self.output.display()),
            format!("dataset.n_train = {}", d.n_train),
            format!("dataset.n_test = {}", d.n_test),
            format!("dataset.resolution = {}x{}", d.resolution.0, d.resolution.1),
            format!("dataset.generator_kind = {}", d.kind),
            format!("dataset.seed = {}", d.seed),
        ];
        if let Some(dir) = &self.import_dir {
            lines.push(format!("dataset.import_dir = {}", dir.display()));
        }
        lines.extend([
            format!("train.lr_g = {:?}", t.lr_g),
            format!("train.lr_d = {:?}", t.lr_d),
            format!("train.lambda_cyc = {:?}", t.lambda_cyc),
            format!("train.lambda_l1 = {:?}", t.lambda_l1),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.steps = {}", t.steps),
            format!("train.seed = {}", t.seed),
            format!("train.bit_depth = {}", t.bits),
            format!("train.pretrain_steps = {}", t.pretrain_steps),
            format!("train.epoch_steps = {}", t.epoch_steps),
            format!("train.noise_dropout = {:?}", t.noise_dropout),
            format!("train.base_width = {}", t.base_width),
            format!("train.depth = {}", t.depth),
            format!("train.skip = {}", t.skip),
            format!("train.checkpoint_every = {}", t.checkpoint_every),
            format!("tune.budget = {}", self.tune.budget),
            format!("tune.init = {}", self.tune.init),
            format!("tune.acq = {}", self.tune.acq),
            format!("tune.seed = {}", self.tune.seed),
        ]);
        if let Some(p) = &self.tune.space {
            lines.push(format!("tune.space = {}", p.display()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_example() {
        let m = ExperimentManifest::parse(
            "# smoke run\nprotocol = varying-bit\ntrain.lambda_cyc = 10.0  # the cycle weight\ntrain.bit_depth = 0..8\ndataset.resolution = 16x16\n",
        )
        .unwrap();
        assert_eq!(m.protocol, Protocol::VaryingBit);
        assert_eq!(m.train.bits.depths().len(), 9);
        assert_eq!(m.dataset.resolution, (16, 16));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ExperimentManifest::parse("train.learning_rate = 1").is_err());
        assert!(ExperimentManifest::parse("protocol").is_err());
        assert!(ExperimentManifest::parse("train.steps = many").is_err());
        assert!(ExperimentManifest::parse("train.bit_depth = 9").is_err());
        assert!(ExperimentManifest::parse("train.lr_g = -1").is_err());
    }

    fn arb_manifest() -> impl Strategy<Value = ExperimentManifest> {
        let protocol = prop_oneof![
            Just(Protocol::PerBit),
            Just(Protocol::VaryingBit),
            Just(Protocol::AutoencoderPerBit),
            Just(Protocol::Tune),
            Just(Protocol::Comparison)
        ];
        let kind = prop_oneof![
            Just(ImageKind::Gradients),
            Just(ImageKind::Shapes),
            Just(ImageKind::NoiseTextures),
            Just(ImageKind::Mixed)
        ];
        (
            (protocol, kind, 1usize..100, 1usize..50, 1usize..128, 1usize..128, any::<u64>()),
            (1e-7f64..1.0, 1e-7f64..1.0, 0.0f64..100.0, 0.0f64..500.0, 1usize..16, 1usize..5000, any::<u64>()),
            (0u8..=8, 0u8..=8, 0usize..500, 1usize..50, 0.0f64..0.9, 1usize..64, any::<bool>()),
            (proptest::option::of("[a-z]{1,8}"), 1usize..5, 0usize..20, any::<bool>(), any::<u64>()),
        )
            .prop_map(|(a, b, c, e)| {
                let mut m = ExperimentManifest::default();
                m.protocol = a.0;
                m.dataset = DatasetSpec {
                    kind: a.1,
                    n_train: a.2,
                    n_test: a.3,
                    resolution: (a.4, a.5),
                    seed: a.6,
                };
                m.train.lr_g = b.0;
                m.train.lr_d = b.1;
                m.train.lambda_cyc = b.2;
                m.train.lambda_l1 = b.3;
                m.train.batch_size = b.4;
                m.train.steps = b.5;
                m.train.seed = b.6;
                let (lo, hi) = (c.0.min(c.1), c.0.max(c.1));
                m.train.bits = BitRange::new(BitDepth::new(lo).unwrap(), BitDepth::new(hi).unwrap()).unwrap();
                m.train.pretrain_steps = c.2;
                m.train.epoch_steps = c.3;
                m.train.noise_dropout = c.4;
                m.train.base_width = c.5;
                m.train.skip = c.6;
                m.import_dir = e.0.map(PathBuf::from);
                m.tune.init = e.1;
                m.tune.budget = e.1 + e.2;
                m.tune.acq = if e.3 { Acquisition::Ei { xi: 0.0 } } else { Acquisition::default() };
                m.tune.seed = e.4;
                m
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(m in arb_manifest()) {
            let text = m.to_text();
            prop_assert_eq!(ExperimentManifest::parse(&text).unwrap(), m);
        }
    }
}
