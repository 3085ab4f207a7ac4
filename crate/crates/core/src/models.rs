//! Generators, patch discriminators and the convolutional autoencoder.
//!
//! Every network is an ordered list of named tensors
//! (`<net>.<layer>.<weight|bias>`). The architecture is recovered from the
//! layer names, so a weights file alone is enough to rebuild a model.
//!
//! Encoder stages are 4×4 stride-2 convolutions (pad 1) followed by
//! leaky-ReLU(0.2); decoder stages are 4×4 stride-2 transposed convolutions
//! followed by ReLU, with tanh on the last one. The discriminator ends with a
//! 3×3 stride-1 convolution to one logit channel.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::weights::{load_weights, save_weights};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;
const KERNEL: usize = 4;
const HEAD_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Generator,
    Discriminator,
    Autoencoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub input_channels: usize,
    pub base_width: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    pub seed: u64,
    /// Gated additive skip connection per intermediate scale (generators only).
    pub skip: bool,
    /// Working resolution; both sides must be divisible by 2^depth.
    pub resolution: (usize, usize),
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_channels: 3,
            base_width: 16,
            depth: 2,
            seed: 0,
            skip: false,
            resolution: (32, 32),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.depth == 0 || self.input_channels == 0 {
            return Err(Error::validation("base_width, depth and input_channels must be >= 1"));
        }
        let m = 1usize << self.depth;
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::validation(format!(
                "resolution {h}x{w} must be divisible by {m} for depth {}",
                self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    name: String,
    kind: NetKind,
    entries: Vec<(String, Tensor)>,
}

fn width_at(base: usize, stage: usize) -> usize {
    base << stage
}

impl ModelParams {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, layer: &str) -> Option<&Tensor> {
        let full = format!("{}.{layer}", self.name);
        self.entries.iter().find(|(n, _)| *n == full).map(|(_, t)| t)
    }

    /// Number of stride-2 encoder stages.
    pub fn depth(&self) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.ends_with(".weight") && n.split('.').nth(1).is_some_and(|l| l.starts_with("enc")))
            .count()
    }

    pub fn has_skips(&self) -> bool {
        self.entries.iter().any(|(n, _)| n.ends_with(".gate"))
    }

    pub fn input_channels(&self) -> usize {
        self.get("enc1.weight").map(|t| t.shape()[1]).unwrap_or(0)
    }

    /// Copy with a different network name (parameter prefixes follow).
    pub fn renamed(&self, name: &str) -> ModelParams {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let layer = n.split_once('.').map(|(_, l)| l).unwrap_or(n);
                (format!("{name}.{layer}"), t.clone())
            })
            .collect();
        ModelParams {
            name: name.to_string(),
            kind: self.kind,
            entries,
        }
    }

    /// Builds a model from named tensors sharing one `<net>.` prefix.
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<ModelParams> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Weights("no parameters".into()))?;
        let name = first
            .0
            .split_once('.')
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| Error::Weights(format!("parameter name {:?} lacks a net prefix", first.0)))?;
        let mut has_dec = false;
        let mut has_out = false;
        for (n, t) in &entries {
            let (net, layer) = n
                .split_once('.')
                .ok_or_else(|| Error::Weights(format!("parameter name {n:?} lacks a net prefix")))?;
            if net != name {
                return Err(Error::Weights(format!("mixed nets {name} and {net}")));
            }
            if !t.is_finite() {
                return Err(Error::Weights(format!("{n} holds non-finite values")));
            }
            has_dec |= layer.starts_with("dec");
            has_out |= layer.starts_with("out");
        }
        let kind = match (has_dec, has_out) {
            (true, false) if name == "AE" => NetKind::Autoencoder,
            (true, false) => NetKind::Generator,
            (false, true) => NetKind::Discriminator,
            _ => return Err(Error::Weights(format!("cannot infer architecture of {name}"))),
        };
        let mut entries = entries;
        for (_, t) in entries.iter_mut() {
            t.requires_grad = true;
        }
        let p = ModelParams { name, kind, entries };
        p.check_layout()?;
        Ok(p)
    }

    fn check_layout(&self) -> Result<()> {
        let depth = self.depth();
        if depth == 0 {
            return Err(Error::Weights(format!("{} has no encoder stages", self.name)));
        }
        let need = |layer: String| -> Result<()> {
            self.get(&layer)
                .map(|_| ())
                .ok_or_else(|| Error::Weights(format!("{} is missing {layer}", self.name)))
        };
        for i in 1..=depth {
            need(format!("enc{i}.weight"))?;
            need(format!("enc{i}.bias"))?;
            if self.kind != NetKind::Discriminator {
                need(format!("dec{i}.weight"))?;
                need(format!("dec{i}.bias"))?;
            }
        }
        if self.kind == NetKind::Discriminator {
            need("out.weight".into())?;
            need("out.bias".into())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.entries)
    }

    pub fn load(path: &Path) -> Result<ModelParams> {
        ModelParams::from_entries(load_weights(path)?)
    }

    /// Writes several nets into one SGW1 file.
    pub fn save_many(path: &Path, nets: &[&ModelParams]) -> Result<()> {
        let all: Vec<_> = nets.iter().flat_map(|p| p.entries.iter().cloned()).collect();
        save_weights(path, &all)
    }

    /// Reads every net stored in one SGW1 file, in file order.
    pub fn load_many(path: &Path) -> Result<Vec<ModelParams>> {
        let mut groups: Vec<(String, Vec<(String, Tensor)>)> = Vec::new();
        for (n, t) in load_weights(path)? {
            let net = n.split_once('.').map(|(a, _)| a.to_string()).unwrap_or_default();
            match groups.iter_mut().find(|(g, _)| *g == net) {
                Some((_, v)) => v.push((n, t)),
                None => groups.push((net, vec![(n, t)])),
            }
        }
        groups.into_iter().map(|(_, v)| ModelParams::from_entries(v)).collect()
    }

    /// Stable digest of all parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (n, t) in &self.entries {
            n.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.entries.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant; gradients still flow through the
    /// network to its inputs.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<Bound<'t>> {
        let mut vars = BTreeMap::new();
        let mut order = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            let v = if trainable { tape.param(t)? } else { tape.constant(t)? };
            let layer = n.split_once('.').map(|(_, l)| l).unwrap_or(n).to_string();
            vars.insert(layer, v);
            order.push(v);
        }
        Ok(Bound {
            kind: self.kind,
            depth: self.depth(),
            skip: self.has_skips(),
            vars,
            order,
        })
    }

    /// Adds the tape's gradients for `bound` into each tensor's `grad`.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &Bound<'_>) -> Result<()> {
        if bound.order.len() != self.entries.len() {
            return Err(Error::validation("bound parameters do not match this model"));
        }
        for ((_, t), v) in self.entries.iter_mut().zip(&bound.order) {
            match tape.grad(*v) {
                Some(g) => t.accumulate_grad(g.data())?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }
}

/// A model's parameters recorded on one tape.
pub struct Bound<'t> {
    kind: NetKind,
    depth: usize,
    skip: bool,
    vars: BTreeMap<String, Var<'t>>,
    order: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Assembles a bound network from vars that are already on a tape,
    /// named as in [`ModelParams::entries`].
    pub fn from_vars(kind: NetKind, entries: &[(String, Var<'t>)]) -> Result<Bound<'t>> {
        let mut vars = BTreeMap::new();
        let mut order = Vec::with_capacity(entries.len());
        let mut depth = 0;
        let mut skip = false;
        for (n, v) in entries {
            let layer = n.split_once('.').map(|(_, l)| l).unwrap_or(n).to_string();
            if layer.starts_with("enc") && layer.ends_with(".weight") {
                depth += 1;
            }
            skip |= layer.ends_with(".gate");
            vars.insert(layer, *v);
            order.push(*v);
        }
        if depth == 0 {
            return Err(Error::Weights("no encoder stages".into()));
        }
        Ok(Bound {
            kind,
            depth,
            skip,
            vars,
            order,
        })
    }

    fn var(&self, layer: &str) -> Result<Var<'t>> {
        self.vars
            .get(layer)
            .copied()
            .ok_or_else(|| Error::Weights(format!("missing layer {layer}")))
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.order
    }

    fn check_input(&self, x: Var<'t>) -> Result<()> {
        let shape = x.shape();
        let (c, h, w) = match shape.as_slice() {
            [c, h, w] | [_, c, h, w] => (*c, *h, *w),
            _ => return Err(Error::Shape(format!("network input must be [C,H,W] or [N,C,H,W], got {shape:?}"))),
        };
        let expected = self.var("enc1.weight")?.shape()[1];
        if c != expected {
            return Err(Error::Shape(format!("network expects {expected} input channels, got {c}")));
        }
        let m = 1usize << self.depth;
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("spatial size {h}x{w} is not divisible by {m}")));
        }
        Ok(())
    }

    fn encode(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut feats = Vec::with_capacity(self.depth);
        let mut h = x;
        for i in 1..=self.depth {
            h = h
                .conv2d(self.var(&format!("enc{i}.weight"))?, self.var(&format!("enc{i}.bias"))?, 2, 1)?
                .leaky_relu(LEAKY_SLOPE)?;
            feats.push(h);
        }
        Ok(feats)
    }

    /// Encoder-decoder forward pass shared by generators and the autoencoder.
    pub fn translate(&self, x: Var<'t>) -> Result<Var<'t>> {
        if self.kind == NetKind::Discriminator {
            return Err(Error::validation("translate called on a discriminator"));
        }
        self.check_input(x)?;
        let feats = self.encode(x)?;
        let mut h = *feats.last().expect("depth >= 1");
        for i in 1..=self.depth {
            let up = h.conv2d_transpose(self.var(&format!("dec{i}.weight"))?, self.var(&format!("dec{i}.bias"))?, 2, 1)?;
            if i == self.depth {
                return up.tanh();
            }
            h = up.relu()?;
            if self.skip {
                let gate = self.var(&format!("skip{i}.gate"))?;
                h = h.add(feats[self.depth - i - 1].mul(gate)?)?;
            }
        }
        unreachable!("loop returns on the last stage")
    }

    /// Patch logits `[1, H/2^d, W/2^d]` (or batched).
    pub fn discriminate(&self, x: Var<'t>) -> Result<Var<'t>> {
        if self.kind != NetKind::Discriminator {
            return Err(Error::validation("discriminate called on a non-discriminator"));
        }
        self.check_input(x)?;
        let feats = self.encode(x)?;
        feats
            .last()
            .expect("depth >= 1")
            .conv2d(self.var("out.weight")?, self.var("out.bias")?, 1, HEAD_KERNEL / 2)
    }
}

/// Fresh parameters: weights i.i.d. Normal(0, 0.02), biases zero, skip gates one.
pub fn init_params(kind: NetKind, name: &str, cfg: &NetConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut entries = Vec::new();
    let mut conv = |layer: String, shape: [usize; 4], bias: usize, rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        entries.push((format!("{name}.{layer}.weight"), Tensor::new(&shape, w).expect("shape")));
        entries.push((format!("{name}.{layer}.bias"), Tensor::zeros(&[bias])));
    };
    let (base, d) = (cfg.base_width, cfg.depth);
    for i in 1..=d {
        let cin = if i == 1 { cfg.input_channels } else { width_at(base, i - 2) };
        let cout = width_at(base, i - 1);
        conv(format!("enc{i}"), [cout, cin, KERNEL, KERNEL], cout, &mut rng);
    }
    match kind {
        NetKind::Discriminator => {
            let cin = width_at(base, d - 1);
            conv("out".into(), [1, cin, HEAD_KERNEL, HEAD_KERNEL], 1, &mut rng);
        }
        NetKind::Generator | NetKind::Autoencoder => {
            for i in 1..=d {
                let cin = width_at(base, d - i);
                let cout = if i == d { 3 } else { width_at(base, d - i - 1) };
                // transposed kernels are [C_in, C_out, kH, kW]
                conv(format!("dec{i}"), [cin, cout, KERNEL, KERNEL], cout, &mut rng);
            }
            if kind == NetKind::Generator && cfg.skip {
                for i in 1..d {
                    entries.push((format!("{name}.skip{i}.gate"), Tensor::scalar(1.0)));
                }
            }
        }
    }
    for (_, t) in entries.iter_mut() {
        t.requires_grad = true;
    }
    Ok(ModelParams {
        name: name.to_string(),
        kind,
        entries,
    })
}

/// Inverted-dropout mask used as the generator's noise source.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 - p;
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn expect_kind(p: &ModelParams, kinds: &[NetKind]) -> Result<()> {
    if kinds.contains(&p.kind) {
        Ok(())
    } else {
        Err(Error::validation(format!("{} is a {:?}, expected one of {kinds:?}", p.name, p.kind)))
    }
}

pub fn generator_forward(p: &ModelParams, x: &Tensor) -> Result<Tensor> {
    expect_kind(p, &[NetKind::Generator])?;
    let tape = Tape::new();
    let b = p.bind_frozen(&tape)?;
    Ok(b.translate(tape.constant(x)?)?.value())
}

pub fn autoencoder_forward(p: &ModelParams, x: &Tensor) -> Result<Tensor> {
    expect_kind(p, &[NetKind::Autoencoder])?;
    let tape = Tape::new();
    let b = p.bind_frozen(&tape)?;
    Ok(b.translate(tape.constant(x)?)?.value())
}

pub fn discriminator_forward(p: &ModelParams, x: &Tensor) -> Result<Tensor> {
    expect_kind(p, &[NetKind::Discriminator])?;
    let tape = Tape::new();
    let b = p.bind_frozen(&tape)?;
    Ok(b.discriminate(tape.constant(x)?)?.value())
}
