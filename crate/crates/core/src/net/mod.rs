//! Fully-connected feed-forward network `u(θ, t)`.
//!
//! The network maps the two inputs `(θ, t)` through `depth` hidden layers of
//! `width` neurons with a shared activation and a final linear layer with a
//! single output. All trainable values live in one flat buffer in canonical
//! order: layer by layer, the weight matrix (row-major, `n_out × n_in`)
//! followed by the bias vector.

pub mod kernels;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diff::{self, BatchEngine};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Sin,
    Relu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [ActivationKind::Tanh, ActivationKind::Sin, ActivationKind::Relu];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sin => "sin",
            ActivationKind::Relu => "relu",
        }
    }

    pub fn init_scheme(self) -> InitScheme {
        match self {
            ActivationKind::Tanh | ActivationKind::Sin => InitScheme::GlorotUniform,
            ActivationKind::Relu => InitScheme::HeNormal,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(ActivationKind::Tanh),
            "sin" | "sine" => Ok(ActivationKind::Sin),
            "relu" => Ok(ActivationKind::Relu),
            other => Err(Error::config(format!(
                "unknown activation `{other}` (expected tanh, sin or relu)"
            ))),
        }
    }
}

/// Weight initialization. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// `U(-b, b)` with `b = sqrt(6 / (n_in + n_out))`.
    GlorotUniform,
    /// `N(0, sqrt(2 / n_in))`.
    HeNormal,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::GlorotUniform => "glorot-uniform",
            InitScheme::HeNormal => "he-normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of hidden layers.
    pub depth: usize,
    /// Neurons per hidden layer.
    pub width: usize,
    pub activation: ActivationKind,
    pub seed: u64,
}

impl NetConfig {
    pub fn new(depth: usize, width: usize, activation: ActivationKind, seed: u64) -> Self {
        NetConfig {
            depth,
            width,
            activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("network depth must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::config("network width must be at least 1"));
        }
        Ok(())
    }

    /// `[2, n, ..., n, 1]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.depth + 2);
        sizes.push(INPUT_DIM);
        sizes.extend(std::iter::repeat_n(self.width, self.depth));
        sizes.push(OUTPUT_DIM);
        sizes
    }

    /// `2n + n + (L-1)(n^2 + n) + n + 1`; zero for an invalid depth.
    pub fn param_count(&self) -> usize {
        let (l, n) = (self.depth, self.width);
        if l == 0 {
            return 0;
        }
        2 * n + n + (l - 1) * (n * n + n) + n + 1
    }
}

impl fmt::Display for NetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}x{}", self.activation, self.depth, self.width)
    }
}

/// Borrowed view of one affine layer.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes();
        let len = config.param_count();
        Ok(Self::from_parts(sizes, vec![0.0; len]))
    }

    /// Builds a parameter set from a flat vector in canonical order.
    pub fn from_flat(config: &NetConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                data.len()
            )));
        }
        Ok(Self::from_parts(config.layer_sizes(), data))
    }

    fn from_parts(sizes: Vec<usize>, data: Vec<f64>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for pair in sizes.windows(2) {
            offsets.push(offset);
            offset += pair[1] * pair[0] + pair[1];
        }
        offsets.push(offset);
        debug_assert_eq!(offset, data.len());
        ParamSet { sizes, offsets, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of affine layers (`depth + 1`).
    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn layer(&self, index: usize) -> Layer<'_> {
        let (n_in, n_out) = (self.sizes[index], self.sizes[index + 1]);
        let start = self.offsets[index];
        let split = start + n_in * n_out;
        Layer {
            n_in,
            n_out,
            weights: &self.data[start..split],
            bias: &self.data[split..split + n_out],
        }
    }

    /// Flat offset of layer `index` in canonical order.
    pub fn layer_offset(&self, index: usize) -> usize {
        self.offsets[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors unless the shapes match `config`.
    pub fn check(&self, config: &NetConfig) -> Result<()> {
        if self.sizes != config.layer_sizes() {
            return Err(Error::Shape(format!(
                "parameter layer sizes {:?} do not match configuration {:?}",
                self.sizes,
                config.layer_sizes()
            )));
        }
        Ok(())
    }

    /// Text checkpoint: a header of `key value` lines followed by one value per
    /// line in canonical order. Values are written in shortest round-trip form,
    /// so a save/load cycle is bit-exact.
    pub fn to_checkpoint_string(&self, config: &NetConfig) -> String {
        use std::fmt::Write;
        let mut out = String::with_capacity(self.data.len() * 24 + 128);
        out.push_str("kpinn-params 1\n");
        let _ = writeln!(out, "activation {}", config.activation);
        let _ = writeln!(out, "depth {}", config.depth);
        let _ = writeln!(out, "width {}", config.width);
        let _ = writeln!(out, "seed {}", config.seed);
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "sizes {}", sizes.join(" "));
        let _ = writeln!(out, "count {}", self.data.len());
        for v in &self.data {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    pub fn from_checkpoint_str(text: &str, origin: &Path) -> Result<(NetConfig, ParamSet)> {
        let bad = |reason: String| Error::format("checkpoint", origin, reason);
        let mut lines = text.lines();
        match lines.next() {
            Some("kpinn-params 1") => {}
            other => return Err(bad(format!("unexpected magic line {other:?}"))),
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))?;
            Ok(rest.to_string())
        };
        let activation: ActivationKind = field("activation")?.parse()?;
        let parse_usize = |s: String| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let depth = parse_usize(field("depth")?)?;
        let width = parse_usize(field("width")?)?;
        let seed = field("seed")?.parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let sizes: Vec<usize> = field("sizes")?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_>>()?;
        let count = parse_usize(field("count")?)?;
        let config = NetConfig::new(depth, width, activation, seed);
        config.validate()?;
        if sizes != config.layer_sizes() {
            return Err(bad(format!("sizes {sizes:?} inconsistent with depth/width")));
        }
        if count != config.param_count() {
            return Err(bad(format!(
                "count {count} inconsistent with shape ({} expected)",
                config.param_count()
            )));
        }
        let data: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("{e}: `{l}`"))))
            .collect::<Result<_>>()?;
        if data.len() != count {
            return Err(bad(format!("header declares {count} values, found {}", data.len())));
        }
        Ok((config, ParamSet::from_parts(sizes, data)))
    }

    pub fn save(&self, config: &NetConfig, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string(config)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(NetConfig, ParamSet)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }
}

/// Deterministic initialization from `config.seed` (ChaCha8 stream).
pub fn init_params(config: &NetConfig) -> Result<ParamSet> {
    let mut params = ParamSet::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scheme = config.activation.init_scheme();
    for index in 0..params.layer_count() {
        let (n_in, n_out) = (params.sizes[index], params.sizes[index + 1]);
        let start = params.offsets[index];
        let weights = &mut params.data[start..start + n_in * n_out];
        match scheme {
            InitScheme::GlorotUniform => {
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
            InitScheme::HeNormal => {
                let std = (2.0 / n_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
        }
    }
    Ok(params)
}

/// `u(θ, t) = W_out h_L + b_out`.
pub fn forward(params: &ParamSet, config: &NetConfig, theta: f64, t: f64) -> Result<f64> {
    params.check(config)?;
    diff::eval_value(params.as_slice(), params.sizes(), config.activation, theta, t)
}

/// Batched forward evaluation; elementwise equal to [`forward`] up to
/// summation-order rounding.
pub fn forward_batch(params: &ParamSet, config: &NetConfig, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    params.check(config)?;
    let mut out = Vec::with_capacity(points.len());
    let mut engine = BatchEngine::new();
    for chunk in points.chunks(4096) {
        engine.forward(params, config.activation, chunk, &[])?;
        out.extend_from_slice(engine.plain_outputs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetConfig {
        NetConfig::new(3, 5, ActivationKind::Tanh, 11)
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(NetConfig::new(4, 64, ActivationKind::Tanh, 0).param_count(), 12_737);
        for (l, n) in [(4, 64), (4, 128), (6, 128), (6, 256), (8, 256)] {
            let config = NetConfig::new(l, n, ActivationKind::Tanh, 0);
            let params = init_params(&config).unwrap();
            let by_layers: usize = config.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            assert_eq!(params.len(), by_layers);
            assert_eq!(params.len(), config.param_count());
        }
    }

    #[test]
    fn minimal_network_shapes() {
        let config = NetConfig::new(1, 1, ActivationKind::Tanh, 3);
        let params = init_params(&config).unwrap();
        let first = params.layer(0);
        assert_eq!((first.n_out, first.n_in, first.bias.len()), (1, 2, 1));
        let out = params.layer(1);
        assert_eq!((out.n_out, out.n_in, out.bias.len()), (1, 1, 1));
        assert_eq!(params.len(), 5);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let config = NetConfig::new(4, 64, ActivationKind::Tanh, 7);
        let a = init_params(&config).unwrap();
        let b = init_params(&config).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = init_params(&NetConfig { seed: 8, ..config }).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn init_respects_scheme_bounds() {
        let config = NetConfig::new(2, 16, ActivationKind::Sin, 1);
        let params = init_params(&config).unwrap();
        for i in 0..params.layer_count() {
            let layer = params.layer(i);
            let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        let relu = init_params(&NetConfig::new(1, 2000, ActivationKind::Relu, 1)).unwrap();
        let hidden = relu.layer(0).weights;
        let var = hidden.iter().map(|w| w * w).sum::<f64>() / hidden.len() as f64;
        // He-normal variance 2 / n_in = 1 for the input layer.
        assert!((var - 1.0).abs() < 0.1, "sample variance {var}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NetConfig::new(0, 4, ActivationKind::Tanh, 0).validate().is_err());
        assert!(NetConfig::new(2, 0, ActivationKind::Tanh, 0).validate().is_err());
        assert!(ParamSet::zeros(&NetConfig::new(0, 4, ActivationKind::Tanh, 0)).is_err());
    }

    #[test]
    fn activation_parsing() {
        assert_eq!("tanh".parse::<ActivationKind>().unwrap(), ActivationKind::Tanh);
        assert_eq!("SIN".parse::<ActivationKind>().unwrap(), ActivationKind::Sin);
        assert_eq!("relu".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
        assert!("sigmoid".parse::<ActivationKind>().is_err());
        assert!("".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn zero_and_constant_networks() {
        let config = small_config();
        let mut params = ParamSet::zeros(&config).unwrap();
        assert_eq!(forward(&params, &config, 1.3, 0.2).unwrap(), 0.0);
        let last = params.layer_count() - 1;
        let bias_index = params.layer_offset(last) + params.layer(last).weights.len();
        params.as_mut_slice()[bias_index] = 0.75;
        for (theta, t) in [(0.0, 0.0), (3.0, 1.0), (6.2, 0.4)] {
            assert_eq!(forward(&params, &config, theta, t).unwrap(), 0.75);
        }
    }

    /// Hand-rolled evaluation with libm activations, independent of the
    /// crate's evaluation path.
    fn reference_forward(params: &ParamSet, activation: ActivationKind, theta: f64, t: f64) -> f64 {
        let mut h = vec![theta, t];
        for i in 0..params.layer_count() {
            let layer = params.layer(i);
            let mut next = vec![0.0; layer.n_out];
            for (r, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[r * layer.n_in..(r + 1) * layer.n_in];
                *out = row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + layer.bias[r];
            }
            if i + 1 < params.layer_count() {
                for v in next.iter_mut() {
                    *v = match activation {
                        ActivationKind::Tanh => v.tanh(),
                        ActivationKind::Sin => v.sin(),
                        ActivationKind::Relu => v.max(0.0),
                    };
                }
            }
            h = next;
        }
        h[0]
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        for activation in ActivationKind::ALL {
            let config = NetConfig::new(3, 7, activation, 99);
            let mut params = init_params(&config).unwrap();
            for (i, v) in params.as_mut_slice().iter_mut().enumerate() {
                *v += 0.01 * ((i * 37 % 11) as f64 - 5.0);
            }
            let got = forward(&params, &config, 1.0, 0.5).unwrap();
            let want = reference_forward(&params, activation, 1.0, 0.5);
            assert!(
                (got - want).abs() <= 1e-14 * want.abs().max(1.0),
                "{activation}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn forward_reports_nonfinite_layer() {
        let config = NetConfig::new(2, 3, ActivationKind::Relu, 5);
        let mut params = init_params(&config).unwrap();
        params.as_mut_slice()[0] = f64::MAX;
        params.as_mut_slice()[1] = f64::MAX;
        let err = forward(&params, &config, 1e10, 1e10).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLayer { layer: 1 }), "{err}");
    }

    #[test]
    fn forward_rejects_mismatched_config() {
        let config = small_config();
        let params = init_params(&config).unwrap();
        let other = NetConfig::new(2, 5, ActivationKind::Tanh, 11);
        assert!(matches!(forward(&params, &other, 0.0, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_edge_cases() {
        let config = small_config();
        let params = init_params(&config).unwrap();
        assert!(forward_batch(&params, &config, &[]).unwrap().is_empty());
        let single = forward_batch(&params, &config, &[(0.3, 0.7)]).unwrap();
        let scalar = forward(&params, &config, 0.3, 0.7).unwrap();
        assert!((single[0] - scalar).abs() <= 1e-14 * scalar.abs().max(1.0));
    }

    #[test]
    fn hidden_activations_bounded() {
        let config = NetConfig::new(3, 16, ActivationKind::Tanh, 4);
        let params = init_params(&config).unwrap();
        let mut engine = BatchEngine::new();
        let points: Vec<(f64, f64)> = (0..64).map(|i| (i as f64 * 0.1, 1.0 - i as f64 * 0.01)).collect();
        engine.forward(&params, config.activation, &points, &[]).unwrap();
        for layer in 1..=config.depth {
            assert!(engine.hidden(layer).iter().all(|h| h.abs() < 1.0));
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let config = NetConfig::new(2, 6, ActivationKind::Sin, 42);
        let params = init_params(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.params");
        params.save(&config, &path).unwrap();
        let (loaded_config, loaded) = ParamSet::load(&path).unwrap();
        assert_eq!(loaded_config, config);
        assert_eq!(
            loaded.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            params.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn checkpoint_rejects_inconsistent_header() {
        let config = NetConfig::new(1, 2, ActivationKind::Tanh, 0);
        let params = init_params(&config).unwrap();
        let text = params.to_checkpoint_string(&config).replace("count 9", "count 10");
        assert!(ParamSet::from_checkpoint_str(&text, Path::new("x")).is_err());
        let truncated: String = params
            .to_checkpoint_string(&config)
            .lines()
            .take(10)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(ParamSet::from_checkpoint_str(&truncated, Path::new("x")).is_err());
    }
}
