// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sliceable layered text encoder.
//!
//! The built-in toy encoder is vocabulary free: each whitespace token is
//! hashed with 64-bit FNV-1a, the hash is XORed with the global seed and used
//! to seed a ChaCha8 stream from which the token embedding is drawn uniformly
//! in `[-1, 1)`. Token embeddings are mean pooled into one sentence vector
//! which then runs through `layer_count` dense layers (`tanh(W x + b)`). The
//! output of every layer is a sentence vector of dimension `hidden_dim`.
//!
//! An empty text has no tokens; its pooled vector is defined as zero, and
//! since freshly built layers carry zero biases every layer output is zero.

use std::hash::Hasher;
use std::ops::Range;
use std::path::Path;

use fnv::FnvHasher;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A point in the encoder's latent space.
pub type Latent = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub layer_count: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            layer_count: 4,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim must be >= 2, got {}",
                self.hidden_dim
            )));
        }
        if self.layer_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "layer_count must be >= 2, got {}",
                self.layer_count
            )));
        }
        Ok(())
    }

    /// Parses `key=value` lines (`hidden_dim`, `layer_count`, `seed`); `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = EncoderConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, lineno + 1, "expected key=value"))?;
            let value = value.trim();
            let bad = |_| Error::parse(origin, lineno + 1, format!("invalid value '{value}'"));
            match key.trim() {
                "hidden_dim" => cfg.hidden_dim = value.parse().map_err(bad)?,
                "layer_count" => cfg.layer_count = value.parse().map_err(bad)?,
                "seed" => cfg.seed = value.parse().map_err(bad)?,
                other => {
                    return Err(Error::parse(
                        origin,
                        lineno + 1,
                        format!("unknown key '{other}'"),
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// One `tanh(W x + b)` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayer {
    pub fn pre_activation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.pre_activation(x).map(f64::tanh)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredEncoder {
    config: EncoderConfig,
    layers: Vec<DenseLayer>,
}

impl LayeredEncoder {
    /// Deterministic toy encoder; see the module docs for the construction.
    pub fn toy(hidden_dim: usize, layer_count: usize, seed: u64) -> Result<Self> {
        Self::from_config(EncoderConfig {
            hidden_dim,
            layer_count,
            seed,
        })
    }

    pub fn from_config(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = (0..config.layer_count)
            .map(|_| DenseLayer {
                weight: DMatrix::from_fn(h, h, |_, _| rng.random_range(-bound..bound)),
                bias: DVector::zeros(h),
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Rebuilds an encoder from explicit layer weights.
    pub fn from_parts(config: EncoderConfig, layers: Vec<DenseLayer>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_count {
            return Err(Error::Shape {
                expected: config.layer_count,
                found: layers.len(),
            });
        }
        let h = config.hidden_dim;
        for layer in &layers {
            if layer.weight.shape() != (h, h) {
                return Err(Error::Shape {
                    expected: h,
                    found: layer.weight.nrows(),
                });
            }
            if layer.bias.len() != h {
                return Err(Error::Shape {
                    expected: h,
                    found: layer.bias.len(),
                });
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn layer_count(&self) -> usize {
        self.config.layer_count
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Deterministic embedding of a single token.
    pub fn token_embedding(&self, token: &str) -> DVector<f64> {
        let mut hasher = FnvHasher::default();
        hasher.write(token.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish() ^ self.config.seed);
        DVector::from_fn(self.config.hidden_dim, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Mean-pooled token embeddings, the input to layer 0.
    pub fn embed(&self, text: &str) -> DVector<f64> {
        let mut sum = DVector::zeros(self.config.hidden_dim);
        let mut count = 0usize;
        for token in text.split_whitespace() {
            sum += self.token_embedding(token);
            count += 1;
        }
        if count > 0 {
            sum /= count as f64;
        }
        sum
    }

    /// Runs layers `range` starting from `x`.
    pub fn run_layers(&self, range: Range<usize>, x: &DVector<f64>) -> DVector<f64> {
        self.layers[range]
            .iter()
            .fold(x.clone(), |acc, layer| layer.apply(&acc))
    }

    /// Outputs of every layer, in order.
    pub fn forward(&self, text: &str) -> Vec<DVector<f64>> {
        let mut x = self.embed(text);
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.apply(&x);
            outs.push(x.clone());
        }
        outs
    }

    /// Final-layer sentence vector.
    pub fn output(&self, text: &str) -> DVector<f64> {
        self.run_layers(0..self.layers.len(), &self.embed(text))
    }

    pub fn slice_at(&self, index: usize) -> Result<ModelSlice<'_>> {
        if index == 0 || index >= self.layer_count() {
            return Err(Error::SliceIndex {
                index,
                layer_count: self.layer_count(),
            });
        }
        Ok(ModelSlice {
            encoder: self,
            index,
        })
    }

    /// FNV-1a digest over the bit patterns of the parameters of `layers`.
    pub fn parameter_digest(&self, layers: Range<usize>) -> u64 {
        let mut hasher = FnvHasher::default();
        for layer in &self.layers[layers] {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                hasher.write_u64(v.to_bits());
            }
        }
        hasher.finish()
    }
}

/// Anything that maps text to a latent vector: a raw encoder prefix or a
/// prefix that already contains Concept Layers.
pub trait Prefix {
    fn hidden_dim(&self) -> usize;
    fn encode_prefix(&self, text: &str) -> Latent;
}

/// A split of an encoder into prefix layers `[0, index)` and suffix layers
/// `[index, layer_count)`.
#[derive(Debug, Clone, Copy)]
pub struct ModelSlice<'a> {
    encoder: &'a LayeredEncoder,
    index: usize,
}

impl<'a> ModelSlice<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn encoder(&self) -> &'a LayeredEncoder {
        self.encoder
    }

    /// Output of layer `index - 1`.
    pub fn prefix(&self, text: &str) -> Latent {
        self.encoder
            .run_layers(0..self.index, &self.encoder.embed(text))
    }

    pub fn suffix(&self, latent: &Latent) -> Result<DVector<f64>> {
        if latent.len() != self.encoder.hidden_dim() {
            return Err(Error::Shape {
                expected: self.encoder.hidden_dim(),
                found: latent.len(),
            });
        }
        Ok(self
            .encoder
            .run_layers(self.index..self.encoder.layer_count(), latent))
    }
}

impl Prefix for ModelSlice<'_> {
    fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    fn encode_prefix(&self, text: &str) -> Latent {
        self.prefix(text)
    }
}
