// SPDX-License-Identifier: MIT OR Apache-2.0

//! Welding: feature-based distillation of the suffix against the original
//! encoder, with everything up to the deepest Concept Layer frozen.
//!
//! The loss for one text is the sum, over every layer at or after the first
//! Concept Layer's slice index, of the mean squared difference between the
//! conceptualized and the original layer outputs. A batch loss is the mean
//! over its texts. Only layers at or after the deepest slice index are
//! trained, so the prefix of every installed Concept Layer stays fixed and
//! its projection keeps measuring cosine similarity.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::LayeredEncoder;
use crate::error::{Error, Result};
use crate::model::ConceptualizedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct WeldConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seed for the per-epoch shuffle.
    pub seed: u64,
}

impl Default for WeldConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 30,
            warmup_steps: 50,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl WeldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "weight_decay must be >= 0 and epsilon > 0".into(),
            ));
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, lineno + 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::parse(origin, lineno + 1, format!("invalid value for {key}"));
            match key {
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad())?,
                "learning_rate" | "lr" => cfg.learning_rate = value.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad())?,
                "warmup_steps" => cfg.warmup_steps = value.parse().map_err(|_| bad())?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad())?,
                "beta1" => cfg.beta1 = value.parse().map_err(|_| bad())?,
                "beta2" => cfg.beta2 = value.parse().map_err(|_| bad())?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
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

    /// Learning rate at optimizer step `step` (1-based): linear warmup, then linear decay.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.learning_rate * step as f64 / self.warmup_steps as f64;
        }
        let remaining = (total_steps + 1).saturating_sub(step) as f64;
        let span = (total_steps + 1).saturating_sub(self.warmup_steps).max(1) as f64;
        self.learning_rate * (remaining / span).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeldReport {
    pub initial_loss: f64,
    /// Full-corpus distillation loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl WeldReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }

    /// `epoch<TAB>loss` lines followed by a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let _ = writeln!(out, "{}\t{loss:e}", i + 1);
        }
        let _ = writeln!(
            out,
            "summary\tinitial={:e}\tfinal={:e}\tepochs={}",
            self.initial_loss,
            self.final_loss(),
            self.epoch_losses.len()
        );
        out
    }

    /// Inverse of [`WeldReport::to_text`]; `#` lines are comments.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut epoch_losses = Vec::new();
        let mut initial = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::parse(origin, lineno + 1, m);
            let mut parts = line.split('\t');
            let head = parts.next().unwrap_or("");
            if head == "summary" {
                for kv in parts {
                    if let Some(v) = kv.strip_prefix("initial=") {
                        initial = Some(v.parse().map_err(|_| err("invalid initial loss"))?);
                    }
                }
                continue;
            }
            let epoch: usize = head.parse().map_err(|_| err("invalid epoch"))?;
            if epoch != epoch_losses.len() + 1 {
                return Err(err("epochs out of order"));
            }
            let loss = parts
                .next()
                .ok_or_else(|| err("missing loss"))?
                .parse()
                .map_err(|_| err("invalid loss"))?;
            epoch_losses.push(loss);
        }
        let initial_loss =
            initial.ok_or_else(|| Error::parse(origin, 0, "missing summary line"))?;
        Ok(Self {
            initial_loss,
            epoch_losses,
        })
    }
}

/// Sum over layers of the per-layer mean squared difference.
pub fn feature_distance(conceptualized: &[DVector<f64>], original: &[DVector<f64>]) -> f64 {
    conceptualized
        .iter()
        .zip(original)
        .map(|(a, b)| (a - b).norm_squared() / a.len() as f64)
        .sum()
}

fn loss_start(model: &ConceptualizedModel) -> Result<usize> {
    model
        .first_slice_index()
        .ok_or_else(|| Error::InvalidConfig("model has no Concept Layer installed".into()))
}

/// Mean over `batch` of the feature distance on layers at or after the first slice index.
pub fn distillation_loss(
    original: &LayeredEncoder,
    model: &ConceptualizedModel,
    batch: &[&str],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("batch is empty".into()));
    }
    let start = loss_start(model)?;
    let mut total = 0.0;
    for text in batch {
        let c = model.forward(text, None)?;
        let o = original.forward(text);
        total += feature_distance(&c[start..], &o[start..]);
    }
    Ok(total / batch.len() as f64)
}

/// Gradients of the batch distillation loss for the trainable layers
/// `first_layer ..`, stored as `(dW, db)` pairs.
#[derive(Debug, Clone)]
pub struct SuffixGradients {
    pub first_layer: usize,
    pub loss: f64,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl SuffixGradients {
    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.norm_squared())
            .chain(self.biases.iter().map(|b| b.norm_squared()))
            .sum::<f64>()
            .sqrt()
    }
}

/// First trainable layer: the deepest Concept Layer's slice index.
pub fn trainable_from(model: &ConceptualizedModel) -> Result<usize> {
    model
        .concept_layers()
        .last()
        .map(|cl| cl.slice_index())
        .ok_or_else(|| Error::InvalidConfig("model has no Concept Layer installed".into()))
}

/// Analytic gradients by backpropagation through the conceptualized forward pass.
pub fn suffix_gradients(
    original: &LayeredEncoder,
    model: &ConceptualizedModel,
    batch: &[&str],
) -> Result<SuffixGradients> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("batch is empty".into()));
    }
    let start = loss_start(model)?;
    let first = trainable_from(model)?;
    let enc = model.encoder();
    let layers = enc.layers();
    let depth = layers.len();
    let h = enc.hidden_dim() as f64;
    let scale = 1.0 / batch.len() as f64;

    let mut grads = SuffixGradients {
        first_layer: first,
        loss: 0.0,
        weights: layers[first..]
            .iter()
            .map(|l| DMatrix::zeros(l.weight.nrows(), l.weight.ncols()))
            .collect(),
        biases: layers[first..]
            .iter()
            .map(|l| DVector::zeros(l.bias.len()))
            .collect(),
    };

    for text in batch {
        let target = original.forward(text);
        // inputs[j] is what layer j consumes (after any Concept Layer at j)
        let mut inputs = Vec::with_capacity(depth);
        let mut outputs = Vec::with_capacity(depth);
        let mut x = enc.embed(text);
        for (j, dense) in layers.iter().enumerate() {
            if let Some(cl) = model
                .concept_layers()
                .iter()
                .find(|cl| cl.slice_index() == j)
            {
                x = cl.pass(&x, None);
            }
            inputs.push(x.clone());
            x = dense.apply(&x);
            outputs.push(x.clone());
        }
        grads.loss += scale * feature_distance(&outputs[start..], &target[start..]);

        let mut upstream = DVector::zeros(enc.hidden_dim());
        for j in (first..depth).rev() {
            if j >= start {
                upstream += (&outputs[j] - &target[j]) * (2.0 / h);
            }
            let dz = upstream.component_mul(&outputs[j].map(|y| 1.0 - y * y));
            grads.weights[j - first].ger(scale, &dz, &inputs[j], 1.0);
            grads.biases[j - first].axpy(scale, &dz, 1.0);
            upstream = layers[j].weight.tr_mul(&dz);
            if let Some(cl) = model
                .concept_layers()
                .iter()
                .find(|cl| cl.slice_index() == j)
            {
                // d/dx of pinv * M * x
                upstream = cl
                    .projection()
                    .tr_mul(&cl.pseudo_inverse().tr_mul(&upstream));
            }
        }
    }
    Ok(grads)
}

struct AdamW {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: usize,
}

impl AdamW {
    fn new(grads: &SuffixGradients) -> Self {
        let zw: Vec<_> = grads.weights.iter().map(|w| w.map(|_| 0.0)).collect();
        let zb: Vec<_> = grads.biases.iter().map(|b| b.map(|_| 0.0)).collect();
        Self {
            m_w: zw.clone(),
            v_w: zw,
            m_b: zb.clone(),
            v_b: zb,
            step: 0,
        }
    }

    fn update(
        &mut self,
        model: &mut ConceptualizedModel,
        g: &SuffixGradients,
        cfg: &WeldConfig,
        lr: f64,
    ) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let layers = model.encoder_mut().layers_mut();
        for (i, layer) in layers[g.first_layer..].iter_mut().enumerate() {
            for (((p, gr), m), v) in layer
                .weight
                .iter_mut()
                .zip(g.weights[i].iter())
                .zip(self.m_w[i].iter_mut())
                .zip(self.v_w[i].iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                let update = (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
                *p -= lr * (update + cfg.weight_decay * *p);
            }
            for (((p, gr), m), v) in layer
                .bias
                .iter_mut()
                .zip(g.biases[i].iter())
                .zip(self.m_b[i].iter_mut())
                .zip(self.v_b[i].iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Trains the suffix of `model` to mimic `original` on `corpus`.
///
/// Layers before the deepest Concept Layer and every Concept Layer matrix
/// are left bit-identical; this is checked after training.
pub fn weld(
    original: &LayeredEncoder,
    model: &mut ConceptualizedModel,
    config: &WeldConfig,
    corpus: &[String],
) -> Result<WeldReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidBatch("welding corpus is empty".into()));
    }
    if original.config().hidden_dim != model.hidden_dim()
        || original.layer_count() != model.layer_count()
    {
        return Err(Error::Shape {
            expected: original.hidden_dim(),
            found: model.hidden_dim(),
        });
    }
    let first = trainable_from(model)?;
    let frozen_digest = model.encoder().parameter_digest(0..first);
    let frozen_layers = model.concept_layers().to_vec();

    let all: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let initial_loss = distillation_loss(original, model, &all)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            loss: initial_loss,
        });
    }

    let batches_per_epoch = all.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut optimizer: Option<AdamW> = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&str> = chunk.iter().map(|&i| all[i]).collect();
            let grads = suffix_gradients(original, model, &batch)?;
            if !grads.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: grads.loss,
                });
            }
            let opt = optimizer.get_or_insert_with(|| AdamW::new(&grads));
            let lr = config.learning_rate_at(opt.step + 1, total_steps);
            opt.update(model, &grads, config, lr);
        }
        let loss = distillation_loss(original, model, &all)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        epoch_losses.push(loss);
    }

    if model.encoder().parameter_digest(0..first) != frozen_digest
        || model.concept_layers() != frozen_layers.as_slice()
    {
        return Err(Error::FrozenPrefixViolation);
    }
    Ok(WeldReport {
        initial_loss,
        epoch_losses,
    })
}
