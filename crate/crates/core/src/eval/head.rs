// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-hidden-layer classification head over final sentence vectors.
//!
//! Inputs are standardized with per-feature statistics fitted on the
//! training split; the statistics are part of the head, so it can be applied
//! unchanged to a conceptualized model's outputs.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::xent_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    /// Hidden width; `None` means twice the input dimension.
    pub hidden_width: Option<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Validation loss is checked every this many epochs.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_width: None,
            learning_rate: 0.01,
            max_epochs: 2000,
            eval_every: 10,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let e = z.map(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

impl ClassificationHead {
    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.w2.nrows()
    }

    fn hidden(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs = (x - &self.mean).component_div(&self.scale);
        (&self.w1 * xs + &self.b1).map(f64::tanh)
    }

    pub fn predict_proba(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(softmax(&(&self.w2 * self.hidden(x) + &self.b2)))
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(argmax(&p))
    }

    pub fn predict_all(&self, xs: &[DVector<f64>]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&HeadArtifact::from(self))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str::<HeadArtifact>(&text)?.into_head()
    }
}

pub(crate) fn argmax(p: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct HeadArtifact {
    input_dim: usize,
    hidden_width: usize,
    class_count: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl From<&ClassificationHead> for HeadArtifact {
    fn from(h: &ClassificationHead) -> Self {
        Self {
            input_dim: h.input_dim(),
            hidden_width: h.w1.nrows(),
            class_count: h.class_count(),
            mean: h.mean.iter().copied().collect(),
            scale: h.scale.iter().copied().collect(),
            w1: row_major(&h.w1),
            b1: h.b1.iter().copied().collect(),
            w2: row_major(&h.w2),
            b2: h.b2.iter().copied().collect(),
        }
    }
}

impl HeadArtifact {
    fn into_head(self) -> Result<ClassificationHead> {
        let (d, w, k) = (self.input_dim, self.hidden_width, self.class_count);
        let check = |found: usize, expected: usize| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::Shape { expected, found })
            }
        };
        check(self.mean.len(), d)?;
        check(self.scale.len(), d)?;
        check(self.w1.len(), w * d)?;
        check(self.b1.len(), w)?;
        check(self.w2.len(), k * w)?;
        check(self.b2.len(), k)?;
        Ok(ClassificationHead {
            mean: DVector::from_vec(self.mean),
            scale: DVector::from_vec(self.scale),
            w1: DMatrix::from_row_slice(w, d, &self.w1),
            b1: DVector::from_vec(self.b1),
            w2: DMatrix::from_row_slice(k, w, &self.w2),
            b2: DVector::from_vec(self.b2),
        })
    }
}

/// Trains a head with full-batch Adam and early stopping on validation loss.
/// The returned head holds the parameters with the best validation loss.
pub fn train_head(
    train: &[DVector<f64>],
    train_labels: &[usize],
    validation: &[DVector<f64>],
    validation_labels: &[usize],
    config: &HeadConfig,
) -> Result<ClassificationHead> {
    if train.is_empty() {
        return Err(Error::InvalidSplit("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::InvalidSplit("validation split is empty".into()));
    }
    if train.len() != train_labels.len() {
        return Err(Error::Shape {
            expected: train.len(),
            found: train_labels.len(),
        });
    }
    if validation.len() != validation_labels.len() {
        return Err(Error::Shape {
            expected: validation.len(),
            found: validation_labels.len(),
        });
    }
    let classes: BTreeSet<usize> = train_labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateTask(
            "training labels contain fewer than 2 classes".into(),
        ));
    }
    let k = classes
        .iter()
        .chain(validation_labels)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let d = train[0].len();
    if let Some(bad) = train.iter().chain(validation).find(|x| x.len() != d) {
        return Err(Error::Shape {
            expected: d,
            found: bad.len(),
        });
    }
    let width = config.hidden_width.unwrap_or(2 * d).max(1);

    let n = train.len() as f64;
    let mean = train.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let var = train
        .iter()
        .fold(DVector::zeros(d), |acc, x| acc + (x - &mean).map(|v| v * v))
        / n;
    let scale = var.map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b1_bound = (6.0 / (d + width) as f64).sqrt();
    let b2_bound = (6.0 / (width + k) as f64).sqrt();
    let mut head = ClassificationHead {
        mean,
        scale,
        w1: DMatrix::from_fn(width, d, |_, _| rng.random_range(-b1_bound..b1_bound)),
        b1: DVector::zeros(width),
        w2: DMatrix::from_fn(k, width, |_, _| rng.random_range(-b2_bound..b2_bound)),
        b2: DVector::zeros(k),
    };

    let standardized: Vec<DVector<f64>> = train
        .iter()
        .map(|x| (x - &head.mean).component_div(&head.scale))
        .collect();
    let val_loss = |h: &ClassificationHead| -> Result<f64> {
        let probs = validation
            .iter()
            .map(|x| h.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        xent_loss(&probs, validation_labels)
    };

    let mut adam = Adam::new(&head);
    let mut best = head.clone();
    let mut best_loss = val_loss(&head)?;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let mut g = Grads::zeros(&head);
        for (x, &y) in standardized.iter().zip(train_labels) {
            let hid = (&head.w1 * x + &head.b1).map(f64::tanh);
            let mut dz2 = softmax(&(&head.w2 * &hid + &head.b2));
            dz2[y] -= 1.0;
            let dh = head
                .w2
                .tr_mul(&dz2)
                .component_mul(&hid.map(|v| 1.0 - v * v));
            g.w2.ger(1.0 / n, &dz2, &hid, 1.0);
            g.b2.axpy(1.0 / n, &dz2, 1.0);
            g.w1.ger(1.0 / n, &dh, x, 1.0);
            g.b1.axpy(1.0 / n, &dh, 1.0);
        }
        adam.step(&mut head, &g, config.learning_rate);

        if epoch % config.eval_every.max(1) == 0 {
            let loss = val_loss(&head)?;
            if loss < best_loss {
                best_loss = loss;
                best = head.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    Ok(best)
}

struct Grads {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl Grads {
    fn zeros(h: &ClassificationHead) -> Self {
        Self {
            w1: DMatrix::zeros(h.w1.nrows(), h.w1.ncols()),
            b1: DVector::zeros(h.b1.len()),
            w2: DMatrix::zeros(h.w2.nrows(), h.w2.ncols()),
            b2: DVector::zeros(h.b2.len()),
        }
    }
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    fn new(h: &ClassificationHead) -> Self {
        Self {
            m: Grads::zeros(h),
            v: Grads::zeros(h),
            t: 0,
        }
    }

    fn step(&mut self, head: &mut ClassificationHead, g: &Grads, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        };
        update(
            head.w1.as_mut_slice(),
            g.w1.as_slice(),
            self.m.w1.as_mut_slice(),
            self.v.w1.as_mut_slice(),
        );
        update(
            head.b1.as_mut_slice(),
            g.b1.as_slice(),
            self.m.b1.as_mut_slice(),
            self.v.b1.as_mut_slice(),
        );
        update(
            head.w2.as_mut_slice(),
            g.w2.as_slice(),
            self.m.w2.as_mut_slice(),
            self.v.w2.as_mut_slice(),
        );
        update(
            head.b2.as_mut_slice(),
            g.b2.as_slice(),
            self.m.b2.as_mut_slice(),
            self.v.b2.as_mut_slice(),
        );
    }
}
