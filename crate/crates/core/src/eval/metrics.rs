// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            expected: a,
            found: b,
        });
    }
    if a == 0 {
        return Err(Error::InvalidBatch("no predictions".into()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    agreement(predictions, labels)
}

/// Fraction of indices where two prediction lists coincide.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Per-class F1 averaged with weights proportional to class support in `labels`.
pub fn weighted_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let tp = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == c && l == c)
            .count() as f64;
        let predicted = predictions.iter().filter(|&&p| p == c).count() as f64;
        let support = labels.iter().filter(|&&l| l == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1 * support;
    }
    Ok(total / labels.len() as f64)
}

/// Mean negative log-probability of the true class.
pub fn xent_loss(probabilities: &[DVector<f64>], labels: &[usize]) -> Result<f64> {
    check_lengths(probabilities.len(), labels.len())?;
    let mut total = 0.0;
    for (p, &l) in probabilities.iter().zip(labels) {
        let Some(&pl) = p.get(l) else {
            return Err(Error::Shape {
                expected: l + 1,
                found: p.len(),
            });
        };
        total -= pl.max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / labels.len() as f64)
}
