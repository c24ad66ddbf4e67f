// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale evaluation: classification heads, accuracy, weighted F1,
//! cross-entropy, agreement and backward compatibility.

pub mod data;
pub mod head;
pub mod metrics;

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::encoder::LayeredEncoder;
use crate::error::{Error, Result};
use crate::model::ConceptualizedModel;

pub use data::{labeled_to_text, load_labeled, parse_labeled, LabeledText, TopicTask};
pub use head::{train_head, ClassificationHead, HeadConfig};
pub use metrics::{accuracy, agreement, weighted_f1, xent_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub loss: f64,
    /// Agreement with a reference pipeline, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
}

impl EvalReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "count={}", self.count);
        let _ = writeln!(out, "accuracy={}", self.accuracy);
        let _ = writeln!(out, "weighted_f1={}", self.weighted_f1);
        let _ = writeln!(out, "loss={}", self.loss);
        if let Some(a) = self.agreement {
            let _ = writeln!(out, "agreement={a}");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluation plus the per-example predictions it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Evaluation {
    /// `index<TAB>pred<TAB>label` lines.
    pub fn predictions_dump(&self) -> String {
        let mut out = String::new();
        for (i, (p, l)) in self.predictions.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(out, "{i}\t{p}\t{l}");
        }
        out
    }
}

/// Applies `head` to precomputed `outputs`.
pub fn evaluate(
    head: &ClassificationHead,
    outputs: &[DVector<f64>],
    labels: &[usize],
    reference: Option<&[usize]>,
) -> Result<Evaluation> {
    let probs = outputs
        .iter()
        .map(|x| head.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = probs.iter().map(head::argmax).collect();
    let report = EvalReport {
        count: labels.len(),
        accuracy: accuracy(&predictions, labels)?,
        weighted_f1: weighted_f1(&predictions, labels)?,
        loss: xent_loss(&probs, labels)?,
        agreement: reference.map(|r| agreement(&predictions, r)).transpose()?,
    };
    Ok(Evaluation {
        report,
        predictions,
        labels: labels.to_vec(),
    })
}

/// Evaluates the original pipeline (encoder + head).
pub fn evaluate_original(
    head: &ClassificationHead,
    encoder: &LayeredEncoder,
    test: &[LabeledText],
) -> Result<Evaluation> {
    check_dim(head, encoder.hidden_dim())?;
    let outputs: Vec<_> = test.iter().map(|t| encoder.output(&t.text)).collect();
    let labels: Vec<usize> = test.iter().map(|t| t.label).collect();
    evaluate(head, &outputs, &labels, None)
}

/// Applies a head trained on the original encoder to the conceptualized
/// model without retraining; agreement is measured against the original pipeline.
pub fn backward_compat_eval(
    head: &ClassificationHead,
    original: &LayeredEncoder,
    model: &ConceptualizedModel,
    test: &[LabeledText],
) -> Result<Evaluation> {
    check_dim(head, model.hidden_dim())?;
    let reference = evaluate_original(head, original, test)?;
    let outputs = test
        .iter()
        .map(|t| model.output(&t.text, None))
        .collect::<Result<Vec<_>>>()?;
    evaluate(
        head,
        &outputs,
        &reference.labels,
        Some(&reference.predictions),
    )
}

fn check_dim(head: &ClassificationHead, dim: usize) -> Result<()> {
    if head.input_dim() != dim {
        return Err(Error::Shape {
            expected: head.input_dim(),
            found: dim,
        });
    }
    Ok(())
}
