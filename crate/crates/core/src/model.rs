// SPDX-License-Identifier: MIT OR Apache-2.0

//! An encoder with one or more Concept Layers installed between its layers.
//!
//! A Concept Layer with slice index `k` sits between the output of layer
//! `k - 1` and the input of layer `k`. Layers are kept sorted by slice index,
//! and every new layer must be strictly deeper than the existing ones.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptSet, ConceptSource};
use crate::encoder::{DenseLayer, EncoderConfig, Latent, LayeredEncoder, ModelSlice, Prefix};
use crate::error::{Error, Result};
use crate::layer::{ConceptLayer, ConceptualVector, InterventionSpec};

/// `suffix(reconstruct(intervene(project(prefix(text)))))` for a single layer
/// on a raw slice. With `spec = None` the intervention step is skipped.
pub fn conceptualized_forward(
    slice: &ModelSlice<'_>,
    layer: &ConceptLayer,
    text: &str,
    spec: Option<&InterventionSpec>,
) -> Result<DVector<f64>> {
    let cv = layer.project(&slice.prefix(text))?;
    let cv = match spec {
        Some(spec) => layer.intervene(&cv, spec)?,
        None => cv,
    };
    slice.suffix(&layer.reconstruct(&cv)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptualizedModel {
    encoder: LayeredEncoder,
    layers: Vec<ConceptLayer>,
}

impl ConceptualizedModel {
    /// A model with no Concept Layers; behaves exactly like `encoder`.
    pub fn new(encoder: LayeredEncoder) -> Self {
        Self {
            encoder,
            layers: Vec::new(),
        }
    }

    pub fn with_layer(encoder: LayeredEncoder, layer: ConceptLayer) -> Result<Self> {
        let mut model = Self::new(encoder);
        model.install(layer)?;
        Ok(model)
    }

    pub fn encoder(&self) -> &LayeredEncoder {
        &self.encoder
    }

    pub(crate) fn encoder_mut(&mut self) -> &mut LayeredEncoder {
        &mut self.encoder
    }

    pub fn concept_layers(&self) -> &[ConceptLayer] {
        &self.layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn layer_count(&self) -> usize {
        self.encoder.layer_count()
    }

    /// Slice index of the shallowest Concept Layer.
    pub fn first_slice_index(&self) -> Option<usize> {
        self.layers.first().map(ConceptLayer::slice_index)
    }

    fn check_new_index(&self, slice_index: usize) -> Result<()> {
        self.encoder.slice_at(slice_index)?;
        if let Some(last) = self.layers.last() {
            if slice_index <= last.slice_index() {
                return Err(Error::SliceOrdering {
                    new: slice_index,
                    existing: last.slice_index(),
                });
            }
        }
        Ok(())
    }

    /// Installs an already built layer; it must be deeper than every existing one.
    pub fn install(&mut self, layer: ConceptLayer) -> Result<()> {
        self.check_new_index(layer.slice_index())?;
        if layer.hidden_dim() != self.hidden_dim() {
            return Err(Error::Shape {
                expected: self.hidden_dim(),
                found: layer.hidden_dim(),
            });
        }
        self.layers.push(layer);
        Ok(())
    }

    /// Adds a deeper Concept Layer whose concepts are embedded through the
    /// current conceptualized prefix (which includes the earlier layers).
    pub fn compose_multilayer<'a>(
        &mut self,
        slice_index: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a str)>,
        source: ConceptSource,
    ) -> Result<&ConceptLayer> {
        self.check_new_index(slice_index)?;
        let concepts = ConceptSet::embed_all(&self.prefix(slice_index)?, entries, source)?;
        self.install(ConceptLayer::build(concepts, slice_index)?)?;
        Ok(self.layers.last().expect("just installed"))
    }

    /// The conceptualized prefix ending just before layer `slice_index`.
    pub fn prefix(&self, slice_index: usize) -> Result<ConceptualizedPrefix<'_>> {
        self.encoder.slice_at(slice_index)?;
        Ok(ConceptualizedPrefix {
            model: self,
            slice_index,
        })
    }

    /// Per-Concept-Layer intervention factors; every id in `spec` must belong
    /// to at least one layer, and applies to each layer that contains it.
    pub fn resolve(&self, spec: &InterventionSpec) -> Result<Vec<Option<Vec<f64>>>> {
        for (id, _) in spec.iter() {
            if !self
                .layers
                .iter()
                .any(|l| l.concepts().index_of(id).is_some())
            {
                return Err(Error::UnknownConcept(id.to_owned()));
            }
        }
        Ok(self
            .layers
            .iter()
            .map(|l| {
                let touched = spec
                    .iter()
                    .any(|(id, _)| l.concepts().index_of(id).is_some());
                touched.then(|| l.concepts().ids().map(|id| spec.factor(id)).collect())
            })
            .collect())
    }

    fn run(
        &self,
        text: &str,
        factors: &[Option<Vec<f64>>],
        upto: usize,
        mut on_layer: impl FnMut(&DVector<f64>),
    ) -> DVector<f64> {
        let mut x = self.encoder.embed(text);
        let mut next_cl = 0;
        for (j, dense) in self.encoder.layers()[..upto].iter().enumerate() {
            if let Some(cl) = self.layers.get(next_cl).filter(|cl| cl.slice_index() == j) {
                x = cl.pass(&x, factors[next_cl].as_deref());
                next_cl += 1;
            }
            x = dense.apply(&x);
            on_layer(&x);
        }
        x
    }

    /// Outputs of every layer with all Concept Layers applied.
    pub fn forward(
        &self,
        text: &str,
        spec: Option<&InterventionSpec>,
    ) -> Result<Vec<DVector<f64>>> {
        let factors = match spec {
            Some(spec) => self.resolve(spec)?,
            None => vec![None; self.layers.len()],
        };
        let mut outs = Vec::with_capacity(self.layer_count());
        self.run(text, &factors, self.layer_count(), |x| outs.push(x.clone()));
        Ok(outs)
    }

    /// Final output with all Concept Layers applied.
    pub fn output(&self, text: &str, spec: Option<&InterventionSpec>) -> Result<DVector<f64>> {
        let factors = match spec {
            Some(spec) => self.resolve(spec)?,
            None => vec![None; self.layers.len()],
        };
        Ok(self.run(text, &factors, self.layer_count(), |_| {}))
    }

    /// Final output with `spec` applied at Concept Layer `layer_pos` only.
    /// Every id in `spec` must belong to that layer.
    pub fn output_intervening_at(
        &self,
        text: &str,
        layer_pos: usize,
        spec: &InterventionSpec,
    ) -> Result<DVector<f64>> {
        let cl = self.layer_at(layer_pos)?;
        let mut factors = vec![None; self.layers.len()];
        factors[layer_pos] = Some(spec.resolve(cl.concepts())?);
        Ok(self.run(text, &factors, self.layer_count(), |_| {}))
    }

    fn layer_at(&self, layer_pos: usize) -> Result<&ConceptLayer> {
        self.layers.get(layer_pos).ok_or(Error::Shape {
            expected: self.layers.len(),
            found: layer_pos,
        })
    }

    /// Conceptual vector of `text` at Concept Layer `layer_pos` (no interventions upstream).
    pub fn conceptual_vector(&self, text: &str, layer_pos: usize) -> Result<ConceptualVector> {
        let cl = self.layer_at(layer_pos)?;
        cl.project(&self.prefix(cl.slice_index())?.encode_prefix(text))
    }

    /// Saves the model as JSON at `path` with one `CLAYER` file per Concept Layer next to it.
    pub fn save(&self, path: &Path, run_manifest: Option<&str>) -> Result<Vec<PathBuf>> {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut written = vec![path.to_path_buf()];
        let mut cl_files = Vec::new();
        for (i, cl) in self.layers.iter().enumerate() {
            let name = format!("{stem}.cl{i}.clayer");
            let cl_path = dir.join(&name);
            let sidecar = cl.save(&cl_path, run_manifest)?;
            written.push(cl_path);
            written.push(sidecar);
            cl_files.push(name);
        }
        let artifact = ModelArtifact {
            format: MODEL_FORMAT.into(),
            encoder: EncoderWeights::from_encoder(&self.encoder),
            concept_layers: cl_files,
            run_manifest: run_manifest.map(str::to_owned),
        };
        let json = serde_json::to_string_pretty(&artifact)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
        Ok(written)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        if artifact.format != MODEL_FORMAT {
            return Err(Error::parse(
                path.display().to_string(),
                1,
                format!("unsupported model format '{}'", artifact.format),
            ));
        }
        let mut model = Self::new(artifact.encoder.into_encoder()?);
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for name in &artifact.concept_layers {
            model.install(ConceptLayer::load(&dir.join(name))?)?;
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "CLMODEL v1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelArtifact {
    format: String,
    encoder: EncoderWeights,
    concept_layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_manifest: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EncoderWeights {
    hidden_dim: usize,
    layer_count: usize,
    seed: u64,
    /// Row-major `h × h` weights per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl EncoderWeights {
    fn from_encoder(enc: &LayeredEncoder) -> Self {
        let cfg = enc.config();
        Self {
            hidden_dim: cfg.hidden_dim,
            layer_count: cfg.layer_count,
            seed: cfg.seed,
            weights: enc
                .layers()
                .iter()
                .map(|l| l.weight.transpose().iter().copied().collect())
                .collect(),
            biases: enc
                .layers()
                .iter()
                .map(|l| l.bias.iter().copied().collect())
                .collect(),
        }
    }

    fn into_encoder(self) -> Result<LayeredEncoder> {
        let config = EncoderConfig {
            hidden_dim: self.hidden_dim,
            layer_count: self.layer_count,
            seed: self.seed,
        };
        let h = self.hidden_dim;
        if self.weights.len() != self.biases.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                found: self.biases.len(),
            });
        }
        let layers = self
            .weights
            .into_iter()
            .zip(self.biases)
            .map(|(w, b)| {
                if w.len() != h * h {
                    return Err(Error::Shape {
                        expected: h * h,
                        found: w.len(),
                    });
                }
                if b.len() != h {
                    return Err(Error::Shape {
                        expected: h,
                        found: b.len(),
                    });
                }
                Ok(DenseLayer {
                    weight: DMatrix::from_row_slice(h, h, &w),
                    bias: DVector::from_vec(b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LayeredEncoder::from_parts(config, layers)
    }
}

/// Prefix of a conceptualized model: layers `[0, slice_index)` with every
/// Concept Layer shallower than `slice_index` applied.
#[derive(Debug, Clone, Copy)]
pub struct ConceptualizedPrefix<'a> {
    model: &'a ConceptualizedModel,
    slice_index: usize,
}

impl Prefix for ConceptualizedPrefix<'_> {
    fn hidden_dim(&self) -> usize {
        self.model.hidden_dim()
    }

    fn encode_prefix(&self, text: &str) -> Latent {
        let factors = vec![None; self.model.layers.len()];
        self.model.run(text, &factors, self.slice_index, |_| {})
    }
}
