// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept Layers: projection of a latent vector onto normalized concept
//! embeddings, optional intervention in the conceptual space, and
//! reconstruction back into the latent space through the pseudo-inverse.
//!
//! A layer is immutable once built. `project` records `‖l‖` alongside the
//! dot products so interpretation never needs a second encoder pass.
//!
//! Intervention factors are multiplicative and may exceed 1 (amplification)
//! as well as attenuate.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::concept::{Concept, ConceptSet, ConceptSource, UNIT_NORM_TOLERANCE};
use crate::encoder::{Latent, Prefix};
use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, RELATIVE_CUTOFF};

/// Condition numbers above this trigger a conditioning warning at build time.
pub const CONDITION_WARNING_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptualVector {
    pub values: DVector<f64>,
    /// `‖l‖` of the latent vector this was projected from.
    pub norm_of_source: f64,
}

impl ConceptualVector {
    /// Cosine similarities `values / ‖l‖`.
    pub fn cosines(&self) -> Result<DVector<f64>> {
        if self.norm_of_source > 0.0 {
            Ok(&self.values / self.norm_of_source)
        } else {
            Err(Error::UninterpretableInput)
        }
    }
}

/// Per-concept multiplicative factors; concepts not listed keep factor 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterventionSpec {
    factors: BTreeMap<String, f64>,
}

impl InterventionSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: &str, factor: f64) -> Result<Self> {
        self.set(id, factor)?;
        Ok(self)
    }

    pub fn set(&mut self, id: &str, factor: f64) -> Result<()> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidFactor {
                id: id.to_owned(),
                factor,
            });
        }
        self.factors.insert(id.to_owned(), factor);
        Ok(())
    }

    pub fn factor(&self, id: &str) -> f64 {
        self.factors.get(id).copied().unwrap_or(1.0)
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.factors.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Factor per coordinate of `concepts`; fails on ids outside the set.
    pub fn resolve(&self, concepts: &ConceptSet) -> Result<Vec<f64>> {
        if let Some(unknown) = self
            .factors
            .keys()
            .find(|id| concepts.index_of(id).is_none())
        {
            return Err(Error::UnknownConcept(unknown.clone()));
        }
        Ok(concepts.ids().map(|id| self.factor(id)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptLayer {
    concepts: ConceptSet,
    projection: DMatrix<f64>,
    pseudo_inverse: DMatrix<f64>,
    slice_index: usize,
    pinv_tolerance: f64,
    condition_number: f64,
}

impl ConceptLayer {
    /// Stacks the concept embeddings into `M_C` and computes its pseudo-inverse once.
    pub fn build(concepts: ConceptSet, slice_index: usize) -> Result<Self> {
        Self::build_with_tolerance(concepts, slice_index, RELATIVE_CUTOFF)
    }

    pub fn build_with_tolerance(
        concepts: ConceptSet,
        slice_index: usize,
        pinv_tolerance: f64,
    ) -> Result<Self> {
        let Some(first) = concepts.get(0) else {
            return Err(Error::InvalidConfig("concept set is empty".into()));
        };
        let h = first.embedding().len();
        let n = concepts.len();
        let projection = DMatrix::from_fn(n, h, |i, j| concepts.concepts()[i].embedding()[j]);
        let pinv = pseudo_inverse(&projection, pinv_tolerance)?;
        let condition_number = pinv.condition_number();
        Ok(Self {
            concepts,
            projection,
            pseudo_inverse: pinv.matrix,
            slice_index,
            pinv_tolerance,
            condition_number,
        })
    }

    /// Embeds `(id, tau)` pairs through `prefix` and builds the layer.
    pub fn embed_and_build<'a, P: Prefix + ?Sized>(
        prefix: &P,
        slice_index: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a str)>,
        source: ConceptSource,
    ) -> Result<Self> {
        Self::build(ConceptSet::embed_all(prefix, entries, source)?, slice_index)
    }

    pub fn concepts(&self) -> &ConceptSet {
        &self.concepts
    }

    /// `M_C`, shape `n × h`.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Pseudo-inverse of `M_C`, shape `h × n`.
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pseudo_inverse
    }

    pub fn slice_index(&self) -> usize {
        self.slice_index
    }

    pub fn pinv_tolerance(&self) -> f64 {
        self.pinv_tolerance
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.condition_number > CONDITION_WARNING_THRESHOLD
    }

    pub fn concept_count(&self) -> usize {
        self.projection.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn project(&self, latent: &Latent) -> Result<ConceptualVector> {
        if latent.len() != self.hidden_dim() {
            return Err(Error::Shape {
                expected: self.hidden_dim(),
                found: latent.len(),
            });
        }
        Ok(ConceptualVector {
            values: &self.projection * latent,
            norm_of_source: latent.norm(),
        })
    }

    /// Top `k` concepts by cosine score, descending; ties keep concept order.
    /// `k` is capped at the number of concepts.
    pub fn interpret(&self, cv: &ConceptualVector, k: usize) -> Result<Vec<(String, f64)>> {
        self.check_width(cv)?;
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let cos = cv.cosines()?;
        let mut order: Vec<usize> = (0..cos.len()).collect();
        // stable sort keeps concept order among ties
        order.sort_by(|&a, &b| cos[b].total_cmp(&cos[a]));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| (self.concepts.concepts()[i].id().to_owned(), cos[i]))
            .collect())
    }

    pub fn intervene(
        &self,
        cv: &ConceptualVector,
        spec: &InterventionSpec,
    ) -> Result<ConceptualVector> {
        self.check_width(cv)?;
        let factors = spec.resolve(&self.concepts)?;
        Ok(apply_factors(cv, &factors))
    }

    pub fn reconstruct(&self, cv: &ConceptualVector) -> Result<Latent> {
        self.check_width(cv)?;
        Ok(&self.pseudo_inverse * &cv.values)
    }

    /// Project, optionally scale by resolved factors, and reconstruct.
    pub(crate) fn pass(&self, latent: &Latent, factors: Option<&[f64]>) -> Latent {
        let mut values = &self.projection * latent;
        if let Some(f) = factors {
            for (v, f) in values.iter_mut().zip(f) {
                *v *= f;
            }
        }
        &self.pseudo_inverse * values
    }

    fn check_width(&self, cv: &ConceptualVector) -> Result<()> {
        if cv.values.len() != self.concept_count() {
            return Err(Error::Shape {
                expected: self.concept_count(),
                found: cv.values.len(),
            });
        }
        Ok(())
    }

    /// Writes the `CLAYER v1` manifest to `path` and the matrices to `<path>.bin`.
    ///
    /// The sidecar holds `M_C` (row-major, `n × h`) followed by the
    /// pseudo-inverse (row-major, `h × n`) as little-endian `f64`.
    pub fn save(&self, path: &Path, run_manifest: Option<&str>) -> Result<PathBuf> {
        let data_path = sidecar_path(path);
        let data_name = data_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut manifest = String::new();
        manifest.push_str("CLAYER v1\n");
        manifest.push_str(&format!("slice_index\t{}\n", self.slice_index));
        manifest.push_str(&format!("n\t{}\n", self.concept_count()));
        manifest.push_str(&format!("h\t{}\n", self.hidden_dim()));
        manifest.push_str(&format!("pinv_tolerance\t{:e}\n", self.pinv_tolerance));
        manifest.push_str(&format!("source\t{}\n", self.concepts.source()));
        manifest.push_str("dtype\tf64le\n");
        manifest.push_str(&format!("data\t{data_name}\n"));
        if let Some(run) = run_manifest {
            manifest.push_str(&format!("run_manifest\t{run}\n"));
        }
        for c in self.concepts.concepts() {
            manifest.push_str(&format!("concept\t{}\t{}\n", c.id(), c.tau()));
        }
        std::fs::write(path, manifest).map_err(|e| Error::io(path, e))?;

        let mut bytes = Vec::with_capacity(2 * 8 * self.projection.len());
        for m in [&self.projection, &self.pseudo_inverse] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&data_path, e))?;
        Ok(data_path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "CLAYER v1")) => {}
            _ => return Err(Error::parse(origin, 1, "expected 'CLAYER v1' header")),
        }
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let key = parts.next().unwrap_or("");
            let Some(value) = parts.next() else {
                return Err(Error::parse(origin, lineno + 1, "expected key<TAB>value"));
            };
            if key == "concept" {
                let tau = parts.next().unwrap_or(value);
                entries.push((value.to_owned(), tau.to_owned()));
            } else {
                fields.insert(key, value);
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::parse(origin.as_str(), 0, format!("missing field '{key}'")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::parse(origin.as_str(), 0, format!("invalid '{key}'")))
        };
        let slice_index = num("slice_index")?;
        let n = num("n")?;
        let h = num("h")?;
        let pinv_tolerance: f64 = get("pinv_tolerance")?
            .parse()
            .map_err(|_| Error::parse(origin.as_str(), 0, "invalid 'pinv_tolerance'"))?;
        let source: ConceptSource = get("source")?.parse()?;
        if get("dtype")? != "f64le" {
            return Err(Error::parse(origin, 0, "unsupported dtype"));
        }
        if entries.len() != n {
            return Err(Error::parse(
                origin,
                0,
                format!(
                    "manifest declares n={n} but lists {} concepts",
                    entries.len()
                ),
            ));
        }
        let data_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(get("data")?);
        let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != 2 * n * h * 8 {
            return Err(Error::parse(
                data_path.display().to_string(),
                0,
                format!("expected {} bytes, found {}", 2 * n * h * 8, bytes.len()),
            ));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let projection = DMatrix::from_row_iterator(n, h, values.by_ref().take(n * h));
        let pseudo_inverse = DMatrix::from_row_iterator(h, n, values.take(n * h));

        let concepts = entries
            .iter()
            .enumerate()
            .map(|(i, (id, tau))| {
                let row = projection.row(i).transpose();
                if (row.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::DegenerateConcept(id.clone()));
                }
                Ok(Concept::from_unit_parts(id, tau, row))
            })
            .collect::<Result<Vec<_>>>()?;
        let concepts = ConceptSet::new(concepts, source)?;
        let condition_number =
            crate::linalg::pseudo_inverse(&projection, pinv_tolerance)?.condition_number();
        Ok(Self {
            concepts,
            projection,
            pseudo_inverse,
            slice_index,
            pinv_tolerance,
            condition_number,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".bin");
    PathBuf::from(name)
}

pub(crate) fn apply_factors(cv: &ConceptualVector, factors: &[f64]) -> ConceptualVector {
    let mut values = cv.values.clone();
    for (v, f) in values.iter_mut().zip(factors) {
        *v *= f;
    }
    ConceptualVector {
        values,
        norm_of_source: cv.norm_of_source,
    }
}
