// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concepts and ordered concept sets.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::encoder::{Latent, Prefix};
use crate::error::{Error, Result};

/// Unit-norm tolerance for concept embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Normalized prefix representation of `tau`.
pub fn embed_concept<P: Prefix + ?Sized>(prefix: &P, tau: &str) -> Result<Latent> {
    normalize(prefix.encode_prefix(tau)).ok_or_else(|| Error::DegenerateConcept(tau.to_owned()))
}

/// `v / ‖v‖`, or `None` for a zero (or non-finite) norm.
pub fn normalize(v: DVector<f64>) -> Option<DVector<f64>> {
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        Some(v / norm)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    id: String,
    tau: String,
    embedding: Latent,
}

impl Concept {
    /// Embeds `tau` through `prefix`.
    pub fn embed<P: Prefix + ?Sized>(prefix: &P, id: &str, tau: &str) -> Result<Self> {
        let embedding = normalize(prefix.encode_prefix(tau))
            .ok_or_else(|| Error::DegenerateConcept(id.to_owned()))?;
        Ok(Self {
            id: id.to_owned(),
            tau: tau.to_owned(),
            embedding,
        })
    }

    /// Builds a concept from an explicit embedding, which is normalized.
    pub fn from_embedding(id: &str, tau: &str, embedding: DVector<f64>) -> Result<Self> {
        let embedding =
            normalize(embedding).ok_or_else(|| Error::DegenerateConcept(id.to_owned()))?;
        Ok(Self {
            id: id.to_owned(),
            tau: tau.to_owned(),
            embedding,
        })
    }

    /// Trusts that `embedding` is already unit norm (used when loading artifacts).
    pub(crate) fn from_unit_parts(id: &str, tau: &str, embedding: DVector<f64>) -> Self {
        Self {
            id: id.to_owned(),
            tau: tau.to_owned(),
            embedding,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tau(&self) -> &str {
        &self.tau
    }

    /// The unit vector `ĉ`.
    pub fn embedding(&self) -> &Latent {
        &self.embedding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConceptSource {
    #[default]
    Manual,
    OntologySearch,
}

impl fmt::Display for ConceptSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConceptSource::Manual => "manual",
            ConceptSource::OntologySearch => "ontology-search",
        })
    }
}

impl FromStr for ConceptSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(ConceptSource::Manual),
            "ontology-search" => Ok(ConceptSource::OntologySearch),
            other => Err(Error::InvalidConfig(format!(
                "unknown concept source '{other}'"
            ))),
        }
    }
}

/// Ordered concepts; position `i` is coordinate `i` of the conceptual space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSet {
    concepts: Vec<Concept>,
    source: ConceptSource,
}

impl ConceptSet {
    pub fn new(concepts: Vec<Concept>, source: ConceptSource) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &concepts {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateConcept(c.id.clone()));
            }
        }
        if let Some(first) = concepts.first() {
            let h = first.embedding.len();
            if let Some(bad) = concepts.iter().find(|c| c.embedding.len() != h) {
                return Err(Error::Shape {
                    expected: h,
                    found: bad.embedding.len(),
                });
            }
        }
        Ok(Self { concepts, source })
    }

    /// Embeds `(id, tau)` pairs through `prefix`, keeping their order.
    pub fn embed_all<'a, P: Prefix + ?Sized>(
        prefix: &P,
        entries: impl IntoIterator<Item = (&'a str, &'a str)>,
        source: ConceptSource,
    ) -> Result<Self> {
        let concepts = entries
            .into_iter()
            .map(|(id, tau)| Concept::embed(prefix, id, tau))
            .collect::<Result<Vec<_>>>()?;
        Self::new(concepts, source)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn source(&self) -> ConceptSource {
        self.source
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn get(&self, index: usize) -> Option<&Concept> {
        self.concepts.get(index)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(|c| c.id.as_str())
    }
}

/// Parses a concepts file: one `id<TAB>tau` per line, or a bare `id` which
/// doubles as its own textual representation.
pub fn parse_concepts_file(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, tau) = match line.split_once('\t') {
            Some((id, tau)) => (id.trim(), tau.trim()),
            None => (line.trim(), line.trim()),
        };
        if id.is_empty() {
            return Err(Error::parse(origin, lineno + 1, "empty concept id"));
        }
        if !seen.insert(id.to_owned()) {
            return Err(Error::parse(
                origin,
                lineno + 1,
                format!("duplicate concept id '{id}'"),
            ));
        }
        out.push((id.to_owned(), tau.to_owned()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::LayeredEncoder;

    struct Fixed(DVector<f64>);

    impl Prefix for Fixed {
        fn hidden_dim(&self) -> usize {
            self.0.len()
        }
        fn encode_prefix(&self, _text: &str) -> Latent {
            self.0.clone()
        }
    }

    #[test]
    fn normalizes_three_four() {
        let c = embed_concept(&Fixed(DVector::from_vec(vec![3.0, 4.0])), "x").unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15);
        assert!((c[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn unit_vector_is_unchanged() {
        let unit = DVector::from_vec(vec![0.6, 0.8]);
        let c = embed_concept(&Fixed(unit.clone()), "x").unwrap();
        assert!((c - unit).amax() < 1e-15);
    }

    #[test]
    fn empty_tau_is_degenerate() {
        let enc = LayeredEncoder::toy(8, 3, 42).unwrap();
        let slice = enc.slice_at(2).unwrap();
        assert!(matches!(
            embed_concept(&slice, ""),
            Err(Error::DegenerateConcept(_))
        ));
        let c = embed_concept(&slice, "sports").unwrap();
        assert!((c.norm() - 1.0).abs() < UNIT_NORM_TOLERANCE);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = Concept::from_embedding("a", "a", DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let err = ConceptSet::new(vec![a.clone(), a], ConceptSource::Manual).unwrap_err();
        assert!(matches!(err, Error::DuplicateConcept(_)));
    }

    #[test]
    fn concepts_file() {
        let parsed = parse_concepts_file("sports\tsports and games\nmusic\n\n# c\n", "f").unwrap();
        assert_eq!(
            parsed,
            vec![
                ("sports".to_owned(), "sports and games".to_owned()),
                ("music".to_owned(), "music".to_owned())
            ]
        );
        assert!(parse_concepts_file("a\na\n", "f").is_err());
    }
}
