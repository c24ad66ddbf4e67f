// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus variance along a concept direction and the gains derived from it.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use nalgebra::DVector;

use crate::concept::{embed_concept, normalize};
use crate::encoder::{Latent, Prefix};
use crate::error::{Error, Result};
use crate::search::graph::OntologyGraph;

/// Texts together with their cached prefix latents.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCorpus {
    texts: Vec<String>,
    latents: Vec<Latent>,
}

impl ContextCorpus {
    pub fn encode<P: Prefix + ?Sized>(prefix: &P, texts: Vec<String>) -> Result<Self> {
        let latents = texts.iter().map(|t| prefix.encode_prefix(t)).collect();
        Self::from_latents(texts, latents)
    }

    pub fn from_latents(texts: Vec<String>, latents: Vec<Latent>) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::InvalidCorpus("corpus is empty".into()));
        }
        if texts.len() != latents.len() {
            return Err(Error::Shape {
                expected: texts.len(),
                found: latents.len(),
            });
        }
        Ok(Self { texts, latents })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn latents(&self) -> &[Latent] {
        &self.latents
    }

    /// Population variance of `ĉ · l` over the corpus.
    pub fn variance(&self, direction: &DVector<f64>) -> Result<f64> {
        if self.latents.is_empty() {
            return Err(Error::InvalidCorpus("corpus is empty".into()));
        }
        let mut projections = Vec::with_capacity(self.latents.len());
        for l in &self.latents {
            if l.len() != direction.len() {
                return Err(Error::Shape {
                    expected: l.len(),
                    found: direction.len(),
                });
            }
            projections.push(direction.dot(l));
        }
        Ok(population_variance(&projections))
    }

    /// `V(child) - V(parent)`; may be negative.
    pub fn variance_gain(&self, parent: &DVector<f64>, child: &DVector<f64>) -> Result<f64> {
        Ok(self.variance(child)? - self.variance(parent)?)
    }
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Source of normalized concept embeddings for graph nodes.
pub trait ConceptEmbedder {
    fn embed(&self, id: &str, tau: &str) -> Result<Latent>;
}

/// Any prefix embeds a concept through its textual representation.
pub struct PrefixEmbedder<'a, P: Prefix + ?Sized>(pub &'a P);

impl<P: Prefix + ?Sized> ConceptEmbedder for PrefixEmbedder<'_, P> {
    fn embed(&self, id: &str, tau: &str) -> Result<Latent> {
        embed_concept(self.0, tau).map_err(|_| Error::DegenerateConcept(id.to_owned()))
    }
}

/// Explicit per-id embeddings, normalized on lookup.
impl ConceptEmbedder for HashMap<String, DVector<f64>> {
    fn embed(&self, id: &str, _tau: &str) -> Result<Latent> {
        let v = self
            .get(id)
            .ok_or_else(|| Error::UnknownConcept(id.to_owned()))?;
        normalize(v.clone()).ok_or_else(|| Error::DegenerateConcept(id.to_owned()))
    }
}

/// Caching scorer over one corpus, graph and embedder.
pub struct GainScorer<'a> {
    corpus: &'a ContextCorpus,
    graph: &'a OntologyGraph,
    embedder: &'a dyn ConceptEmbedder,
    variances: RefCell<HashMap<usize, f64>>,
}

impl<'a> GainScorer<'a> {
    pub fn new(
        corpus: &'a ContextCorpus,
        graph: &'a OntologyGraph,
        embedder: &'a dyn ConceptEmbedder,
    ) -> Self {
        Self {
            corpus,
            graph,
            embedder,
            variances: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &OntologyGraph {
        self.graph
    }

    pub(crate) fn node_variance(&self, node: usize) -> Result<f64> {
        if let Some(&v) = self.variances.borrow().get(&node) {
            return Ok(v);
        }
        let e = self
            .embedder
            .embed(self.graph.id(node), self.graph.tau(node))?;
        let v = self.corpus.variance(&e)?;
        self.variances.borrow_mut().insert(node, v);
        Ok(v)
    }

    pub fn variance(&self, id: &str) -> Result<f64> {
        self.node_variance(self.graph.require(id)?)
    }

    pub fn variance_gain(&self, parent: &str, child: &str) -> Result<f64> {
        Ok(self.variance(child)? - self.variance(parent)?)
    }

    /// Successors of `node` outside `selected`, with their gains, in edge order.
    pub(crate) fn candidate_gains(
        &self,
        node: usize,
        selected: &HashSet<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        let parent = self.node_variance(node)?;
        self.graph
            .successor_nodes(node)
            .iter()
            .filter(|s| !selected.contains(s))
            .map(|&s| Ok((s, self.node_variance(s)? - parent)))
            .collect()
    }

    /// `{s ∈ Succ(c) | VG(c, s) > thr, s ∉ selected}` with gains, in edge order.
    pub fn eligible_successors(
        &self,
        id: &str,
        thr: f64,
        selected: &[&str],
    ) -> Result<Vec<(String, f64)>> {
        let node = self.graph.require(id)?;
        let selected: HashSet<usize> = selected
            .iter()
            .filter_map(|s| self.graph.require(s).ok())
            .collect();
        Ok(self
            .candidate_gains(node, &selected)?
            .into_iter()
            .filter(|&(_, g)| g > thr)
            .map(|(s, g)| (self.graph.id(s).to_owned(), g))
            .collect())
    }

    /// Mean gain over the eligible successors; `None` when there are none.
    pub fn avg_gain(&self, id: &str, thr: f64, selected: &[&str]) -> Result<Option<f64>> {
        Ok(mean_gain(
            &self
                .eligible_successors(id, thr, selected)?
                .into_iter()
                .map(|(_, g)| g)
                .collect::<Vec<_>>(),
        ))
    }
}

pub(crate) fn mean_gain(gains: &[f64]) -> Option<f64> {
    if gains.is_empty() {
        None
    } else {
        Some(gains.iter().sum::<f64>() / gains.len() as f64)
    }
}
