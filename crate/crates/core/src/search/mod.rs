// SPDX-License-Identifier: MIT OR Apache-2.0

//! Variance-guided best-first search for a concept set in an ontology.
//!
//! The result set grows in rounds. Each round takes the next threshold from
//! a linear scheduler, seeds a max-priority queue with every concept chosen
//! so far (keyed by its average variance gain over eligible successors),
//! and then repeatedly pops the best concept, adds its eligible successors
//! to the result and queues those successors in turn. When a round leaves
//! the result short of the target the threshold drops and a new round
//! starts. Concepts added beyond the target are removed in reverse
//! insertion order at the end.
//!
//! Concepts with no eligible successors are not queued. Queue ties are
//! broken by the lexicographically smaller id. A queued successor list is
//! re-filtered against the result set when popped, because another concept
//! may have added a shared successor in the meantime.

pub mod graph;
pub mod variance;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::concept::{Concept, ConceptSet, ConceptSource};
use crate::encoder::Prefix;
use crate::error::{Error, Result};

pub use graph::OntologyGraph;
pub use variance::{ConceptEmbedder, ContextCorpus, GainScorer, PrefixEmbedder};

/// Linear threshold schedule `thr_k = initial - k * step` with no floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdScheduler {
    initial: f64,
    step: f64,
    round: usize,
}

impl ThresholdScheduler {
    pub fn linear(initial: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && initial.is_finite()) {
            return Err(Error::InvalidConfig(
                "threshold step must be positive and finite".into(),
            ));
        }
        Ok(Self {
            initial,
            step,
            round: 0,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn next_threshold(&mut self) -> f64 {
        let thr = self.initial - self.round as f64 * self.step;
        self.round += 1;
        thr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expansion {
    pub round: usize,
    pub concept: String,
    pub avg_gain: f64,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Selected concept ids in insertion order, trimmed to the target size.
    pub concepts: Vec<String>,
    pub target_size: usize,
    /// Threshold used in each round.
    pub thresholds: Vec<f64>,
    pub expansions: Vec<Expansion>,
}

impl SearchOutcome {
    /// One id per line.
    pub fn concept_list(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            let _ = writeln!(out, "{c}");
        }
        out
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Embeds the selected concepts through `prefix` using the graph's texts.
    pub fn to_concept_set<P: Prefix + ?Sized>(
        &self,
        prefix: &P,
        graph: &OntologyGraph,
    ) -> Result<ConceptSet> {
        let concepts = self
            .concepts
            .iter()
            .map(|id| Concept::embed(prefix, id, graph.tau_of(id)?))
            .collect::<Result<Vec<_>>>()?;
        ConceptSet::new(concepts, ConceptSource::OntologySearch)
    }
}

#[derive(Debug)]
struct OpenEntry {
    score: f64,
    id: String,
    node: usize,
    successors: Vec<usize>,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct SearchState {
    selected: Vec<usize>,
    in_selected: HashSet<usize>,
    open: BinaryHeap<OpenEntry>,
    in_open: HashSet<usize>,
    close: HashSet<usize>,
}

impl SearchState {
    fn add(&mut self, node: usize) -> bool {
        if self.in_selected.insert(node) {
            self.selected.push(node);
            true
        } else {
            false
        }
    }
}

/// Runs the search from `initial` until `target_size` concepts are selected.
pub fn conceptual_search(
    scorer: &GainScorer<'_>,
    initial: &[&str],
    scheduler: &mut ThresholdScheduler,
    target_size: usize,
) -> Result<SearchOutcome> {
    let graph = scorer.graph();
    if initial.is_empty() {
        return Err(Error::InvalidConfig("initial concept set is empty".into()));
    }
    if target_size < initial.len() {
        return Err(Error::InvalidConfig(format!(
            "target size {target_size} is smaller than the initial set ({})",
            initial.len()
        )));
    }
    let mut state = SearchState {
        selected: Vec::new(),
        in_selected: HashSet::new(),
        open: BinaryHeap::new(),
        in_open: HashSet::new(),
        close: HashSet::new(),
    };
    for id in initial {
        let node = graph.require(id)?;
        if !state.add(node) {
            return Err(Error::DuplicateConcept((*id).to_owned()));
        }
    }

    let mut thresholds = Vec::new();
    let mut expansions = Vec::new();
    let mut min_gain = f64::INFINITY;

    while state.selected.len() < target_size {
        let thr = scheduler.next_threshold();
        let round = thresholds.len();
        thresholds.push(thr);
        state.open.clear();
        state.in_open.clear();
        state.close.clear();
        let size_before = state.selected.len();
        let mut saw_candidate = false;

        // Score every concept against the seeding-time result set.
        let mut seeds = Vec::new();
        for &node in &state.selected {
            let gains = scorer.candidate_gains(node, &state.in_selected)?;
            saw_candidate |= !gains.is_empty();
            min_gain = gains.iter().map(|&(_, g)| g).fold(min_gain, f64::min);
            seeds.push((node, gains));
        }
        for (node, gains) in seeds {
            push_eligible(&mut state, graph, node, gains, thr);
        }

        while let Some(entry) = state.open.pop() {
            state.in_open.remove(&entry.node);
            let added: Vec<usize> = entry
                .successors
                .iter()
                .copied()
                .filter(|&s| state.add(s))
                .collect();
            state.close.insert(entry.node);
            expansions.push(Expansion {
                round,
                concept: entry.id.clone(),
                avg_gain: entry.score,
                added: added.iter().map(|&s| graph.id(s).to_owned()).collect(),
            });
            for s in added {
                if state.close.contains(&s) || state.in_open.contains(&s) {
                    continue;
                }
                let gains = scorer.candidate_gains(s, &state.in_selected)?;
                saw_candidate |= !gains.is_empty();
                min_gain = gains.iter().map(|&(_, g)| g).fold(min_gain, f64::min);
                push_eligible(&mut state, graph, s, gains, thr);
            }
        }

        if state.selected.len() == size_before
            && (!saw_candidate || thr < min_gain - scheduler.step())
        {
            return Err(Error::Exhaustion {
                target: target_size,
                reached: state.selected.len(),
            });
        }
    }

    state.selected.truncate(target_size);
    Ok(SearchOutcome {
        concepts: state
            .selected
            .iter()
            .map(|&n| graph.id(n).to_owned())
            .collect(),
        target_size,
        thresholds,
        expansions,
    })
}

fn push_eligible(
    state: &mut SearchState,
    graph: &OntologyGraph,
    node: usize,
    gains: Vec<(usize, f64)>,
    thr: f64,
) {
    let eligible: Vec<(usize, f64)> = gains.into_iter().filter(|&(_, g)| g > thr).collect();
    let gains: Vec<f64> = eligible.iter().map(|&(_, g)| g).collect();
    if let Some(score) = variance::mean_gain(&gains) {
        state.in_open.insert(node);
        state.open.push(OpenEntry {
            score,
            id: graph.id(node).to_owned(),
            node,
            successors: eligible.into_iter().map(|(s, _)| s).collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use nalgebra::DVector;

    use super::*;

    /// Two texts at ±v: the variance along a unit direction e is (e·v)^2.
    fn corpus(v: &[f64]) -> ContextCorpus {
        let l = DVector::from_row_slice(v);
        ContextCorpus::from_latents(vec!["a".into(), "b".into()], vec![l.clone(), -l]).unwrap()
    }

    fn axis(h: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(h);
        v[i] = 1.0;
        v
    }

    #[test]
    fn scheduler_strictly_decreases() {
        let mut s = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let values: Vec<f64> = (0..5).map(|_| s.next_threshold()).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]));
        assert!(values[4] < 0.0);
        assert!(ThresholdScheduler::linear(0.2, 0.0).is_err());
    }

    #[test]
    fn target_equal_to_initial_returns_initial() {
        let graph = OntologyGraph::from_edges([("r", "a")]).unwrap();
        let emb: HashMap<String, DVector<f64>> = [("r", axis(2, 0)), ("a", axis(2, 1))]
            .map(|(k, v)| (k.to_owned(), v))
            .into();
        let c = corpus(&[1.0, 0.5]);
        let scorer = GainScorer::new(&c, &graph, &emb);
        let mut sched = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let out = conceptual_search(&scorer, &["r"], &mut sched, 1).unwrap();
        assert_eq!(out.concepts, ["r"]);
        assert!(out.expansions.is_empty());
        assert!(out.thresholds.is_empty());
    }

    #[test]
    fn expands_best_first_and_trims() {
        // variances: r 0.01, a 0.25, b 0.64, a1 0.81, b1 0.0
        let h = 5;
        let v = [0.1, 0.5, 0.8, 0.9, 0.0];
        let graph =
            OntologyGraph::from_edges([("r", "a"), ("r", "b"), ("a", "a1"), ("b", "b1")]).unwrap();
        let emb: HashMap<String, DVector<f64>> = ["r", "a", "b", "a1", "b1"]
            .iter()
            .enumerate()
            .map(|(i, k)| ((*k).to_owned(), axis(h, i)))
            .collect();
        let c = corpus(&v);
        let scorer = GainScorer::new(&c, &graph, &emb);
        let mut sched = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let out = conceptual_search(&scorer, &["r"], &mut sched, 4).unwrap();
        // round 0 (thr 0.2): r adds a (0.24) and b (0.63); a then adds a1 (0.56); b1 has -0.64
        assert_eq!(out.concepts, ["r", "a", "b", "a1"]);
        assert_eq!(out.thresholds, [0.2]);

        let mut sched = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let out = conceptual_search(&scorer, &["r"], &mut sched, 2).unwrap();
        // a1 and b were added after a; trimming drops the latest ones
        assert_eq!(out.concepts, ["r", "a"]);
    }

    #[test]
    fn negative_gains_need_negative_thresholds() {
        // every child has less variance than its parent
        let graph = OntologyGraph::from_edges([("r", "a"), ("r", "b")]).unwrap();
        let emb: HashMap<String, DVector<f64>> =
            [("r", axis(3, 0)), ("a", axis(3, 1)), ("b", axis(3, 2))]
                .map(|(k, v)| (k.to_owned(), v))
                .into();
        let c = corpus(&[0.9, 0.5, 0.3]);
        let scorer = GainScorer::new(&c, &graph, &emb);
        let mut sched = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let out = conceptual_search(&scorer, &["r"], &mut sched, 2).unwrap();
        // VG(a) = 0.25 - 0.81 = -0.56, VG(b) = 0.09 - 0.81 = -0.72
        // the first threshold below -0.56 is 0.2 - 8 * 0.1 = -0.6
        assert_eq!(out.thresholds.len(), 9);
        assert!(*out.thresholds.last().unwrap() < -0.56);
        assert_eq!(out.concepts, ["r", "a"]);
    }

    #[test]
    fn exhaustion_when_graph_too_small() {
        let graph = OntologyGraph::from_edges([("r", "a")]).unwrap();
        let emb: HashMap<String, DVector<f64>> = [("r", axis(2, 0)), ("a", axis(2, 1))]
            .map(|(k, v)| (k.to_owned(), v))
            .into();
        let c = corpus(&[0.2, 0.9]);
        let scorer = GainScorer::new(&c, &graph, &emb);
        let mut sched = ThresholdScheduler::linear(0.2, 0.1).unwrap();
        let err = conceptual_search(&scorer, &["r"], &mut sched, 3).unwrap_err();
        assert!(matches!(
            err,
            Error::Exhaustion {
                target: 3,
                reached: 2
            }
        ));
    }

    #[test]
    fn shared_successor_added_once() {
        let graph = OntologyGraph::from_edges([("p", "s"), ("q", "s"), ("p", "t")]).unwrap();
        let emb: HashMap<String, DVector<f64>> = [
            ("p", axis(4, 0)),
            ("q", axis(4, 1)),
            ("s", axis(4, 2)),
            ("t", axis(4, 3)),
        ]
        .map(|(k, v)| (k.to_owned(), v))
        .into();
        let c = corpus(&[0.1, 0.1, 0.9, 0.8]);
        let scorer = GainScorer::new(&c, &graph, &emb);
        let mut sched = ThresholdScheduler::linear(0.0, 0.1).unwrap();
        let out = conceptual_search(&scorer, &["p", "q"], &mut sched, 4).unwrap();
        let mut sorted = out.concepts.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }
}
