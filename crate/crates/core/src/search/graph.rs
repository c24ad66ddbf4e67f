// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Directed "type-of" graph: an edge `(c, c')` means `c'` is a type of `c`.
///
/// Node order is first appearance; successor lists keep edge order, which
/// fixes the order in which eligible successors join the result set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OntologyGraph {
    ids: Vec<String>,
    taus: Vec<String>,
    index: HashMap<String, usize>,
    successors: Vec<Vec<usize>>,
    has_parent: Vec<bool>,
}

impl OntologyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut g = Self::new();
        for (parent, child) in edges {
            g.add_edge(parent, child)?;
        }
        Ok(g)
    }

    /// Adds a node whose textual representation defaults to its id.
    pub fn add_node(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.taus.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        self.successors.push(Vec::new());
        self.has_parent.push(false);
        i
    }

    /// Adds `parent -> child`; repeated edges are ignored.
    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        if parent == child {
            return Err(Error::InvalidConfig(format!("self-loop on '{parent}'")));
        }
        let p = self.add_node(parent);
        let c = self.add_node(child);
        if !self.successors[p].contains(&c) {
            self.successors[p].push(c);
        }
        self.has_parent[c] = true;
        Ok(())
    }

    pub fn set_tau(&mut self, id: &str, tau: &str) -> Result<()> {
        let i = self.require(id)?;
        self.taus[i] = tau.to_owned();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub(crate) fn require(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(id.to_owned()))
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn tau(&self, node: usize) -> &str {
        &self.taus[node]
    }

    pub fn tau_of(&self, id: &str) -> Result<&str> {
        Ok(self.tau(self.require(id)?))
    }

    pub(crate) fn successor_nodes(&self, node: usize) -> &[usize] {
        &self.successors[node]
    }

    /// `Succ(c)` in edge order.
    pub fn successors(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.require(id)?;
        Ok(self.successors[i]
            .iter()
            .map(|&s| self.ids[s].as_str())
            .collect())
    }

    /// Nodes without incoming edges, in node order.
    pub fn roots(&self) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.has_parent)
            .filter(|(_, &p)| !p)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Every node reachable from `start` (including `start` itself).
    pub fn reachable_from(&self, start: &[&str]) -> Result<HashSet<String>> {
        let mut seen = HashSet::new();
        let mut stack = start
            .iter()
            .map(|id| self.require(id))
            .collect::<Result<Vec<_>>>()?;
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.successors[n].iter().copied());
            }
        }
        Ok(seen.into_iter().map(|n| self.ids[n].clone()).collect())
    }

    /// Parses `parent<TAB>child` lines; blank lines and `#` comments are skipped.
    pub fn parse_edges(text: &str, origin: &str) -> Result<Self> {
        let mut g = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((parent, child)) = line.split_once('\t') else {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    "expected parent<TAB>child",
                ));
            };
            let (parent, child) = (parent.trim(), child.trim());
            if parent.is_empty() || child.is_empty() || child.contains('\t') {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    "expected parent<TAB>child",
                ));
            }
            g.add_edge(parent, child)
                .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edges(&text, &path.display().to_string())
    }

    /// Applies an `id<TAB>tau` concepts file; ids must already be in the graph.
    pub fn apply_taus(&mut self, text: &str, origin: &str) -> Result<()> {
        for (id, tau) in crate::concept::parse_concepts_file(text, origin)? {
            self.set_tau(&id, &tau)?;
        }
        Ok(())
    }
}
