//! Bag-of-nodes embedding: two dimensions per executable name, one for the
//! instance count and one for the summed degree of those instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::graph::SystemGraph;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("empty corpus: no executable names observed")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Count,
    Degree,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Count => "COUNT",
            Metric::Degree => "DEGREE",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "COUNT" => Some(Metric::Count),
            "DEGREE" => Some(Metric::Degree),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One embedding dimension: a (node type, metric) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureId {
    pub exe: String,
    pub metric: Metric,
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.exe, self.metric)
    }
}

/// Ordered feature list covering every exe of a training corpus,
/// lexicographic by exe with COUNT before DEGREE. The fixed order makes
/// model files reproducible byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRegistry {
    features: Vec<FeatureId>,
}

impl FeatureRegistry {
    pub fn from_exes<I: IntoIterator<Item = String>>(exes: I) -> Result<Self, EmbedError> {
        let set: BTreeSet<String> = exes.into_iter().collect();
        if set.is_empty() {
            return Err(EmbedError::EmptyCorpus);
        }
        let mut features = Vec::with_capacity(set.len() * 2);
        for exe in set {
            features.push(FeatureId {
                exe: exe.clone(),
                metric: Metric::Count,
            });
            features.push(FeatureId {
                exe,
                metric: Metric::Degree,
            });
        }
        Ok(FeatureRegistry { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn contains_exe(&self, exe: &str) -> bool {
        self.features
            .binary_search_by(|f| (f.exe.as_str(), f.metric).cmp(&(exe, Metric::Count)))
            .is_ok()
    }

    pub fn index_of(&self, exe: &str, metric: Metric) -> Option<usize> {
        self.features
            .binary_search_by(|f| (f.exe.as_str(), f.metric).cmp(&(exe, metric)))
            .ok()
    }
}

/// Bag-of-nodes vector for one graph, aligned with a registry, plus the
/// node types seen in the graph but absent from the registry. Unknown
/// types are surfaced rather than dropped: an executable never seen in
/// training is itself anomaly evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    pub values: Vec<u64>,
    pub unknown_exes: BTreeSet<String>,
}

impl Embedding {
    pub fn value(&self, registry: &FeatureRegistry, exe: &str, metric: Metric) -> Option<u64> {
        registry.index_of(exe, metric).map(|i| self.values[i])
    }
}

/// Registry from the union of node types across a graph corpus.
pub fn build_registry(graphs: &[SystemGraph]) -> Result<FeatureRegistry, EmbedError> {
    let exes = graphs
        .iter()
        .flat_map(|g| g.nodes().map(|(_, exe)| exe.to_string()));
    FeatureRegistry::from_exes(exes)
}

/// Per-exe (instance count, summed degree) tallies of a graph.
pub fn tally_graph(graph: &SystemGraph) -> BTreeMap<String, (u64, u64)> {
    let mut tally: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (key, exe) in graph.nodes() {
        let entry = tally.entry(exe.to_string()).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += graph.node_degree(&key.clone()).expect("node key from graph");
    }
    tally
}

pub fn embed(graph: &SystemGraph, registry: &FeatureRegistry) -> Embedding {
    let tally = tally_graph(graph);
    let mut values = vec![0u64; registry.len()];
    let mut unknown_exes = BTreeSet::new();
    for (exe, (count, degree)) in tally {
        match registry.index_of(&exe, Metric::Count) {
            Some(i) => {
                values[i] = count;
                // DEGREE immediately follows COUNT for the same exe
                values[i + 1] = degree;
            }
            None => {
                unknown_exes.insert(exe);
            }
        }
    }
    Embedding {
        values,
        unknown_exes,
    }
}
