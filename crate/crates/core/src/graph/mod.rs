//! Per-task consensus graphs.
//!
//! Nodes are merge classes of similar canonical actions; edges are observed
//! adjacent transitions carrying outcome-conditioned counts. See [`build`] for
//! construction and [`export`] for the JSON and DOT formats.

pub mod build;
pub mod export;
pub mod union_find;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::CanonicalAction;
use crate::model::TrajKey;

pub use build::{build, BuildError, BuildOptions, EdgeCounting, DEFAULT_THETA};

/// Dense node identifier. Ids are assigned by sorting node representatives,
/// so they depend only on graph content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One occurrence of an action: trajectory plus step index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Member {
    pub traj: TrajKey,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Member with the lexicographically least canonical string.
    pub representative: CanonicalAction,
    /// Sorted by trajectory key, then step.
    pub members: Vec<Member>,
    pub visit_count: usize,
    pub success_visit_count: usize,
    /// Trajectories whose last action lands here.
    pub end_success_count: usize,
    pub end_fail_count: usize,
    pub step_histogram: BTreeMap<usize, usize>,
    pub value: Option<f64>,
    pub importance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    Trap,
    Critical,
    Bottleneck,
    Normal,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [
        EdgeClass::Trap,
        EdgeClass::Critical,
        EdgeClass::Bottleneck,
        EdgeClass::Normal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeClass::Trap => "trap",
            EdgeClass::Critical => "critical",
            EdgeClass::Bottleneck => "bottleneck",
            EdgeClass::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub count: usize,
    pub success_count: usize,
    pub fail_count: usize,
    /// `success_count / count`.
    pub success_ratio: f64,
    /// `count / Σ count` over the graph.
    pub weight: f64,
    pub class: Option<EdgeClass>,
}

/// The node sequence one trajectory traverses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajPath {
    pub success: bool,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGraph {
    pub task_id: String,
    pub theta: f64,
    /// Indexed by `NodeId`.
    pub nodes: Vec<Node>,
    pub edges: BTreeMap<(NodeId, NodeId), Edge>,
    /// The action-to-node assignment, one path per trajectory.
    pub paths: BTreeMap<TrajKey, TrajPath>,
}

impl ConsensusGraph {
    pub fn empty(task_id: impl Into<String>, theta: f64) -> Self {
        ConsensusGraph {
            task_id: task_id.into(),
            theta,
            nodes: Vec::new(),
            edges: BTreeMap::new(),
            paths: BTreeMap::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn trajectory_count(&self) -> usize {
        self.paths.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_edge_count(&self) -> usize {
        self.edges.values().map(|e| e.count).sum()
    }

    /// Node assigned to step `step` of trajectory `key`.
    pub fn assignment(&self, key: &TrajKey, step: usize) -> Option<NodeId> {
        self.paths.get(key).and_then(|p| p.nodes.get(step).copied())
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges
            .range((id, NodeId(0))..=(id, NodeId(u32::MAX)))
            .map(|(_, e)| e)
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.to == id)
    }

    /// Recomputes every node and edge statistic from `paths`. Existing
    /// analysis results are cleared.
    pub fn finalize_stats(&mut self, counting: EdgeCounting) {
        build::finalize_stats(self, counting);
    }

    /// Returns a description of the first broken invariant, if any.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(format!("node at {i} has id {}", node.id));
            }
            if node.success_visit_count > node.visit_count {
                return Err(format!("{}: success visits exceed visits", node.id));
            }
            let hist: usize = node.step_histogram.values().sum();
            if hist != node.visit_count {
                return Err(format!(
                    "{}: histogram sums to {hist}, visits {}",
                    node.id, node.visit_count
                ));
            }
        }
        for path in self.paths.values() {
            for &id in &path.nodes {
                if id.index() >= self.nodes.len() {
                    return Err(format!("assignment to missing node {id}"));
                }
            }
            for w in path.nodes.windows(2) {
                if !self.edges.contains_key(&(w[0], w[1])) {
                    return Err(format!("missing edge {} -> {}", w[0], w[1]));
                }
            }
        }
        let total = self.total_edge_count() as f64;
        let mut weight_sum = 0.0;
        for e in self.edges.values() {
            if e.count != e.success_count + e.fail_count {
                return Err(format!("{} -> {}: count mismatch", e.from, e.to));
            }
            if (e.success_ratio - e.success_count as f64 / e.count as f64).abs() > 1e-12 {
                return Err(format!("{} -> {}: bad success ratio", e.from, e.to));
            }
            if (e.weight - e.count as f64 / total).abs() > 1e-12 {
                return Err(format!("{} -> {}: bad weight", e.from, e.to));
            }
            weight_sum += e.weight;
        }
        if !self.edges.is_empty() && (weight_sum - 1.0).abs() > 1e-9 {
            return Err(format!("weights sum to {weight_sum}"));
        }
        Ok(())
    }
}
