//! JSON and DOT renderings of a consensus graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ConsensusGraph, Edge, EdgeClass, Member, Node, NodeId, TrajPath};
use crate::grammar::{CanonicalAction, GrammarError};
use crate::model::TrajKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndsDoc {
    pub success: usize,
    pub fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: NodeId,
    pub action: String,
    pub visits: usize,
    pub success_visits: usize,
    pub ends: EndsDoc,
    pub histogram: BTreeMap<usize, usize>,
    pub value: Option<f64>,
    pub importance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: NodeId,
    pub to: NodeId,
    pub count: usize,
    pub success: usize,
    pub fail: usize,
    pub s: f64,
    pub w: f64,
    pub class: Option<EdgeClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDoc {
    pub agent_id: String,
    pub run_index: u32,
    pub success: bool,
    pub path: Vec<NodeId>,
}

/// On-disk graph format. `trajectories` carries the assignment so graphs can
/// be analyzed without the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub task_id: String,
    pub theta: f64,
    pub trajectory_count: usize,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    pub trajectories: Vec<PathDoc>,
}

#[derive(Debug, thiserror::Error)]
pub enum GraphDocError {
    #[error("node {node}: {source}")]
    Action {
        node: NodeId,
        #[source]
        source: GrammarError,
    },
    #[error("inconsistent graph document: {0}")]
    Inconsistent(String),
}

impl GraphDocError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphDocError::Action { .. } => "NOT_CANONICAL",
            GraphDocError::Inconsistent(_) => "INCONSISTENT_GRAPH",
        }
    }
}

impl GraphDoc {
    pub fn from_graph(g: &ConsensusGraph) -> Self {
        GraphDoc {
            task_id: g.task_id.clone(),
            theta: g.theta,
            trajectory_count: g.trajectory_count(),
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id,
                    action: n.representative.canonical_string(),
                    visits: n.visit_count,
                    success_visits: n.success_visit_count,
                    ends: EndsDoc {
                        success: n.end_success_count,
                        fail: n.end_fail_count,
                    },
                    histogram: n.step_histogram.clone(),
                    value: n.value,
                    importance: n.importance,
                })
                .collect(),
            edges: g
                .edges
                .values()
                .map(|e| EdgeDoc {
                    from: e.from,
                    to: e.to,
                    count: e.count,
                    success: e.success_count,
                    fail: e.fail_count,
                    s: e.success_ratio,
                    w: e.weight,
                    class: e.class,
                })
                .collect(),
            trajectories: g
                .paths
                .iter()
                .map(|(k, p)| PathDoc {
                    agent_id: k.agent_id.clone(),
                    run_index: k.run_index,
                    success: p.success,
                    path: p.nodes.clone(),
                })
                .collect(),
        }
    }

    pub fn into_graph(self) -> Result<ConsensusGraph, GraphDocError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.into_iter().enumerate() {
            if n.id.index() != i {
                return Err(GraphDocError::Inconsistent(format!(
                    "node {} listed at position {i}",
                    n.id
                )));
            }
            let representative = CanonicalAction::parse(&n.action)
                .map_err(|source| GraphDocError::Action { node: n.id, source })?;
            nodes.push(Node {
                id: n.id,
                representative,
                members: Vec::new(),
                visit_count: n.visits,
                success_visit_count: n.success_visits,
                end_success_count: n.ends.success,
                end_fail_count: n.ends.fail,
                step_histogram: n.histogram,
                value: n.value,
                importance: n.importance,
            });
        }
        let mut paths = BTreeMap::new();
        for p in self.trajectories {
            let key = TrajKey {
                agent_id: p.agent_id,
                run_index: p.run_index,
            };
            for (step, id) in p.path.iter().enumerate() {
                let node = nodes.get_mut(id.index()).ok_or_else(|| {
                    GraphDocError::Inconsistent(format!("{key} visits missing node {id}"))
                })?;
                node.members.push(Member {
                    traj: key.clone(),
                    step,
                });
            }
            let path = TrajPath {
                success: p.success,
                nodes: p.path,
            };
            if paths.insert(key.clone(), path).is_some() {
                return Err(GraphDocError::Inconsistent(format!(
                    "trajectory {key} listed twice"
                )));
            }
        }
        if paths.len() != self.trajectory_count {
            return Err(GraphDocError::Inconsistent(format!(
                "trajectory_count {} but {} paths",
                self.trajectory_count,
                paths.len()
            )));
        }
        for node in &mut nodes {
            node.members.sort();
        }
        let edges = self
            .edges
            .into_iter()
            .map(|e| {
                let edge = Edge {
                    from: e.from,
                    to: e.to,
                    count: e.count,
                    success_count: e.success,
                    fail_count: e.fail,
                    success_ratio: e.s,
                    weight: e.w,
                    class: e.class,
                };
                ((e.from, e.to), edge)
            })
            .collect();
        let g = ConsensusGraph {
            task_id: self.task_id,
            theta: self.theta,
            nodes,
            edges,
            paths,
        };
        g.check_invariants().map_err(GraphDocError::Inconsistent)?;
        Ok(g)
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json(g: &ConsensusGraph) -> String {
    let mut text =
        serde_json::to_string_pretty(&GraphDoc::from_graph(g)).expect("graph documents serialize");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<ConsensusGraph, Box<dyn std::error::Error + Send + Sync>> {
    let doc: GraphDoc = serde_json::from_str(text)?;
    Ok(doc.into_graph()?)
}

fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

pub fn class_color(class: Option<EdgeClass>) -> &'static str {
    match class {
        Some(EdgeClass::Trap) => "red",
        Some(EdgeClass::Critical) => "green",
        Some(EdgeClass::Bottleneck) => "orange",
        Some(EdgeClass::Normal) => "gray",
        None => "black",
    }
}

/// Graphviz rendering. Pen width grows linearly with edge weight.
pub fn to_dot(g: &ConsensusGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(&g.task_id));
    out.push_str("  rankdir=LR;\n  node [shape=box];\n");
    for n in &g.nodes {
        let _ = writeln!(
            out,
            "  {} [label=\"{}\"];",
            n.id,
            dot_escape(&n.representative.canonical_string())
        );
    }
    for e in g.edges.values() {
        let _ = writeln!(
            out,
            "  {} -> {} [color={}, penwidth={:.3}, label=\"{}\"];",
            e.from,
            e.to,
            class_color(e.class),
            (20.0 * e.weight).max(0.2),
            e.count
        );
    }
    out.push_str("}\n");
    out
}
