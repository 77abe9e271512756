//! Consensus-graph analysis of agent trajectories.
//!
//! Trajectories are canonicalized into a small action language, judged,
//! merged into per-task consensus graphs, and scored with reward propagation,
//! edge classification and dataset-level metrics.

pub mod analysis;
pub mod annotation;
pub mod config;
pub mod dataset;
pub mod grammar;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod similarity;
pub mod synth;

pub use grammar::{ActionKind, CanonicalAction, GrammarError, ParamKey};
pub use graph::{ConsensusGraph, Edge, EdgeClass, Node, NodeId};
pub use model::{Dataset, Outcome, TaskSpec, TrajKey, Trajectory};
