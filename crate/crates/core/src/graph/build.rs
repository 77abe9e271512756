//! Two-pass similarity merging and edge accumulation.
//!
//! Actions are laid out in `(agent_id, run_index, step)` order before any
//! comparison, so the merge classes, node ids and statistics depend only on
//! the set of trajectories and never on the order they were supplied in.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::union_find::UnionFind;
use super::{ConsensusGraph, Edge, Member, Node, NodeId, TrajPath};
use crate::model::{TrajKey, Trajectory};
use crate::similarity::similarity_at_least;

pub const DEFAULT_THETA: f64 = 0.9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeCounting {
    /// Every traversal counts, so one trajectory may add more than one.
    #[default]
    PerOccurrence,
    /// A trajectory adds at most one to each edge it crosses.
    PerTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    pub theta: f64,
    pub counting: EdgeCounting,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            theta: DEFAULT_THETA,
            counting: EdgeCounting::PerOccurrence,
        }
    }
}

impl BuildOptions {
    pub fn with_theta(theta: f64) -> Self {
        BuildOptions {
            theta,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("trajectory {found} does not belong to task {expected}")]
    MixedTasks { expected: String, found: String },
    #[error("trajectory {0} has no outcome")]
    Unjudged(String),
    #[error("theta must lie in [0, 1], got {0}")]
    InvalidTheta(f64),
    #[error("task {task_id} has two trajectories keyed {key}")]
    DuplicateRun { task_id: String, key: String },
}

impl BuildError {
    pub fn code(&self) -> &'static str {
        match self {
            BuildError::MixedTasks { .. } => "MIXED_TASKS",
            BuildError::Unjudged(_) => "UNJUDGED",
            BuildError::InvalidTheta(_) => "INVALID_THETA",
            BuildError::DuplicateRun { .. } => "DUP_RUN",
        }
    }
}

/// One action occurrence prepared for comparison.
#[derive(Debug, Clone)]
pub struct ActionItem {
    pub member: Member,
    pub canonical: String,
    chars: Vec<char>,
}

impl ActionItem {
    pub fn new(member: Member, canonical: String) -> Self {
        let chars = canonical.chars().collect();
        ActionItem {
            member,
            canonical,
            chars,
        }
    }
}

/// A union actually performed, with the similarity that justified it.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct MergeState {
    pub uf: UnionFind,
    pub witnesses: Vec<Witness>,
}

impl MergeState {
    pub fn new(n: usize) -> Self {
        MergeState {
            uf: UnionFind::new(n),
            witnesses: Vec::new(),
        }
    }

    fn join(&mut self, a: usize, b: usize, similarity: f64) {
        if self.uf.union(a, b) {
            self.witnesses.push(Witness { a, b, similarity });
        }
    }
}

/// Groups item indices by identical canonical string, first occurrence first.
fn distinct_strings(items: &[ActionItem], indices: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in indices {
        let s = items[i].canonical.as_str();
        match slot.get(s) {
            Some(&g) => groups[g].push(i),
            None => {
                slot.insert(s, groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Unions every pair in `indices` whose similarity reaches `theta`.
fn merge_pairs(
    items: &[ActionItem],
    indices: impl Iterator<Item = usize>,
    theta: f64,
    state: &mut MergeState,
) {
    let groups = distinct_strings(items, indices);
    // Identical strings have similarity 1.
    for g in &groups {
        for &i in &g[1..] {
            state.join(g[0], i, 1.0);
        }
    }
    for (x, gx) in groups.iter().enumerate() {
        for gy in &groups[x + 1..] {
            let (a, b) = (gx[0], gy[0]);
            if state.uf.same(a, b) {
                continue;
            }
            if let Some(sim) = similarity_at_least(&items[a].chars, &items[b].chars, theta) {
                state.join(a, b, sim);
            }
        }
    }
}

/// Same-step pass: only actions sharing a step index are compared.
pub fn step_merge(items: &[ActionItem], theta: f64, state: &mut MergeState) {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        buckets.entry(item.member.step).or_default().push(i);
    }
    for bucket in buckets.values() {
        merge_pairs(items, bucket.iter().copied(), theta, state);
    }
}

/// Cross-step pass over all actions; pairs already joined are skipped.
pub fn cross_step_merge(items: &[ActionItem], theta: f64, state: &mut MergeState) {
    merge_pairs(items, 0..items.len(), theta, state);
}

/// Node assignment for every item plus the nodes themselves, ids assigned in
/// order of representative string.
fn assign_nodes(
    items: &[ActionItem],
    trajs: &[&Trajectory],
    state: &mut MergeState,
) -> (Vec<NodeId>, Vec<Node>) {
    let mut classes = state.uf.classes();
    // Items are in (key, step) order, so the first minimum wins the tie-break.
    let rep_of = |class: &Vec<usize>| -> usize {
        *class
            .iter()
            .min_by(|&&a, &&b| items[a].canonical.cmp(&items[b].canonical).then(a.cmp(&b)))
            .expect("classes are non-empty")
    };
    classes.sort_by_cached_key(|c| {
        let r = rep_of(c);
        (items[r].canonical.clone(), r)
    });
    let mut assignment = vec![NodeId(0); items.len()];
    let mut nodes = Vec::with_capacity(classes.len());
    for (id, class) in classes.iter().enumerate() {
        let id = NodeId(id as u32);
        for &i in class {
            assignment[i] = id;
        }
        let r = &items[rep_of(class)].member;
        let action = trajs
            .iter()
            .find(|t| t.agent_id == r.traj.agent_id && t.run_index == r.traj.run_index)
            .map(|t| t.actions[r.step].clone())
            .expect("representative comes from a supplied trajectory");
        nodes.push(Node {
            id,
            representative: action,
            members: Vec::new(),
            visit_count: 0,
            success_visit_count: 0,
            end_success_count: 0,
            end_fail_count: 0,
            step_histogram: BTreeMap::new(),
            value: None,
            importance: None,
        });
    }
    (assignment, nodes)
}

/// Edge counts `(count, success, fail)` from the paths.
pub fn accumulate_edges(
    paths: &BTreeMap<TrajKey, TrajPath>,
    counting: EdgeCounting,
) -> BTreeMap<(NodeId, NodeId), (usize, usize, usize)> {
    let mut acc: BTreeMap<(NodeId, NodeId), (usize, usize, usize)> = BTreeMap::new();
    for path in paths.values() {
        let mut pairs: Vec<(NodeId, NodeId)> =
            path.nodes.windows(2).map(|w| (w[0], w[1])).collect();
        if counting == EdgeCounting::PerTrajectory {
            pairs.sort_unstable();
            pairs.dedup();
        }
        for pair in pairs {
            let e = acc.entry(pair).or_default();
            e.0 += 1;
            if path.success {
                e.1 += 1;
            } else {
                e.2 += 1;
            }
        }
    }
    acc
}

pub fn finalize_stats(g: &mut ConsensusGraph, counting: EdgeCounting) {
    for node in &mut g.nodes {
        node.members.clear();
        node.visit_count = 0;
        node.success_visit_count = 0;
        node.end_success_count = 0;
        node.end_fail_count = 0;
        node.step_histogram.clear();
        node.value = None;
        node.importance = None;
    }
    for (key, path) in &g.paths {
        for (step, id) in path.nodes.iter().enumerate() {
            let node = &mut g.nodes[id.index()];
            node.members.push(Member {
                traj: key.clone(),
                step,
            });
            node.visit_count += 1;
            if path.success {
                node.success_visit_count += 1;
            }
            *node.step_histogram.entry(step).or_default() += 1;
        }
        if let Some(last) = path.nodes.last() {
            let node = &mut g.nodes[last.index()];
            if path.success {
                node.end_success_count += 1;
            } else {
                node.end_fail_count += 1;
            }
        }
    }
    let counts = accumulate_edges(&g.paths, counting);
    let total: usize = counts.values().map(|c| c.0).sum();
    g.edges = counts
        .into_iter()
        .map(|((from, to), (count, success_count, fail_count))| {
            let edge = Edge {
                from,
                to,
                count,
                success_count,
                fail_count,
                success_ratio: success_count as f64 / count as f64,
                weight: count as f64 / total as f64,
                class: None,
            };
            ((from, to), edge)
        })
        .collect();
}

/// Checks preconditions and returns the trajectories in key order.
fn prepare<'a>(
    task_id: &str,
    trajs: &[&'a Trajectory],
    theta: f64,
) -> Result<Vec<&'a Trajectory>, BuildError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(BuildError::InvalidTheta(theta));
    }
    let mut sorted: Vec<&Trajectory> = trajs.to_vec();
    for t in &sorted {
        if t.task_id != task_id {
            return Err(BuildError::MixedTasks {
                expected: task_id.to_string(),
                found: t.label(),
            });
        }
        if !t.outcome.is_judged() {
            return Err(BuildError::Unjudged(t.label()));
        }
    }
    sorted.sort_by(|a, b| (&a.agent_id, a.run_index).cmp(&(&b.agent_id, b.run_index)));
    for w in sorted.windows(2) {
        if w[0].agent_id == w[1].agent_id && w[0].run_index == w[1].run_index {
            return Err(BuildError::DuplicateRun {
                task_id: task_id.to_string(),
                key: w[0].key().to_string(),
            });
        }
    }
    Ok(sorted)
}

fn items_of(sorted: &[&Trajectory]) -> Vec<ActionItem> {
    sorted
        .iter()
        .flat_map(|t| {
            let key = t.key();
            t.actions.iter().enumerate().map(move |(step, a)| {
                ActionItem::new(
                    Member {
                        traj: key.clone(),
                        step,
                    },
                    a.canonical_string(),
                )
            })
        })
        .collect()
}

/// Builds the consensus graph of one task.
pub fn build(
    task_id: &str,
    trajs: &[&Trajectory],
    opts: BuildOptions,
) -> Result<ConsensusGraph, BuildError> {
    build_traced(task_id, trajs, opts).map(|(g, _)| g)
}

/// Prepared items and the merge witnesses that joined them.
pub type Trace = (Vec<ActionItem>, Vec<Witness>);

/// Like [`build`], also returning the prepared items and merge witnesses.
pub fn build_traced(
    task_id: &str,
    trajs: &[&Trajectory],
    opts: BuildOptions,
) -> Result<(ConsensusGraph, Trace), BuildError> {
    let sorted = prepare(task_id, trajs, opts.theta)?;
    let items = items_of(&sorted);
    let mut state = MergeState::new(items.len());
    step_merge(&items, opts.theta, &mut state);
    cross_step_merge(&items, opts.theta, &mut state);
    let (assignment, nodes) = assign_nodes(&items, &sorted, &mut state);

    let mut paths = BTreeMap::new();
    let mut cursor = 0;
    for t in &sorted {
        let ids = assignment[cursor..cursor + t.len()].to_vec();
        cursor += t.len();
        paths.insert(
            t.key(),
            TrajPath {
                success: t.outcome.is_success(),
                nodes: ids,
            },
        );
    }
    let mut g = ConsensusGraph {
        task_id: task_id.to_string(),
        theta: opts.theta,
        nodes,
        edges: BTreeMap::new(),
        paths,
    };
    finalize_stats(&mut g, opts.counting);
    Ok((g, (items, state.witnesses)))
}
