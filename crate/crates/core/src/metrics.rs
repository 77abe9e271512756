//! Trajectory-, task-, agent- and dataset-level statistics.
//!
//! All functions are pure over a [`Dataset`] and, where needed, the per-task
//! consensus graphs. Rates are `None` when their denominator is empty.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::{ActionKind, CanonicalAction};
use crate::graph::ConsensusGraph;
use crate::model::{Dataset, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trajectory {0} is not judged")]
    Unjudged(String),
    #[error("no necessity labels: {0}")]
    MissingNecessity(String),
    #[error("task {0} has no trajectories")]
    NoTrajectories(String),
    #[error("invalid bucket config: {0}")]
    InvalidBuckets(String),
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::Unjudged(_) => "UNJUDGED",
            MetricsError::MissingNecessity(_) => "MISSING_NECESSITY",
            MetricsError::NoTrajectories(_) => "NO_TRAJECTORIES",
            MetricsError::InvalidBuckets(_) => "INVALID_BUCKETS",
        }
    }
}

fn require_judged(d: &Dataset) -> Result<(), MetricsError> {
    match d.trajectories.iter().find(|t| !t.outcome.is_judged()) {
        Some(t) => Err(MetricsError::Unjudged(t.label())),
        None => Ok(()),
    }
}

/// Hits over trials within one cell of a breakdown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub total: usize,
}

impl Rate {
    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        if hit {
            self.hits += 1;
        }
    }

    pub fn merge(&mut self, other: Rate) {
        self.hits += other.hits;
        self.total += other.total;
    }

    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

/// Necessity over the labeled actions only.
fn necessity_of<'a>(actions: impl IntoIterator<Item = &'a CanonicalAction>) -> Rate {
    let mut rate = Rate::default();
    for a in actions {
        if let Some(n) = a.necessary {
            rate.add(n);
        }
    }
    rate
}

// ---------------------------------------------------------------------------
// Framework level

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkStats {
    pub agent_id: String,
    pub success_count: usize,
    pub failure_count: usize,
    pub success_rate: f64,
    pub avg_steps: f64,
    /// Mean judge confidence over trajectories that carry one.
    pub avg_confidence: Option<f64>,
    pub necessity: Rate,
}

impl FrameworkStats {
    pub fn necessity_rate(&self) -> Option<f64> {
        self.necessity.value()
    }

    pub fn trajectories(&self) -> usize {
        self.success_count + self.failure_count
    }
}

pub const TOTAL_ROW: &str = "total";

fn stats_row(agent_id: &str, trajs: &[&Trajectory]) -> FrameworkStats {
    let success_count = trajs.iter().filter(|t| t.outcome.is_success()).count();
    let n = trajs.len();
    let steps: usize = trajs.iter().map(|t| t.len()).sum();
    let confidences: Vec<f64> = trajs.iter().filter_map(|t| t.judge_confidence).collect();
    FrameworkStats {
        agent_id: agent_id.to_string(),
        success_count,
        failure_count: n - success_count,
        success_rate: success_count as f64 / n as f64,
        avg_steps: steps as f64 / n as f64,
        avg_confidence: (!confidences.is_empty())
            .then(|| confidences.iter().sum::<f64>() / confidences.len() as f64),
        necessity: necessity_of(trajs.iter().flat_map(|t| t.actions.iter())),
    }
}

/// One row per agent with trajectories, followed by a pooled totals row.
pub fn framework_stats(d: &Dataset) -> Result<Vec<FrameworkStats>, MetricsError> {
    require_judged(d)?;
    let mut by_agent: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in &d.trajectories {
        by_agent.entry(t.agent_id.as_str()).or_default().push(t);
    }
    let mut rows: Vec<FrameworkStats> = by_agent.iter().map(|(a, ts)| stats_row(a, ts)).collect();
    if !d.trajectories.is_empty() {
        let all: Vec<&Trajectory> = d.trajectories.iter().collect();
        rows.push(stats_row(TOTAL_ROW, &all));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Task level

/// `|V|·|E| / trajectories`.
pub fn complexity(nodes: usize, edges: usize, trajectories: usize) -> Option<f64> {
    (trajectories > 0).then(|| (nodes * edges) as f64 / trajectories as f64)
}

pub fn graph_complexity(g: &ConsensusGraph) -> Result<f64, MetricsError> {
    complexity(g.node_count(), g.edge_count(), g.trajectory_count())
        .ok_or_else(|| MetricsError::NoTrajectories(g.task_id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComplexityBucket {
    Simple,
    Medium,
    Complex,
    VeryComplex,
}

impl ComplexityBucket {
    pub const ALL: [ComplexityBucket; 4] = [
        ComplexityBucket::Simple,
        ComplexityBucket::Medium,
        ComplexityBucket::Complex,
        ComplexityBucket::VeryComplex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComplexityBucket::Simple => "simple",
            ComplexityBucket::Medium => "medium",
            ComplexityBucket::Complex => "complex",
            ComplexityBucket::VeryComplex => "very_complex",
        }
    }

    /// Bucket for `value` given ascending cut points; a value equal to a cut
    /// falls in the lower bucket.
    pub fn of(value: f64, cuts: [f64; 3]) -> Self {
        match cuts.iter().position(|&c| value <= c) {
            Some(0) => ComplexityBucket::Simple,
            Some(1) => ComplexityBucket::Medium,
            Some(2) => ComplexityBucket::Complex,
            _ => ComplexityBucket::VeryComplex,
        }
    }
}

impl fmt::Display for ComplexityBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quartile_cuts(values: &[f64]) -> Option<[f64; 3]> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some([
        quantile(&sorted, 0.25)?,
        quantile(&sorted, 0.5)?,
        quantile(&sorted, 0.75)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketConfig {
    /// Inclusive upper bounds of the length buckets; the last bucket is open.
    pub length_edges: Vec<usize>,
    /// Fixed complexity cut points. Dataset quartiles when absent.
    pub complexity_cuts: Option<[f64; 3]>,
}

impl Default for BucketConfig {
    fn default() -> Self {
        BucketConfig {
            length_edges: vec![5, 10],
            complexity_cuts: None,
        }
    }
}

impl BucketConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.length_edges.is_empty() || self.length_edges[0] == 0 {
            return Err(MetricsError::InvalidBuckets(
                "length_edges must start above 0".into(),
            ));
        }
        if self.length_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::InvalidBuckets(
                "length_edges must be strictly increasing".into(),
            ));
        }
        if let Some(c) = self.complexity_cuts {
            if c.iter().any(|x| !x.is_finite()) || c[0] > c[1] || c[1] > c[2] {
                return Err(MetricsError::InvalidBuckets(
                    "complexity_cuts must be finite and ascending".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `observed / shortest`.
pub fn inflation(observed: usize, shortest: usize) -> f64 {
    observed as f64 / shortest as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inflation {
    pub shortest_success_len: usize,
    /// One ratio per trajectory, in input order.
    pub per_trajectory: Vec<f64>,
    pub mean: f64,
}

/// Inflation of every trajectory of one task against its shortest success.
/// With `exclude_one_step`, length-1 successes do not define the shortest.
pub fn step_inflation(trajs: &[&Trajectory], exclude_one_step: bool) -> Option<Inflation> {
    let shortest = trajs
        .iter()
        .filter(|t| t.outcome.is_success() && !t.is_empty())
        .filter(|t| !(exclude_one_step && t.len() == 1))
        .map(|t| t.len())
        .min()?;
    let per_trajectory: Vec<f64> = trajs.iter().map(|t| inflation(t.len(), shortest)).collect();
    let mean = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
    Some(Inflation {
        shortest_success_len: shortest,
        per_trajectory,
        mean,
    })
}

pub fn is_one_step_anomaly(trajs: &[&Trajectory]) -> bool {
    trajs.iter().any(|t| t.outcome.is_success() && t.len() == 1)
}

/// Tasks with at least one successful single-action trajectory.
pub fn one_step_anomalies(d: &Dataset) -> BTreeSet<String> {
    d.trajectories
        .iter()
        .filter(|t| t.outcome.is_success() && t.len() == 1)
        .map(|t| t.task_id.clone())
        .collect()
}

/// Shannon entropy in bits of a count distribution.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy over distinct node-id signatures of the graph's trajectories.
pub fn strategy_entropy(g: &ConsensusGraph) -> f64 {
    let mut counts: HashMap<&[crate::graph::NodeId], usize> = HashMap::new();
    for p in g.paths.values() {
        *counts.entry(p.nodes.as_slice()).or_default() += 1;
    }
    let mut counts: Vec<usize> = counts.into_values().collect();
    counts.sort_unstable();
    entropy_bits(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgreementKind {
    AllSucceed,
    AllFail,
    Mixed,
}

impl AgreementKind {
    pub fn name(self) -> &'static str {
        match self {
            AgreementKind::AllSucceed => "all_succeed",
            AgreementKind::AllFail => "all_fail",
            AgreementKind::Mixed => "mixed",
        }
    }
}

/// Best-of-runs agreement for one task, or `None` when some agent of
/// `agents` never attempted it.
pub fn task_agreement(trajs: &[&Trajectory], agents: &[String]) -> Option<AgreementKind> {
    if agents.is_empty() {
        return None;
    }
    let mut solved = 0;
    for agent in agents {
        let runs: Vec<_> = trajs.iter().filter(|t| &t.agent_id == agent).collect();
        if runs.is_empty() {
            return None;
        }
        if runs.iter().any(|t| t.outcome.is_success()) {
            solved += 1;
        }
    }
    Some(if solved == agents.len() {
        AgreementKind::AllSucceed
    } else if solved == 0 {
        AgreementKind::AllFail
    } else {
        AgreementKind::Mixed
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Tasks attempted by every agent.
    pub tasks: usize,
    pub all_succeed: f64,
    pub all_fail: f64,
    pub mixed: f64,
}

pub fn cross_agent_agreement(d: &Dataset) -> Result<Option<Agreement>, MetricsError> {
    require_judged(d)?;
    let mut counts = [0usize; 3];
    for trajs in d.by_task().values() {
        match task_agreement(trajs, &d.agents) {
            Some(AgreementKind::AllSucceed) => counts[0] += 1,
            Some(AgreementKind::AllFail) => counts[1] += 1,
            Some(AgreementKind::Mixed) => counts[2] += 1,
            None => {}
        }
    }
    let tasks: usize = counts.iter().sum();
    if tasks == 0 {
        return Ok(None);
    }
    let f = |c: usize| c as f64 / tasks as f64;
    Ok(Some(Agreement {
        tasks,
        all_succeed: f(counts[0]),
        all_fail: f(counts[1]),
        mixed: f(counts[2]),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStats {
    pub task_id: String,
    pub trajectory_count: usize,
    pub node_count: usize,
    pub edge_count: usize,
    pub complexity: Option<f64>,
    pub complexity_bucket: Option<ComplexityBucket>,
    pub shortest_success_len: Option<usize>,
    pub mean_inflation: Option<f64>,
    pub one_step_anomaly: bool,
    pub entropy_bits: f64,
    pub agreement: Option<AgreementKind>,
}

/// Per-task statistics. `graphs` is keyed by task id; tasks without a graph
/// get zero nodes and edges.
pub fn task_stats(
    d: &Dataset,
    graphs: &BTreeMap<String, ConsensusGraph>,
    buckets: &BucketConfig,
) -> Result<Vec<TaskStats>, MetricsError> {
    require_judged(d)?;
    buckets.validate()?;
    let mut rows = Vec::new();
    for (task_id, trajs) in d.by_task() {
        let g = graphs.get(task_id);
        let (nodes, edges) = g.map_or((0, 0), |g| (g.node_count(), g.edge_count()));
        let anomaly = is_one_step_anomaly(&trajs);
        let infl = step_inflation(&trajs, anomaly);
        rows.push(TaskStats {
            task_id: task_id.to_string(),
            trajectory_count: trajs.len(),
            node_count: nodes,
            edge_count: edges,
            complexity: complexity(nodes, edges, trajs.len()),
            complexity_bucket: None,
            shortest_success_len: infl.as_ref().map(|i| i.shortest_success_len),
            mean_inflation: infl.map(|i| i.mean),
            one_step_anomaly: anomaly,
            entropy_bits: g.map_or(0.0, strategy_entropy),
            agreement: task_agreement(&trajs, &d.agents),
        });
    }
    let cuts = match buckets.complexity_cuts {
        Some(c) => Some(c),
        None => quartile_cuts(&rows.iter().filter_map(|r| r.complexity).collect::<Vec<_>>()),
    };
    if let Some(cuts) = cuts {
        for r in &mut rows {
            r.complexity_bucket = r.complexity.map(|c| ComplexityBucket::of(c, cuts));
        }
    }
    Ok(rows)
}

/// Pooled mean inflation over every trajectory of tasks where it is defined.
pub fn mean_inflation(d: &Dataset) -> Result<Option<f64>, MetricsError> {
    require_judged(d)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for trajs in d.by_task().values() {
        if let Some(i) = step_inflation(trajs, is_one_step_anomaly(trajs)) {
            sum += i.per_trajectory.iter().sum::<f64>();
            n += i.per_trajectory.len();
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

// ---------------------------------------------------------------------------
// Necessity

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Early,
    Middle,
    Late,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Early, Phase::Middle, Phase::Late];

    /// First `⌈n/3⌉` steps are early, last `⌊n/3⌋` are late.
    pub fn of(step: usize, len: usize) -> Phase {
        let early = len.div_ceil(3);
        let late = len / 3;
        if step < early {
            Phase::Early
        } else if step >= len - late {
            Phase::Late
        } else {
            Phase::Middle
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Early => "early",
            Phase::Middle => "middle",
            Phase::Late => "late",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConfidenceBand {
    Low,
    Mid,
    High,
}

impl ConfidenceBand {
    pub const ALL: [ConfidenceBand; 3] = [
        ConfidenceBand::Low,
        ConfidenceBand::Mid,
        ConfidenceBand::High,
    ];

    /// `< 0.85`, `0.85 ..= 0.95`, `> 0.95`.
    pub fn of(confidence: f64) -> ConfidenceBand {
        if confidence < 0.85 {
            ConfidenceBand::Low
        } else if confidence > 0.95 {
            ConfidenceBand::High
        } else {
            ConfidenceBand::Mid
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfidenceBand::Low => "<0.85",
            ConfidenceBand::Mid => "0.85-0.95",
            ConfidenceBand::High => ">0.95",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NecessityBreakdown {
    pub overall: Rate,
    pub by_kind: BTreeMap<ActionKind, Rate>,
    pub by_band: BTreeMap<ConfidenceBand, Rate>,
    pub by_phase: BTreeMap<Phase, Rate>,
    pub by_complexity: BTreeMap<ComplexityBucket, Rate>,
    /// Steps 1 to 3.
    pub first_three: Rate,
    /// Steps 4 onward.
    pub after_three: Rate,
    /// Steps 11 onward.
    pub after_ten: Rate,
}

/// Necessity rates over labeled actions. `buckets` maps task id to its
/// complexity bucket; tasks missing from it are left out of that dimension.
pub fn necessity_breakdown(
    d: &Dataset,
    buckets: &BTreeMap<String, ComplexityBucket>,
) -> NecessityBreakdown {
    let mut out = NecessityBreakdown::default();
    for t in &d.trajectories {
        let bucket = buckets.get(&t.task_id).copied();
        for (step, a) in t.actions.iter().enumerate() {
            let Some(hit) = a.necessary else { continue };
            out.overall.add(hit);
            out.by_kind.entry(a.kind()).or_default().add(hit);
            out.by_band
                .entry(ConfidenceBand::of(a.confidence))
                .or_default()
                .add(hit);
            out.by_phase
                .entry(Phase::of(step, t.len()))
                .or_default()
                .add(hit);
            if let Some(b) = bucket {
                out.by_complexity.entry(b).or_default().add(hit);
            }
            if step < 3 {
                out.first_three.add(hit);
            } else {
                out.after_three.add(hit);
            }
            if step >= 10 {
                out.after_ten.add(hit);
            }
        }
    }
    out
}

/// Necessity rate per attempt ordinal, up to the largest observed index.
/// Indices without actions are left out.
pub fn learning_curve(d: &Dataset) -> Result<Vec<(u32, Rate)>, MetricsError> {
    let mut rows: BTreeMap<u32, Rate> = BTreeMap::new();
    for t in &d.trajectories {
        for (step, a) in t.actions.iter().enumerate() {
            let hit = a.necessary.ok_or_else(|| {
                MetricsError::MissingNecessity(format!("{} step {step}", t.label()))
            })?;
            rows.entry(t.run_index).or_default().add(hit);
        }
    }
    if rows.is_empty() {
        return Err(MetricsError::MissingNecessity(
            "dataset has no actions".into(),
        ));
    }
    Ok(rows.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Length buckets

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBucket {
    pub lo: usize,
    /// Inclusive; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub outcomes: Rate,
}

impl LengthBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{}", self.lo, hi),
            None => format!("{}+", self.lo),
        }
    }
}

/// Success rate per length bucket. Empty buckets are omitted.
pub fn length_bucket_success(
    d: &Dataset,
    edges: &[usize],
) -> Result<Vec<LengthBucket>, MetricsError> {
    require_judged(d)?;
    let mut buckets: Vec<LengthBucket> = Vec::with_capacity(edges.len() + 1);
    let mut lo = 1;
    for &hi in edges {
        buckets.push(LengthBucket {
            lo,
            hi: Some(hi),
            outcomes: Rate::default(),
        });
        lo = hi + 1;
    }
    buckets.push(LengthBucket {
        lo,
        hi: None,
        outcomes: Rate::default(),
    });
    for t in &d.trajectories {
        let len = t.len();
        if let Some(b) = buckets
            .iter_mut()
            .find(|b| len >= b.lo && b.hi.is_none_or(|hi| len <= hi))
        {
            b.outcomes.add(t.outcome.is_success());
        }
    }
    buckets.retain(|b| b.outcomes.total > 0);
    Ok(buckets)
}
