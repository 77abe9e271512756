//! Reward propagation, edge classification and node importance over a
//! finalized consensus graph.

use serde::{Deserialize, Serialize};

use crate::graph::{ConsensusGraph, EdgeClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 0.9,
            tolerance: 1e-9,
            max_iterations: 10_000,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AnalysisError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(AnalysisError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(AnalysisError::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub w_high: f64,
    pub w_low: f64,
    pub s_fail: f64,
    pub s_success: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            w_high: 0.05,
            w_low: 0.02,
            s_fail: 0.2,
            s_success: 0.9,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(AnalysisError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {x}"
                )))
            }
        };
        unit("w_high", self.w_high)?;
        unit("w_low", self.w_low)?;
        unit("s_fail", self.s_fail)?;
        unit("s_success", self.s_success)?;
        if self.w_low > self.w_high {
            return Err(AnalysisError::InvalidConfig(
                "w_low must not exceed w_high".into(),
            ));
        }
        if self.s_fail >= self.s_success {
            return Err(AnalysisError::InvalidConfig(
                "s_fail must be below s_success".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(rename = "rewards")]
    pub reward: RewardConfig,
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(
        "reward iteration did not converge within {iterations} iterations (last change {delta:e})"
    )]
    NoConvergence { iterations: usize, delta: f64 },
    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::NoConvergence { .. } => "NO_CONVERGENCE",
            AnalysisError::InvalidConfig(_) => "INVALID_CONFIG",
        }
    }
}

/// `(end_success − end_fail) / visits`; zero for an unvisited node.
pub fn base_reward(g: &ConsensusGraph) -> Vec<f64> {
    g.nodes
        .iter()
        .map(|n| {
            if n.visit_count == 0 {
                0.0
            } else {
                (n.end_success_count as f64 - n.end_fail_count as f64) / n.visit_count as f64
            }
        })
        .collect()
}

/// Successor lists `(target, count / out_count)` per node.
fn transitions(g: &ConsensusGraph) -> Vec<Vec<(usize, f64)>> {
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.nodes.len()];
    for e in g.edges.values() {
        out[e.from.index()].push((e.to.index(), e.count));
    }
    out.into_iter()
        .map(|succ| {
            let total: usize = succ.iter().map(|&(_, c)| c).sum();
            succ.into_iter()
                .map(|(u, c)| (u, c as f64 / total as f64))
                .collect()
        })
        .collect()
}

/// Kahn order, or `None` when the graph has a cycle (self-loops included).
pub fn topological_order(g: &ConsensusGraph) -> Option<Vec<usize>> {
    let n = g.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.edges.values() {
        indegree[e.to.index()] += 1;
        succ[e.from.index()].push(e.to.index());
    }
    let mut ready: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &u in &succ[v] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.push(u);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Node values `V(v) = base(v) + γ Σ p(v→u) V(u)`, indexed by node id.
pub fn propagate_rewards(
    g: &ConsensusGraph,
    cfg: &RewardConfig,
) -> Result<Vec<f64>, AnalysisError> {
    cfg.validate()?;
    let base = base_reward(g);
    let trans = transitions(g);
    if let Some(order) = topological_order(g) {
        let mut value = vec![0.0; base.len()];
        for &v in order.iter().rev() {
            let future: f64 = trans[v].iter().map(|&(u, p)| p * value[u]).sum();
            value[v] = base[v] + cfg.gamma * future;
        }
        return Ok(value);
    }
    let mut value = base.clone();
    let mut next = vec![0.0; base.len()];
    let mut delta = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        delta = 0.0;
        for v in 0..base.len() {
            let future: f64 = trans[v].iter().map(|&(u, p)| p * value[u]).sum();
            next[v] = base[v] + cfg.gamma * future;
            delta = f64::max(delta, (next[v] - value[v]).abs());
        }
        std::mem::swap(&mut value, &mut next);
        if delta < cfg.tolerance {
            return Ok(value);
        }
    }
    Err(AnalysisError::NoConvergence {
        iterations: cfg.max_iterations,
        delta,
    })
}

/// Exactly one class for every `(w, s)` under a valid config.
pub fn classify(w: f64, s: f64, cfg: &ClassifierConfig) -> EdgeClass {
    if w >= cfg.w_high && s <= cfg.s_fail {
        EdgeClass::Trap
    } else if w <= cfg.w_low && s >= cfg.s_success {
        EdgeClass::Critical
    } else if w >= cfg.w_high && s > cfg.s_fail && s < cfg.s_success {
        EdgeClass::Bottleneck
    } else {
        EdgeClass::Normal
    }
}

pub fn classify_edges(g: &mut ConsensusGraph, cfg: &ClassifierConfig) -> Result<(), AnalysisError> {
    cfg.validate()?;
    for e in g.edges.values_mut() {
        e.class = Some(classify(e.weight, e.success_ratio, cfg));
    }
    Ok(())
}

/// Mean incident success ratio times visit share. A node without edges on
/// one side uses the other side's mean; a node with no edges scores 0.
pub fn node_importance(g: &ConsensusGraph) -> Vec<f64> {
    let n = g.nodes.len();
    let mut in_sum = vec![(0.0, 0usize); n];
    let mut out_sum = vec![(0.0, 0usize); n];
    for e in g.edges.values() {
        let i = &mut in_sum[e.to.index()];
        i.0 += e.success_ratio;
        i.1 += 1;
        let o = &mut out_sum[e.from.index()];
        o.0 += e.success_ratio;
        o.1 += 1;
    }
    let total_visits: usize = g.nodes.iter().map(|n| n.visit_count).sum();
    (0..n)
        .map(|v| {
            let mean = |(sum, k): (f64, usize)| (k > 0).then(|| sum / k as f64);
            let ratio = match (mean(in_sum[v]), mean(out_sum[v])) {
                (Some(a), Some(b)) => (a + b) / 2.0,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => 0.0,
            };
            if total_visits == 0 {
                0.0
            } else {
                ratio * g.nodes[v].visit_count as f64 / total_visits as f64
            }
        })
        .collect()
}

/// Fills values, edge classes and importance in place.
pub fn analyze(g: &mut ConsensusGraph, cfg: &AnalysisConfig) -> Result<(), AnalysisError> {
    cfg.classifier.validate()?;
    let values = propagate_rewards(g, &cfg.reward)?;
    classify_edges(g, &cfg.classifier)?;
    let importance = node_importance(g);
    for (node, (v, imp)) in g.nodes.iter_mut().zip(values.into_iter().zip(importance)) {
        node.value = Some(v);
        node.importance = Some(imp);
    }
    Ok(())
}

/// Per-class edge counts, in [`EdgeClass::ALL`] order. Unclassified edges are
/// not counted.
pub fn class_counts(g: &ConsensusGraph) -> [usize; 4] {
    let mut counts = [0; 4];
    for e in g.edges.values() {
        if let Some(c) = e.class {
            counts[EdgeClass::ALL
                .iter()
                .position(|&x| x == c)
                .expect("known class")] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse;
    use crate::graph::{build, BuildOptions};
    use crate::model::{Outcome, Trajectory};
    use proptest::prelude::*;

    fn traj(agent: &str, outcome: Outcome, calls: &[&str]) -> Trajectory {
        Trajectory {
            task_id: "t".into(),
            agent_id: agent.into(),
            run_index: 0,
            actions: calls.iter().map(|c| parse(c).unwrap()).collect(),
            outcome,
            judge_confidence: None,
            final_message: None,
        }
    }

    fn value_of(g: &ConsensusGraph, values: &[f64], call: &str) -> f64 {
        let node = g
            .nodes
            .iter()
            .find(|n| n.representative.canonical_string() == call)
            .unwrap();
        values[node.id.index()]
    }

    #[test]
    fn chain_discounts_geometrically() {
        let t = traj(
            "a",
            Outcome::Success,
            &["goto(url='a')", "click(text='Buy')", "back()"],
        );
        let g = build("t", &[&t], BuildOptions::default()).unwrap();
        let v = propagate_rewards(&g, &RewardConfig::default()).unwrap();
        assert_eq!(value_of(&g, &v, "back()"), 1.0);
        assert_eq!(value_of(&g, &v, "click(text='Buy')"), 0.9);
        assert_eq!(value_of(&g, &v, "goto(url='a')"), 0.81);
    }

    #[test]
    fn failing_terminal_is_minus_one() {
        let t = traj("a", Outcome::Failure, &["back()"]);
        let g = build("t", &[&t], BuildOptions::default()).unwrap();
        assert_eq!(
            propagate_rewards(&g, &RewardConfig::default()).unwrap(),
            vec![-1.0]
        );
    }

    #[test]
    fn two_cycle_matches_closed_form() {
        // v -> u -> v -> (end, success): visits v=2, u=1.
        let t = traj("a", Outcome::Success, &["back()", "refresh()", "back()"]);
        let g = build("t", &[&t], BuildOptions::default()).unwrap();
        assert!(topological_order(&g).is_none());
        let values = propagate_rewards(&g, &RewardConfig::default()).unwrap();
        // V(v) = 1/2 + γ V(u), V(u) = γ V(v)  =>  V(v) = 0.5 / (1 − γ²)
        let gamma: f64 = 0.9;
        let vv = 0.5 / (1.0 - gamma * gamma);
        assert!((value_of(&g, &values, "back()") - vv).abs() < 1e-6);
        assert!((value_of(&g, &values, "refresh()") - gamma * vv).abs() < 1e-6);
    }

    #[test]
    fn definitional_classes() {
        let cfg = ClassifierConfig::default();
        assert_eq!(classify(0.10, 0.0, &cfg), EdgeClass::Trap);
        assert_eq!(classify(0.01, 1.0, &cfg), EdgeClass::Critical);
        assert_eq!(classify(0.08, 0.5, &cfg), EdgeClass::Bottleneck);
        assert_eq!(classify(0.03, 0.5, &cfg), EdgeClass::Normal);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ClassifierConfig {
            w_low: 0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ClassifierConfig {
            s_fail: 0.9,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn importance_of_start_node() {
        // start -> mid (s = 1.0); start visited 2 of 10 times overall.
        let a = traj(
            "a",
            Outcome::Success,
            &[
                "goto(url='s')",
                "click(text='Mid')",
                "back()",
                "back()",
                "back()",
            ],
        );
        let b = traj(
            "b",
            Outcome::Success,
            &[
                "goto(url='s')",
                "click(text='Mid')",
                "back()",
                "back()",
                "back()",
            ],
        );
        let g = build("t", &[&a, &b], BuildOptions::default()).unwrap();
        let imp = node_importance(&g);
        let start = g
            .nodes
            .iter()
            .find(|n| n.representative.canonical_string() == "goto(url='s')")
            .unwrap();
        assert_eq!(imp[start.id.index()], 0.2);
    }

    #[test]
    fn all_failing_importance_is_zero() {
        let a = traj(
            "a",
            Outcome::Failure,
            &["goto(url='s')", "back()", "click(text='X')"],
        );
        let g = build("t", &[&a], BuildOptions::default()).unwrap();
        assert!(node_importance(&g).iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn classification_is_total(w in 0.0f64..=1.0, s in 0.0f64..=1.0,
                                   a in 0.0f64..=1.0, b in 0.0f64..=1.0,
                                   c in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let cfg = ClassifierConfig { w_low: a.min(b), w_high: a.max(b), s_fail: c.min(d), s_success: c.max(d) };
            prop_assume!(cfg.validate().is_ok());
            let holds = [
                w >= cfg.w_high && s <= cfg.s_fail,
                w <= cfg.w_low && s >= cfg.s_success,
                w >= cfg.w_high && s > cfg.s_fail && s < cfg.s_success,
            ];
            let n = holds.iter().filter(|&&h| h).count();
            prop_assert!(n <= 1);
            let expected = match holds.iter().position(|&h| h) {
                Some(0) => EdgeClass::Trap,
                Some(1) => EdgeClass::Critical,
                Some(2) => EdgeClass::Bottleneck,
                _ => EdgeClass::Normal,
            };
            prop_assert_eq!(classify(w, s, &cfg), expected);
        }
    }
}
