//! Graph construction and reward propagation against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use actiongraph::analysis::{propagate_rewards, RewardConfig};
use actiongraph::grammar::parse;
use actiongraph::graph::export::to_json;
use actiongraph::graph::{build, BuildOptions, ConsensusGraph};
use actiongraph::{Outcome, Trajectory};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Calls whose pairwise similarities straddle the usual thresholds.
const POOL: &[&str] = &[
    "click(text='Checkout page')",
    "click(text='Checkout Page')",
    "click(text='Checkout pages')",
    "click(text='checkout pag')",
    "click(text='Check out')",
    "hover(text='Checkout page')",
    "type(text='Checkout page')",
    "goto(url='http://a.example/')",
    "goto(url='http://b.example/')",
    "back()",
    "refresh()",
];

/// Calls far enough apart that no threshold above 0.5 merges them.
const DISTINCT: &[&str] = &[
    "click(text='Sign in')",
    "goto(url='http://shop.example/cart')",
    "scroll(direction='down')",
    "back()",
];

fn lev(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn sim(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        1.0
    } else {
        1.0 - lev(a, b) as f64 / longest as f64
    }
}

fn traj(i: usize, calls: &[&str], success: bool) -> Trajectory {
    Trajectory {
        task_id: "t".into(),
        agent_id: format!("agent{i}"),
        run_index: 0,
        actions: calls.iter().map(|c| parse(c).unwrap()).collect(),
        outcome: if success {
            Outcome::Success
        } else {
            Outcome::Failure
        },
        judge_confidence: None,
        final_message: None,
    }
}

fn build_at(trajs: &[Trajectory], theta: f64) -> ConsensusGraph {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    build("t", &refs, BuildOptions::with_theta(theta)).unwrap()
}

/// Partition of action positions under the transitive closure of `sim >= theta`.
fn closure_partition(trajs: &[Trajectory], theta: f64) -> BTreeSet<BTreeSet<(String, usize)>> {
    let items: Vec<((String, usize), String)> = trajs
        .iter()
        .flat_map(|t| {
            t.actions
                .iter()
                .enumerate()
                .map(move |(s, a)| ((t.agent_id.clone(), s), a.canonical_string()))
        })
        .collect();
    let n = items.len();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if sim(&items[i].1, &items[j].1) >= theta && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut classes: BTreeMap<usize, BTreeSet<(String, usize)>> = BTreeMap::new();
    for (i, (pos, _)) in items.into_iter().enumerate() {
        classes.entry(label[i]).or_default().insert(pos);
    }
    classes.into_values().collect()
}

fn graph_partition(g: &ConsensusGraph) -> BTreeSet<BTreeSet<(String, usize)>> {
    g.nodes
        .iter()
        .map(|n| {
            n.members
                .iter()
                .map(|m| (m.traj.agent_id.clone(), m.step))
                .collect()
        })
        .collect()
}

fn trajectories(
    pool: &'static [&'static str],
    max_trajs: usize,
) -> impl Strategy<Value = Vec<Trajectory>> {
    prop::collection::vec(
        (prop::collection::vec(0..pool.len(), 1..=4), any::<bool>()),
        1..=max_trajs,
    )
    .prop_map(move |specs| {
        specs
            .iter()
            .enumerate()
            .map(|(i, (idx, ok))| {
                let calls: Vec<&str> = idx.iter().map(|&k| pool[k]).collect();
                traj(i, &calls, *ok)
            })
            .collect()
    })
}

/// `V = base + gamma * P V` solved directly.
fn linear_oracle(trajs: &[Trajectory], gamma: f64) -> BTreeMap<String, f64> {
    let names: BTreeSet<String> = trajs
        .iter()
        .flat_map(|t| t.actions.iter().map(|a| a.canonical_string()))
        .collect();
    let names: Vec<String> = names.into_iter().collect();
    let idx = |s: &str| names.iter().position(|n| n == s).unwrap();
    let n = names.len();
    let mut visits = vec![0.0; n];
    let mut ends = vec![0.0; n];
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for t in trajs {
        let seq: Vec<usize> = t
            .actions
            .iter()
            .map(|a| idx(&a.canonical_string()))
            .collect();
        for &v in &seq {
            visits[v] += 1.0;
        }
        let last = *seq.last().unwrap();
        ends[last] += if t.outcome == Outcome::Success {
            1.0
        } else {
            -1.0
        };
        for w in seq.windows(2) {
            counts[(w[0], w[1])] += 1.0;
        }
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for v in 0..n {
        b[v] = ends[v] / visits[v];
        let out: f64 = counts.row(v).sum();
        if out > 0.0 {
            for u in 0..n {
                a[(v, u)] -= gamma * counts[(v, u)] / out;
            }
        }
    }
    let x = a
        .lu()
        .solve(&b)
        .expect("I - gamma P is nonsingular for gamma < 1");
    names.into_iter().zip(x.iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn merge_classes_are_the_similarity_closure(
        trajs in trajectories(POOL, 3),
        theta in prop::sample::select(vec![0.5, 0.7, 0.8, 0.9, 0.95, 1.0]),
    ) {
        let g = build_at(&trajs, theta);
        prop_assert_eq!(graph_partition(&g), closure_partition(&trajs, theta));
    }

    #[test]
    fn node_count_is_monotone_in_theta(trajs in trajectories(POOL, 4)) {
        let counts: Vec<usize> = [0.5, 0.7, 0.9, 1.0].iter().map(|&t| build_at(&trajs, t).node_count()).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", counts);
    }

    #[test]
    fn edge_counts_conserve_transitions(trajs in trajectories(POOL, 5)) {
        let g = build_at(&trajs, 0.9);
        let transitions: usize = trajs.iter().map(|t| t.len() - 1).sum();
        prop_assert_eq!(g.total_edge_count(), transitions);
        prop_assert_eq!(g.check_invariants(), Ok(()));
    }

    #[test]
    fn input_order_does_not_matter(
        (trajs, shuffled) in trajectories(POOL, 5).prop_flat_map(|t| (Just(t.clone()), Just(t).prop_shuffle())),
    ) {
        prop_assert_eq!(to_json(&build_at(&trajs, 0.9)), to_json(&build_at(&shuffled, 0.9)));
    }

    #[test]
    fn rewards_solve_the_linear_system(trajs in trajectories(DISTINCT, 4)) {
        let g = build_at(&trajs, 0.9);
        let v = propagate_rewards(&g, &RewardConfig::default()).unwrap();
        let oracle = linear_oracle(&trajs, 0.9);
        for (node, value) in g.nodes.iter().zip(&v) {
            let expected = oracle[&node.representative.canonical_string()];
            prop_assert!((value - expected).abs() <= 1e-6, "{}: {} vs {}", node.id, value, expected);
        }
    }

    #[test]
    fn rewards_are_bounded_and_signed(trajs in trajectories(DISTINCT, 4), outcome in any::<bool>()) {
        let uniform: Vec<Trajectory> = trajs
            .into_iter()
            .map(|mut t| {
                t.outcome = if outcome { Outcome::Success } else { Outcome::Failure };
                t
            })
            .collect();
        let g = build_at(&uniform, 0.9);
        let v = propagate_rewards(&g, &RewardConfig::default()).unwrap();
        for x in v {
            prop_assert!(x.abs() <= 10.0 + 1e-9, "unbounded value {}", x);
            let signed = if outcome { x >= 0.0 } else { x <= 0.0 };
            prop_assert!(signed, "value {} has the wrong sign", x);
        }
    }
}

#[test]
fn chain_values_discount_by_gamma() {
    let trajs = [traj(
        0,
        &[
            "click(text='A')",
            "click(text='Bee')",
            "goto(url='http://c.example/')",
        ],
        true,
    )];
    let g = build_at(&trajs, 0.9);
    let v = propagate_rewards(&g, &RewardConfig::default()).unwrap();
    let by_name: BTreeMap<String, f64> = g
        .nodes
        .iter()
        .map(|n| n.representative.canonical_string())
        .zip(v)
        .collect();
    assert_eq!(by_name["goto(url='http://c.example/')"], 1.0);
    assert_eq!(by_name["click(text='Bee')"], 0.9);
    assert_eq!(by_name["click(text='A')"], 0.81);
}
