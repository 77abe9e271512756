//! Seeded synthetic datasets with planted ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Global choices (outcome and anomaly quotas) use
//! stream 0; the content of task `i` uses stream `i + 1`, so a task's actions
//! do not depend on how many tasks precede it. Integer draws use rejection
//! sampling on `next_u64`, unit floats take the top 53 bits. Nothing here
//! depends on platform or library sampling algorithms.
//!
//! Each task owns three pools of canonical calls: the optimal path, redundant
//! detours, and traps. Pool members are pairwise far apart in edit distance,
//! and paraphrases flip the case of one letter in a call of at least
//! [`MIN_PARAPHRASE_LEN`] characters, so at the merge threshold every
//! paraphrase rejoins its original and distinct pool members never merge.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetError};
use crate::grammar::{ActionKind, CanonicalAction, ParamKey};
use crate::metrics;
use crate::model::{Dataset, Outcome, Reference, TaskSpec, Trajectory};
use crate::similarity::levenshtein;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MIN_PARAPHRASE_LEN: usize = 20;
pub const FAILURE_MESSAGE: &str = "I was unable to complete the task.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub n_agents: usize,
    pub runs_per_agent: usize,
    /// Inclusive bounds on optimal path length; the minimum is at least 2.
    pub optimal_len_range: (usize, usize),
    /// Probability of inserting another detour before an optimal action.
    pub redundancy_rate: f64,
    /// Per-run override of `redundancy_rate`; the last entry repeats.
    pub redundancy_by_run: Option<Vec<f64>>,
    /// Planted success probability per agent, in agent order.
    pub agent_success_bias: Vec<f64>,
    pub anomaly_rate: f64,
    pub paraphrase_rate: f64,
    /// Inclusive bounds on trap actions closing a failed trajectory.
    pub trap_len_range: (usize, usize),
    /// Merge threshold the pools are separated for.
    pub merge_theta: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_tasks: 100,
            n_agents: 3,
            runs_per_agent: 5,
            optimal_len_range: (3, 8),
            redundancy_rate: 0.3,
            redundancy_by_run: None,
            agent_success_bias: vec![0.65, 0.55, 0.30],
            anomaly_rate: 0.13,
            paraphrase_rate: 0.1,
            trap_len_range: (1, 3),
            merge_theta: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("dataset does not match ground truth: {0}")]
    Mismatch(String),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidConfig(_) => "INVALID_CONFIG",
            SynthError::Mismatch(_) => "TRUTH_MISMATCH",
        }
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let (lo, hi) = self.optimal_len_range;
        if lo < 2 || lo > hi {
            return bad(format!(
                "optimal_len_range ({lo}, {hi}) must satisfy 2 <= min <= max"
            ));
        }
        let (tlo, thi) = self.trap_len_range;
        if tlo < 1 || tlo > thi {
            return bad(format!(
                "trap_len_range ({tlo}, {thi}) must satisfy 1 <= min <= max"
            ));
        }
        if self.n_agents == 0 || self.runs_per_agent == 0 {
            return bad("n_agents and runs_per_agent must be positive".into());
        }
        if self.agent_success_bias.len() != self.n_agents {
            return bad(format!(
                "agent_success_bias has {} entries for {} agents",
                self.agent_success_bias.len(),
                self.n_agents
            ));
        }
        if let Some(b) = self.agent_success_bias.iter().find(|b| !unit(**b)) {
            return bad(format!("success bias {b} outside [0, 1]"));
        }
        for (name, r) in [
            ("anomaly_rate", self.anomaly_rate),
            ("paraphrase_rate", self.paraphrase_rate),
        ] {
            if !unit(r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        let mut rates = vec![self.redundancy_rate];
        rates.extend(self.redundancy_by_run.iter().flatten().copied());
        if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("redundancy rate {r} outside [0, 1)"));
        }
        if matches!(&self.redundancy_by_run, Some(v) if v.is_empty()) {
            return bad("redundancy_by_run must not be empty".into());
        }
        if !(self.merge_theta > 0.0 && self.merge_theta < 1.0) {
            return bad(format!("merge_theta {} outside (0, 1)", self.merge_theta));
        }
        if 1.0 - 1.0 / (MIN_PARAPHRASE_LEN as f64) < self.merge_theta {
            return bad(format!(
                "merge_theta {} too high for single-edit paraphrases of {MIN_PARAPHRASE_LEN} characters",
                self.merge_theta
            ));
        }
        Ok(())
    }

    pub fn redundancy_for_run(&self, run: usize) -> f64 {
        match &self.redundancy_by_run {
            Some(v) => v[run.min(v.len() - 1)],
            None => self.redundancy_rate,
        }
    }

    pub fn agent_ids(&self) -> Vec<String> {
        (1..=self.n_agents)
            .map(|i| format!("agent{i:02}"))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sampling

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Sampler(rng)
    }

    /// Uniform in `0..n`, by rejection below `2^64 mod n`.
    fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.0.next_u64();
            if x >= threshold {
                return (x % n) as usize;
            }
        }
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }

    fn weighted<T: Copy>(&mut self, table: &[(T, usize)]) -> T {
        let total: usize = table.iter().map(|(_, w)| w).sum();
        let mut x = self.below(total);
        for &(v, w) in table {
            if x < w {
                return v;
            }
            x -= w;
        }
        unreachable!("weights cover the draw")
    }

    /// Three decimals in `[lo, hi]`.
    fn confidence(&mut self, lo: f64, hi: f64) -> f64 {
        ((lo + (hi - lo) * self.unit()) * 1000.0).round() / 1000.0
    }
}

const WORDS: &[&str] = &[
    "account",
    "address",
    "archive",
    "billing",
    "budget",
    "calendar",
    "camera",
    "catalog",
    "checkout",
    "comment",
    "contact",
    "coupon",
    "customer",
    "dashboard",
    "delivery",
    "discount",
    "document",
    "download",
    "editor",
    "export",
    "feature",
    "filter",
    "folder",
    "forum",
    "gallery",
    "history",
    "invoice",
    "issue",
    "kitchen",
    "label",
    "library",
    "listing",
    "member",
    "message",
    "milestone",
    "network",
    "notice",
    "order",
    "package",
    "payment",
    "planner",
    "product",
    "profile",
    "project",
    "rating",
    "receipt",
    "record",
    "refund",
    "report",
    "review",
    "schedule",
    "search",
    "settings",
    "shipping",
    "station",
    "summary",
    "support",
    "ticket",
    "travel",
    "update",
    "upload",
    "vendor",
    "wallet",
    "welcome",
];

const SITES: &[&str] = &[
    "shop", "forum", "wiki", "maps", "gitlab", "admin", "mail", "news",
];

fn title(s: &mut Sampler, words: usize) -> String {
    let mut parts: Vec<String> = (0..words).map(|_| s.pick(WORDS).to_string()).collect();
    if let Some(first) = parts.first_mut() {
        first[..1].make_ascii_uppercase();
    }
    format!("{} {}", parts.join(" "), s.range(1, 99))
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Optimal,
    Redundant,
    Trap,
}

fn make(kind: ActionKind, params: Vec<(ParamKey, String)>) -> CanonicalAction {
    CanonicalAction::new(kind, params.into_iter().map(|(k, v)| (k.name(), v)))
        .expect("generated calls are valid")
}

fn candidate(s: &mut Sampler, site: &str, role: Role) -> CanonicalAction {
    use ActionKind::*;
    let table: &[(ActionKind, usize)] = match role {
        Role::Optimal => &[(Click, 5), (Type, 2), (Select, 1), (Hover, 1), (Goto, 1)],
        Role::Redundant => &[
            (Click, 3),
            (Hover, 2),
            (Scroll, 2),
            (Wait, 1),
            (Back, 1),
            (Refresh, 1),
            (Goto, 1),
        ],
        Role::Trap => &[(Click, 3), (Goto, 1), (Type, 1), (Select, 1)],
    };
    let elements = ["button", "link", "tab"];
    match s.weighted(table) {
        Click => {
            let mut p = vec![(ParamKey::Text, title(s, 2))];
            if s.bernoulli(0.5) {
                p.push((ParamKey::Element, s.pick(&elements).to_string()));
            }
            make(Click, p)
        }
        Type => make(
            Type,
            vec![
                (ParamKey::Text, title(s, 2)),
                (ParamKey::Element, format!("{} box", s.pick(WORDS))),
            ],
        ),
        Select => make(
            Select,
            vec![
                (ParamKey::Value, title(s, 1)),
                (ParamKey::Element, format!("{} menu", s.pick(WORDS))),
            ],
        ),
        Hover => make(Hover, vec![(ParamKey::Text, title(s, 2))]),
        Goto => make(
            Goto,
            vec![(
                ParamKey::Url,
                format!(
                    "http://{site}.example/{}/{}",
                    s.pick(WORDS),
                    s.range(1, 999)
                ),
            )],
        ),
        Scroll => {
            let dir = if s.bernoulli(0.5) { "down" } else { "up" };
            make(
                Scroll,
                vec![
                    (ParamKey::Direction, dir.into()),
                    (ParamKey::Amount, (100 * s.range(1, 9)).to_string()),
                ],
            )
        }
        Wait => make(Wait, vec![(ParamKey::Seconds, s.range(1, 9).to_string())]),
        Back => make(Back, Vec::<(ParamKey, String)>::new()),
        Refresh => make(Refresh, Vec::<(ParamKey, String)>::new()),
    }
}

/// Minimum distance between pool members so that one-edit paraphrases on
/// both sides still stay below `theta`.
fn separated(a: &str, b: &str, theta: f64) -> bool {
    let longest = a.chars().count().max(b.chars().count());
    let need = ((1.0 - theta) * longest as f64).floor() as usize + 3;
    levenshtein(a, b) >= need
}

fn paraphrase_slot(a: &CanonicalAction) -> Option<ParamKey> {
    if a.canonical_string().chars().count() < MIN_PARAPHRASE_LEN {
        return None;
    }
    [ParamKey::Text, ParamKey::Value].into_iter().find(|&k| {
        a.param(k)
            .is_some_and(|v| v.chars().any(|c| c.is_ascii_alphabetic()))
    })
}

/// Flips the case of one letter of the text or value parameter.
fn paraphrase(s: &mut Sampler, a: &CanonicalAction) -> Option<CanonicalAction> {
    let key = paraphrase_slot(a)?;
    let value: Vec<char> = a.param(key)?.chars().collect();
    let letters: Vec<usize> = (0..value.len())
        .filter(|&i| value[i].is_ascii_alphabetic())
        .collect();
    let i = *s.pick(&letters);
    let mut flipped = value.clone();
    flipped[i] = if value[i].is_ascii_uppercase() {
        value[i].to_ascii_lowercase()
    } else {
        value[i].to_ascii_uppercase()
    };
    let params = a
        .params()
        .iter()
        .map(|(k, v)| {
            (
                *k,
                if *k == key {
                    flipped.iter().collect()
                } else {
                    v.clone()
                },
            )
        })
        .collect();
    Some(make(a.kind(), params))
}

struct Pools {
    optimal: Vec<CanonicalAction>,
    redundant: Vec<CanonicalAction>,
    trap: Vec<CanonicalAction>,
}

fn pools(s: &mut Sampler, site: &str, optimal_len: usize, theta: f64) -> Pools {
    let mut accepted: Vec<String> = Vec::new();
    let mut draw = |s: &mut Sampler, role: Role, n: usize| -> Vec<CanonicalAction> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let c = candidate(s, site, role);
            let text = c.canonical_string();
            if accepted.iter().all(|a| separated(a, &text, theta)) {
                accepted.push(text);
                out.push(c);
            }
        }
        out
    };
    let optimal = draw(s, Role::Optimal, optimal_len);
    let redundant = draw(s, Role::Redundant, 6);
    let trap = draw(s, Role::Trap, 4);
    Pools {
        optimal,
        redundant,
        trap,
    }
}

// ---------------------------------------------------------------------------
// Ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub task_id: String,
    pub answer: String,
    pub optimal: Vec<String>,
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTruth {
    pub task_id: String,
    pub agent_id: String,
    pub run_index: u32,
    pub success: bool,
    /// Planted label per action.
    pub necessary: Vec<bool>,
    /// Optimal actions followed before any trap.
    pub optimal_prefix: usize,
    pub redundant: usize,
    pub traps: usize,
    pub anomaly: bool,
    pub paraphrased: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub tasks: Vec<TaskTruth>,
    pub trajectories: Vec<TrajectoryTruth>,
}

impl GroundTruth {
    pub fn anomaly_tasks(&self) -> BTreeSet<String> {
        self.tasks
            .iter()
            .filter(|t| t.anomalous)
            .map(|t| t.task_id.clone())
            .collect()
    }

    /// Fraction of planted-necessary actions.
    pub fn necessity_rate(&self) -> f64 {
        let (hits, total) = self
            .trajectories
            .iter()
            .flat_map(|t| &t.necessary)
            .fold((0usize, 0usize), |(h, n), &x| (h + usize::from(x), n + 1));
        hits as f64 / total as f64
    }

    /// Success rate per agent as realized by the plant.
    pub fn success_rates(&self) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for t in &self.trajectories {
            let c = counts.entry(t.agent_id.clone()).or_default();
            c.0 += usize::from(t.success);
            c.1 += 1;
        }
        counts
            .into_iter()
            .map(|(a, (s, n))| (a, s as f64 / n as f64))
            .collect()
    }

    /// Best-of-runs agreement fractions `(all_succeed, all_fail, mixed)`.
    pub fn agreement(&self) -> (f64, f64, f64) {
        let agents = self.config.agent_ids();
        let mut solved: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in &self.trajectories {
            let entry = solved.entry(t.task_id.as_str()).or_default();
            if t.success {
                entry.insert(t.agent_id.as_str());
            }
        }
        let mut counts = [0usize; 3];
        for s in solved.values() {
            let i = if s.len() == agents.len() {
                0
            } else if s.is_empty() {
                1
            } else {
                2
            };
            counts[i] += 1;
        }
        let n = solved.len().max(1) as f64;
        (
            counts[0] as f64 / n,
            counts[1] as f64 / n,
            counts[2] as f64 / n,
        )
    }

    /// Expected pooled inflation: every trajectory's expected length, given
    /// its planted structure, over the realized shortest success of its
    /// task.
    pub fn expected_inflation(&self) -> Option<f64> {
        let mut by_task: BTreeMap<&str, Vec<&TrajectoryTruth>> = BTreeMap::new();
        for t in &self.trajectories {
            by_task.entry(t.task_id.as_str()).or_default().push(t);
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for (task_id, trajs) in by_task {
            let anomalous = self
                .tasks
                .iter()
                .any(|t| t.task_id == task_id && t.anomalous);
            let shortest = trajs
                .iter()
                .filter(|t| t.success && !(anomalous && t.necessary.len() == 1))
                .map(|t| t.necessary.len())
                .min();
            let Some(shortest) = shortest else { continue };
            for t in trajs {
                let expected = if t.anomaly {
                    1.0
                } else {
                    let r = self.config.redundancy_for_run(t.run_index as usize);
                    t.optimal_prefix as f64 / (1.0 - r) + t.traps as f64
                };
                sum += expected / shortest as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

// ---------------------------------------------------------------------------
// Generation

struct Built {
    actions: Vec<CanonicalAction>,
    truth: TrajectoryTruth,
}

#[allow(clippy::too_many_arguments)]
fn build_trajectory(
    s: &mut Sampler,
    cfg: &SynthConfig,
    pools: &Pools,
    task_id: &str,
    agent_id: &str,
    run: usize,
    success: bool,
    anomaly: bool,
) -> Built {
    let mut actions: Vec<CanonicalAction> = Vec::new();
    let mut necessary: Vec<bool> = Vec::new();
    let mut redundant = 0;
    let mut traps = 0;
    let mut paraphrased = 0;
    let mut push = |s: &mut Sampler, a: &CanonicalAction, needed: bool| {
        let mut a = if s.bernoulli(cfg.paraphrase_rate) {
            match paraphrase(s, a) {
                Some(p) => {
                    paraphrased += 1;
                    p
                }
                None => a.clone(),
            }
        } else {
            a.clone()
        };
        let conf = if needed {
            s.confidence(0.85, 1.0)
        } else {
            s.confidence(0.6, 0.95)
        };
        a = a.with_annotations(conf, Some(needed));
        a.source_url = format!("http://{task_id}.example/step/{}", actions.len());
        actions.push(a);
        necessary.push(needed);
    };
    let optimal_prefix;
    if anomaly {
        let last = pools.optimal.last().expect("optimal path is non-empty");
        push(s, last, true);
        optimal_prefix = 1;
    } else {
        let r = cfg.redundancy_for_run(run);
        let n_opt = if success {
            pools.optimal.len()
        } else {
            s.below(pools.optimal.len())
        };
        for opt in &pools.optimal[..n_opt] {
            while s.bernoulli(r) {
                let detour = s.pick(&pools.redundant).clone();
                push(s, &detour, false);
                redundant += 1;
            }
            push(s, opt, true);
        }
        if !success {
            let n_traps = s.range(cfg.trap_len_range.0, cfg.trap_len_range.1);
            for _ in 0..n_traps {
                let trap = s.pick(&pools.trap).clone();
                push(s, &trap, false);
            }
            traps = n_traps;
        }
        optimal_prefix = n_opt;
    }
    Built {
        actions,
        truth: TrajectoryTruth {
            task_id: task_id.to_string(),
            agent_id: agent_id.to_string(),
            run_index: run as u32,
            success,
            necessary,
            optimal_prefix,
            redundant,
            traps,
            anomaly,
            paraphrased,
        },
    }
}

fn answer_token(s: &mut Sampler) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    let code: String = (0..6)
        .map(|_| ALPHABET[s.below(ALPHABET.len())] as char)
        .collect();
    format!("ANS-{code}")
}

/// Generates an unjudged dataset and the truth it was planted from.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth), SynthError> {
    cfg.validate()?;
    let agents = cfg.agent_ids();
    let mut global = Sampler::new(cfg.seed, 0);

    // outcome[a][task * runs + run], with exactly round(bias * slots) successes
    let slots = cfg.n_tasks * cfg.runs_per_agent;
    let outcomes: Vec<Vec<bool>> = cfg
        .agent_success_bias
        .iter()
        .map(|&bias| {
            let wins = (bias * slots as f64).round() as usize;
            let mut v: Vec<bool> = (0..slots).map(|i| i < wins).collect();
            global.shuffle(&mut v);
            v
        })
        .collect();
    let slot_success =
        |a: usize, task: usize, run: usize| outcomes[a][task * cfg.runs_per_agent + run];

    // Anomalies: a quota of tasks with some success, one successful slot each.
    let eligible: Vec<usize> = (0..cfg.n_tasks)
        .filter(|&t| {
            (0..agents.len()).any(|a| (0..cfg.runs_per_agent).any(|r| slot_success(a, t, r)))
        })
        .collect();
    let quota = ((cfg.anomaly_rate * cfg.n_tasks as f64).round() as usize).min(eligible.len());
    let mut order = eligible.clone();
    global.shuffle(&mut order);
    let mut anomaly_slot: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &t in &order[..quota] {
        let winners: Vec<(usize, usize)> = (0..agents.len())
            .flat_map(|a| (0..cfg.runs_per_agent).map(move |r| (a, r)))
            .filter(|&(a, r)| slot_success(a, t, r))
            .collect();
        anomaly_slot.insert(t, *global.pick(&winners));
    }

    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    let mut task_truth = Vec::with_capacity(cfg.n_tasks);
    let mut trajectories = Vec::new();
    let mut traj_truth = Vec::new();
    for t in 0..cfg.n_tasks {
        let mut s = Sampler::new(cfg.seed, t as u64 + 1);
        let task_id = format!("t{t:03}");
        let site = *s.pick(SITES);
        let answer = answer_token(&mut s);
        let optimal_len = s.range(cfg.optimal_len_range.0, cfg.optimal_len_range.1);
        let pools = pools(&mut s, site, optimal_len, cfg.merge_theta);
        tasks.push(TaskSpec {
            task_id: task_id.clone(),
            intent: format!("Find the confirmation code for synthetic {site} task {t}."),
            reference: Reference {
                exact_match: Some(answer.clone()),
                ..Reference::default()
            },
        });
        task_truth.push(TaskTruth {
            task_id: task_id.clone(),
            answer: answer.clone(),
            optimal: pools
                .optimal
                .iter()
                .map(CanonicalAction::canonical_string)
                .collect(),
            anomalous: anomaly_slot.contains_key(&t),
        });
        for (a, agent_id) in agents.iter().enumerate() {
            for run in 0..cfg.runs_per_agent {
                let success = slot_success(a, t, run);
                let anomaly = anomaly_slot.get(&t) == Some(&(a, run));
                let built = build_trajectory(
                    &mut s, cfg, &pools, &task_id, agent_id, run, success, anomaly,
                );
                trajectories.push(Trajectory {
                    task_id: task_id.clone(),
                    agent_id: agent_id.clone(),
                    run_index: run as u32,
                    actions: built.actions,
                    outcome: Outcome::Unjudged,
                    judge_confidence: None,
                    final_message: Some(if success {
                        format!("The confirmation code is {answer}.")
                    } else {
                        FAILURE_MESSAGE.to_string()
                    }),
                });
                traj_truth.push(built.truth);
            }
        }
    }
    let truth = GroundTruth {
        config: cfg.clone(),
        tasks: task_truth,
        trajectories: traj_truth,
    };
    Ok((Dataset::new(tasks, trajectories), truth))
}

/// Writes the dataset directory plus `ground_truth.json` at its root.
pub fn write(
    dataset: &Dataset,
    truth: &GroundTruth,
    root: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let root = root.as_ref();
    dataset::save_dataset(dataset, root)?;
    dataset::write_pretty(&root.join(GROUND_TRUTH_FILE), truth)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth, DatasetError> {
    dataset::read_json(path.as_ref())
}

// ---------------------------------------------------------------------------
// Verification

/// Tolerances for the sampled quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub success_rate: f64,
    pub agreement: f64,
    /// Relative.
    pub inflation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            success_rate: 0.05,
            agreement: 0.05,
            inflation: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub planted: String,
    pub recovered: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthReport {
    pub checks: Vec<Check>,
}

impl TruthReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(
        &mut self,
        name: impl Into<String>,
        planted: impl ToString,
        recovered: impl ToString,
        passed: bool,
    ) {
        self.checks.push(Check {
            name: name.into(),
            planted: planted.to_string(),
            recovered: recovered.to_string(),
            passed,
        });
    }
}

/// Compares a judged dataset against the truth it was generated from.
pub fn verify_against_truth(
    d: &Dataset,
    truth: &GroundTruth,
    tol: &Tolerances,
) -> Result<TruthReport, SynthError> {
    let mismatch = |m: String| SynthError::Mismatch(m);
    let mut planted: BTreeMap<(&str, &str, u32), &TrajectoryTruth> = BTreeMap::new();
    for t in &truth.trajectories {
        planted.insert((&t.task_id, &t.agent_id, t.run_index), t);
    }
    if planted.len() != d.trajectories.len() {
        return Err(mismatch(format!(
            "{} planted trajectories, {} in dataset",
            planted.len(),
            d.trajectories.len()
        )));
    }
    let mut outcome_errors = 0;
    let mut label_errors = 0;
    for t in &d.trajectories {
        let p = planted
            .get(&(t.task_id.as_str(), t.agent_id.as_str(), t.run_index))
            .ok_or_else(|| mismatch(format!("{} was not planted", t.label())))?;
        if p.necessary.len() != t.len() {
            return Err(mismatch(format!(
                "{} has {} actions, planted {}",
                t.label(),
                t.len(),
                p.necessary.len()
            )));
        }
        let expected = if p.success {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        outcome_errors += usize::from(t.outcome != expected);
        label_errors += t
            .actions
            .iter()
            .zip(&p.necessary)
            .filter(|(a, &n)| a.necessary != Some(n))
            .count();
    }
    let mut report = TruthReport::default();
    report.push(
        "outcomes",
        0,
        format!("{outcome_errors} wrong"),
        outcome_errors == 0,
    );
    report.push(
        "necessity labels",
        0,
        format!("{label_errors} wrong"),
        label_errors == 0,
    );

    let anomalies = metrics::one_step_anomalies(d);
    let planted_anomalies = truth.anomaly_tasks();
    report.push(
        "anomaly tasks",
        format!("{} tasks", planted_anomalies.len()),
        format!("{} tasks", anomalies.len()),
        anomalies == planted_anomalies,
    );

    let breakdown = metrics::necessity_breakdown(d, &BTreeMap::new());
    let recovered_rate = breakdown.overall.value().unwrap_or(0.0);
    let planted_rate = truth.necessity_rate();
    report.push(
        "necessity rate",
        format!("{planted_rate:.6}"),
        format!("{recovered_rate:.6}"),
        recovered_rate == planted_rate,
    );

    let stats = metrics::framework_stats(d).map_err(|e| mismatch(e.to_string()))?;
    for (agent, &bias) in truth
        .config
        .agent_ids()
        .iter()
        .zip(&truth.config.agent_success_bias)
    {
        let rate = stats
            .iter()
            .find(|r| &r.agent_id == agent)
            .map_or(0.0, |r| r.success_rate);
        report.push(
            format!("success rate {agent}"),
            format!("{bias:.4}"),
            format!("{rate:.4}"),
            (rate - bias).abs() <= tol.success_rate,
        );
    }

    let (ps, pf, pm) = truth.agreement();
    let agreement = metrics::cross_agent_agreement(d).map_err(|e| mismatch(e.to_string()))?;
    let (rs, rf, rm) = agreement.map_or((0.0, 0.0, 0.0), |a| (a.all_succeed, a.all_fail, a.mixed));
    report.push(
        "agreement (all/none/mixed)",
        format!("{ps:.4}/{pf:.4}/{pm:.4}"),
        format!("{rs:.4}/{rf:.4}/{rm:.4}"),
        (rs - ps).abs() <= tol.agreement
            && (rf - pf).abs() <= tol.agreement
            && (rm - pm).abs() <= tol.agreement,
    );

    let expected = truth.expected_inflation();
    let recovered = metrics::mean_inflation(d).map_err(|e| mismatch(e.to_string()))?;
    let ok = match (expected, recovered) {
        (Some(e), Some(r)) => (r - e).abs() <= tol.inflation * e,
        (None, None) => true,
        _ => false,
    };
    let fmt = |x: Option<f64>| x.map_or("absent".to_string(), |v| format!("{v:.4}"));
    report.push("mean inflation", fmt(expected), fmt(recovered), ok);
    Ok(report)
}
