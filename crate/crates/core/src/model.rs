//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grammar::CanonicalAction;

/// A step as recorded by the agent, before canonicalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    #[serde(rename = "step")]
    pub step_index: usize,
    pub description: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub necessary: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<String>,
    #[serde(default)]
    pub must_include: Vec<String>,
    #[serde(default)]
    pub fuzzy_match: Vec<String>,
}

impl Reference {
    pub fn exact(&self) -> Option<&str> {
        self.exact_match.as_deref().filter(|s| !s.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.exact().is_none() && self.must_include.is_empty() && self.fuzzy_match.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub intent: String,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    #[default]
    Unjudged,
}

impl Outcome {
    pub fn is_judged(self) -> bool {
        self != Outcome::Unjudged
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// Identifies one attempt within a task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrajKey {
    pub agent_id: String,
    pub run_index: u32,
}

impl fmt::Display for TrajKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.agent_id, self.run_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub agent_id: String,
    /// Attempt ordinal for the (task, agent) pair, starting at 0.
    pub run_index: u32,
    pub actions: Vec<CanonicalAction>,
    pub outcome: Outcome,
    pub judge_confidence: Option<f64>,
    /// The agent's closing reply, when the dump carries one.
    pub final_message: Option<String>,
}

impl Trajectory {
    pub fn key(&self) -> TrajKey {
        TrajKey {
            agent_id: self.agent_id.clone(),
            run_index: self.run_index,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(task_id, agent_id, run_index)` for messages.
    pub fn label(&self) -> String {
        format!("({}, {}, {})", self.task_id, self.agent_id, self.run_index)
    }

    /// Final message, or the last action's serialization standing in for it.
    pub fn final_text(&self) -> String {
        match &self.final_message {
            Some(msg) => msg.clone(),
            None => self
                .actions
                .last()
                .map(|a| a.canonical_string())
                .unwrap_or_default(),
        }
    }
}

/// A loaded collection of tasks and trajectories. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub tasks: BTreeMap<String, TaskSpec>,
    pub trajectories: Vec<Trajectory>,
    /// Sorted, de-duplicated agent ids.
    pub agents: Vec<String>,
}

impl Dataset {
    pub fn new(tasks: impl IntoIterator<Item = TaskSpec>, trajectories: Vec<Trajectory>) -> Self {
        let tasks = tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect();
        let agents = trajectories
            .iter()
            .map(|t| t.agent_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Dataset {
            tasks,
            trajectories,
            agents,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty() && self.trajectories.is_empty()
    }

    /// Trajectories grouped by task, in input order within each group. Every
    /// task in `tasks` appears, possibly with an empty group.
    pub fn by_task(&self) -> BTreeMap<&str, Vec<&Trajectory>> {
        let mut groups: BTreeMap<&str, Vec<&Trajectory>> = self
            .tasks
            .keys()
            .map(|k| (k.as_str(), Vec::new()))
            .collect();
        for t in &self.trajectories {
            groups.entry(t.task_id.as_str()).or_default().push(t);
        }
        groups
    }

    pub fn trajectories_for<'a>(
        &'a self,
        task_id: &'a str,
    ) -> impl Iterator<Item = &'a Trajectory> + 'a {
        self.trajectories
            .iter()
            .filter(move |t| t.task_id == task_id)
    }

    pub fn find(&self, task_id: &str, key: &TrajKey) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| {
            t.task_id == task_id && t.agent_id == key.agent_id && t.run_index == key.run_index
        })
    }

    pub fn action_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}
