//! On-disk dataset layout, loading, saving and validation.
//!
//! A dataset directory holds one JSON document per task under `tasks/` and
//! one per trajectory under `trajectories/`. Files are read in lexicographic
//! path order; that order is the ingestion order used to assign missing
//! `run_index` values.
//!
//! ```text
//! trajectory: {"task_id", "agent_id", "run_index"?, "outcome": "success"|"failure"|null,
//!              "judge_confidence"?, "final_message"?,
//!              "actions": [{"step", "description", "url", "necessary"?, "confidence"?, "pre"?}]}
//! task:       {"task_id", "intent", "reference": {"exact_match"?, "must_include", "fuzzy_match"}}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{CanonicalAction, GrammarError};
use crate::model::{Dataset, Outcome, RawAction, TaskSpec, Trajectory};

pub const TASKS_DIR: &str = "tasks";
pub const TRAJECTORIES_DIR: &str = "trajectories";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: schema violation at `{field}`: {message}")]
    Schema {
        file: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{file}: unknown task `{task_id}`")]
    DanglingTask { file: PathBuf, task_id: String },
    #[error("task `{task_id}` defined twice ({first} and {second})")]
    DuplicateTask {
        task_id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("{file}: step {step} is not a canonical call ({source}); run ingest with a converter")]
    NotCanonical {
        file: PathBuf,
        step: usize,
        #[source]
        source: GrammarError,
    },
    #[error("{file}: action at position {position} has step {step}")]
    StepMismatch {
        file: PathBuf,
        position: usize,
        step: usize,
    },
    #[error("trajectory ({task_id}, {agent_id}, {run_index}) is not judged")]
    Unjudged {
        task_id: String,
        agent_id: String,
        run_index: u32,
    },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::MissingDirectory(_) => "MISSING_DIRECTORY",
            DatasetError::Io { .. } => "IO",
            DatasetError::Schema { .. } => "SCHEMA_VIOLATION",
            DatasetError::DanglingTask { .. } => "DANGLING_TASK",
            DatasetError::DuplicateTask { .. } => "DUPLICATE_TASK",
            DatasetError::NotCanonical { .. } => "NOT_CANONICAL",
            DatasetError::StepMismatch { .. } => "STEP_MISMATCH",
            DatasetError::Unjudged { .. } => "UNJUDGED",
        }
    }

    pub(crate) fn unjudged(t: &Trajectory) -> Self {
        DatasetError::Unjudged {
            task_id: t.task_id.clone(),
            agent_id: t.agent_id.clone(),
            run_index: t.run_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum JudgedOutcome {
    Success,
    Failure,
}

/// One trajectory file as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDoc {
    pub task_id: String,
    pub agent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    #[serde(default, with = "outcome_field")]
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_message: Option<String>,
    pub actions: Vec<RawAction>,
}

mod outcome_field {
    use super::{JudgedOutcome, Outcome};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(outcome: &Outcome, s: S) -> Result<S::Ok, S::Error> {
        let v = match outcome {
            Outcome::Success => Some(JudgedOutcome::Success),
            Outcome::Failure => Some(JudgedOutcome::Failure),
            Outcome::Unjudged => None,
        };
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Outcome, D::Error> {
        Ok(match Option::<JudgedOutcome>::deserialize(d)? {
            Some(JudgedOutcome::Success) => Outcome::Success,
            Some(JudgedOutcome::Failure) => Outcome::Failure,
            None => Outcome::Unjudged,
        })
    }
}

impl TrajectoryDoc {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        TrajectoryDoc {
            task_id: t.task_id.clone(),
            agent_id: t.agent_id.clone(),
            run_index: Some(t.run_index),
            outcome: t.outcome,
            judge_confidence: t.judge_confidence,
            final_message: t.final_message.clone(),
            actions: t
                .actions
                .iter()
                .enumerate()
                .map(|(i, a)| RawAction {
                    step_index: i,
                    description: a.canonical_string(),
                    url: a.source_url.clone(),
                    necessary: a.necessary,
                    confidence: (a.confidence != 1.0).then_some(a.confidence),
                    pre: a.pre_dependency,
                })
                .collect(),
        }
    }
}

/// Documents read from one or more dataset directories, not yet resolved.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub tasks: Vec<(PathBuf, TaskSpec)>,
    pub trajectories: Vec<(PathBuf, TrajectoryDoc)>,
}

impl RawDataset {
    pub fn extend(&mut self, other: RawDataset) {
        self.tasks.extend(other.tasks);
        self.trajectories.extend(other.trajectories);
    }

    /// Run indices in document order; missing ones are the number of earlier
    /// documents for the same (task, agent) pair.
    pub fn run_indices(&self) -> Vec<u32> {
        let mut seen: HashMap<(&str, &str), u32> = HashMap::new();
        self.trajectories
            .iter()
            .map(|(_, doc)| {
                let counter = seen
                    .entry((doc.task_id.as_str(), doc.agent_id.as_str()))
                    .or_insert(0);
                let assigned = doc.run_index.unwrap_or(*counter);
                *counter += 1;
                assigned
            })
            .collect()
    }

    fn task_map(&self) -> Result<BTreeMap<String, (PathBuf, TaskSpec)>, DatasetError> {
        let mut map: BTreeMap<String, (PathBuf, TaskSpec)> = BTreeMap::new();
        for (path, task) in &self.tasks {
            if let Some((first, _)) = map.get(&task.task_id) {
                return Err(DatasetError::DuplicateTask {
                    task_id: task.task_id.clone(),
                    first: first.clone(),
                    second: path.clone(),
                });
            }
            map.insert(task.task_id.clone(), (path.clone(), task.clone()));
        }
        Ok(map)
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks
            .iter()
            .map(|(_, t)| t)
            .find(|t| t.task_id == task_id)
    }

    /// Builds a [`Dataset`] from already-canonicalized actions, one list per
    /// trajectory document.
    pub fn assemble(self, actions: Vec<Vec<CanonicalAction>>) -> Result<Dataset, DatasetError> {
        assert_eq!(actions.len(), self.trajectories.len());
        let tasks = self.task_map()?;
        let runs = self.run_indices();
        let mut trajectories = Vec::with_capacity(self.trajectories.len());
        for (((path, doc), run_index), actions) in
            self.trajectories.into_iter().zip(runs).zip(actions)
        {
            if !tasks.contains_key(&doc.task_id) {
                return Err(DatasetError::DanglingTask {
                    file: path,
                    task_id: doc.task_id,
                });
            }
            trajectories.push(Trajectory {
                task_id: doc.task_id,
                agent_id: doc.agent_id,
                run_index,
                actions,
                outcome: doc.outcome,
                judge_confidence: doc.judge_confidence,
                final_message: doc.final_message,
            });
        }
        Ok(Dataset::new(
            tasks.into_values().map(|(_, t)| t),
            trajectories,
        ))
    }

    /// Resolves a dataset whose descriptions are all canonical calls.
    pub fn into_dataset(self) -> Result<Dataset, DatasetError> {
        let actions = self
            .trajectories
            .iter()
            .map(|(path, doc)| parse_canonical_actions(path, doc))
            .collect::<Result<Vec<_>, _>>()?;
        self.assemble(actions)
    }
}

/// Checks step numbering of a document.
pub fn check_steps(file: &Path, doc: &TrajectoryDoc) -> Result<(), DatasetError> {
    for (position, action) in doc.actions.iter().enumerate() {
        if action.step_index != position {
            return Err(DatasetError::StepMismatch {
                file: file.to_path_buf(),
                position,
                step: action.step_index,
            });
        }
    }
    Ok(())
}

/// Applies a raw action's annotations to a parsed call.
pub fn annotate_from_raw(action: CanonicalAction, raw: &RawAction) -> CanonicalAction {
    let mut action = action
        .with_source_url(raw.url.clone())
        .with_annotations(raw.confidence.unwrap_or(1.0), raw.necessary);
    action.pre_dependency = raw.pre;
    action
}

pub fn parse_canonical_actions(
    file: &Path,
    doc: &TrajectoryDoc,
) -> Result<Vec<CanonicalAction>, DatasetError> {
    check_steps(file, doc)?;
    doc.actions
        .iter()
        .map(|raw| {
            CanonicalAction::parse(&raw.description)
                .map(|a| annotate_from_raw(a, raw))
                .map_err(|source| DatasetError::NotCanonical {
                    file: file.to_path_buf(),
                    step: raw.step_index,
                    source,
                })
        })
        .collect()
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        DatasetError::Schema {
            file: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|inner| DatasetError::Schema {
        file: path.to_path_buf(),
        line: inner.line(),
        column: inner.column(),
        field: ".".into(),
        message: inner.to_string(),
    })?;
    Ok(value)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every task and trajectory document below `root` without resolving
/// references or parsing action descriptions.
pub fn load_raw(root: impl AsRef<Path>) -> Result<RawDataset, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::MissingDirectory(root.to_path_buf()));
    }
    let mut raw = RawDataset::default();
    for path in json_files(&root.join(TASKS_DIR))? {
        let task: TaskSpec = read_json(&path)?;
        raw.tasks.push((path, task));
    }
    for path in json_files(&root.join(TRAJECTORIES_DIR))? {
        let doc: TrajectoryDoc = read_json(&path)?;
        raw.trajectories.push((path, doc));
    }
    raw.task_map()?;
    Ok(raw)
}

/// Loads a canonical dataset directory.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    load_raw(root)?.into_dataset()
}

pub(crate) fn file_stem_for(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') {
                        c
                    } else {
                        '_'
                    }
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("__")
}

pub(crate) fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable document");
    text.push('\n');
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Deletes `*.json` files in `dir` that are not in `keep`.
pub(crate) fn remove_stale_json(dir: &Path, keep: &BTreeSet<PathBuf>) -> Result<(), DatasetError> {
    for path in json_files(dir)? {
        if !keep.contains(&path) {
            fs::remove_file(&path).map_err(|source| DatasetError::Io { path, source })?;
        }
    }
    Ok(())
}

/// Writes `dataset` in the directory layout read by [`load_dataset`].
/// Stale `*.json` files in the two subdirectories are removed.
pub fn save_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<(), DatasetError> {
    let root = root.as_ref();
    let tasks_dir = root.join(TASKS_DIR);
    let trajs_dir = root.join(TRAJECTORIES_DIR);
    create_dir(&tasks_dir)?;
    create_dir(&trajs_dir)?;

    let mut written = BTreeSet::new();
    for task in dataset.tasks.values() {
        let path = tasks_dir.join(format!("{}.json", file_stem_for(&[&task.task_id])));
        write_pretty(&path, task)?;
        written.insert(path);
    }
    for t in &dataset.trajectories {
        let run = format!("r{:04}", t.run_index);
        let path = trajs_dir.join(format!(
            "{}.json",
            file_stem_for(&[&t.task_id, &t.agent_id, &run])
        ));
        write_pretty(&path, &TrajectoryDoc::from_trajectory(t))?;
        written.insert(path);
    }
    remove_stale_json(&tasks_dir, &written)?;
    remove_stale_json(&trajs_dir, &written)?;
    Ok(())
}

/// Splits a fully judged dataset into successful and failed trajectories,
/// preserving input order.
pub fn partition_by_outcome(
    dataset: &Dataset,
) -> Result<(Vec<&Trajectory>, Vec<&Trajectory>), DatasetError> {
    let mut success = Vec::new();
    let mut fail = Vec::new();
    for t in &dataset.trajectories {
        match t.outcome {
            Outcome::Success => success.push(t),
            Outcome::Failure => fail.push(t),
            Outcome::Unjudged => return Err(DatasetError::unjudged(t)),
        }
    }
    Ok((success, fail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DupRun,
    EmptyTraj,
    DanglingTask,
    TaskKeyMismatch,
    UnknownAgent,
    BadActionConfidence,
    BadJudgeConfidence,
    ConfidencePresence,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::DupRun => "DUP_RUN",
            ViolationCode::EmptyTraj => "EMPTY_TRAJ",
            ViolationCode::DanglingTask => "DANGLING_TASK",
            ViolationCode::TaskKeyMismatch => "TASK_KEY_MISMATCH",
            ViolationCode::UnknownAgent => "UNKNOWN_AGENT",
            ViolationCode::BadActionConfidence => "BAD_ACTION_CONFIDENCE",
            ViolationCode::BadJudgeConfidence => "BAD_JUDGE_CONFIDENCE",
            ViolationCode::ConfidencePresence => "CONFIDENCE_PRESENCE",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.code, self.location, self.message)
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Checks every dataset invariant; an empty result means the dataset is
/// well formed.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, location: String, message: String| {
        out.push(Violation {
            code,
            location,
            message,
        })
    };

    for (key, task) in &dataset.tasks {
        if key != &task.task_id {
            push(
                ViolationCode::TaskKeyMismatch,
                format!("task {key}"),
                format!("stored under `{key}` but declares `{}`", task.task_id),
            );
        }
    }

    let agents: BTreeSet<&str> = dataset.agents.iter().map(String::as_str).collect();
    let mut seen: BTreeSet<(&str, &str, u32)> = BTreeSet::new();
    for t in &dataset.trajectories {
        let loc = t.label();
        if !dataset.tasks.contains_key(&t.task_id) {
            push(
                ViolationCode::DanglingTask,
                loc.clone(),
                format!("unknown task `{}`", t.task_id),
            );
        }
        if !agents.contains(t.agent_id.as_str()) {
            push(
                ViolationCode::UnknownAgent,
                loc.clone(),
                format!("agent `{}` not registered", t.agent_id),
            );
        }
        if !seen.insert((&t.task_id, &t.agent_id, t.run_index)) {
            push(
                ViolationCode::DupRun,
                loc.clone(),
                "duplicate (task, agent, run) triple".into(),
            );
        }
        if t.actions.is_empty() {
            push(
                ViolationCode::EmptyTraj,
                loc.clone(),
                "trajectory has no actions".into(),
            );
        }
        for (i, a) in t.actions.iter().enumerate() {
            if !unit(a.confidence) {
                push(
                    ViolationCode::BadActionConfidence,
                    format!("{loc} step {i}"),
                    format!("confidence {} outside [0, 1]", a.confidence),
                );
            }
        }
        match (t.outcome.is_judged(), t.judge_confidence) {
            (true, None) => push(
                ViolationCode::ConfidencePresence,
                loc.clone(),
                "judged without judge_confidence".into(),
            ),
            (false, Some(_)) => push(
                ViolationCode::ConfidencePresence,
                loc.clone(),
                "judge_confidence on unjudged trajectory".into(),
            ),
            (_, Some(c)) if !unit(c) => push(
                ViolationCode::BadJudgeConfidence,
                loc.clone(),
                format!("judge_confidence {c} outside [0, 1]"),
            ),
            _ => {}
        }
    }
    out
}
