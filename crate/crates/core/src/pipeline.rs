//! Dataset-wide graph stages and the graph directory format.
//!
//! A graph directory holds one `<task>.graph.json` per task, optional
//! `<task>.dot` siblings, and `params.json` recording how the graphs were
//! built and analyzed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, AnalysisConfig, AnalysisError};
use crate::dataset::{create_dir, file_stem_for, read_json, write_pretty, DatasetError};
use crate::graph::export::{from_json, to_dot, to_json};
use crate::graph::{build, BuildError, BuildOptions, ConsensusGraph};
use crate::model::Dataset;
use crate::parallel::{par_map, Parallelism};

pub const PARAMS_FILE: &str = "params.json";
const GRAPH_SUFFIX: &str = ".graph.json";

pub type Graphs = BTreeMap<String, ConsensusGraph>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("task {task_id}: {source}")]
    Build {
        task_id: String,
        #[source]
        source: BuildError,
    },
    #[error("task {task_id}: {source}")]
    Analysis {
        task_id: String,
        #[source]
        source: AnalysisError,
    },
    #[error(transparent)]
    Io(#[from] DatasetError),
    #[error("{path}: {message}")]
    BadGraph { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Build { source, .. } => source.code(),
            PipelineError::Analysis { source, .. } => source.code(),
            PipelineError::Io(e) => e.code(),
            PipelineError::BadGraph { .. } => "INVALID_GRAPH",
        }
    }
}

/// How the graphs in a directory were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphParams {
    pub build: BuildOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
}

/// One graph per task, tasks without trajectories included.
pub fn build_all(
    d: &Dataset,
    opts: BuildOptions,
    parallelism: Parallelism,
) -> Result<Graphs, PipelineError> {
    let groups: Vec<(&str, Vec<&crate::model::Trajectory>)> = d.by_task().into_iter().collect();
    let built = par_map(&groups, parallelism, |(task_id, trajs)| {
        build(task_id, trajs, opts)
    });
    groups
        .iter()
        .zip(built)
        .map(|((task_id, _), g)| {
            g.map(|g| (task_id.to_string(), g))
                .map_err(|source| PipelineError::Build {
                    task_id: task_id.to_string(),
                    source,
                })
        })
        .collect()
}

/// Rewards, edge classes and importance for every graph.
pub fn analyze_all(
    graphs: Graphs,
    cfg: &AnalysisConfig,
    parallelism: Parallelism,
) -> Result<Graphs, PipelineError> {
    let items: Vec<(String, ConsensusGraph)> = graphs.into_iter().collect();
    let results = par_map(&items, parallelism, |(_, g)| {
        let mut g = g.clone();
        analyze(&mut g, cfg).map(|()| g)
    });
    items
        .iter()
        .zip(results)
        .map(|((task_id, _), r)| {
            r.map(|g| (task_id.clone(), g))
                .map_err(|source| PipelineError::Analysis {
                    task_id: task_id.clone(),
                    source,
                })
        })
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `graphs` and `params` into `dir`, removing graph and DOT files of
/// tasks no longer present.
pub fn write_graphs(
    dir: &Path,
    graphs: &Graphs,
    params: &GraphParams,
    dot: bool,
) -> Result<(), PipelineError> {
    create_dir(dir)?;
    let mut keep: BTreeSet<PathBuf> = BTreeSet::new();
    for (task_id, g) in graphs {
        let stem = file_stem_for(&[task_id]);
        let json_path = dir.join(format!("{stem}{GRAPH_SUFFIX}"));
        fs::write(&json_path, to_json(g)).map_err(|e| io_err(&json_path, e))?;
        keep.insert(json_path);
        if dot {
            let dot_path = dir.join(format!("{stem}.dot"));
            fs::write(&dot_path, to_dot(g)).map_err(|e| io_err(&dot_path, e))?;
            keep.insert(dot_path);
        }
    }
    let params_path = dir.join(PARAMS_FILE);
    write_pretty(&params_path, params)?;
    keep.insert(params_path);
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let ours = name.ends_with(GRAPH_SUFFIX) || name.ends_with(".dot");
        if ours && !keep.contains(&path) {
            fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(())
}

/// Reads every graph in `dir` together with its params.
pub fn read_graphs(dir: &Path) -> Result<(Graphs, GraphParams), PipelineError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingDirectory(dir.to_path_buf()).into());
    }
    let params: GraphParams = read_json(&dir.join(PARAMS_FILE))?;
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(GRAPH_SUFFIX))
        {
            paths.push(path);
        }
    }
    paths.sort();
    let mut graphs = Graphs::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let g = from_json(&text).map_err(|e| PipelineError::BadGraph {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if let Some(prev) = graphs.insert(g.task_id.clone(), g) {
            return Err(PipelineError::BadGraph {
                path,
                message: format!("duplicate graph for task {}", prev.task_id),
            });
        }
    }
    Ok((graphs, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn judged() -> Dataset {
        let (mut d, truth) = generate(&SynthConfig {
            n_tasks: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        for (t, p) in d.trajectories.iter_mut().zip(&truth.trajectories) {
            t.outcome = if p.success {
                crate::Outcome::Success
            } else {
                crate::Outcome::Failure
            };
        }
        d
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let d = judged();
        let seq = build_all(&d, BuildOptions::default(), Parallelism::Sequential).unwrap();
        let par = build_all(&d, BuildOptions::default(), Parallelism::from_jobs(4)).unwrap();
        assert_eq!(seq, par);
        let cfg = AnalysisConfig::default();
        assert_eq!(
            analyze_all(seq, &cfg, Parallelism::Sequential).unwrap(),
            analyze_all(par, &cfg, Parallelism::from_jobs(3)).unwrap()
        );
    }

    #[test]
    fn graph_directory_round_trip() {
        let d = judged();
        let graphs = analyze_all(
            build_all(&d, BuildOptions::default(), Parallelism::Sequential).unwrap(),
            &AnalysisConfig::default(),
            Parallelism::Sequential,
        )
        .unwrap();
        let params = GraphParams {
            build: BuildOptions::default(),
            analysis: Some(AnalysisConfig::default()),
        };
        let dir = tempfile::tempdir().unwrap();
        write_graphs(dir.path(), &graphs, &params, true).unwrap();
        let (back, p) = read_graphs(dir.path()).unwrap();
        assert_eq!(p, params);
        assert_eq!(back.len(), graphs.len());
        for (k, g) in &graphs {
            assert_eq!(to_json(&back[k]), to_json(g));
        }

        let mut fewer = graphs.clone();
        fewer.pop_first();
        write_graphs(dir.path(), &fewer, &params, false).unwrap();
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), fewer.len() + 1, "{names:?}");
    }
}
