//! Command-line front end for the trajectory graph pipeline.
//!
//! Exit status: 0 success, 1 error, 2 usage, 3 partial judging (progress
//! saved), 4 invalid dataset. Every failure ends stderr with
//! `error-code: CODE`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use actiongraph::annotation::{
    canonicalize, judge, AnnotatorClient, JudgeOptions, MockConverterClient, MockJudgeClient,
    RetryPolicy,
};
use actiongraph::config::{Backend, RunConfig};
use actiongraph::dataset::{load_dataset, load_raw, save_dataset, validate_dataset, DatasetError};
use actiongraph::graph::export::to_dot;
use actiongraph::graph::{BuildOptions, DEFAULT_THETA};
use actiongraph::pipeline::{
    analyze_all, build_all, read_graphs, write_graphs, GraphParams, Graphs,
};
use actiongraph::report::{write_graph_tables, write_report};
use actiongraph::synth;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "actiongraph",
    version,
    about = "Consensus action graphs from agent trajectories"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientArg {
    Mock,
    Live,
}

impl From<ClientArg> for Backend {
    fn from(c: ClientArg) -> Self {
        match c {
            ClientArg::Mock => Backend::Mock,
            ClientArg::Live => Backend::Live,
        }
    }
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with `ground_truth.json`.
    Synth {
        #[command(flatten)]
        out: OutArg,
        /// RNG seed; the same seed writes the same bytes.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of tasks.
        #[arg(long, value_name = "N")]
        tasks: Option<usize>,
        /// Runs per agent per task.
        #[arg(long, value_name = "N")]
        runs: Option<usize>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Canonicalize a raw dump into a dataset directory.
    Ingest {
        /// Directory of raw task and trajectory JSON.
        input: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Converter for free-text steps; without one every step must be a call.
        #[arg(long, value_enum)]
        client: Option<ClientArg>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Label trajectory outcomes.
    Judge {
        dataset: PathBuf,
        /// Defaults to updating the dataset in place.
        #[command(flatten)]
        out: OutArg,
        /// Judge backend; mock is offline and deterministic.
        #[arg(long, value_enum)]
        client: Option<ClientArg>,
        /// Re-judge trajectories that already have an outcome.
        #[arg(long)]
        force: bool,
    },
    /// Build one consensus graph per task.
    Build {
        dataset: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Similarity threshold for merging actions, in (0, 1].
        #[arg(long)]
        theta: Option<f64>,
        /// Also write Graphviz files.
        #[arg(long)]
        dot: bool,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Propagate rewards and classify edges.
    Analyze {
        graphs: PathBuf,
        /// Defaults to updating the graphs in place.
        #[command(flatten)]
        out: OutArg,
        /// Reward discount, in (0, 1).
        #[arg(long)]
        gamma: Option<f64>,
        /// Also write Graphviz files with edges colored by class.
        #[arg(long)]
        dot: bool,
    },
    /// Write CSV tables and the markdown report.
    Report {
        dataset: PathBuf,
        graphs: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Write Graphviz files and flat node and edge tables.
    Export {
        graphs: PathBuf,
        #[command(flatten)]
        out: OutArg,
        /// Tables only, no Graphviz files.
        #[arg(long = "no-dot", action = clap::ArgAction::SetFalse)]
        dot: bool,
    },
}

struct Failure {
    code: String,
    message: String,
    exit: u8,
    details: Vec<String>,
}

impl Failure {
    fn new(code: impl Into<String>, message: impl ToString) -> Self {
        Failure {
            code: code.into(),
            message: message.to_string(),
            exit: 1,
            details: Vec::new(),
        }
    }

    fn exit(mut self, exit: u8) -> Self {
        self.exit = exit;
        self
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    let exit = match e {
        DatasetError::MissingDirectory(_) | DatasetError::Io { .. } => 1,
        _ => 4,
    };
    Failure::new(e.code(), &e).exit(exit)
}

macro_rules! coded {
    ($e:expr) => {
        $e.map_err(|e| Failure::new(e.code(), &e))
    };
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("error-code: USAGE");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            for d in &f.details {
                eprintln!("  {d}");
            }
            eprintln!("error: {}", f.message);
            eprintln!("error-code: {}", f.code);
            ExitCode::from(f.exit)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => coded!(RunConfig::load(path))?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn out_dir(out: &OutArg, cfg: &RunConfig, fallback: Option<&Path>) -> Result<PathBuf, Failure> {
    out.out
        .clone()
        .or_else(|| cfg.output.clone())
        .or_else(|| fallback.map(Path::to_path_buf))
        .ok_or_else(|| Failure::new("USAGE", "--out is required").exit(2))
}

/// Refuses to write into a non-empty directory unless forced.
fn ensure_writable(dir: &Path, force: bool) -> Result<(), Failure> {
    let occupied = fs::read_dir(dir).is_ok_and(|mut it| it.next().is_some());
    if occupied && !force {
        return Err(Failure::new(
            "OUTPUT_EXISTS",
            format!("{} is not empty; pass --force to overwrite", dir.display()),
        ));
    }
    Ok(())
}

fn retry_policy(cfg: &RunConfig) -> RetryPolicy {
    RetryPolicy {
        attempts: cfg.client.retries,
        base_delay: Duration::from_millis(cfg.client.retry_base_ms),
    }
}

#[cfg(feature = "live-client")]
fn live_client(cfg: &RunConfig, model: &str) -> Result<Box<dyn AnnotatorClient>, Failure> {
    use actiongraph::annotation::live::{LiveClient, LiveConfig};
    let c = &cfg.client;
    let live = LiveConfig {
        endpoint: c.endpoint.clone(),
        model: model.to_string(),
        temperature: c.temperature,
        timeout_secs: c.timeout_secs,
        api_key_env: c.api_key_env.clone(),
    };
    let client = coded!(LiveClient::from_env(live))?;
    Ok(Box::new(client))
}

#[cfg(not(feature = "live-client"))]
fn live_client(_cfg: &RunConfig, _model: &str) -> Result<Box<dyn AnnotatorClient>, Failure> {
    Err(Failure::new(
        "CLIENT_UNAVAILABLE",
        "this build has no live client; rebuild with the live-client feature",
    ))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            seed,
            tasks,
            runs,
            force,
        } => {
            let dir = out_dir(&out, &cfg, None)?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = tasks {
                cfg.synth.n_tasks = n;
            }
            if let Some(n) = runs {
                cfg.synth.runs_per_agent = n;
            }
            ensure_writable(&dir, force)?;
            let (d, truth) = coded!(synth::generate(&cfg.synth))?;
            synth::write(&d, &truth, &dir).map_err(dataset_failure)?;
            println!(
                "synth: seed {} wrote {} tasks, {} trajectories, {} actions to {}",
                cfg.synth.seed,
                d.tasks.len(),
                d.trajectories.len(),
                d.action_count(),
                dir.display()
            );
        }
        Command::Ingest {
            input,
            out,
            client,
            force,
        } => {
            let dir = out_dir(&out, &cfg, None)?;
            if dir != input {
                ensure_writable(&dir, force)?;
            }
            let raw = load_raw(&input).map_err(dataset_failure)?;
            let converter: Option<Box<dyn AnnotatorClient>> = match client.map(Backend::from) {
                None => None,
                Some(Backend::Mock) => Some(Box::new(MockConverterClient)),
                Some(Backend::Live) => {
                    Some(live_client(&cfg, &cfg.client.converter_model.clone())?)
                }
            };
            let (d, report) = canonicalize(
                raw,
                converter.as_deref(),
                &retry_policy(&cfg),
                cfg.client_parallelism(),
            )
            .map_err(|e| {
                let exit = if e.code() == "CONVERSION_FAILED" {
                    1
                } else {
                    4
                };
                Failure::new(e.code(), &e).exit(exit)
            })?;
            let violations = validate_dataset(&d);
            if !violations.is_empty() {
                let mut f = Failure::new(
                    "INVALID_DATASET",
                    format!("{} violations", violations.len()),
                )
                .exit(4);
                f.details = violations.iter().map(ToString::to_string).collect();
                return Err(f);
            }
            save_dataset(&d, &dir).map_err(dataset_failure)?;
            for lt in &report.low_trust {
                eprintln!(
                    "low-trust: {} step {}: {:?} -> {} (confidence {})",
                    lt.file.display(),
                    lt.step,
                    lt.description,
                    lt.call,
                    lt.confidence
                );
            }
            println!(
                "ingest: {} trajectories; {} steps kept, {} converted into {} calls, {} low-trust",
                d.trajectories.len(),
                report.passed_through,
                report.converted,
                report.emitted,
                report.low_trust.len()
            );
        }
        Command::Judge {
            dataset,
            out,
            client,
            force,
        } => {
            if let Some(c) = client {
                cfg.client.backend = c.into();
            }
            let dir = out_dir(&out, &cfg, Some(&dataset))?;
            let d = load_dataset(&dataset).map_err(dataset_failure)?;
            let client: Box<dyn AnnotatorClient> = match cfg.client.backend {
                Backend::Mock => Box::new(MockJudgeClient::default()),
                Backend::Live => live_client(&cfg, &cfg.client.judge_model.clone())?,
            };
            let opts = JudgeOptions {
                force,
                retry: retry_policy(&cfg),
                parallelism: cfg.client_parallelism(),
            };
            let (judged, report) = judge(&d, client.as_ref(), &opts);
            save_dataset(&judged, &dir).map_err(dataset_failure)?;
            println!(
                "judge: {} judged, {} already judged, {} failed ({})",
                report.judged,
                report.skipped,
                report.failures.len(),
                client.identity()
            );
            if report.is_partial() {
                let mut f = Failure::new(
                    "PARTIAL",
                    format!(
                        "{} trajectories could not be judged; progress saved to {}",
                        report.failures.len(),
                        dir.display()
                    ),
                )
                .exit(3);
                f.details = report
                    .failures
                    .iter()
                    .map(|x| {
                        format!(
                            "({}, {}, {}) after {} attempts: {} {}",
                            x.task_id, x.agent_id, x.run_index, x.attempts, x.code, x.message
                        )
                    })
                    .collect();
                return Err(f);
            }
        }
        Command::Build {
            dataset,
            out,
            theta,
            dot,
            force,
        } => {
            if let Some(t) = theta {
                cfg.theta = t;
            }
            coded!(cfg.validate())?;
            let dir = out_dir(&out, &cfg, None)?;
            ensure_writable(&dir, force)?;
            let d = load_dataset(&dataset).map_err(dataset_failure)?;
            let opts = cfg.build_options();
            let graphs = coded!(build_all(&d, opts, cfg.parallelism()))?;
            let params = GraphParams {
                build: opts,
                analysis: None,
            };
            coded!(write_graphs(&dir, &graphs, &params, dot))?;
            let (nodes, edges) = totals(&graphs);
            println!(
                "build: {} graphs, {nodes} nodes, {edges} edges at theta {}",
                graphs.len(),
                cfg.theta
            );
            if cfg.theta != DEFAULT_THETA {
                let reference = BuildOptions {
                    theta: DEFAULT_THETA,
                    ..opts
                };
                let base = coded!(build_all(&d, reference, cfg.parallelism()))?;
                let (base_nodes, _) = totals(&base);
                let (lo, hi) = if cfg.theta > DEFAULT_THETA {
                    (base_nodes, nodes)
                } else {
                    (nodes, base_nodes)
                };
                println!(
                    "build: nodes at theta {}: {nodes}; at theta {DEFAULT_THETA}: {base_nodes}; monotone: {}",
                    cfg.theta,
                    lo <= hi
                );
            }
        }
        Command::Analyze {
            graphs,
            out,
            gamma,
            dot,
        } => {
            if let Some(g) = gamma {
                cfg.rewards.gamma = g;
            }
            coded!(cfg.validate())?;
            let dir = out_dir(&out, &cfg, Some(&graphs))?;
            let (loaded, mut params) = coded!(read_graphs(&graphs))?;
            let analysis = cfg.analysis();
            let analyzed = coded!(analyze_all(loaded, &analysis, cfg.parallelism()))?;
            params.analysis = Some(analysis);
            coded!(write_graphs(&dir, &analyzed, &params, dot))?;
            let mut counts = [0usize; 4];
            for g in analyzed.values() {
                for (c, n) in counts
                    .iter_mut()
                    .zip(actiongraph::analysis::class_counts(g))
                {
                    *c += n;
                }
            }
            println!(
                "analyze: {} graphs at gamma {}; edges trap {} critical {} bottleneck {} normal {}",
                analyzed.len(),
                cfg.rewards.gamma,
                counts[0],
                counts[1],
                counts[2],
                counts[3]
            );
        }
        Command::Report {
            dataset,
            graphs,
            out,
        } => {
            let dir = out_dir(&out, &cfg, None)?;
            let d = load_dataset(&dataset).map_err(dataset_failure)?;
            let (loaded, params) = coded!(read_graphs(&graphs))?;
            cfg.theta = params.build.theta;
            cfg.edge_counting = params.build.counting;
            if let Some(a) = params.analysis {
                cfg.rewards = a.reward;
                cfg.classifier = a.classifier;
            }
            let summary = coded!(write_report(
                &dir,
                &d,
                &loaded,
                &cfg.buckets,
                &cfg.parameters()
            ))?;
            if let Some(note) = &summary.learning_curve_note {
                eprintln!("report: learning curve skipped: {note}");
            }
            println!(
                "report: {} tasks, {} trajectories written to {}",
                summary.tasks,
                summary.trajectories,
                dir.display()
            );
        }
        Command::Export { graphs, out, dot } => {
            let dir = out_dir(&out, &cfg, None)?;
            let (loaded, _) = coded!(read_graphs(&graphs))?;
            coded!(write_graph_tables(&dir, &loaded))?;
            if dot {
                for (task_id, g) in &loaded {
                    let path = dir.join(format!("{}.dot", file_stem(task_id)));
                    fs::write(&path, to_dot(g))
                        .map_err(|e| Failure::new("IO", format!("{}: {e}", path.display())))?;
                }
            }
            println!(
                "export: {} graphs written to {}",
                loaded.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn totals(graphs: &Graphs) -> (usize, usize) {
    graphs
        .values()
        .fold((0, 0), |(n, e), g| (n + g.node_count(), e + g.edge_count()))
}

fn file_stem(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
