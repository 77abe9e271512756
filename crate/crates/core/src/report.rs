//! CSV tables and the markdown summary.
//!
//! Every number is printed with a fixed precision so that reports are
//! byte-stable for a fixed input.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::analysis::class_counts;
use crate::dataset::{create_dir, DatasetError};
use crate::graph::EdgeClass;
use crate::metrics::{
    self, framework_stats, length_bucket_success, necessity_breakdown, task_stats, BucketConfig,
    MetricsError, Rate,
};
use crate::model::Dataset;
use crate::pipeline::Graphs;

pub const FRAMEWORK_CSV: &str = "framework_stats.csv";
pub const TASK_CSV: &str = "task_stats.csv";
pub const NECESSITY_CSV: &str = "necessity_breakdown.csv";
pub const LEARNING_CSV: &str = "learning_curve.csv";
pub const LENGTH_CSV: &str = "length_success.csv";
pub const CLASSIFICATION_CSV: &str = "classification_summary.csv";
pub const REPORT_MD: &str = "report.md";

/// Column set of the framework comparison table.
pub const FRAMEWORK_COLUMNS: [&str; 7] = [
    "Framework",
    "Success",
    "Failure",
    "Success Rate",
    "Avg Steps",
    "Avg. Confidence",
    "Necessity Rate",
];

const NO_DATA: &str = "_No data._";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] DatasetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Metrics(e) => e.code(),
            ReportError::Io(e) => e.code(),
            ReportError::Csv(_) => "IO",
        }
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn opt4(x: Option<f64>) -> String {
    x.map(f4).unwrap_or_default()
}

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

fn rate_cells(r: &Rate) -> [String; 3] {
    [r.hits.to_string(), r.total.to_string(), opt4(r.value())]
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    fn markdown(&self, out: &mut String) {
        if self.rows.is_empty() {
            out.push_str(NO_DATA);
            out.push_str("\n\n");
            return;
        }
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&self.header));
        out.push_str(&line(&vec!["---".to_string(); self.header.len()]));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out.push('\n');
    }
}

/// Outcome of [`write_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub trajectories: usize,
    pub tasks: usize,
    /// Set when the learning curve was skipped for missing labels.
    pub learning_curve_note: Option<String>,
}

/// Writes all CSVs and `report.md` into `dir`. `params` is printed verbatim
/// as the run's parameterization.
pub fn write_report(
    dir: &Path,
    d: &Dataset,
    graphs: &Graphs,
    buckets: &BucketConfig,
    params: &[(String, String)],
) -> Result<ReportSummary, ReportError> {
    buckets.validate()?;
    create_dir(dir)?;
    let mut md = String::from("# Trajectory analysis report\n\n");

    md.push_str("## Parameters\n\n");
    let mut t = Table::new(&["Parameter", "Value"]);
    for (k, v) in params {
        t.push(vec![k.clone(), v.clone()]);
    }
    t.markdown(&mut md);

    // Framework comparison.
    let stats = framework_stats(d)?;
    let mut csv_t = Table::new(&[
        "agent_id",
        "success",
        "failure",
        "success_rate",
        "avg_steps",
        "avg_confidence",
        "necessity_hits",
        "necessity_total",
        "necessity_rate",
    ]);
    let mut md_t = Table::new(&FRAMEWORK_COLUMNS);
    for r in &stats {
        csv_t.push(vec![
            r.agent_id.clone(),
            r.success_count.to_string(),
            r.failure_count.to_string(),
            f4(r.success_rate),
            f4(r.avg_steps),
            opt4(r.avg_confidence),
            r.necessity.hits.to_string(),
            r.necessity.total.to_string(),
            opt4(r.necessity_rate()),
        ]);
        let name = if r.agent_id == metrics::TOTAL_ROW {
            "**Total**".to_string()
        } else {
            r.agent_id.clone()
        };
        md_t.push(vec![
            name,
            r.success_count.to_string(),
            r.failure_count.to_string(),
            pct(Some(r.success_rate)),
            format!("{:.2}", r.avg_steps),
            r.avg_confidence.map_or("n/a".into(), |c| format!("{c:.3}")),
            pct(r.necessity_rate()),
        ]);
    }
    csv_t.write_csv(&dir.join(FRAMEWORK_CSV))?;
    md.push_str("## Framework performance\n\n");
    md_t.markdown(&mut md);

    // Dataset overview.
    md.push_str("## Dataset\n\n");
    if d.trajectories.is_empty() {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    } else {
        let anomalies = metrics::one_step_anomalies(d);
        let infl = metrics::mean_inflation(d)?;
        let agreement = metrics::cross_agent_agreement(d)?;
        let mut t = Table::new(&["Quantity", "Value"]);
        t.push(vec!["Tasks".into(), d.tasks.len().to_string()]);
        t.push(vec![
            "Trajectories".into(),
            d.trajectories.len().to_string(),
        ]);
        t.push(vec!["Actions".into(), d.action_count().to_string()]);
        t.push(vec![
            "Graph nodes".into(),
            graphs
                .values()
                .map(|g| g.node_count())
                .sum::<usize>()
                .to_string(),
        ]);
        t.push(vec![
            "Graph edges".into(),
            graphs
                .values()
                .map(|g| g.edge_count())
                .sum::<usize>()
                .to_string(),
        ]);
        t.push(vec![
            "One-step anomaly tasks".into(),
            anomalies.len().to_string(),
        ]);
        t.push(vec![
            "Mean step inflation".into(),
            infl.map_or("n/a".into(), |v| format!("{v:.2}x")),
        ]);
        if let Some(a) = agreement {
            t.push(vec![
                "Tasks attempted by all agents".into(),
                a.tasks.to_string(),
            ]);
            t.push(vec!["All agents succeed".into(), pct(Some(a.all_succeed))]);
            t.push(vec!["All agents fail".into(), pct(Some(a.all_fail))]);
            t.push(vec!["Mixed outcomes".into(), pct(Some(a.mixed))]);
        }
        t.markdown(&mut md);
    }

    // Per-task statistics.
    let tasks = task_stats(d, graphs, buckets)?;
    let mut t = Table::new(&[
        "task_id",
        "trajectories",
        "nodes",
        "edges",
        "complexity",
        "complexity_bucket",
        "shortest_success",
        "mean_inflation",
        "one_step_anomaly",
        "entropy_bits",
        "agreement",
    ]);
    let mut bucket_of = BTreeMap::new();
    for r in &tasks {
        if let Some(b) = r.complexity_bucket {
            bucket_of.insert(r.task_id.clone(), b);
        }
        t.push(vec![
            r.task_id.clone(),
            r.trajectory_count.to_string(),
            r.node_count.to_string(),
            r.edge_count.to_string(),
            opt4(r.complexity),
            r.complexity_bucket
                .map(|b| b.name().to_string())
                .unwrap_or_default(),
            r.shortest_success_len
                .map(|n| n.to_string())
                .unwrap_or_default(),
            opt4(r.mean_inflation),
            r.one_step_anomaly.to_string(),
            f4(r.entropy_bits),
            r.agreement
                .map(|a| a.name().to_string())
                .unwrap_or_default(),
        ]);
    }
    t.write_csv(&dir.join(TASK_CSV))?;

    md.push_str("## Complexity\n\n");
    let mut t = Table::new(&["Bucket", "Tasks", "Success Rate"]);
    let mut per_bucket: BTreeMap<metrics::ComplexityBucket, (usize, Rate)> = BTreeMap::new();
    for (task_id, trajs) in d.by_task() {
        if let Some(&b) = bucket_of.get(task_id) {
            let e = per_bucket.entry(b).or_default();
            e.0 += 1;
            for tr in trajs {
                e.1.add(tr.outcome.is_success());
            }
        }
    }
    for (b, (n, r)) in &per_bucket {
        t.push(vec![b.name().to_string(), n.to_string(), pct(r.value())]);
    }
    t.markdown(&mut md);

    // Necessity.
    let nb = necessity_breakdown(d, &bucket_of);
    let mut csv_t = Table::new(&["group", "key", "hits", "total", "rate"]);
    let mut row = |group: &str, key: &str, r: &Rate| {
        let [h, n, v] = rate_cells(r);
        csv_t.push(vec![group.into(), key.into(), h, n, v]);
    };
    row("overall", "all", &nb.overall);
    for (k, r) in &nb.by_kind {
        row("kind", k.name(), r);
    }
    for (k, r) in &nb.by_band {
        row("confidence", k.name(), r);
    }
    for (k, r) in &nb.by_phase {
        row("phase", k.name(), r);
    }
    for (k, r) in &nb.by_complexity {
        row("complexity", k.name(), r);
    }
    row("steps", "1-3", &nb.first_three);
    row("steps", "4+", &nb.after_three);
    row("steps", "11+", &nb.after_ten);
    md.push_str("## Action necessity\n\n");
    if nb.overall.total == 0 {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    } else {
        let mut t = Table::new(&["Group", "Key", "Necessary", "Labeled", "Rate"]);
        for r in &csv_t.rows {
            if r[3] != "0" {
                t.push(vec![
                    r[0].clone(),
                    r[1].clone(),
                    r[2].clone(),
                    r[3].clone(),
                    pct(r[4].parse().ok()),
                ]);
            }
        }
        t.markdown(&mut md);
    }
    csv_t.write_csv(&dir.join(NECESSITY_CSV))?;

    // Learning curve.
    let mut t = Table::new(&["run_index", "hits", "total", "rate"]);
    let mut note = None;
    match metrics::learning_curve(d) {
        Ok(curve) => {
            for (run, r) in &curve {
                let [h, n, v] = rate_cells(r);
                t.push(vec![run.to_string(), h, n, v]);
            }
        }
        Err(e) => note = Some(format!("{}: {e}", e.code())),
    }
    t.write_csv(&dir.join(LEARNING_CSV))?;
    md.push_str("## Necessity by attempt\n\n");
    if let Some(n) = &note {
        md.push_str(&format!("_Unavailable ({n})._\n\n"));
    } else {
        t.markdown(&mut md);
    }

    // Length buckets.
    let mut t = Table::new(&["length", "successes", "total", "rate"]);
    for b in length_bucket_success(d, &buckets.length_edges)? {
        let [h, n, v] = rate_cells(&b.outcomes);
        t.push(vec![b.label(), h, n, v]);
    }
    t.write_csv(&dir.join(LENGTH_CSV))?;
    md.push_str("## Success by trajectory length\n\n");
    t.markdown(&mut md);

    // Edge classes.
    let mut t = Table::new(&["task_id", "trap", "critical", "bottleneck", "normal"]);
    let mut totals = [0usize; 4];
    let classified = graphs
        .values()
        .any(|g| g.edges.values().any(|e| e.class.is_some()));
    if classified {
        for (task_id, g) in graphs {
            let c = class_counts(g);
            for (t, x) in totals.iter_mut().zip(c) {
                *t += x;
            }
            let mut r = vec![task_id.clone()];
            r.extend(c.iter().map(|x| x.to_string()));
            t.push(r);
        }
    }
    t.write_csv(&dir.join(CLASSIFICATION_CSV))?;
    md.push_str("## Edge classes\n\n");
    if classified {
        let mut t = Table::new(&["Class", "Edges"]);
        for (class, n) in EdgeClass::ALL.iter().zip(totals) {
            t.push(vec![class.name().to_string(), n.to_string()]);
        }
        t.markdown(&mut md);
    } else {
        md.push_str(NO_DATA);
        md.push_str("\n\n");
    }

    while md.ends_with("\n\n") {
        md.pop();
    }
    let path = dir.join(REPORT_MD);
    fs::write(&path, md).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(ReportSummary {
        trajectories: d.trajectories.len(),
        tasks: d.tasks.len(),
        learning_curve_note: note,
    })
}

pub const NODES_CSV: &str = "nodes.csv";
pub const EDGES_CSV: &str = "edges.csv";

/// Flat node and edge tables across every graph.
pub fn write_graph_tables(dir: &Path, graphs: &Graphs) -> Result<(), ReportError> {
    create_dir(dir)?;
    let mut nodes = Table::new(&[
        "task_id",
        "node",
        "action",
        "visits",
        "success_visits",
        "end_success",
        "end_fail",
        "value",
        "importance",
    ]);
    let mut edges = Table::new(&[
        "task_id",
        "from",
        "to",
        "count",
        "success",
        "fail",
        "success_ratio",
        "weight",
        "class",
    ]);
    for (task_id, g) in graphs {
        for n in &g.nodes {
            nodes.push(vec![
                task_id.clone(),
                n.id.to_string(),
                n.representative.canonical_string(),
                n.visit_count.to_string(),
                n.success_visit_count.to_string(),
                n.end_success_count.to_string(),
                n.end_fail_count.to_string(),
                n.value.map(|v| format!("{v:.6}")).unwrap_or_default(),
                n.importance.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ]);
        }
        for e in g.edges.values() {
            edges.push(vec![
                task_id.clone(),
                e.from.to_string(),
                e.to.to_string(),
                e.count.to_string(),
                e.success_count.to_string(),
                e.fail_count.to_string(),
                format!("{:.6}", e.success_ratio),
                format!("{:.6}", e.weight),
                e.class.map(|c| c.name().to_string()).unwrap_or_default(),
            ]);
        }
    }
    nodes.write_csv(&dir.join(NODES_CSV))?;
    edges.write_csv(&dir.join(EDGES_CSV))?;
    Ok(())
}
