//! Single runs, ratio sweeps and the feedback × condenser ablation.
//!
//! Every run writes `report.json`, `metrics.csv` and the effective
//! `config.txt` into its own directory; tables are written after all
//! runs finish.

use std::path::{Path, PathBuf};

use condensegraph::condense::Condensation;
use condensegraph::graph::Graph;
use condensegraph::runtime::{run_training, RunReport, TrainConfig};
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepPoint, DEFAULT_RATIO};
use crate::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

fn train_and_write(graph: &Graph, config: &ExperimentConfig, dir: &Path, label: &str) -> Result<RunReport, CliError> {
    create_dir(dir)?;
    let report = run_training(graph, &config.train).map_err(CliError::runtime(format!("run {label}")))?;
    report
        .write_json(&dir.join(REPORT_FILE), Some(config.to_json()))
        .map_err(CliError::runtime(format!("writing {label} report")))?;
    report
        .write_csv(&dir.join(METRICS_FILE))
        .map_err(CliError::runtime(format!("writing {label} metrics")))?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_text())
        .map_err(CliError::io(format!("writing {label} config")))?;
    Ok(report)
}

/// Trains once and writes the report files into `out`.
pub fn run_single(config: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let graph = config.build_graph()?;
    train_and_write(&graph, config, out, "single")
}

/// Runs every `(label, config)` pair, each into `out/label`, possibly in
/// parallel; the first failure in input order is returned.
fn run_all(
    graph: &Graph,
    runs: Vec<(String, ExperimentConfig)>,
    out: &Path,
) -> Result<Vec<(String, ExperimentConfig, RunReport)>, CliError> {
    let results: Vec<Result<RunReport, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(label, config)| {
                let dir = out.join(label);
                scope.spawn(move || train_and_write(graph, config, &dir, label))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    runs.into_iter()
        .zip(results)
        .map(|((label, config), report)| Ok((label, config, report?)))
        .collect()
}

fn final_metric(report: &RunReport, pick: impl Fn(&condensegraph::runtime::EpochRecord) -> Option<f64>) -> Option<f64> {
    report.final_epoch().and_then(pick)
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e.into(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    /// Empty for the uncompressed baseline.
    pub r: Option<f64>,
    pub condensation: String,
    pub feedback: bool,
    pub final_test_acc: Option<f64>,
    pub final_val_acc: Option<f64>,
    pub bytes_ratio: Option<f64>,
    pub payload_bytes: u64,
    pub baseline_bytes: u64,
}

impl SweepRow {
    fn new(r: Option<f64>, train: &TrainConfig, report: &RunReport) -> Self {
        Self {
            r,
            condensation: train.condensation.to_string(),
            feedback: train.feedback,
            final_test_acc: final_metric(report, |e| e.test_acc),
            final_val_acc: final_metric(report, |e| e.val_acc),
            bytes_ratio: report.bytes_ratio(),
            payload_bytes: report.total_payload_bytes(),
            baseline_bytes: report.total_baseline_bytes(),
        }
    }
}

pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// The config of one sweep point; the base condenser is kept unless it
/// is `none`, in which case compressed points use the mean.
pub fn sweep_config(base: &ExperimentConfig, point: SweepPoint) -> ExperimentConfig {
    let train = match point {
        None => base.train.baseline(),
        Some(r) => TrainConfig {
            condensation: match base.train.condensation {
                Condensation::None => Condensation::Mean,
                c => c,
            },
            ratio: Some(r),
            ..base.train.clone()
        },
    };
    ExperimentConfig {
        train,
        ..base.clone()
    }
}

fn point_label(point: SweepPoint) -> String {
    point.map_or("baseline".to_string(), |r| format!("r-{r}"))
}

/// One run per sweep point with a shared seed, plus `sweep.csv`.
pub fn run_sweep(config: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    if config.sweep.is_empty() {
        return Err(CliError::Config {
            field: "sweep".into(),
            reason: "needs at least one point".into(),
        });
    }
    let graph = config.build_graph()?;
    let runs = config
        .sweep
        .iter()
        .map(|&p| (point_label(p), sweep_config(config, p)))
        .collect();
    create_dir(out)?;
    let rows: Vec<SweepRow> = run_all(&graph, runs, out)?
        .iter()
        .map(|(_, c, report)| SweepRow::new(c.train.ratio, &c.train, report))
        .collect();
    write_table(&out.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

/// {feedback on, off} × {none, mean, weighted, attention} at the base
/// ratio (or the default one), plus `ablation.csv`.
pub fn run_ablation(config: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    let graph = config.build_graph()?;
    let ratio = config.train.ratio.unwrap_or(DEFAULT_RATIO);
    let mut runs = Vec::new();
    for feedback in [true, false] {
        for condensation in Condensation::ALL {
            let train = TrainConfig {
                condensation,
                ratio: (condensation != Condensation::None).then_some(ratio),
                feedback,
                ..config.train.clone()
            };
            let label = format!("ef-{}-{condensation}", if feedback { "on" } else { "off" });
            runs.push((
                label,
                ExperimentConfig {
                    train,
                    ..config.clone()
                },
            ));
        }
    }
    create_dir(out)?;
    let rows: Vec<SweepRow> = run_all(&graph, runs, out)?
        .iter()
        .map(|(_, c, report)| SweepRow::new(c.train.ratio, &c.train, report))
        .collect();
    write_table(&out.join(ABLATION_FILE), &rows)?;
    Ok(rows)
}

/// Paths written by [`gen_data`].
#[derive(Clone, Debug, PartialEq)]
pub struct DataFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub masks: PathBuf,
}

/// Writes the configured SBM graph as edge-list, features, labels and
/// masks files.
pub fn gen_data(config: &ExperimentConfig, out: &Path) -> Result<DataFiles, CliError> {
    config.sbm_params()?;
    let graph = config.build_graph()?;
    create_dir(out)?;
    let files = DataFiles {
        edges: out.join("edges.txt"),
        features: out.join("features.txt"),
        labels: out.join("labels.txt"),
        masks: out.join("masks.txt"),
    };
    graph
        .write_files(&files.edges, &files.features, &files.labels, &files.masks)
        .map_err(CliError::runtime("writing graph files"))?;
    Ok(files)
}
