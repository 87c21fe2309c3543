use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::feedback::DeltaEstimate;

use super::ledger::CommLedger;
use super::message::MessageKind;
use super::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss of the forward pass that produced this epoch's step.
    pub loss: f64,
    /// Accuracies of the updated model on the full graph.
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Forward feature traffic, summed over all workers.
    pub payload_bytes: u64,
    pub metadata_bytes: u64,
    pub baseline_bytes: u64,
    pub grad_bytes: u64,
    pub param_bytes: u64,
    pub delta_emp: Option<DeltaEstimate>,
    pub max_residual_norm: f64,
    /// Stored residual elements across all accumulators.
    pub residual_elements: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: TrainConfig,
    pub graph_fingerprint: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub edge_cut: usize,
    /// Node feature elements over every message-passing layer input.
    pub feature_elements: usize,
    pub epochs: Vec<EpochRecord>,
    pub ledger: CommLedger,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "epoch",
    "loss",
    "train_acc",
    "val_acc",
    "test_acc",
    "payload_bytes",
    "metadata_bytes",
    "baseline_bytes",
    "grad_bytes",
    "param_bytes",
    "delta_emp",
    "max_residual_norm",
    "residual_elements",
];

fn delta_json(d: Option<DeltaEstimate>) -> Value {
    match d {
        Some(DeltaEstimate::Finite(x)) => json!(x),
        Some(DeltaEstimate::Infinite) => json!("inf"),
        None => Value::Null,
    }
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.final_epoch().and_then(|e| e.test_acc)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn total_payload_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.payload_bytes).sum()
    }

    pub fn total_baseline_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.baseline_bytes).sum()
    }

    /// Forward payload relative to the uncompressed cost over the run;
    /// `None` when nothing crossed a worker boundary.
    pub fn bytes_ratio(&self) -> Option<f64> {
        let base = self.total_baseline_bytes();
        (base > 0).then(|| self.total_payload_bytes() as f64 / base as f64)
    }

    pub fn max_residual_norm(&self) -> f64 {
        self.epochs.iter().map(|e| e.max_residual_norm).fold(0.0, f64::max)
    }

    /// JSON with per-epoch columns as arrays. `config` replaces the
    /// training config echo when given.
    pub fn to_json(&self, config: Option<Value>) -> Value {
        let col = |f: &dyn Fn(&EpochRecord) -> Value| Value::Array(self.epochs.iter().map(f).collect());
        let config = config.unwrap_or_else(|| serde_json::to_value(&self.config).expect("config serialises"));
        let feature_sent = self.ledger.run_total(MessageKind::is_feature);
        json!({
            "config": config,
            "graph": {
                "fingerprint": self.graph_fingerprint,
                "nodes": self.num_nodes,
                "edges": self.num_edges,
                "edge_cut": self.edge_cut,
            },
            "epochs": self.epochs.len(),
            "loss": col(&|e| json!(e.loss)),
            "train_acc": col(&|e| json!(e.train_acc)),
            "val_acc": col(&|e| json!(e.val_acc)),
            "test_acc": col(&|e| json!(e.test_acc)),
            "payload_bytes": col(&|e| json!(e.payload_bytes)),
            "metadata_bytes": col(&|e| json!(e.metadata_bytes)),
            "baseline_bytes": col(&|e| json!(e.baseline_bytes)),
            "grad_bytes": col(&|e| json!(e.grad_bytes)),
            "param_bytes": col(&|e| json!(e.param_bytes)),
            "delta_emp": col(&|e| delta_json(e.delta_emp)),
            "max_residual_norm": col(&|e| json!(e.max_residual_norm)),
            "residual_elements": col(&|e| json!(e.residual_elements)),
            "summary": {
                "bytes_ratio": self.bytes_ratio(),
                "feature_payload_bytes": feature_sent.payload,
                "feature_metadata_bytes": feature_sent.metadata,
                "feature_elements": self.feature_elements,
                "messages": self.ledger.message_count(),
            },
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for e in &self.epochs {
            let delta = match e.delta_emp {
                Some(DeltaEstimate::Finite(x)) => x.to_string(),
                Some(DeltaEstimate::Infinite) => "inf".to_string(),
                None => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.loss,
                opt_cell(e.train_acc),
                opt_cell(e.val_acc),
                opt_cell(e.test_acc),
                e.payload_bytes,
                e.metadata_bytes,
                e.baseline_bytes,
                e.grad_bytes,
                e.param_bytes,
                delta,
                e.max_residual_norm,
                e.residual_elements
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv())
    }

    pub fn write_json(&self, path: &Path, config: Option<Value>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(config)).expect("report serialises");
        write_file(path, &text)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `b − a` on the headline metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunDiff {
    /// Final test accuracy difference, as a fraction.
    pub test_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub final_loss: f64,
    /// Relative change of total forward payload bytes.
    pub payload_bytes: f64,
    /// Change of the last epoch's δ, when both are finite.
    pub delta_emp: Option<f64>,
}

pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunDiff> {
    let mismatch = |what: &str, x: String, y: String| Err(Error::Comparability(format!("{what} differs: {x} vs {y}")));
    if a.graph_fingerprint != b.graph_fingerprint {
        return mismatch("graph", a.graph_fingerprint.clone(), b.graph_fingerprint.clone());
    }
    if a.config.seed != b.config.seed {
        return mismatch("seed", a.config.seed.to_string(), b.config.seed.to_string());
    }
    if a.epochs.len() != b.epochs.len() {
        return mismatch("epoch count", a.epochs.len().to_string(), b.epochs.len().to_string());
    }
    let (ea, eb) = match (a.final_epoch(), b.final_epoch()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Comparability("a report has no epochs".into())),
    };
    let diff = |x: Option<f64>, y: Option<f64>| Some(y? - x?);
    let (pa, pb) = (a.total_payload_bytes() as f64, b.total_payload_bytes() as f64);
    let payload_bytes = if pa == pb {
        0.0
    } else if pa == 0.0 {
        f64::INFINITY
    } else {
        (pb - pa) / pa
    };
    let finite = |d: Option<DeltaEstimate>| match d {
        Some(DeltaEstimate::Finite(x)) => Some(x),
        _ => None,
    };
    Ok(RunDiff {
        test_acc: diff(ea.test_acc, eb.test_acc),
        val_acc: diff(ea.val_acc, eb.val_acc),
        final_loss: eb.loss - ea.loss,
        payload_bytes,
        delta_emp: diff(finite(ea.delta_emp), finite(eb.delta_emp)),
    })
}
