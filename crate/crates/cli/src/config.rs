//! Flat `key = value` experiment files.
//!
//! ```text
//! # comments start with '#'
//! graph = sbm
//! sbm.nodes = 400
//! workers = 4
//! condensation = mean
//! r = 0.5
//! ```
//!
//! Every key is optional; see [`ExperimentConfig::default`] for defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use condensegraph::condense::{Condensation, GroupingStrategy};
use condensegraph::graph::{generate_sbm, load_edge_list, Graph, PartitionMethod, SbmParams};
use condensegraph::runtime::{ExecMode, TrainConfig};

use crate::CliError;

/// Default compression ratio when condensing without an explicit `r`.
pub const DEFAULT_RATIO: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Sbm(SbmParams),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        masks: Option<PathBuf>,
        split_seed: u64,
    },
}

/// One point of a ratio sweep; `None` is the uncompressed baseline.
pub type SweepPoint = Option<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub train: TrainConfig,
    pub sweep: Vec<SweepPoint>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::Sbm(SbmParams {
                num_nodes: 400,
                num_classes: 4,
                p_in: 0.15,
                p_out: 0.01,
                feature_dim: 16,
                feature_noise: 1.0,
                seed: 0,
            }),
            train: TrainConfig {
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            sweep: vec![None, Some(0.1), Some(0.2), Some(0.3), Some(0.4), Some(0.5), Some(0.6)],
            out: PathBuf::from("out"),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn value<T: FromStr>(field: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| invalid(field, format!("cannot parse {raw:?}: {e}")))
}

fn flag(field: &str, raw: &str) -> Result<bool, CliError> {
    match raw {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(invalid(field, format!("expected true/false, got {raw:?}"))),
    }
}

fn sweep_points(raw: &str) -> Result<Vec<SweepPoint>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if s == "none" {
                Ok(None)
            } else {
                value::<f64>("sweep", s).map(Some)
            }
        })
        .collect()
}

fn grouping_name(g: GroupingStrategy) -> &'static str {
    match g {
        GroupingStrategy::Chunk => "chunk",
        GroupingStrategy::Kmeans => "kmeans",
    }
}

fn parse_grouping(raw: &str) -> Result<GroupingStrategy, CliError> {
    match raw {
        "chunk" => Ok(GroupingStrategy::Chunk),
        "kmeans" => Ok(GroupingStrategy::Kmeans),
        other => Err(invalid("grouping", format!("unknown strategy {other:?} (chunk | kmeans)"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        let mut sbm = match &config.graph {
            GraphSource::Sbm(p) => p.clone(),
            GraphSource::Files { .. } => unreachable!("default graph is an SBM"),
        };
        let mut graph_kind = "sbm".to_string();
        let (mut edges, mut features, mut labels, mut masks) = (None, None, None, None);
        let mut split_seed = 0;
        let mut ratio: Option<f64> = None;
        let mut seen = BTreeSet::new();

        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| invalid("config", format!("line {}: expected `key = value`", i + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(invalid(key, format!("line {}: key given twice", i + 1)));
            }
            let t = &mut config.train;
            match key {
                "graph" => graph_kind = raw.to_string(),
                "sbm.nodes" => sbm.num_nodes = value(key, raw)?,
                "sbm.classes" => sbm.num_classes = value(key, raw)?,
                "sbm.p_in" => sbm.p_in = value(key, raw)?,
                "sbm.p_out" => sbm.p_out = value(key, raw)?,
                "sbm.feature_dim" => sbm.feature_dim = value(key, raw)?,
                "sbm.noise" => sbm.feature_noise = value(key, raw)?,
                "sbm.seed" => sbm.seed = value(key, raw)?,
                "edges" => edges = Some(PathBuf::from(raw)),
                "features" => features = Some(PathBuf::from(raw)),
                "labels" => labels = Some(PathBuf::from(raw)),
                "masks" => masks = Some(PathBuf::from(raw)),
                "split_seed" => split_seed = value(key, raw)?,
                "workers" => t.workers = value(key, raw)?,
                "partition" => t.partition = value::<PartitionMethod>(key, raw)?,
                "partition_seed" => t.partition_seed = value(key, raw)?,
                "layers" => t.layers = value(key, raw)?,
                "hidden" => t.hidden = value(key, raw)?,
                "condensation" => t.condensation = value::<Condensation>(key, raw)?,
                "r" => ratio = Some(value(key, raw)?),
                "feedback" => t.feedback = flag(key, raw)?,
                "grouping" => t.grouping = parse_grouping(raw)?,
                "epochs" => t.epochs = value(key, raw)?,
                "lr" => t.learning_rate = value(key, raw)?,
                "momentum" => t.momentum = value(key, raw)?,
                "aux_lr" => t.aux_lr = value(key, raw)?,
                "seed" => t.seed = value(key, raw)?,
                "mode" => t.mode = value::<ExecMode>(key, raw)?,
                "sweep" => config.sweep = sweep_points(raw)?,
                "out" => config.out = PathBuf::from(raw),
                other => return Err(invalid(other, format!("line {}: unknown key", i + 1))),
            }
        }

        config.train.ratio = match (config.train.condensation, ratio) {
            (Condensation::None, r) => r,
            (_, None) => Some(DEFAULT_RATIO),
            (_, r) => r,
        };
        config.graph = match graph_kind.as_str() {
            "sbm" => GraphSource::Sbm(sbm),
            "files" => {
                let need = |p: Option<PathBuf>, field: &str| p.ok_or_else(|| invalid(field, "required when graph = files"));
                GraphSource::Files {
                    edges: need(edges, "edges")?,
                    features: need(features, "features")?,
                    labels: need(labels, "labels")?,
                    masks,
                    split_seed,
                }
            }
            other => return Err(invalid("graph", format!("unknown source {other:?} (sbm | files)"))),
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks every range the library would otherwise reject at run time.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(r) = self.train.ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid("r", format!("{r} is outside (0, 1)")));
            }
        }
        if self.train.condensation == Condensation::None && self.train.ratio.is_some() {
            return Err(invalid("r", "a compression ratio was given but condensation is none"));
        }
        self.train.validate().map_err(|e| match e {
            condensegraph::Error::Config { field, reason } => invalid(field, reason),
            other => invalid("config", other.to_string()),
        })?;
        if let Some(bad) = self.sweep.iter().flatten().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(invalid("sweep", format!("ratio {bad} is outside (0, 1)")));
        }
        if let GraphSource::Sbm(p) = &self.graph {
            if p.num_classes == 0 || p.num_nodes < p.num_classes {
                return Err(invalid("sbm.nodes", "need sbm.nodes >= sbm.classes >= 1"));
            }
            if !(0.0 <= p.p_out && p.p_out < p.p_in && p.p_in <= 1.0) {
                return Err(invalid("sbm.p_in", "need 0 <= sbm.p_out < sbm.p_in <= 1"));
            }
            if !(p.feature_noise >= 0.0 && p.feature_noise.is_finite()) {
                return Err(invalid("sbm.noise", "must be finite and non-negative"));
            }
            if p.feature_dim == 0 {
                return Err(invalid("sbm.feature_dim", "must be at least 1"));
            }
            if self.train.workers > p.num_nodes {
                return Err(invalid("workers", "more workers than nodes"));
            }
        }
        Ok(())
    }

    /// Writes every key, so `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("writing to a String");
        };
        match &self.graph {
            GraphSource::Sbm(p) => {
                put("graph", &"sbm");
                put("sbm.nodes", &p.num_nodes);
                put("sbm.classes", &p.num_classes);
                put("sbm.p_in", &p.p_in);
                put("sbm.p_out", &p.p_out);
                put("sbm.feature_dim", &p.feature_dim);
                put("sbm.noise", &p.feature_noise);
                put("sbm.seed", &p.seed);
            }
            GraphSource::Files {
                edges,
                features,
                labels,
                masks,
                split_seed,
            } => {
                put("graph", &"files");
                put("edges", &edges.display());
                put("features", &features.display());
                put("labels", &labels.display());
                if let Some(m) = masks {
                    put("masks", &m.display());
                }
                put("split_seed", split_seed);
            }
        }
        let t = &self.train;
        put("workers", &t.workers);
        put("partition", &t.partition);
        put("partition_seed", &t.partition_seed);
        put("layers", &t.layers);
        put("hidden", &t.hidden);
        put("condensation", &t.condensation);
        if let Some(r) = t.ratio {
            put("r", &r);
        }
        put("feedback", &t.feedback);
        put("grouping", &grouping_name(t.grouping));
        put("epochs", &t.epochs);
        put("lr", &t.learning_rate);
        put("momentum", &t.momentum);
        put("aux_lr", &t.aux_lr);
        put("seed", &t.seed);
        put("mode", &t.mode);
        let sweep: Vec<String> = self
            .sweep
            .iter()
            .map(|p| p.map_or("none".to_string(), |r| r.to_string()))
            .collect();
        put("sweep", &sweep.join(","));
        put("out", &self.out.display());
        s
    }

    /// The config echoed into report JSON.
    pub fn to_json(&self) -> serde_json::Value {
        let pairs = self
            .to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        serde_json::Value::Object(pairs)
    }

    pub fn build_graph(&self) -> Result<Graph, CliError> {
        let graph = match &self.graph {
            GraphSource::Sbm(p) => generate_sbm(p)?,
            GraphSource::Files {
                edges,
                features,
                labels,
                masks,
                split_seed,
            } => load_edge_list(edges, features, labels, masks.as_deref(), *split_seed)?,
        };
        if self.train.workers > graph.num_nodes() {
            return Err(invalid("workers", format!("{} workers for {} nodes", self.train.workers, graph.num_nodes())));
        }
        Ok(graph)
    }

    pub fn sbm_params(&self) -> Result<&SbmParams, CliError> {
        match &self.graph {
            GraphSource::Sbm(p) => Ok(p),
            GraphSource::Files { .. } => Err(invalid("graph", "gen-data needs graph = sbm")),
        }
    }
}
