//! Logical workers, the message bus and the synchronous training driver.

mod ledger;
mod message;
mod report;
mod worker;

use serde::{Deserialize, Serialize};

pub use ledger::{CommLedger, Direction, LedgerKey};
pub use message::{exchange, ExecMode, Message, MessageKind, Payload, WireSize, ELEMENT_BYTES, HEADER_BYTES, ID_BYTES};
pub use report::{compare_runs, EpochRecord, RunDiff, RunReport};

use crate::condense::{check_ratio, Condensation, GroupingStrategy};
use crate::error::{Error, Result};
use crate::feedback::{measure_delta, DeltaLog};
use crate::gnn::{accuracy, LocalAdjacency, Model};
use crate::graph::{partition_graph, Graph, PartitionMethod, Split};
use crate::numerics::{cross_entropy, sgd_step, SgdState};

use worker::Worker;

/// Largest tolerated parameter difference between replicas.
pub const REPLICA_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub workers: usize,
    pub partition: PartitionMethod,
    pub partition_seed: u64,
    /// Number of SAGE layers.
    pub layers: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub condensation: Condensation,
    /// Compression ratio; required exactly when condensing.
    pub ratio: Option<f64>,
    pub feedback: bool,
    pub grouping: GroupingStrategy,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step size of the attention parameters; 0 freezes them.
    pub aux_lr: f64,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            partition: PartitionMethod::BfsGreedy,
            partition_seed: 0,
            layers: 2,
            hidden: 32,
            condensation: Condensation::Mean,
            ratio: Some(0.5),
            feedback: true,
            grouping: GroupingStrategy::Kmeans,
            epochs: 100,
            learning_rate: 0.2,
            momentum: 0.9,
            aux_lr: 0.01,
            seed: 0,
            mode: ExecMode::Serial,
        }
    }
}

impl TrainConfig {
    /// Uncompressed exchange with everything else unchanged.
    pub fn baseline(&self) -> Self {
        Self {
            condensation: Condensation::None,
            ratio: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if self.layers == 0 {
            return Err(Error::config("layers", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.aux_lr >= 0.0 && self.aux_lr.is_finite()) {
            return Err(Error::config("aux_lr", "must be non-negative and finite"));
        }
        match (self.condensation, self.ratio) {
            (Condensation::None, Some(_)) => Err(Error::config(
                "ratio",
                "a compression ratio was given but condensation is none",
            )),
            (Condensation::None, None) => Ok(()),
            (_, None) => Err(Error::config("ratio", "condensation needs a compression ratio")),
            (_, Some(r)) => check_ratio(r).map_err(|_| Error::config("ratio", format!("{r} is outside (0, 1)"))),
        }
    }

    /// Layer widths `[d_in, hidden…, classes]`.
    pub fn dims(&self, feature_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![feature_dim];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        dims.push(num_classes);
        dims
    }
}

/// Runs `f` on every worker, on one thread or one thread per worker.
/// Results come back in worker order; the first error in that order wins.
fn each_worker<I, T, F>(workers: &mut [Worker], inputs: Vec<I>, mode: ExecMode, f: F) -> Result<Vec<T>>
where
    I: Send,
    T: Send,
    F: Fn(&mut Worker, I) -> Result<T> + Sync,
{
    debug_assert_eq!(workers.len(), inputs.len());
    match mode {
        ExecMode::Serial => workers.iter_mut().zip(inputs).map(|(w, i)| f(w, i)).collect(),
        ExecMode::Concurrent => {
            let f = &f;
            let results: Vec<Result<T>> = std::thread::scope(|scope| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .zip(inputs)
                    .map(|(w, i)| scope.spawn(move || f(w, i)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker thread panicked"))
                    .collect()
            });
            results.into_iter().collect()
        }
    }
}

fn units(n: usize) -> Vec<()> {
    vec![(); n]
}

fn train_count(graph: &Graph) -> Result<usize> {
    let n = graph.split_nodes(Split::Train).len();
    if n == 0 {
        return Err(Error::config("masks", "no training nodes"));
    }
    Ok(n)
}

struct Evaluator {
    adjacency: LocalAdjacency,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Evaluator {
    fn new(graph: &Graph) -> Self {
        Self {
            adjacency: LocalAdjacency::full(graph),
            train: graph.split_nodes(Split::Train),
            val: graph.split_nodes(Split::Val),
            test: graph.split_nodes(Split::Test),
        }
    }

    /// Exact full-graph accuracies of `model`; empty splits give `None`.
    fn accuracies(&self, model: &Model, graph: &Graph) -> Result<[Option<f64>; 3]> {
        let (logits, _) = model.forward_full(&self.adjacency, graph.features())?;
        let acc = |mask: &[usize]| accuracy(&logits, graph.labels(), mask).ok();
        Ok([acc(&self.train), acc(&self.val), acc(&self.test)])
    }
}

/// Distributed synchronous training over `config.workers` logical workers.
pub fn run_training(graph: &Graph, config: &TrainConfig) -> Result<RunReport> {
    config.validate()?;
    let global_train = train_count(graph)?;
    let dims = config.dims(graph.feature_dim(), graph.num_classes());
    let partition = partition_graph(graph, config.workers, config.partition, config.partition_seed)?;
    let k = config.workers;
    let mut workers: Vec<Worker> = (0..k)
        .map(|id| Worker::new(graph, &partition, id, config, &dims))
        .collect::<Result<_>>()?;
    let depth = dims.len() - 1;
    let evaluator = Evaluator::new(graph);
    let mut ledger = CommLedger::default();
    let mut records = Vec::with_capacity(config.epochs);
    let mode = config.mode;

    for epoch in 0..config.epochs {
        each_worker(&mut workers, units(k), mode, |w, ()| {
            w.begin_epoch();
            Ok(())
        })?;
        for layer in 0..depth {
            let outgoing = each_worker(&mut workers, units(k), mode, |w, ()| w.send_features(layer, epoch, config))?;
            let inboxes = exchange(outgoing.concat(), k, mode, epoch, &mut ledger)?;
            each_worker(&mut workers, inboxes, mode, |w, inbox| w.receive_and_forward(layer, inbox))?;
        }
        let shares = each_worker(&mut workers, units(k), mode, |w, ()| w.loss(global_train))?;
        let loss = shares.iter().fold(0.0, |a, b| a + b);
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        for layer in (0..depth).rev() {
            let outgoing = each_worker(&mut workers, units(k), mode, |w, ()| w.backward(layer))?;
            let inboxes = exchange(outgoing.concat(), k, mode, epoch, &mut ledger)?;
            each_worker(&mut workers, inboxes, mode, |w, inbox| w.receive_grads(layer, inbox))?;
        }
        let outgoing = each_worker(&mut workers, units(k), mode, |w, ()| w.param_messages())?;
        let inboxes = exchange(outgoing.concat(), k, mode, epoch, &mut ledger)?;
        each_worker(&mut workers, inboxes, mode, |w, inbox| {
            w.apply_param_sync(inbox, config.aux_lr)
        })?;

        let reference = workers[0].model.flatten();
        let divergence = workers[1..]
            .iter()
            .map(|w| {
                w.model
                    .flatten()
                    .iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if divergence > REPLICA_TOLERANCE {
            return Err(Error::Consistency { epoch, divergence });
        }

        let mut deltas = DeltaLog::new();
        for w in &workers {
            deltas.extend(&w.delta_log);
        }
        let [train_acc, val_acc, test_acc] = evaluator.accuracies(&workers[0].model, graph)?;
        let feature = ledger.epoch_total(epoch, MessageKind::is_feature);
        records.push(EpochRecord {
            epoch,
            loss,
            train_acc,
            val_acc,
            test_acc,
            payload_bytes: feature.payload,
            metadata_bytes: feature.metadata,
            baseline_bytes: feature.baseline,
            grad_bytes: ledger.epoch_total(epoch, |m| m == MessageKind::GradHalo).total(),
            param_bytes: ledger.epoch_total(epoch, |m| m == MessageKind::ParamSync).total(),
            delta_emp: measure_delta(&deltas).ok(),
            max_residual_norm: workers.iter().map(Worker::max_residual_norm).fold(0.0, f64::max),
            residual_elements: workers.iter().map(Worker::residual_elements).sum(),
        });
    }

    Ok(RunReport {
        config: config.clone(),
        graph_fingerprint: graph.fingerprint(),
        num_nodes: graph.num_nodes(),
        num_edges: graph.num_edges(),
        edge_cut: partition.edge_cut(graph),
        feature_elements: graph.num_nodes() * dims[..depth].iter().sum::<usize>(),
        epochs: records,
        ledger,
    })
}

/// Single-process full-graph training with the same initialisation, loss
/// normalisation and optimiser as [`run_training`].
pub fn run_monolithic(graph: &Graph, config: &TrainConfig) -> Result<RunReport> {
    let config = TrainConfig {
        workers: 1,
        ..config.baseline()
    };
    config.validate()?;
    train_count(graph)?;
    let dims = config.dims(graph.feature_dim(), graph.num_classes());
    let depth = dims.len() - 1;
    let mut model = Model::new(&dims, config.seed)?;
    let mut sgd = SgdState::new(config.learning_rate, config.momentum)?;
    let evaluator = Evaluator::new(graph);
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (logits, caches) = model.forward_full(&evaluator.adjacency, graph.features())?;
        let (loss, grad) = cross_entropy(&logits, graph.labels(), &evaluator.train)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grads = model.backward_full(&caches, &grad)?;
        let mut params = model.flatten();
        sgd_step(&mut params, &grads, &mut sgd)?;
        model.load_flat(&params)?;
        let [train_acc, val_acc, test_acc] = evaluator.accuracies(&model, graph)?;
        records.push(EpochRecord {
            epoch,
            loss,
            train_acc,
            val_acc,
            test_acc,
            payload_bytes: 0,
            metadata_bytes: 0,
            baseline_bytes: 0,
            grad_bytes: 0,
            param_bytes: 0,
            delta_emp: None,
            max_residual_norm: 0.0,
            residual_elements: 0,
        });
    }
    Ok(RunReport {
        config,
        graph_fingerprint: graph.fingerprint(),
        num_nodes: graph.num_nodes(),
        num_edges: graph.num_edges(),
        edge_cut: 0,
        feature_elements: graph.num_nodes() * dims[..depth].iter().sum::<usize>(),
        epochs: records,
        ledger: CommLedger::default(),
    })
}
