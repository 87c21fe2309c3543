use std::collections::{BTreeMap, HashMap};

use crate::condense::{
    attention_gradient, condense_attention, condense_mean, condense_weighted, group_nodes, reconstruct_into,
    AttentionParam, Condensation, HaloBuffer, SuperNode, SuperNodeBatch,
};
use crate::error::{Error, Result};
use crate::feedback::{DeltaLog, ErrorAccumulator};
use crate::gnn::{sage_backward, sage_forward, LayerGrads, LocalAdjacency, Model, SageCache};
use crate::graph::{Graph, Partition, Split};
use crate::numerics::{cross_entropy_scaled, sgd_step, Matrix, SgdState};

use super::message::{Message, Payload};
use super::TrainConfig;

/// Seed for one grouping call, mixed from its coordinates.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

pub(crate) struct Worker {
    pub id: usize,
    num_workers: usize,
    adjacency: LocalAdjacency,
    local_index: HashMap<usize, usize>,
    halo_nodes: Vec<usize>,
    halo_owner: Vec<usize>,
    /// `(destination, nodes)` for every non-empty send set.
    destinations: Vec<(usize, Vec<usize>)>,
    features: Matrix,
    labels: Vec<usize>,
    train_rows: Vec<usize>,
    degree: HashMap<usize, f64>,
    pub model: Model,
    sgd: SgdState,
    accumulators: BTreeMap<usize, ErrorAccumulator>,
    pub attention: AttentionParam,
    attention_grad: Vec<Vec<f64>>,
    attention_groups: Vec<usize>,
    activations: Vec<Matrix>,
    caches: Vec<SageCache>,
    upstream: Matrix,
    layer_grads: Vec<Option<LayerGrads>>,
    own_grads: Vec<f64>,
    pub delta_log: DeltaLog,
}

impl Worker {
    pub fn new(graph: &Graph, partition: &Partition, k: usize, config: &TrainConfig, dims: &[usize]) -> Result<Self> {
        let local = partition.local_nodes(k);
        let local_index: HashMap<usize, usize> = local.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let halo = partition.halo(k);
        let destinations: Vec<(usize, Vec<usize>)> = (0..partition.num_workers())
            .filter(|&j| j != k && !partition.send_set(k, j).is_empty())
            .map(|j| (j, partition.send_set(k, j).to_vec()))
            .collect();
        let degree = partition
            .boundary_nodes(k)
            .iter()
            .map(|&v| (v, graph.degree(v) as f64))
            .collect();
        let train_rows = local
            .iter()
            .enumerate()
            .filter(|&(_, &v)| graph.splits()[v] == Split::Train)
            .map(|(i, _)| i)
            .collect();
        let accumulators = destinations
            .iter()
            .map(|(j, _)| (*j, ErrorAccumulator::new(config.feedback)))
            .collect();
        let depth = dims.len() - 1;
        Ok(Self {
            id: k,
            num_workers: partition.num_workers(),
            adjacency: LocalAdjacency::for_worker(graph, partition, k),
            local_index,
            halo_nodes: halo.iter().map(|h| h.node).collect(),
            halo_owner: halo.iter().map(|h| h.owner).collect(),
            destinations,
            features: graph.features().select_rows(local),
            labels: local.iter().map(|&v| graph.labels()[v]).collect(),
            train_rows,
            degree,
            model: Model::new(dims, config.seed)?,
            sgd: SgdState::new(config.learning_rate, config.momentum)?,
            accumulators,
            attention: AttentionParam::zeros(&dims[..depth]),
            attention_grad: dims[..depth].iter().map(|&d| vec![0.0; d]).collect(),
            attention_groups: vec![0; depth],
            activations: Vec::new(),
            caches: Vec::new(),
            upstream: Matrix::zeros(0, 0),
            layer_grads: vec![None; depth],
            own_grads: Vec::new(),
            delta_log: DeltaLog::new(),
        })
    }

    pub fn begin_epoch(&mut self) {
        self.activations = vec![self.features.clone()];
        self.caches.clear();
        self.layer_grads.iter_mut().for_each(|g| *g = None);
        self.delta_log = DeltaLog::new();
        for (g, n) in self.attention_grad.iter_mut().zip(&mut self.attention_groups) {
            g.iter_mut().for_each(|x| *x = 0.0);
            *n = 0;
        }
    }

    /// Builds this layer's outgoing feature messages: raw rows when
    /// condensation is off, otherwise compensated, grouped and condensed.
    pub fn send_features(&mut self, layer: usize, epoch: usize, config: &TrainConfig) -> Result<Vec<Message>> {
        debug_assert_eq!(self.activations.len(), layer + 1);
        let mut out = Vec::with_capacity(self.destinations.len());
        for (dest, nodes) in &self.destinations {
            let h = &self.activations[layer];
            let raw: Vec<&[f64]> = nodes.iter().map(|v| h.row(self.local_index[v])).collect();
            let dim = h.cols();
            if config.condensation == Condensation::None {
                let mut rows = Matrix::zeros(nodes.len(), dim);
                for (i, h) in raw.iter().enumerate() {
                    rows.row_mut(i).copy_from_slice(h);
                    self.delta_log.record(h, h);
                }
                out.push(Message {
                    source: self.id,
                    destination: *dest,
                    payload: Payload::RawHalo {
                        layer,
                        nodes: nodes.clone(),
                        rows,
                    },
                });
                continue;
            }
            let ratio = config.ratio.ok_or_else(|| Error::config("ratio", "required when condensing"))?;
            let acc = self.accumulators.get_mut(dest).expect("accumulator per destination");
            let mut hats = Matrix::zeros(nodes.len(), dim);
            for (i, (&v, h)) in nodes.iter().zip(&raw).enumerate() {
                hats.row_mut(i).copy_from_slice(&acc.compensate(v, layer, h));
            }
            let seed = derive_seed(&[config.seed, epoch as u64, self.id as u64, *dest as u64, layer as u64]);
            let groups = group_nodes(nodes, &hats, ratio, config.grouping, seed)?;
            let mut supernodes = Vec::with_capacity(groups.len());
            for (group_id, members) in groups.into_iter().enumerate() {
                let pos: Vec<usize> = members
                    .iter()
                    .map(|v| nodes.binary_search(v).expect("member of send set"))
                    .collect();
                let rows: Vec<&[f64]> = pos.iter().map(|&p| hats.row(p)).collect();
                let vector = match config.condensation {
                    Condensation::Mean => condense_mean(&rows)?,
                    Condensation::Weighted => {
                        let degrees: Vec<f64> = members.iter().map(|v| self.degree[v]).collect();
                        condense_weighted(&rows, &degrees)?
                    }
                    Condensation::Attention => {
                        let (s, alpha) = condense_attention(&rows, self.attention.layer(layer))?;
                        if rows.len() > 1 {
                            let g = attention_gradient(&rows, &s, &alpha)?;
                            for (a, b) in self.attention_grad[layer].iter_mut().zip(&g) {
                                *a += b;
                            }
                            self.attention_groups[layer] += 1;
                        }
                        s
                    }
                    Condensation::None => unreachable!("handled above"),
                };
                for (&v, &p) in members.iter().zip(&pos) {
                    acc.record_error(v, layer, hats.row(p), &vector)?;
                    self.delta_log.record(raw[p], &vector);
                }
                supernodes.push(SuperNode {
                    group_id,
                    members,
                    vector,
                });
            }
            out.push(Message {
                source: self.id,
                destination: *dest,
                payload: Payload::SuperNodes(SuperNodeBatch {
                    layer,
                    source: self.id,
                    destination: *dest,
                    groups: supernodes,
                }),
            });
        }
        Ok(out)
    }

    pub fn receive_and_forward(&mut self, layer: usize, inbox: Vec<Message>) -> Result<()> {
        let h = &self.activations[layer];
        let mut halo = HaloBuffer::new(self.halo_nodes.clone(), h.cols());
        for m in inbox {
            let kind = m.kind();
            match m.payload {
                Payload::SuperNodes(batch) if batch.layer == layer => reconstruct_into(&batch, &mut halo)?,
                Payload::RawHalo { layer: l, nodes, rows } if l == layer => {
                    for (i, &v) in nodes.iter().enumerate() {
                        halo.set(v, rows.row(i))?;
                    }
                }
                _ => {
                    return Err(Error::Contract(format!(
                        "worker {} got an unexpected {:?} message during forward layer {layer}",
                        self.id, kind
                    )))
                }
            }
        }
        let last = layer + 1 == self.model.depth();
        let (out, cache) = sage_forward(&self.model.layers[layer], h, halo.rows()?, &self.adjacency, !last)?;
        self.activations.push(out);
        self.caches.push(cache);
        Ok(())
    }

    /// This worker's share of the globally averaged training loss.
    pub fn loss(&mut self, global_train: usize) -> Result<f64> {
        let logits = self.activations.last().expect("forward ran");
        let (loss, grad) = cross_entropy_scaled(logits, &self.labels, &self.train_rows, global_train as f64)?;
        self.upstream = grad;
        Ok(loss)
    }

    /// Backward through `layer`; returns halo gradients for the owners
    /// when the layer input is itself a computed activation.
    pub fn backward(&mut self, layer: usize) -> Result<Vec<Message>> {
        let back = sage_backward(&self.model.layers[layer], &self.caches[layer], &self.upstream)?;
        self.layer_grads[layer] = Some(back.grads);
        self.upstream = back.grad_h_local;
        if layer == 0 {
            return Ok(Vec::new());
        }
        let mut by_owner: BTreeMap<usize, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for (i, (&v, &owner)) in self.halo_nodes.iter().zip(&self.halo_owner).enumerate() {
            let entry = by_owner.entry(owner).or_default();
            entry.0.push(v);
            entry.1.extend_from_slice(back.grad_h_halo.row(i));
        }
        let dim = back.grad_h_halo.cols();
        by_owner
            .into_iter()
            .map(|(owner, (nodes, data))| {
                Ok(Message {
                    source: self.id,
                    destination: owner,
                    payload: Payload::GradHalo {
                        layer,
                        rows: Matrix::from_vec(nodes.len(), dim, data)?,
                        nodes,
                    },
                })
            })
            .collect()
    }

    /// Adds gradients w.r.t. this worker's rows that were used remotely.
    pub fn receive_grads(&mut self, layer: usize, inbox: Vec<Message>) -> Result<()> {
        for m in inbox {
            let kind = m.kind();
            match m.payload {
                Payload::GradHalo { layer: l, nodes, rows } if l == layer => {
                    for (i, v) in nodes.iter().enumerate() {
                        let &r = self.local_index.get(v).ok_or_else(|| {
                            Error::Contract(format!("worker {} received a gradient for foreign node {v}", self.id))
                        })?;
                        for (a, b) in self.upstream.row_mut(r).iter_mut().zip(rows.row(i)) {
                            *a += b;
                        }
                    }
                }
                _ => {
                    return Err(Error::Contract(format!(
                        "worker {} got an unexpected {:?} message during backward layer {layer}",
                        self.id, kind
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn param_messages(&mut self) -> Result<Vec<Message>> {
        let mut flat = Vec::with_capacity(self.model.num_params());
        for (l, g) in self.layer_grads.iter().enumerate() {
            g.as_ref()
                .ok_or_else(|| Error::Contract(format!("no gradient for layer {l}")))?
                .flatten_into(&mut flat);
        }
        let out = (0..self.num_workers)
            .filter(|&j| j != self.id)
            .map(|j| Message {
                source: self.id,
                destination: j,
                payload: Payload::ParamSync { values: flat.clone() },
            })
            .collect();
        self.own_grads = flat;
        Ok(out)
    }

    /// Sums every worker's gradient in worker order and steps the replica.
    pub fn apply_param_sync(&mut self, inbox: Vec<Message>, aux_lr: f64) -> Result<()> {
        let mut shares: Vec<(usize, Vec<f64>)> = Vec::with_capacity(self.num_workers);
        shares.push((self.id, std::mem::take(&mut self.own_grads)));
        for m in inbox {
            let kind = m.kind();
            match m.payload {
                Payload::ParamSync { values } => shares.push((m.source, values)),
                _ => {
                    return Err(Error::Contract(format!(
                        "worker {} expected parameter sync, got {kind:?}",
                        self.id
                    )))
                }
            }
        }
        if shares.len() != self.num_workers {
            return Err(Error::Contract(format!(
                "worker {} has {} of {} gradient shares",
                self.id,
                shares.len(),
                self.num_workers
            )));
        }
        shares.sort_by_key(|(k, _)| *k);
        let mut iter = shares.into_iter().map(|(_, g)| g);
        let mut total = iter.next().expect("at least one share");
        for g in iter {
            if g.len() != total.len() {
                return Err(Error::shape("parameter sync", total.len(), g.len()));
            }
            for (a, b) in total.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let mut params = self.model.flatten();
        sgd_step(&mut params, &total, &mut self.sgd)?;
        self.model.load_flat(&params)?;

        if aux_lr > 0.0 {
            for ((a, g), &n) in self
                .attention
                .per_layer
                .iter_mut()
                .zip(&self.attention_grad)
                .zip(&self.attention_groups)
            {
                if n == 0 {
                    continue;
                }
                let scale = aux_lr / n as f64;
                for (x, d) in a.iter_mut().zip(g) {
                    *x -= scale * d;
                }
            }
        }
        Ok(())
    }

    pub fn max_residual_norm(&self) -> f64 {
        self.accumulators
            .values()
            .map(ErrorAccumulator::max_residual_norm)
            .fold(0.0, f64::max)
    }

    pub fn residual_elements(&self) -> usize {
        self.accumulators.values().map(ErrorAccumulator::memory_elements).sum()
    }
}
