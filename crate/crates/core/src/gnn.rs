//! GraphSAGE-mean layers with hand-derived gradients.
//!
//! A layer computes, for every local node `v`,
//!
//! ```text
//! h'_v = σ( h_v·W_self + mean_{u ∈ N(v)} h_u · W_neigh + b )
//! ```
//!
//! where neighbour rows come either from the worker's own rows or from the
//! halo buffer of remote rows. An empty neighbourhood contributes zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Partition};
use crate::numerics::{self, matmul, matmul_nt, matmul_tn, Matrix};

/// Where a neighbour's row lives from one worker's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborRef {
    Local(usize),
    Halo(usize),
    /// A remote node with no halo slot; forward fails naming it.
    Missing(usize),
}

/// CSR adjacency of a worker's local nodes with neighbours resolved to
/// local or halo row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalAdjacency {
    nodes: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<NeighborRef>,
}

impl LocalAdjacency {
    /// Every node local: the single-process view of the whole graph.
    pub fn full(graph: &Graph) -> Self {
        Self {
            nodes: (0..graph.num_nodes()).collect(),
            offsets: graph.offsets().to_vec(),
            neighbors: graph.targets().iter().map(|&u| NeighborRef::Local(u)).collect(),
        }
    }

    /// Worker `k`'s view: local rows ordered as `partition.local_nodes(k)`,
    /// halo rows ordered as `partition.halo(k)`.
    pub fn for_worker(graph: &Graph, partition: &Partition, k: usize) -> Self {
        let local = partition.local_nodes(k);
        let halo = partition.halo(k);
        let mut offsets = Vec::with_capacity(local.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for &v in local {
            for &u in graph.neighbors(v) {
                let r = if partition.owner_of(u) == k {
                    NeighborRef::Local(local.binary_search(&u).expect("owned node is local"))
                } else {
                    match halo.binary_search_by_key(&u, |h| h.node) {
                        Ok(i) => NeighborRef::Halo(i),
                        Err(_) => NeighborRef::Missing(u),
                    }
                };
                neighbors.push(r);
            }
            offsets.push(neighbors.len());
        }
        Self {
            nodes: local.to_vec(),
            offsets,
            neighbors,
        }
    }

    /// Builds a view directly from per-node neighbour lists.
    pub fn from_lists(nodes: Vec<usize>, lists: Vec<Vec<NeighborRef>>) -> Self {
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        for list in lists {
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Self {
            nodes,
            offsets,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Global id of local row `i`.
    pub fn node(&self, i: usize) -> usize {
        self.nodes[i]
    }

    pub fn neighbors(&self, i: usize) -> &[NeighborRef] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub w_self: Matrix,
    pub w_neigh: Matrix,
    pub bias: Vec<f64>,
    /// Bumped on every parameter write so stale caches are detectable.
    #[serde(skip)]
    version: u64,
}

impl SageLayer {
    pub fn new(w_self: Matrix, w_neigh: Matrix, bias: Vec<f64>) -> Result<Self> {
        if w_self.shape() != w_neigh.shape() {
            return Err(Error::shape(
                "SageLayer weights",
                format!("{:?}", w_self.shape()),
                format!("{:?}", w_neigh.shape()),
            ));
        }
        if bias.len() != w_self.cols() {
            return Err(Error::shape("SageLayer bias", w_self.cols(), bias.len()));
        }
        if !w_self.is_finite() || !w_neigh.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("SageLayer parameters"));
        }
        Ok(Self {
            w_self,
            w_neigh,
            bias,
            version: 0,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let mut draw = || {
            let data = (0..d_in * d_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            Matrix::from_vec(d_in, d_out, data).expect("finite init")
        };
        let w_self = draw();
        let w_neigh = draw();
        Self {
            w_self,
            w_neigh,
            bias: vec![0.0; d_out],
            version: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_self.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w_self.cols()
    }

    pub fn num_params(&self) -> usize {
        2 * self.d_in() * self.d_out() + self.d_out()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Parameters in the order `w_self, w_neigh, bias`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_self.as_slice());
        out.extend_from_slice(self.w_neigh.as_slice());
        out.extend_from_slice(&self.bias);
    }

    fn load(&mut self, flat: &[f64]) {
        let n = self.d_in() * self.d_out();
        self.w_self.as_mut_slice().copy_from_slice(&flat[..n]);
        self.w_neigh.as_mut_slice().copy_from_slice(&flat[n..2 * n]);
        self.bias.copy_from_slice(&flat[2 * n..]);
        self.version += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w_self: Matrix,
    pub w_neigh: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_self.as_slice());
        out.extend_from_slice(self.w_neigh.as_slice());
        out.extend_from_slice(&self.bias);
    }
}

/// Everything `sage_backward` needs from the forward pass.
#[derive(Clone, Debug)]
pub struct SageCache {
    version: u64,
    d_in: usize,
    d_out: usize,
    h_local: Matrix,
    halo_rows: usize,
    aggregated: Matrix,
    pre_activation: Matrix,
    activated: bool,
    adjacency: LocalAdjacency,
}

impl SageCache {
    pub fn pre_activation(&self) -> &Matrix {
        &self.pre_activation
    }
}

fn mean_neighbors(h_local: &Matrix, h_halo: &Matrix, adj: &LocalAdjacency) -> Result<Matrix> {
    let d = h_local.cols();
    let mut agg = Matrix::zeros(adj.num_nodes(), d);
    for i in 0..adj.num_nodes() {
        let neigh = adj.neighbors(i);
        if neigh.is_empty() {
            continue;
        }
        let out = agg.row_mut(i);
        for &r in neigh {
            let src = match r {
                NeighborRef::Local(j) => h_local.row(j),
                NeighborRef::Halo(j) if j < h_halo.rows() => h_halo.row(j),
                NeighborRef::Halo(j) => {
                    return Err(Error::Contract(format!(
                        "halo slot {j} beyond buffer of {} rows",
                        h_halo.rows()
                    )))
                }
                NeighborRef::Missing(u) => {
                    return Err(Error::Aggregation {
                        node: adj.node(i),
                        missing: u,
                    })
                }
            };
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
        let inv = 1.0 / neigh.len() as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
    Ok(agg)
}

pub fn sage_forward(
    layer: &SageLayer,
    h_local: &Matrix,
    h_halo: &Matrix,
    adj: &LocalAdjacency,
    apply_activation: bool,
) -> Result<(Matrix, SageCache)> {
    if h_local.rows() != adj.num_nodes() {
        return Err(Error::shape("sage_forward local rows", adj.num_nodes(), h_local.rows()));
    }
    if h_local.cols() != layer.d_in() {
        return Err(Error::shape("sage_forward input dim", layer.d_in(), h_local.cols()));
    }
    if h_halo.rows() > 0 && h_halo.cols() != layer.d_in() {
        return Err(Error::shape("sage_forward halo dim", layer.d_in(), h_halo.cols()));
    }
    let aggregated = mean_neighbors(h_local, h_halo, adj)?;
    let mut pre = matmul(h_local, &layer.w_self)?;
    pre.add_assign(&matmul(&aggregated, &layer.w_neigh)?)?;
    for r in 0..pre.rows() {
        for (p, b) in pre.row_mut(r).iter_mut().zip(&layer.bias) {
            *p += b;
        }
    }
    let out = if apply_activation {
        numerics::relu(&pre)
    } else {
        pre.clone()
    };
    let cache = SageCache {
        version: layer.version,
        d_in: layer.d_in(),
        d_out: layer.d_out(),
        h_local: h_local.clone(),
        halo_rows: h_halo.rows(),
        aggregated,
        pre_activation: pre,
        activated: apply_activation,
        adjacency: adj.clone(),
    };
    Ok((out, cache))
}

#[derive(Clone, Debug)]
pub struct SageBackward {
    pub grads: LayerGrads,
    pub grad_h_local: Matrix,
    pub grad_h_halo: Matrix,
}

pub fn sage_backward(layer: &SageLayer, cache: &SageCache, upstream: &Matrix) -> Result<SageBackward> {
    if cache.version != layer.version || cache.d_in != layer.d_in() || cache.d_out != layer.d_out() {
        return Err(Error::Contract(format!(
            "stale cache: built for layer version {} ({}x{}), layer is at version {} ({}x{})",
            cache.version,
            cache.d_in,
            cache.d_out,
            layer.version,
            layer.d_in(),
            layer.d_out()
        )));
    }
    if upstream.shape() != cache.pre_activation.shape() {
        return Err(Error::shape(
            "sage_backward upstream",
            format!("{:?}", cache.pre_activation.shape()),
            format!("{:?}", upstream.shape()),
        ));
    }
    let g_pre = if cache.activated {
        numerics::relu_backward(&cache.pre_activation, upstream)?
    } else {
        upstream.clone()
    };
    let w_self = matmul_tn(&cache.h_local, &g_pre)?;
    let w_neigh = matmul_tn(&cache.aggregated, &g_pre)?;
    let mut bias = vec![0.0; layer.d_out()];
    for r in 0..g_pre.rows() {
        for (b, g) in bias.iter_mut().zip(g_pre.row(r)) {
            *b += g;
        }
    }
    let mut grad_h_local = matmul_nt(&g_pre, &layer.w_self)?;
    let g_agg = matmul_nt(&g_pre, &layer.w_neigh)?;
    let mut grad_h_halo = Matrix::zeros(cache.halo_rows, layer.d_in());
    let adj = &cache.adjacency;
    for i in 0..adj.num_nodes() {
        let neigh = adj.neighbors(i);
        if neigh.is_empty() {
            continue;
        }
        let inv = 1.0 / neigh.len() as f64;
        let g = g_agg.row(i);
        for &r in neigh {
            let dst = match r {
                NeighborRef::Local(j) => grad_h_local.row_mut(j),
                NeighborRef::Halo(j) => grad_h_halo.row_mut(j),
                NeighborRef::Missing(u) => {
                    return Err(Error::Aggregation {
                        node: adj.node(i),
                        missing: u,
                    })
                }
            };
            for (d, gv) in dst.iter_mut().zip(g) {
                *d += gv * inv;
            }
        }
    }
    Ok(SageBackward {
        grads: LayerGrads {
            w_self,
            w_neigh,
            bias,
        },
        grad_h_local,
        grad_h_halo,
    })
}

/// Argmax-match rate over `mask`; ties resolve to the lowest class.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over an empty mask"));
    }
    let (correct, total) = accuracy_counts(logits, labels, mask);
    Ok(correct as f64 / total as f64)
}

pub fn accuracy_counts(logits: &Matrix, labels: &[usize], mask: &[usize]) -> (usize, usize) {
    let correct = mask
        .iter()
        .filter(|&&r| argmax(logits.row(r)) == labels[r])
        .count();
    (correct, mask.len())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stack of SAGE layers; ReLU between layers, raw logits out of the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<SageLayer>,
}

impl Model {
    /// `dims = [d_in, hidden…, classes]`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::parameter("dims", "need at least input and output dims, all nonzero"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| SageLayer::glorot(w[0], w[1], &mut rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<SageLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::shape("Model layer chain", pair[0].d_out(), pair[1].d_in()));
            }
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(SageLayer::num_params).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.flatten_into(&mut out);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("Model::load_flat", self.num_params(), flat.len()));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.num_params();
            l.load(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward pass where every neighbour is local (no halo).
    pub fn forward_full(&self, adj: &LocalAdjacency, features: &Matrix) -> Result<(Matrix, Vec<SageCache>)> {
        let empty = Matrix::zeros(0, 0);
        let mut h = features.clone();
        let mut caches = Vec::with_capacity(self.depth());
        let last = self.depth() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, cache) = sage_forward(layer, &h, &empty, adj, l != last)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Backward through a full forward; returns flattened parameter grads.
    pub fn backward_full(&self, caches: &[SageCache], grad_logits: &Matrix) -> Result<Vec<f64>> {
        let mut upstream = grad_logits.clone();
        let mut per_layer = Vec::with_capacity(self.depth());
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let back = sage_backward(layer, cache, &upstream)?;
            upstream = back.grad_h_local;
            per_layer.push(back.grads);
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for g in per_layer.iter().rev() {
            g.flatten_into(&mut flat);
        }
        Ok(flat)
    }
}
