//! Boundary-node grouping, super-node condensation and reconstruction.
//!
//! A worker splits the boundary nodes it sends to each destination into
//! `m = max(1, round((1 − r)·n))` groups and ships one vector per group.
//! The receiver assigns that vector to every member of the group.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::numerics::{dot, softmax_into, Matrix};

/// The condensation function applied to each group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condensation {
    /// No condensation: raw halo rows are exchanged.
    None,
    Mean,
    Weighted,
    Attention,
}

impl Condensation {
    pub const ALL: [Condensation; 4] = [
        Condensation::None,
        Condensation::Mean,
        Condensation::Weighted,
        Condensation::Attention,
    ];
}

impl std::str::FromStr for Condensation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "mean" => Ok(Self::Mean),
            "weighted" => Ok(Self::Weighted),
            "attention" => Ok(Self::Attention),
            other => Err(format!("unknown condensation {other:?}")),
        }
    }
}

impl std::fmt::Display for Condensation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Mean => "mean",
            Self::Weighted => "weighted",
            Self::Attention => "attention",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingStrategy {
    /// Contiguous chunks of nodes sorted by projection onto the mean row.
    Chunk,
    /// Seeded k-means over feature rows.
    Kmeans,
}

impl std::str::FromStr for GroupingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "chunk" => Ok(Self::Chunk),
            "kmeans" => Ok(Self::Kmeans),
            other => Err(format!("unknown grouping strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for GroupingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Chunk => "chunk",
            Self::Kmeans => "kmeans",
        })
    }
}

pub const KMEANS_MAX_ITERS: usize = 20;

pub fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::parameter("r", format!("compression ratio must lie in (0, 1), got {r}")))
    }
}

/// Groups for `n` candidates at ratio `r`; never more than `n`.
pub fn group_count(n: usize, r: f64) -> usize {
    if n == 0 {
        return 0;
    }
    (((1.0 - r) * n as f64).round() as usize).clamp(1, n)
}

/// Splits `nodes` (with feature rows aligned to them) into groups.
///
/// Groups are returned as sorted node-id lists, ordered by their smallest
/// member, and cover `nodes` disjointly.
pub fn group_nodes(
    nodes: &[usize],
    rows: &Matrix,
    r: f64,
    strategy: GroupingStrategy,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    check_ratio(r)?;
    if rows.rows() != nodes.len() {
        return Err(Error::shape("group_nodes rows", nodes.len(), rows.rows()));
    }
    let n = nodes.len();
    let m = group_count(n, r);
    if n == 0 {
        return Ok(Vec::new());
    }
    let assignment: Vec<usize> = if m == n {
        (0..n).collect()
    } else if m == 1 {
        vec![0; n]
    } else {
        match strategy {
            GroupingStrategy::Chunk => chunk_assignment(nodes, rows, m),
            GroupingStrategy::Kmeans => kmeans_assignment(rows, m, seed),
        }
    };
    let mut groups = vec![Vec::new(); m];
    for (i, &g) in assignment.iter().enumerate() {
        groups[g].push(nodes[i]);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups)
}

fn chunk_assignment(nodes: &[usize], rows: &Matrix, m: usize) -> Vec<usize> {
    let n = nodes.len();
    let mut mean = vec![0.0; rows.cols()];
    for i in 0..n {
        for (a, x) in mean.iter_mut().zip(rows.row(i)) {
            *a += x;
        }
    }
    let proj: Vec<f64> = (0..n).map(|i| dot(rows.row(i), &mean)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(nodes[a].cmp(&nodes[b])));
    let (base, extra) = (n / m, n % m);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for g in 0..m {
        let size = base + usize::from(g < extra);
        for &i in &order[pos..pos + size] {
            assignment[i] = g;
        }
        pos += size;
    }
    assignment
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from `k` distinct seeded starting rows. An emptied
/// cluster takes the point farthest from its centroid among clusters that
/// can spare one, so exactly `k` nonempty clusters come back.
fn kmeans_assignment(rows: &Matrix, k: usize, seed: u64) -> Vec<usize> {
    let n = rows.rows();
    let d = rows.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = rand::seq::index::sample(&mut rng, n, k);
    let mut centroids = Matrix::zeros(k, d);
    for (c, i) in starts.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(rows.row(i));
    }
    let mut assignment = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut counts = vec![0usize; k];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..n {
            let x = rows.row(i);
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let dc = sq_dist(x, centroids.row(c));
                if dc < best_d {
                    best = c;
                    best_d = dc;
                }
            }
            if assignment[i] != best {
                changed = true;
                assignment[i] = best;
            }
            dist[i] = best_d;
            counts[best] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("n > k leaves a cluster with a spare point");
            counts[assignment[donor]] -= 1;
            assignment[donor] = c;
            counts[c] = 1;
            dist[donor] = 0.0;
            changed = true;
        }
        centroids = Matrix::zeros(k, d);
        for (i, &c) in assignment.iter().enumerate() {
            for (a, x) in centroids.row_mut(c).iter_mut().zip(rows.row(i)) {
                *a += x;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            let inv = 1.0 / count as f64;
            centroids.row_mut(c).iter_mut().for_each(|a| *a *= inv);
        }
        if !changed {
            break;
        }
    }
    assignment
}

/// Per-destination groups of one worker's boundary nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub source: usize,
    pub ratio: f64,
    pub groups: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl GroupingPlan {
    pub fn m_total(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn groups_for(&self, destination: usize) -> &[Vec<usize>] {
        self.groups.get(&destination).map_or(&[], Vec::as_slice)
    }
}

/// Groups worker `k`'s boundary nodes per destination using rows of
/// `features` (indexed by global node id).
pub fn build_grouping(
    partition: &Partition,
    worker: usize,
    features: &Matrix,
    r: f64,
    strategy: GroupingStrategy,
    seed: u64,
) -> Result<GroupingPlan> {
    check_ratio(r)?;
    let mut groups = BTreeMap::new();
    for j in 0..partition.num_workers() {
        let nodes = partition.send_set(worker, j);
        if j == worker || nodes.is_empty() {
            continue;
        }
        let rows = features.select_rows(nodes);
        let dest_seed = seed ^ ((j as u64 + 1) << 32);
        groups.insert(j, group_nodes(nodes, &rows, r, strategy, dest_seed)?);
    }
    Ok(GroupingPlan {
        source: worker,
        ratio: r,
        groups,
    })
}

fn check_group(rows: &[&[f64]]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Contract("condensing an empty group".into()))?;
    let d = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::shape("group member dims", d, bad.len()));
    }
    Ok(d)
}

fn weighted_sum(rows: &[&[f64]], weights: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for (row, &w) in rows.iter().zip(weights) {
        for (a, x) in s.iter_mut().zip(row.iter()) {
            *a += w * x;
        }
    }
    s
}

/// Arithmetic mean of the group.
pub fn condense_mean(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let d = check_group(rows)?;
    if rows.len() == 1 {
        return Ok(rows[0].to_vec());
    }
    let mut s = vec![0.0; d];
    for row in rows {
        for (a, x) in s.iter_mut().zip(row.iter()) {
            *a += x;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    s.iter_mut().for_each(|a| *a *= inv);
    Ok(s)
}

/// Degree-weighted mean; all-zero degrees fall back to uniform weights.
pub fn condense_weighted(rows: &[&[f64]], degrees: &[f64]) -> Result<Vec<f64>> {
    let d = check_group(rows)?;
    if degrees.len() != rows.len() {
        return Err(Error::shape("condense_weighted degrees", rows.len(), degrees.len()));
    }
    if let Some(bad) = degrees.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Contract(format!("degree weight {bad} is not a finite non-negative number")));
    }
    if rows.len() == 1 {
        return Ok(rows[0].to_vec());
    }
    // Equal weights (including all zero) are exactly the mean.
    if degrees.iter().all(|&x| x == degrees[0]) {
        return condense_mean(rows);
    }
    let total: f64 = degrees.iter().sum();
    let weights: Vec<f64> = degrees.iter().map(|x| x / total).collect();
    Ok(weighted_sum(rows, &weights, d))
}

/// Softmax attention over `a·h_v`; returns the super node and the weights.
pub fn condense_attention(rows: &[&[f64]], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = check_group(rows)?;
    if a.len() != d {
        return Err(Error::shape("attention vector", d, a.len()));
    }
    if rows.len() == 1 {
        return Ok((rows[0].to_vec(), vec![1.0]));
    }
    let scores: Vec<f64> = rows.iter().map(|r| dot(a, r)).collect();
    let mut alpha = vec![0.0; rows.len()];
    softmax_into(&scores, &mut alpha);
    if scores.iter().all(|&x| x == scores[0]) {
        return Ok((condense_mean(rows)?, alpha));
    }
    Ok((weighted_sum(rows, &alpha, d), alpha))
}

/// Reconstruction loss `J = Σ_v ‖h_v − s‖²` of one group.
pub fn reconstruction_loss(rows: &[&[f64]], s: &[f64]) -> f64 {
    rows.iter()
        .map(|r| r.iter().zip(s).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

/// Exact `∂J/∂a` for an attention super node.
///
/// With `g = ∂J/∂s = −2 Σ_v (h_v − s)` and `c_v = g·h_v`, the softmax
/// Jacobian gives `∂J/∂a = Σ_v α_v (c_v − Σ_u α_u c_u) h_v`.
pub fn attention_gradient(rows: &[&[f64]], s: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    let d = check_group(rows)?;
    if s.len() != d || alpha.len() != rows.len() {
        return Err(Error::shape("attention_gradient", rows.len(), alpha.len()));
    }
    let mut g = vec![0.0; d];
    for row in rows {
        for ((gv, x), sv) in g.iter_mut().zip(row.iter()).zip(s) {
            *gv -= 2.0 * (x - sv);
        }
    }
    let c: Vec<f64> = rows.iter().map(|r| dot(&g, r)).collect();
    let c_bar: f64 = alpha.iter().zip(&c).map(|(a, cv)| a * cv).sum();
    let coeffs: Vec<f64> = alpha.iter().zip(&c).map(|(a, cv)| a * (cv - c_bar)).collect();
    Ok(weighted_sum(rows, &coeffs, d))
}

/// One gradient step on the group's reconstruction loss.
pub fn update_attention_param(
    a: &[f64],
    rows: &[&[f64]],
    s: &[f64],
    alpha: &[f64],
    aux_lr: f64,
) -> Result<Vec<f64>> {
    let grad = attention_gradient(rows, s, alpha)?;
    Ok(a.iter().zip(&grad).map(|(x, g)| x - aux_lr * g).collect())
}

/// Attention vectors, one per message-passing layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParam {
    pub per_layer: Vec<Vec<f64>>,
}

impl AttentionParam {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            per_layer: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.per_layer[l]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperNode {
    pub group_id: usize,
    pub members: Vec<usize>,
    pub vector: Vec<f64>,
}

/// Condensed features of one layer from one worker to one destination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperNodeBatch {
    pub layer: usize,
    pub source: usize,
    pub destination: usize,
    pub groups: Vec<SuperNode>,
}

impl SuperNodeBatch {
    pub fn dim(&self) -> usize {
        self.groups.first().map_or(0, |g| g.vector.len())
    }

    pub fn num_members(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }
}

/// Expands a batch into one row per member node.
pub fn reconstruct(batch: &SuperNodeBatch) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for g in &batch.groups {
        if g.members.is_empty() {
            return Err(Error::Contract(format!("super node {} has no members", g.group_id)));
        }
        for &v in &g.members {
            if out.insert(v, g.vector.clone()).is_some() {
                return Err(Error::Contract(format!("node {v} appears in two groups")));
            }
        }
    }
    Ok(out)
}

/// Remote feature rows a worker aggregates over, in halo order.
#[derive(Clone, Debug)]
pub struct HaloBuffer {
    index: HashMap<usize, usize>,
    nodes: Vec<usize>,
    rows: Matrix,
    filled: Vec<bool>,
}

impl HaloBuffer {
    pub fn new(nodes: Vec<usize>, dim: usize) -> Self {
        let index = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let n = nodes.len();
        Self {
            index,
            nodes,
            rows: Matrix::zeros(n, dim),
            filled: vec![false; n],
        }
    }

    pub fn set(&mut self, node: usize, row: &[f64]) -> Result<()> {
        let &i = self
            .index
            .get(&node)
            .ok_or_else(|| Error::Contract(format!("node {node} is not in this halo")))?;
        if row.len() != self.rows.cols() {
            return Err(Error::shape("halo row", self.rows.cols(), row.len()));
        }
        self.rows.row_mut(i).copy_from_slice(row);
        self.filled[i] = true;
        Ok(())
    }

    /// The filled matrix, or an error naming the first node never received.
    pub fn rows(&self) -> Result<&Matrix> {
        match self.filled.iter().position(|f| !f) {
            Some(i) => Err(Error::Contract(format!("halo row for node {} was never received", self.nodes[i]))),
            None => Ok(&self.rows),
        }
    }

    pub fn row_of(&self, node: usize) -> Option<&[f64]> {
        self.index.get(&node).map(|&i| self.rows.row(i))
    }
}

/// Writes every member's reconstructed row into `halo`.
pub fn reconstruct_into(batch: &SuperNodeBatch, halo: &mut HaloBuffer) -> Result<()> {
    for g in &batch.groups {
        for &v in &g.members {
            halo.set(v, &g.vector)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn as_refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    fn random_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn group_counts() {
        assert_eq!(group_count(10, 0.5), 5);
        assert_eq!(group_count(4, 0.9), 1);
        assert_eq!(group_count(5, 0.1), 5);
        assert_eq!(group_count(0, 0.5), 0);
        assert!(check_ratio(0.0).is_err());
        assert!(check_ratio(1.0).is_err());
    }

    #[test]
    fn half_ratio_covers_ten_nodes_with_five_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nodes: Vec<usize> = (100..110).collect();
        let rows = Matrix::from_rows(&random_rows(10, 3, &mut rng)).unwrap();
        for strategy in [GroupingStrategy::Chunk, GroupingStrategy::Kmeans] {
            let groups = group_nodes(&nodes, &rows, 0.5, strategy, 1).unwrap();
            assert_eq!(groups.len(), 5);
            let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, nodes);
            assert!(groups.iter().all(|g| !g.is_empty()));
        }
        let single = group_nodes(&nodes[..4], &rows.select_rows(&[0, 1, 2, 3]), 0.9, GroupingStrategy::Kmeans, 0).unwrap();
        assert_eq!(single, vec![vec![100, 101, 102, 103]]);
    }

    #[test]
    fn chunks_follow_projection_order() {
        let nodes = vec![0, 1, 2, 3];
        let rows = Matrix::from_rows(&[vec![4.0], vec![1.0], vec![3.0], vec![2.0]]).unwrap();
        let groups = group_nodes(&nodes, &rows, 0.5, GroupingStrategy::Chunk, 0).unwrap();
        assert_eq!(groups, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let rows = vec![
            vec![0.0, 0.1],
            vec![10.0, 10.0],
            vec![0.2, 0.0],
            vec![10.1, 9.8],
            vec![-0.1, 0.05],
            vec![9.9, 10.2],
        ];
        let nodes: Vec<usize> = (0..6).collect();
        // Brute force: best 2-partition by within-group sum of squares.
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 5) {
            let sse = |bit: u32| {
                let members: Vec<&[f64]> = (0..6)
                    .filter(|&i| (mask >> i) & 1 == bit)
                    .map(|i| rows[i].as_slice())
                    .collect();
                let c = condense_mean(&members).unwrap();
                reconstruction_loss(&members, &c)
            };
            let total = sse(0) + sse(1);
            if total < best.0 {
                best = (total, mask);
            }
        }
        let mut expected: Vec<Vec<usize>> = [0, 1]
            .iter()
            .map(|&bit| (0..6).filter(|&i| (best.1 >> i) & 1 == bit).collect())
            .collect();
        expected.sort_by_key(|g: &Vec<usize>| g[0]);

        let m = Matrix::from_rows(&rows).unwrap();
        for seed in 0..10 {
            let groups = group_nodes(&nodes, &m, 0.6, GroupingStrategy::Kmeans, seed).unwrap();
            assert_eq!(groups, expected, "seed {seed}");
        }
    }

    #[test]
    fn kmeans_handles_duplicate_rows() {
        let rows = Matrix::from_rows(&vec![vec![1.0, 1.0]; 8]).unwrap();
        let nodes: Vec<usize> = (0..8).collect();
        let groups = group_nodes(&nodes, &rows, 0.5, GroupingStrategy::Kmeans, 3).unwrap();
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn build_grouping_is_per_destination() {
        use crate::graph::{partition_graph, Graph, PartitionMethod, Split};
        let n = 12;
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = Matrix::from_rows(&random_rows(n, 2, &mut rng)).unwrap();
        let g = Graph::from_edges(n, &edges, features.clone(), vec![0; n], vec![Split::Train; n]).unwrap();
        let p = partition_graph(&g, 3, PartitionMethod::Hash, 0).unwrap();
        let plan = build_grouping(&p, 0, &features, 0.5, GroupingStrategy::Kmeans, 9).unwrap();
        assert_eq!(plan.groups.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        for (&j, groups) in &plan.groups {
            let mut covered: Vec<usize> = groups.iter().flatten().copied().collect();
            covered.sort_unstable();
            assert_eq!(covered, p.send_set(0, j));
            assert_eq!(groups.len(), 2);
        }
        assert_eq!(plan.m_total(), 4);
        assert_eq!(plan, build_grouping(&p, 0, &features, 0.5, GroupingStrategy::Kmeans, 9).unwrap());
        assert!(build_grouping(&p, 0, &features, 1.5, GroupingStrategy::Chunk, 0).is_err());
    }

    #[test]
    fn mean_cases() {
        let rows = vec![vec![1.0, 3.0], vec![3.0, 5.0]];
        assert_eq!(condense_mean(&as_refs(&rows)).unwrap(), vec![2.0, 4.0]);
        assert_eq!(condense_mean(&[&[7.0, -1.0]]).unwrap(), vec![7.0, -1.0]);
        assert!(matches!(condense_mean(&[]), Err(Error::Contract(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = random_rows(7, 4, &mut rng);
        let s = condense_mean(&as_refs(&rows)).unwrap();
        for c in 0..4 {
            let oracle = rows.iter().map(|r| r[c]).sum::<f64>() / 7.0;
            assert!((s[c] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_cases() {
        let rows = vec![vec![0.0], vec![10.0]];
        assert_eq!(condense_weighted(&as_refs(&rows), &[1.0, 3.0]).unwrap(), vec![7.5]);
        let rows = vec![vec![1.0, 3.0], vec![3.0, 5.0], vec![-1.0, 0.0]];
        let eq = condense_weighted(&as_refs(&rows), &[2.0, 2.0, 2.0]).unwrap();
        let mean = condense_mean(&as_refs(&rows)).unwrap();
        for (a, b) in eq.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(condense_weighted(&as_refs(&rows), &[0.0; 3]).unwrap(), mean);
        assert!(matches!(
            condense_weighted(&as_refs(&rows), &[1.0, -1.0, 1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn attention_cases() {
        let rows = vec![vec![1.0, 3.0], vec![3.0, 5.0], vec![0.5, -2.0]];
        let (s, alpha) = condense_attention(&as_refs(&rows), &[0.0, 0.0]).unwrap();
        let mean = condense_mean(&as_refs(&rows)).unwrap();
        for (a, b) in s.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(alpha.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));

        // a = [10, 0] on {[1,0],[0,1]}: α = [e^10, 1]/(e^10 + 1).
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (s, alpha) = condense_attention(&as_refs(&rows), &[10.0, 0.0]).unwrap();
        let expected = 1.0 / (1.0 + (-10f64).exp());
        assert!((alpha[0] - expected).abs() < 1e-12);
        assert!(alpha[0] > 0.9999);
        assert!((s[0] - expected).abs() < 1e-12 && (s[1] - (1.0 - expected)).abs() < 1e-12);

        assert!(matches!(
            condense_attention(&as_refs(&rows), &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn attention_identical_members_have_flat_objective() {
        let rows = vec![vec![0.7, -1.2]; 3];
        let a = vec![0.3, 0.8];
        let (s, alpha) = condense_attention(&as_refs(&rows), &a).unwrap();
        let next = update_attention_param(&a, &as_refs(&rows), &s, &alpha, 0.5).unwrap();
        assert_eq!(next, a);
    }

    #[test]
    fn attention_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows = random_rows(3, 4, &mut rng);
        let refs = as_refs(&rows);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |a: &[f64]| {
            let (s, _) = condense_attention(&refs, a).unwrap();
            reconstruction_loss(&refs, &s)
        };
        let (s, alpha) = condense_attention(&refs, &a).unwrap();
        let grad = attention_gradient(&refs, &s, &alpha).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut p = a.clone();
            p[i] += h;
            let mut m = a.clone();
            m[i] -= h;
            let numeric = (objective(&p) - objective(&m)) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs());
            assert!(rel < 1e-5, "coord {i}: {} vs {numeric}", grad[i]);
        }
    }

    #[test]
    fn attention_descent_does_not_increase_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rows = random_rows(4, 3, &mut rng);
        let refs = as_refs(&rows);
        let mut a = vec![1.5, -0.5, 0.8];
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (s, alpha) = condense_attention(&refs, &a).unwrap();
            let j = reconstruction_loss(&refs, &s);
            assert!(j <= last + 1e-12);
            last = j;
            a = update_attention_param(&a, &refs, &s, &alpha, 1e-3).unwrap();
        }
    }

    #[test]
    fn reconstruction_cases() {
        let batch = SuperNodeBatch {
            layer: 0,
            source: 0,
            destination: 1,
            groups: vec![
                SuperNode {
                    group_id: 0,
                    members: vec![3, 5],
                    vector: vec![2.0, 4.0],
                },
                SuperNode {
                    group_id: 1,
                    members: vec![8],
                    vector: vec![1.0, 1.0],
                },
            ],
        };
        let rows = reconstruct(&batch).unwrap();
        assert_eq!(rows[&3], vec![2.0, 4.0]);
        assert_eq!(rows[&5], vec![2.0, 4.0]);

        let mut halo = HaloBuffer::new(vec![3, 5, 8], 2);
        reconstruct_into(&batch, &mut halo).unwrap();
        assert_eq!(halo.rows().unwrap().row(1), &[2.0, 4.0]);

        let mut small = HaloBuffer::new(vec![3, 5], 2);
        assert!(matches!(reconstruct_into(&batch, &mut small), Err(Error::Contract(_))));
        let partial = HaloBuffer::new(vec![3, 9], 2);
        assert!(partial.rows().is_err());
    }

    #[test]
    fn singleton_reconstruction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_rows(4, 3, &mut rng);
        let groups = (0..4)
            .map(|i| SuperNode {
                group_id: i,
                members: vec![i],
                vector: condense_mean(&[&rows[i]]).unwrap(),
            })
            .collect();
        let batch = SuperNodeBatch {
            layer: 0,
            source: 0,
            destination: 1,
            groups,
        };
        let back = reconstruct(&batch).unwrap();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(&back[&i], row);
        }
    }

    proptest::proptest! {
        #[test]
        fn condensers_stay_in_convex_hull(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..8),
            degrees in proptest::collection::vec(0.0f64..10.0, 8),
            a in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let refs = as_refs(&raw);
            let n = raw.len();
            let deg = &degrees[..n];
            let (attn, alpha) = condense_attention(&refs, &a).unwrap();
            proptest::prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let total: f64 = deg.iter().sum();
            if total > 0.0 {
                let w: f64 = deg.iter().map(|d| d / total).sum();
                proptest::prop_assert!((w - 1.0).abs() < 1e-12);
            }
            for s in [condense_mean(&refs).unwrap(), condense_weighted(&refs, deg).unwrap(), attn] {
                for c in 0..3 {
                    let lo = raw.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                    let hi = raw.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                    proptest::prop_assert!(s[c] >= lo - 1e-12 && s[c] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn mean_then_reconstruct_preserves_group_mean(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..8),
        ) {
            let refs = as_refs(&raw);
            let s = condense_mean(&refs).unwrap();
            let batch = SuperNodeBatch {
                layer: 0, source: 0, destination: 1,
                groups: vec![SuperNode { group_id: 0, members: (0..raw.len()).collect(), vector: s }],
            };
            let rebuilt: Vec<Vec<f64>> = reconstruct(&batch).unwrap().into_values().collect();
            let a = condense_mean(&as_refs(&rebuilt)).unwrap();
            let b = condense_mean(&refs).unwrap();
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn grouping_covers_and_is_deterministic(
            n in 1usize..40,
            r in 0.05f64..0.95,
            kmeans in proptest::bool::ANY,
            seed in 0u64..50,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = Matrix::from_rows(&random_rows(n, 3, &mut rng)).unwrap();
            let nodes: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
            let strategy = if kmeans { GroupingStrategy::Kmeans } else { GroupingStrategy::Chunk };
            let groups = group_nodes(&nodes, &rows, r, strategy, seed).unwrap();
            proptest::prop_assert_eq!(groups.len(), group_count(n, r));
            let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(&all, &nodes);
            proptest::prop_assert_eq!(groups, group_nodes(&nodes, &rows, r, strategy, seed).unwrap());
        }
    }
}
