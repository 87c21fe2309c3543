//! Undirected CSR graphs with node features, labels and split masks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Immutable undirected graph in CSR form.
///
/// Neighbour lists are sorted and free of duplicates and self loops; every
/// edge is stored in both directions, so `num_edges` counts directed slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Matrix,
    labels: Vec<usize>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list.
    ///
    /// Edges are symmetrised and deduplicated and self loops dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::shape("graph features", num_nodes, features.rows()));
        }
        if labels.len() != num_nodes {
            return Err(Error::shape("graph labels", num_nodes, labels.len()));
        }
        if splits.len() != num_nodes {
            return Err(Error::shape("graph masks", num_nodes, splits.len()));
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::Range {
                        what: "node id",
                        value: node,
                        limit: num_nodes,
                    });
                }
            }
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in adjacency {
            list.sort_unstable();
            list.dedup();
            targets.extend(list);
            offsets.push(targets.len());
        }
        let num_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        Ok(Self {
            offsets,
            targets,
            features,
            labels,
            splits,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Directed edge slots (twice the undirected edge count).
    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.splits[v] == split)
            .collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    /// Stable content hash over structure, features, labels and masks.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for &o in &self.offsets {
            hasher.update((o as u64).to_le_bytes());
        }
        for &t in &self.targets {
            hasher.update((t as u64).to_le_bytes());
        }
        for &x in self.features.as_slice() {
            hasher.update(x.to_bits().to_le_bytes());
        }
        for (&l, &s) in self.labels.iter().zip(&self.splits) {
            hasher.update((l as u64).to_le_bytes());
            hasher.update([s as u8]);
        }
        hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut acc, b| {
                let _ = write!(acc, "{b:02x}");
                acc
            })
    }

    /// Writes the edge list, features, labels and masks in the text formats
    /// read by [`load_edge_list`].
    pub fn write_files(&self, edges: &Path, features: &Path, labels: &Path, masks: &Path) -> Result<()> {
        let mut buf = String::new();
        for (u, v) in self.undirected_edges() {
            let _ = writeln!(buf, "{u} {v}");
        }
        write_text(edges, &buf)?;

        buf.clear();
        for r in 0..self.num_nodes() {
            let row = self.features.row(r);
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    buf.push(' ');
                }
                let _ = write!(buf, "{x:?}");
            }
            buf.push('\n');
        }
        write_text(features, &buf)?;

        buf.clear();
        for l in &self.labels {
            let _ = writeln!(buf, "{l}");
        }
        write_text(labels, &buf)?;

        buf.clear();
        for s in &self.splits {
            buf.push_str(match s {
                Split::Train => "train\n",
                Split::Val => "val\n",
                Split::Test => "test\n",
            });
        }
        write_text(masks, &buf)
    }
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Deterministic 60/20/20 train/val/test split.
pub fn default_splits(num_nodes: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..num_nodes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = num_nodes * 6 / 10;
    let val = num_nodes * 2 / 10;
    let mut splits = vec![Split::Test; num_nodes];
    for (rank, &v) in order.iter().enumerate() {
        splits[v] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

/// Stochastic block model with Gaussian class-centroid features.
///
/// Node `v` belongs to block `v * C / n`; labels are block ids.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph> {
    let &SbmParams {
        num_nodes,
        num_classes,
        p_in,
        p_out,
        feature_dim,
        feature_noise,
        seed,
    } = params;
    if num_classes == 0 || num_nodes < num_classes {
        return Err(Error::parameter("num_nodes", "need num_nodes >= num_classes >= 1"));
    }
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(Error::parameter("p_in/p_out", "need 0 <= p_out < p_in <= 1"));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(Error::parameter("feature_noise", "must be a finite non-negative stddev"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..num_nodes).map(|v| v * num_classes / num_nodes).collect();

    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in u + 1..num_nodes {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            // Always draw so the stream position does not depend on p.
            let draw: f64 = rng.random();
            if draw < p {
                edges.push((u, v));
            }
        }
    }

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centroids: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..feature_dim).map(|_| std_normal.sample(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(num_nodes * feature_dim);
    for &label in &labels {
        for &c in &centroids[label] {
            data.push(c + feature_noise * std_normal.sample(&mut rng));
        }
    }
    let features = Matrix::from_vec(num_nodes, feature_dim, data)?;
    let splits = default_splits(num_nodes, rng.random());
    Graph::from_edges(num_nodes, &edges, features, labels, splits)
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        reason: reason.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Loads a graph from whitespace-separated text files.
///
/// The label file fixes the node count; feature rows must match it and
/// edge endpoints must lie below it. Without a mask file the default
/// seeded 60/20/20 split is used.
pub fn load_edge_list(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    masks_path: Option<&Path>,
    split_seed: u64,
) -> Result<Graph> {
    let labels_text = read_text(labels_path)?;
    let mut labels = Vec::new();
    for (line, text) in content_lines(&labels_text) {
        let label = text
            .parse::<usize>()
            .map_err(|e| parse_err(labels_path, line, format!("bad label {text:?}: {e}")))?;
        labels.push(label);
    }
    let num_nodes = labels.len();

    let features_text = read_text(features_path)?;
    let mut rows = Vec::new();
    for (line, text) in content_lines(&features_text) {
        let row = text
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(features_path, line, format!("bad feature value: {e}")))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(features_path, line, "non-finite feature value"));
        }
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(parse_err(
                    features_path,
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.len() != num_nodes {
        return Err(Error::shape("feature rows vs labels", num_nodes, rows.len()));
    }
    let features = Matrix::from_rows(&rows)?;

    let edges_text = read_text(edges_path)?;
    let mut edges = Vec::new();
    for (line, text) in content_lines(&edges_text) {
        let mut it = text.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(edges_path, line, "expected `u v`"));
        };
        let parse = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|e| parse_err(edges_path, line, format!("bad node id {tok:?}: {e}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for node in [u, v] {
            if node >= num_nodes {
                return Err(Error::Range {
                    what: "node id",
                    value: node,
                    limit: num_nodes,
                });
            }
        }
        edges.push((u, v));
    }

    let splits = match masks_path {
        None => default_splits(num_nodes, split_seed),
        Some(path) => {
            let text = read_text(path)?;
            let mut splits = Vec::new();
            for (line, tok) in content_lines(&text) {
                splits.push(match tok {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    "test" => Split::Test,
                    other => return Err(parse_err(path, line, format!("unknown split {other:?}"))),
                });
            }
            if splits.len() != num_nodes {
                return Err(Error::shape("mask rows vs labels", num_nodes, splits.len()));
            }
            splits
        }
    };
    Graph::from_edges(num_nodes, &edges, features, labels, splits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    Hash,
    BfsGreedy,
}

impl std::str::FromStr for PartitionMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hash" => Ok(Self::Hash),
            "bfs-greedy" => Ok(Self::BfsGreedy),
            other => Err(format!("unknown partition method {other:?}")),
        }
    }
}

impl std::fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hash => "hash",
            Self::BfsGreedy => "bfs-greedy",
        })
    }
}

/// A remote node a worker needs, and the worker that owns it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct HaloEntry {
    pub node: usize,
    pub owner: usize,
}

/// Node ownership across `K` workers with derived boundary and halo sets.
///
/// All node lists are sorted by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    owner: Vec<usize>,
    local_nodes: Vec<Vec<usize>>,
    boundary_nodes: Vec<Vec<usize>>,
    /// `send_sets[k][j]`: nodes of `B_k` with at least one neighbour on `j`.
    send_sets: Vec<Vec<Vec<usize>>>,
    halo: Vec<Vec<HaloEntry>>,
}

impl Partition {
    pub fn from_owner(graph: &Graph, num_workers: usize, owner: Vec<usize>) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::parameter("num_workers", "must be at least 1"));
        }
        if owner.len() != graph.num_nodes() {
            return Err(Error::shape("partition owner", graph.num_nodes(), owner.len()));
        }
        if let Some(&bad) = owner.iter().find(|&&k| k >= num_workers) {
            return Err(Error::Range {
                what: "owner",
                value: bad,
                limit: num_workers,
            });
        }
        let mut local_nodes = vec![Vec::new(); num_workers];
        let mut boundary_nodes = vec![Vec::new(); num_workers];
        let mut send_sets = vec![vec![Vec::new(); num_workers]; num_workers];
        let mut halo = vec![Vec::new(); num_workers];
        for v in 0..graph.num_nodes() {
            let k = owner[v];
            local_nodes[k].push(v);
            let mut targets = Vec::new();
            for &u in graph.neighbors(v) {
                let j = owner[u];
                if j != k && !targets.contains(&j) {
                    targets.push(j);
                }
            }
            if !targets.is_empty() {
                boundary_nodes[k].push(v);
                for j in targets {
                    send_sets[k][j].push(v);
                    halo[j].push(HaloEntry { node: v, owner: k });
                }
            }
        }
        Ok(Self {
            owner,
            local_nodes,
            boundary_nodes,
            send_sets,
            halo,
        })
    }

    pub fn num_workers(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn owner_of(&self, v: usize) -> usize {
        self.owner[v]
    }

    pub fn local_nodes(&self, k: usize) -> &[usize] {
        &self.local_nodes[k]
    }

    pub fn boundary_nodes(&self, k: usize) -> &[usize] {
        &self.boundary_nodes[k]
    }

    /// Boundary nodes of `k` whose features worker `j` needs.
    pub fn send_set(&self, k: usize, j: usize) -> &[usize] {
        &self.send_sets[k][j]
    }

    pub fn halo(&self, k: usize) -> &[HaloEntry] {
        &self.halo[k]
    }

    pub fn edge_cut(&self, graph: &Graph) -> usize {
        graph
            .undirected_edges()
            .filter(|&(u, v)| self.owner[u] != self.owner[v])
            .count()
    }

    /// Copies the feature rows of each worker's local nodes.
    pub fn local_features(&self, features: &Matrix) -> Vec<Matrix> {
        self.local_nodes
            .iter()
            .map(|nodes| features.select_rows(nodes))
            .collect()
    }
}

pub fn partition_graph(
    graph: &Graph,
    num_workers: usize,
    method: PartitionMethod,
    seed: u64,
) -> Result<Partition> {
    let n = graph.num_nodes();
    if num_workers == 0 || num_workers > n {
        return Err(Error::parameter(
            "num_workers",
            format!("need 1 <= K <= num_nodes ({n}), got {num_workers}"),
        ));
    }
    let owner = match method {
        PartitionMethod::Hash => (0..n).map(|v| v % num_workers).collect(),
        PartitionMethod::BfsGreedy => bfs_greedy(graph, num_workers, seed),
    };
    Partition::from_owner(graph, num_workers, owner)
}

fn bfs_distances(graph: &Graph, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    let mut queue = std::collections::VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &u in graph.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Grows `k` regions breadth-first, always extending the smallest region.
///
/// The first seed is drawn from `seed`; each further seed is the node
/// farthest from the seeds so far (unreachable counts as infinitely far,
/// ties to the lowest id), so disconnected components get their own seeds.
fn bfs_greedy(graph: &Graph, k: usize, seed: u64) -> Vec<usize> {
    use std::collections::VecDeque;

    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = vec![rng.random_range(0..n)];
    while seeds.len() < k {
        let dist = bfs_distances(graph, &seeds);
        let next = (0..n)
            .filter(|v| !seeds.contains(v))
            .max_by(|&a, &b| dist[a].cmp(&dist[b]).then(b.cmp(&a)))
            .expect("k <= n leaves a candidate");
        seeds.push(next);
    }

    const UNASSIGNED: usize = usize::MAX;
    let mut owner = vec![UNASSIGNED; n];
    let mut sizes = vec![0usize; k];
    let mut frontiers: Vec<VecDeque<usize>> = seeds.iter().map(|&s| VecDeque::from([s])).collect();
    let mut remaining = n;
    let mut next_orphan = 0;
    while remaining > 0 {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&r| (sizes[r], r));
        let mut grew = false;
        for &r in &order {
            while let Some(v) = frontiers[r].pop_front() {
                if owner[v] != UNASSIGNED {
                    continue;
                }
                owner[v] = r;
                sizes[r] += 1;
                remaining -= 1;
                frontiers[r].extend(graph.neighbors(v).iter().filter(|&&u| owner[u] == UNASSIGNED));
                grew = true;
                break;
            }
            if grew {
                break;
            }
        }
        if !grew {
            // Every frontier is exhausted: restart the smallest region at
            // the lowest unassigned node.
            while owner[next_orphan] != UNASSIGNED {
                next_orphan += 1;
            }
            frontiers[order[0]].push_back(next_orphan);
        }
    }
    owner
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let features = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Graph::from_edges(n, &edges, features, vec![0; n], vec![Split::Train; n]).unwrap()
    }

    fn two_cliques(size: usize) -> Graph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for u in 0..size {
                for v in u + 1..size {
                    edges.push((base + u, base + v));
                }
            }
        }
        let n = 2 * size;
        Graph::from_edges(n, &edges, Matrix::zeros(n, 1), vec![0; n], vec![Split::Train; n]).unwrap()
    }

    #[test]
    fn degenerate_sbm_is_two_cliques() {
        let g = generate_sbm(&SbmParams {
            num_nodes: 4,
            num_classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            feature_noise: 0.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[3]);
        assert_eq!(g.neighbors(3), &[2]);
        assert_eq!(g.features().row(0), g.features().row(1));
        assert_eq!(g.features().row(2), g.features().row(3));
        assert_eq!(g.labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn sbm_rejects_bad_probabilities() {
        let mut p = SbmParams {
            num_nodes: 10,
            num_classes: 2,
            p_in: 0.1,
            p_out: 0.2,
            feature_dim: 2,
            feature_noise: 0.1,
            seed: 0,
        };
        assert!(matches!(generate_sbm(&p), Err(Error::Parameter { .. })));
        p.p_in = 1.5;
        assert!(generate_sbm(&p).is_err());
    }

    #[test]
    fn sbm_is_homophilous() {
        let p = SbmParams {
            num_nodes: 200,
            num_classes: 4,
            p_in: 0.2,
            p_out: 0.01,
            feature_dim: 16,
            feature_noise: 0.1,
            seed: 7,
        };
        let g = generate_sbm(&p).unwrap();
        // Expected: intra 4·C(50,2)·0.2 = 980, inter 6·50·50·0.01 = 150.
        let expected = 980.0 / (980.0 + 150.0);
        assert!(expected > 0.8);
        let (mut intra, mut total) = (0usize, 0usize);
        for (u, v) in g.undirected_edges() {
            total += 1;
            if g.labels()[u] == g.labels()[v] {
                intra += 1;
            }
        }
        let frac = intra as f64 / total as f64;
        assert!(frac > 0.8, "intra fraction {frac}");
        assert!((frac - expected).abs() < 0.05);
        assert_eq!(generate_sbm(&p).unwrap(), g);
    }

    #[test]
    fn sbm_graph_invariants() {
        let g = generate_sbm(&SbmParams {
            num_nodes: 60,
            num_classes: 3,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 4,
            feature_noise: 1.0,
            seed: 3,
        })
        .unwrap();
        assert_eq!(*g.offsets().last().unwrap(), g.num_edges());
        assert!(g.offsets().windows(2).all(|w| w[0] <= w[1]));
        for v in 0..g.num_nodes() {
            assert!(!g.neighbors(v).contains(&v));
            for &u in g.neighbors(v) {
                assert!(g.neighbors(u).binary_search(&v).is_ok());
            }
        }
        let train = g.split_nodes(Split::Train).len();
        let val = g.split_nodes(Split::Val).len();
        assert_eq!((train, val, g.num_nodes() - train - val), (36, 12, 12));
    }

    #[test]
    fn hash_partition_of_path() {
        let g = path_graph(4);
        let p = partition_graph(&g, 2, PartitionMethod::Hash, 0).unwrap();
        assert_eq!(p.owner(), &[0, 1, 0, 1]);
        assert_eq!(p.boundary_nodes(0), &[0, 2]);
        assert_eq!(p.boundary_nodes(1), &[1, 3]);
        assert_eq!(
            p.halo(0),
            &[HaloEntry { node: 1, owner: 1 }, HaloEntry { node: 3, owner: 1 }]
        );
        assert_eq!(p.send_set(1, 0), &[1, 3]);
    }

    #[test]
    fn single_worker_has_no_boundary() {
        let g = path_graph(5);
        for method in [PartitionMethod::Hash, PartitionMethod::BfsGreedy] {
            let p = partition_graph(&g, 1, method, 9).unwrap();
            assert!(p.boundary_nodes(0).is_empty());
            assert!(p.halo(0).is_empty());
        }
    }

    #[test]
    fn too_many_workers() {
        let g = path_graph(3);
        assert!(matches!(
            partition_graph(&g, 4, PartitionMethod::Hash, 0),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn bfs_greedy_separates_disconnected_cliques() {
        let g = two_cliques(10);
        for seed in 0..8 {
            let p = partition_graph(&g, 2, PartitionMethod::BfsGreedy, seed).unwrap();
            let cut = g
                .undirected_edges()
                .filter(|&(u, v)| p.owner_of(u) != p.owner_of(v))
                .count();
            assert_eq!(cut, 0, "seed {seed}");
            assert_eq!(p.local_nodes(0).len(), 10);
        }
    }

    #[test]
    fn bfs_greedy_beats_hash_on_clustered_graph() {
        let g = generate_sbm(&SbmParams {
            num_nodes: 200,
            num_classes: 4,
            p_in: 0.2,
            p_out: 0.005,
            feature_dim: 2,
            feature_noise: 0.1,
            seed: 11,
        })
        .unwrap();
        let hash = partition_graph(&g, 4, PartitionMethod::Hash, 0).unwrap();
        let bfs = partition_graph(&g, 4, PartitionMethod::BfsGreedy, 0).unwrap();
        assert!(bfs.edge_cut(&g) < hash.edge_cut(&g));
    }

    #[test]
    fn local_feature_slices_reassemble() {
        let g = generate_sbm(&SbmParams {
            num_nodes: 30,
            num_classes: 3,
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 3,
            feature_noise: 0.5,
            seed: 5,
        })
        .unwrap();
        let p = partition_graph(&g, 3, PartitionMethod::BfsGreedy, 1).unwrap();
        let slices = p.local_features(g.features());
        let mut rebuilt = Matrix::zeros(g.num_nodes(), g.feature_dim());
        for (k, slice) in slices.iter().enumerate() {
            for (i, &v) in p.local_nodes(k).iter().enumerate() {
                rebuilt.row_mut(v).copy_from_slice(slice.row(i));
            }
        }
        assert_eq!(&rebuilt, g.features());
    }

    #[test]
    fn load_path_graph() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.txt");
        let f = dir.path().join("f.txt");
        let l = dir.path().join("l.txt");
        fs::write(&e, "# path\n0 1\n1 2\n").unwrap();
        fs::write(&f, "1 0\n0 1\n1 1\n").unwrap();
        fs::write(&l, "0\n1\n0\n").unwrap();
        let g = load_edge_list(&e, &f, &l, None, 0).unwrap();
        assert_eq!(g.degrees(), vec![1, 2, 1]);

        fs::write(&e, "0 1\n1 0\n").unwrap();
        let g = load_edge_list(&e, &f, &l, None, 0).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.txt");
        let f = dir.path().join("f.txt");
        let l = dir.path().join("l.txt");
        fs::write(&e, "0 1\n1 2\n").unwrap();
        fs::write(&f, "1 0\n0 1\n").unwrap();
        fs::write(&l, "0\n1\n0\n").unwrap();
        assert!(matches!(load_edge_list(&e, &f, &l, None, 0), Err(Error::Shape { .. })));

        fs::write(&f, "1 0\n0 1\n1 1\n").unwrap();
        fs::write(&e, "0 1\n1 x\n").unwrap();
        match load_edge_list(&e, &f, &l, None, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(&e, "0 1\n1 7\n").unwrap();
        assert!(matches!(
            load_edge_list(&e, &f, &l, None, 0),
            Err(Error::Range { value: 7, .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let g = generate_sbm(&SbmParams {
            num_nodes: 25,
            num_classes: 2,
            p_in: 0.4,
            p_out: 0.05,
            feature_dim: 3,
            feature_noise: 0.7,
            seed: 2,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<_> = ["e", "f", "l", "m"].iter().map(|n| dir.path().join(n)).collect();
        g.write_files(&paths[0], &paths[1], &paths[2], &paths[3]).unwrap();
        let back = load_edge_list(&paths[0], &paths[1], &paths[2], Some(&paths[3]), 0).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.fingerprint(), g.fingerprint());
    }

    proptest::proptest! {
        #[test]
        fn partition_invariants(
            n in 2usize..40,
            k in 1usize..5,
            raw_edges in proptest::collection::vec((0usize..40, 0usize..40), 0..80),
            bfs in proptest::bool::ANY,
            seed in 0u64..100,
        ) {
            proptest::prop_assume!(k <= n);
            let edges: Vec<_> = raw_edges.into_iter().map(|(u, v)| (u % n, v % n)).collect();
            let g = Graph::from_edges(n, &edges, Matrix::zeros(n, 1), vec![0; n], vec![Split::Train; n]).unwrap();
            let method = if bfs { PartitionMethod::BfsGreedy } else { PartitionMethod::Hash };
            let p = partition_graph(&g, k, method, seed).unwrap();
            proptest::prop_assert_eq!(&partition_graph(&g, k, method, seed).unwrap(), &p);

            let total: usize = (0..k).map(|w| p.local_nodes(w).len()).sum();
            proptest::prop_assert_eq!(total, n);
            for w in 0..k {
                for &v in p.local_nodes(w) {
                    proptest::prop_assert_eq!(p.owner_of(v), w);
                }
                let expected: BTreeSet<usize> = p.local_nodes(w).iter().copied()
                    .filter(|&v| g.neighbors(v).iter().any(|&u| p.owner_of(u) != w))
                    .collect();
                let actual: BTreeSet<usize> = p.boundary_nodes(w).iter().copied().collect();
                proptest::prop_assert_eq!(actual, expected);

                let halo: Vec<usize> = p.halo(w).iter().map(|h| h.node).collect();
                let expected_halo: BTreeSet<usize> = p.local_nodes(w).iter()
                    .flat_map(|&v| g.neighbors(v).iter().copied())
                    .filter(|&u| p.owner_of(u) != w)
                    .collect();
                proptest::prop_assert_eq!(halo.clone(), expected_halo.into_iter().collect::<Vec<_>>());
                for h in p.halo(w) {
                    proptest::prop_assert_eq!(p.owner_of(h.node), h.owner);
                }
            }
            for (u, v) in g.undirected_edges() {
                let (a, b) = (p.owner_of(u), p.owner_of(v));
                if a != b {
                    proptest::prop_assert!(p.boundary_nodes(a).contains(&u));
                    proptest::prop_assert!(p.boundary_nodes(b).contains(&v));
                    proptest::prop_assert!(p.send_set(a, b).contains(&u));
                }
            }
        }
    }
}
