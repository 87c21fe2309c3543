#![allow(dead_code)]

use condensegraph::graph::{default_splits, generate_sbm, Graph, SbmParams, Split};
use condensegraph::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sbm(num_nodes: usize, feature_dim: usize, noise: f64, seed: u64) -> Graph {
    generate_sbm(&SbmParams {
        num_nodes,
        num_classes: 4,
        p_in: 0.15,
        p_out: 0.01,
        feature_dim,
        feature_noise: noise,
        seed,
    })
    .unwrap()
}

/// `cliques` cliques of `size` nodes joined in a ring by single edges.
pub fn clique_ring(cliques: usize, size: usize, dim: usize, seed: u64) -> Graph {
    let n = cliques * size;
    let mut edges = Vec::new();
    for c in 0..cliques {
        let base = c * size;
        for i in 0..size {
            for j in i + 1..size {
                edges.push((base + i, base + j));
            }
        }
        edges.push((base + size - 1, ((c + 1) % cliques) * size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|v| (v / size) % 3).collect();
    let data = (0..n * dim)
        .map(|i| labels[i / dim] as f64 + rng.random_range(-0.5..0.5))
        .collect();
    Graph::from_edges(n, &edges, Matrix::from_vec(n, dim, data).unwrap(), labels, default_splits(n, seed)).unwrap()
}

/// A random connected graph on at most 10 nodes with every split present.
pub fn tiny_graph(n: usize, dim: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..n {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        edges.push((u, v));
    }
    let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let splits = (0..n)
        .map(|v| match v % 3 {
            0 | 1 => Split::Train,
            _ => Split::Test,
        })
        .collect();
    Graph::from_edges(n, &edges, Matrix::from_vec(n, dim, data).unwrap(), labels, splits).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = condensegraph::numerics::norm(a).max(condensegraph::numerics::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub mod checks {
    use super::*;
    use condensegraph::condense::{attention_gradient, condense_attention, reconstruction_loss};
    use condensegraph::gnn::{sage_backward, sage_forward, LocalAdjacency, Model, NeighborRef, SageLayer};
    use condensegraph::numerics::cross_entropy;

    pub const EPS: f64 = 1e-6;

    /// Worst relative error of one SAGE layer's analytic gradients
    /// (weights, bias, local and halo inputs) for a linear probe loss.
    pub fn layer_check(seed: u64, activation: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_local = rng.random_range(2..=7);
        let n_halo = rng.random_range(0..=3);
        let (d_in, d_out) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let lists: Vec<Vec<NeighborRef>> = (0..n_local)
            .map(|_| {
                let k = rng.random_range(0..=4);
                (0..k)
                    .map(|_| {
                        if n_halo > 0 && rng.random_bool(0.4) {
                            NeighborRef::Halo(rng.random_range(0..n_halo))
                        } else {
                            NeighborRef::Local(rng.random_range(0..n_local))
                        }
                    })
                    .collect()
            })
            .collect();
        let adj = LocalAdjacency::from_lists((0..n_local).collect(), lists);
        let layer = SageLayer::glorot(d_in, d_out, &mut rng);
        let h_local = Matrix::from_vec(n_local, d_in, random_vec(n_local * d_in, &mut rng)).unwrap();
        let h_halo = Matrix::from_vec(n_halo, d_in, random_vec(n_halo * d_in, &mut rng)).unwrap();
        let probe = random_vec(n_local * d_out, &mut rng);
        let upstream = Matrix::from_vec(n_local, d_out, probe.clone()).unwrap();
        let loss = |layer: &SageLayer, hl: &Matrix, hh: &Matrix| -> f64 {
            let (out, _) = sage_forward(layer, hl, hh, &adj, activation).unwrap();
            out.as_slice().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = sage_forward(&layer, &h_local, &h_halo, &adj, activation).unwrap();
        let back = sage_backward(&layer, &cache, &upstream).unwrap();

        let mut analytic = Vec::new();
        back.grads.flatten_into(&mut analytic);
        let mut theta = Vec::new();
        layer.flatten_into(&mut theta);
        let nw = d_in * d_out;
        let numeric = numeric_gradient(&theta, EPS, |t| {
            let l = SageLayer::new(
                Matrix::from_vec(d_in, d_out, t[..nw].to_vec()).unwrap(),
                Matrix::from_vec(d_in, d_out, t[nw..2 * nw].to_vec()).unwrap(),
                t[2 * nw..].to_vec(),
            )
            .unwrap();
            loss(&l, &h_local, &h_halo)
        });
        let mut worst = relative_error(&analytic, &numeric);

        let numeric_local = numeric_gradient(h_local.as_slice(), EPS, |x| {
            loss(&layer, &Matrix::from_vec(n_local, d_in, x.to_vec()).unwrap(), &h_halo)
        });
        worst = worst.max(relative_error(back.grad_h_local.as_slice(), &numeric_local));
        if n_halo > 0 {
            let numeric_halo = numeric_gradient(h_halo.as_slice(), EPS, |x| {
                loss(&layer, &h_local, &Matrix::from_vec(n_halo, d_in, x.to_vec()).unwrap())
            });
            worst = worst.max(relative_error(back.grad_h_halo.as_slice(), &numeric_halo));
        }
        worst
    }

    /// Relative error of the full model's parameter gradient under the
    /// masked cross-entropy on a random graph of at most 10 nodes.
    pub fn model_check(seed: u64, layers: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=10);
        let dim = rng.random_range(2..=4);
        let classes = rng.random_range(2..=3);
        let graph = tiny_graph(n, dim, classes, seed);
        let mut dims = vec![dim];
        dims.extend(std::iter::repeat_n(rng.random_range(2..=5), layers - 1));
        dims.push(classes);
        let model = Model::new(&dims, seed).unwrap();
        let adj = LocalAdjacency::full(&graph);
        let train = graph.split_nodes(condensegraph::graph::Split::Train);
        let loss_of = |m: &Model| {
            let (logits, _) = m.forward_full(&adj, graph.features()).unwrap();
            cross_entropy(&logits, graph.labels(), &train).unwrap()
        };
        let (logits, caches) = model.forward_full(&adj, graph.features()).unwrap();
        let (_, grad) = cross_entropy(&logits, graph.labels(), &train).unwrap();
        let analytic = model.backward_full(&caches, &grad).unwrap();
        let theta = model.flatten();
        let mut probe = model.clone();
        let numeric = numeric_gradient(&theta, EPS, |t| {
            probe.load_flat(t).unwrap();
            loss_of(&probe).0
        });
        relative_error(&analytic, &numeric)
    }

    /// Relative error of the attention parameter gradient of the group
    /// reconstruction loss.
    pub fn attention_check(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = rng.random_range(2..=6);
        let d = rng.random_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..size).map(|_| random_vec(d, &mut rng)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let a = random_vec(d, &mut rng);
        let (s, alpha) = condense_attention(&refs, &a).unwrap();
        let analytic = attention_gradient(&refs, &s, &alpha).unwrap();
        let numeric = numeric_gradient(&a, EPS, |a| {
            let (s, _) = condense_attention(&refs, a).unwrap();
            reconstruction_loss(&refs, &s)
        });
        relative_error(&analytic, &numeric)
    }
}
