//! Error feedback for condensed feature messages.
//!
//! Before condensing, a node's features are compensated with the residual
//! left over from the previous transmission (`ĥ = h + E`); after the
//! receiver-side reconstruction `h̃` is known, the residual becomes
//! `E = ĥ − h̃`. Residuals are kept per `(node, layer)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::norm;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorAccumulator {
    store: BTreeMap<(usize, usize), Vec<f64>>,
    enabled: bool,
}

impl ErrorAccumulator {
    pub fn new(enabled: bool) -> Self {
        Self {
            store: BTreeMap::new(),
            enabled,
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// `ĥ_v = h_v + E[v]`; a missing or disabled residual counts as zero.
    pub fn compensate(&self, node: usize, layer: usize, h: &[f64]) -> Vec<f64> {
        match self.residual(node, layer) {
            Some(e) if e.len() == h.len() => h.iter().zip(e).map(|(a, b)| a + b).collect(),
            _ => h.to_vec(),
        }
    }

    /// Stores `E[v] = ĥ_v − h̃_v`. A no-op when disabled.
    pub fn record_error(&mut self, node: usize, layer: usize, compensated: &[f64], reconstructed: &[f64]) -> Result<()> {
        if compensated.len() != reconstructed.len() {
            return Err(Error::shape("record_error", compensated.len(), reconstructed.len()));
        }
        if !self.enabled {
            return Ok(());
        }
        let residual: Vec<f64> = compensated.iter().zip(reconstructed).map(|(a, b)| a - b).collect();
        if residual.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("error accumulator residual"));
        }
        self.store.insert((node, layer), residual);
        Ok(())
    }

    pub fn residual(&self, node: usize, layer: usize) -> Option<&[f64]> {
        if !self.enabled {
            return None;
        }
        self.store.get(&(node, layer)).map(Vec::as_slice)
    }

    /// Drops residuals of nodes that are no longer boundary nodes.
    pub fn retain_nodes(&mut self, boundary: &BTreeSet<usize>) {
        self.store.retain(|(v, _), _| boundary.contains(v));
    }

    pub fn max_residual_norm(&self) -> f64 {
        self.store.values().map(|e| norm(e)).fold(0.0, f64::max)
    }

    /// Number of stored `f64` elements.
    pub fn memory_elements(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

/// Norms of `(h_v, e_v)` pairs observed during one epoch, where
/// `e_v = h_v − h̃_v` is the transmission error of the raw features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeltaLog {
    pairs: Vec<(f64, f64)>,
}

impl DeltaLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, h: &[f64], reconstructed: &[f64]) {
        let e: f64 = h
            .iter()
            .zip(reconstructed)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.pairs.push((norm(h), e));
    }

    pub fn record_norms(&mut self, h_norm: f64, e_norm: f64) {
        self.pairs.push((h_norm, e_norm));
    }

    pub fn extend(&mut self, other: &DeltaLog) {
        self.pairs.extend_from_slice(&other.pairs);
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

/// Empirical `δ = max ‖e_v‖ / ‖h_v‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeltaEstimate {
    Finite(f64),
    /// Some node with `h_v = 0` was transmitted with nonzero error.
    Infinite,
}

impl DeltaEstimate {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(d) => d,
            Self::Infinite => f64::INFINITY,
        }
    }
}

pub fn measure_delta(log: &DeltaLog) -> Result<DeltaEstimate> {
    if log.is_empty() {
        return Err(Error::UndefinedMetric("delta over an empty log"));
    }
    let mut delta: f64 = 0.0;
    let mut any = false;
    for &(h, e) in &log.pairs {
        if h == 0.0 {
            if e == 0.0 {
                continue;
            }
            return Ok(DeltaEstimate::Infinite);
        }
        any = true;
        delta = delta.max(e / h);
    }
    if !any {
        return Err(Error::UndefinedMetric("delta with every logged ‖h_v‖ = 0"));
    }
    Ok(DeltaEstimate::Finite(delta))
}
