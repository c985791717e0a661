//! Aggregation weights and the convex combination of peer models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelVector;

/// How a receiver weights the models of the peers it aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `|D_j| / Σ_k |D_k|`: the dataset-ratio rule of earlier decentralized
    /// schemes. Senders with many out-neighbours are over-counted.
    NaiveDatasetRatio,
    /// `(|D_j|/d_j) / Σ_k (|D_k|/d_k)`: dataset size discounted by the
    /// sender's outdegree, which removes that over-counting.
    OutdegreeNormalized,
}

impl WeightRule {
    /// Unnormalised weight of a sender with the given size and outdegree.
    pub fn raw(self, dataset_size: u64, outdegree: usize) -> f64 {
        match self {
            WeightRule::NaiveDatasetRatio => dataset_size as f64,
            WeightRule::OutdegreeNormalized => dataset_size as f64 / outdegree as f64,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no peer records to aggregate")]
    EmptySample,
    #[error("peer {peer} model has dimension {got}, expected {expected}")]
    DimensionMismatch {
        peer: usize,
        expected: usize,
        got: usize,
    },
    #[error("peer {0} model is non-finite")]
    NonFiniteInput(usize),
    #[error("peer {0} advertises an empty dataset or zero outdegree")]
    InvalidRecord(usize),
}

/// What a receiver knows about one peer: the last message it got from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub peer: usize,
    pub dataset_size: u64,
    pub outdegree: usize,
    pub model: ModelVector,
    pub epoch_tag: usize,
}

/// Normalised aggregation weights for `records`, in record order.
pub fn aggregation_weights(records: &[PeerRecord], rule: WeightRule) -> Result<Vec<f64>, AggregateError> {
    if records.is_empty() {
        return Err(AggregateError::EmptySample);
    }
    let raw = records
        .iter()
        .map(|r| {
            if r.dataset_size == 0 || r.outdegree == 0 {
                Err(AggregateError::InvalidRecord(r.peer))
            } else {
                Ok(rule.raw(r.dataset_size, r.outdegree))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Combines the record models with the given weights.
///
/// Non-finite inputs are rejected: the trust system screens them out
/// before aggregation, so reaching here with one is a caller bug.
pub fn combine(records: &[PeerRecord], weights: &[f64]) -> Result<ModelVector, AggregateError> {
    let first = records.first().ok_or(AggregateError::EmptySample)?;
    let dim = first.model.dim();
    for r in records {
        if r.model.dim() != dim {
            return Err(AggregateError::DimensionMismatch {
                peer: r.peer,
                expected: dim,
                got: r.model.dim(),
            });
        }
        if !r.model.is_finite() {
            return Err(AggregateError::NonFiniteInput(r.peer));
        }
    }
    Ok(combine_unchecked(records, weights))
}

/// The same combination without screening, as run by a worker with no
/// trust system. Non-finite inputs propagate into the output.
pub fn combine_unchecked(records: &[PeerRecord], weights: &[f64]) -> ModelVector {
    let dim = records[0].model.dim();
    // A single peer, or identical peers, must come back bit-exact.
    if records.iter().all(|r| r.model == records[0].model) {
        return records[0].model.clone();
    }
    let mut out = vec![0.0; dim];
    for (r, &w) in records.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(r.model.as_slice()) {
            *o += w * x;
        }
    }
    // Rounding can push a coordinate a hair outside the inputs' range.
    for (k, o) in out.iter_mut().enumerate() {
        let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            let x = r.model.as_slice()[k];
            (lo.min(x), hi.max(x))
        });
        if lo <= hi {
            *o = o.clamp(lo, hi);
        }
    }
    ModelVector::new(out)
}

/// Aggregates the sampled peer models: `w_i = Σ_j p_ij · w̃_j`.
pub fn phi(records: &[PeerRecord], rule: WeightRule) -> Result<ModelVector, AggregateError> {
    let weights = aggregation_weights(records, rule)?;
    combine(records, &weights)
}
