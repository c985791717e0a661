//! Decentralized trust system: per-connection confidence scores, sampling
//! weights derived from them, and the backup/restore "time machine".
//!
//! Each worker keeps one [`ConfidenceState`] over its in-neighbours. After
//! every local training step the change in its own training loss is charged
//! to the peers it just aggregated, in proportion to their aggregation
//! weights. Scores map to sampling weights through `softmax(crelu(c))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelVector};

#[derive(Debug, Error)]
pub enum DtsError {
    #[error("cannot sample {requested} peers from {available}")]
    InvalidSampleCount { requested: usize, available: usize },
    #[error("aggregation weights do not line up with the sampled peers")]
    MisalignedWeights,
    #[error("compensation training failed: {0}")]
    Compensation(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtsParams {
    /// Finite stand-in for the infinite trust loss charged on damage.
    #[serde(default = "default_cap")]
    pub penalty_cap: f64,
    /// A loss above this multiple of the worker's initial loss counts as
    /// damage.
    #[serde(default = "default_threshold")]
    pub damage_threshold: f64,
}

fn default_cap() -> f64 {
    50.0
}
fn default_threshold() -> f64 {
    100.0
}

impl Default for DtsParams {
    fn default() -> Self {
        Self {
            penalty_cap: default_cap(),
            damage_threshold: default_threshold(),
        }
    }
}

/// Identity below zero, slope 0.2 above.
pub fn crelu(x: f64) -> f64 {
    if x <= 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// `softmax(crelu(c))`, max-shifted.
pub fn to_sample_weights(confidences: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = confidences.iter().map(|&c| crelu(c)).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Where a damaged model was restored from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    Backup,
    /// No backup existed yet; the worker fell back to its initial model.
    InitialModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtsOutcome {
    pub model: ModelVector,
    pub recovery: Option<Recovery>,
    pub loss_trust: f64,
}

/// Trust bookkeeping for one worker. Vectors are indexed by position in
/// `peers` (the worker's in-neighbours in ascending id order).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    pub peers: Vec<usize>,
    pub confidences: Vec<f64>,
    pub sample_weights: Vec<f64>,
    pub last_sampled_mask: Vec<bool>,
    pub backup: Option<ModelVector>,
    pub best_loss: f64,
    pub last_loss: f64,
    /// Loss of the initial model; the scale for the damage threshold.
    pub reference_loss: Option<f64>,
    pub initial_model: ModelVector,
}

impl ConfidenceState {
    /// Neutral start: zero confidence, uniform weights, every peer marked
    /// as sampled (the first aggregation uses all in-neighbours).
    pub fn new(peers: Vec<usize>, initial_model: ModelVector, initial_loss: Option<f64>) -> Self {
        let n = peers.len();
        Self {
            confidences: vec![0.0; n],
            sample_weights: to_sample_weights(&vec![0.0; n]),
            last_sampled_mask: vec![true; n],
            backup: None,
            best_loss: f64::INFINITY,
            last_loss: initial_loss.unwrap_or(f64::INFINITY),
            reference_loss: initial_loss,
            initial_model,
            peers,
        }
    }

    pub fn position(&self, peer: usize) -> Option<usize> {
        self.peers.binary_search(&peer).ok()
    }

    pub fn theta_of(&self, peer: usize) -> Option<f64> {
        self.position(peer).map(|k| self.sample_weights[k])
    }

    pub fn sampled_peers(&self) -> Vec<usize> {
        self.peers
            .iter()
            .zip(&self.last_sampled_mask)
            .filter_map(|(&p, &m)| m.then_some(p))
            .collect()
    }

    /// Damage predicate: non-finite parameters, a non-finite loss, or a
    /// loss beyond `damage_threshold` times the initial loss.
    pub fn is_damaged(&self, params: &DtsParams, model: &ModelVector, loss: Option<f64>) -> bool {
        if !model.is_finite() {
            return true;
        }
        match loss {
            Some(l) if l.is_finite() => self
                .reference_loss
                .is_some_and(|r| l > params.damage_threshold * r),
            _ => true,
        }
    }
}

/// Draws `count` distinct peers with probability proportional to the
/// current sampling weights (sequential draw, then renormalise over the
/// rest). Returns the peer ids in ascending order and updates the mask.
pub fn sample_peers<R: Rng>(state: &mut ConfidenceState, count: usize, rng: &mut R) -> Result<Vec<usize>, DtsError> {
    let n = state.peers.len();
    if count == 0 || count > n {
        return Err(DtsError::InvalidSampleCount {
            requested: count,
            available: n,
        });
    }
    let mut remaining = state.sample_weights.clone();
    let mut mask = vec![false; n];
    for _ in 0..count {
        let total: f64 = remaining.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (k, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(k);
            if u < acc {
                break;
            }
        }
        let k = match pick {
            Some(k) => k,
            // Every remaining weight underflowed to zero: take the first free peer.
            None => (0..n).find(|&k| !mask[k]).expect("count <= n"),
        };
        mask[k] = true;
        remaining[k] = 0.0;
    }
    state.last_sampled_mask = mask;
    Ok(state.sampled_peers())
}

/// One trust update after local training.
///
/// `weights_used[k]` is the aggregation weight given to `peers[k]` (zero
/// for unsampled peers). On damage the worker restores its backup (or its
/// initial model when none exists yet), runs `compensate` once on it, and
/// charges `penalty_cap`. Otherwise it may snapshot a new backup and
/// charges the loss change. Either way sampled peers' confidences move by
/// `-weight · loss_trust` and the sampling weights are recomputed.
pub fn dts_step<F>(
    state: &mut ConfidenceState,
    params: &DtsParams,
    trained: ModelVector,
    current_loss: Option<f64>,
    weights_used: &[f64],
    compensate: F,
) -> Result<DtsOutcome, DtsError>
where
    F: FnOnce(&ModelVector) -> Result<ModelVector, ModelError>,
{
    if weights_used.len() != state.peers.len()
        || weights_used
            .iter()
            .zip(&state.last_sampled_mask)
            .any(|(&w, &m)| !m && w != 0.0)
    {
        return Err(DtsError::MisalignedWeights);
    }

    let (model, recovery, loss_trust) = if state.is_damaged(params, &trained, current_loss) {
        let (restored, source) = match &state.backup {
            Some(b) => (b.clone(), Recovery::Backup),
            None => (state.initial_model.clone(), Recovery::InitialModel),
        };
        let compensated = compensate(&restored)?;
        (compensated, Some(source), params.penalty_cap)
    } else {
        let loss = current_loss.expect("undamaged implies a finite loss");
        if loss < state.best_loss {
            state.best_loss = loss;
            state.backup = Some(trained.clone());
        }
        let delta = if state.last_loss.is_finite() {
            loss - state.last_loss
        } else {
            0.0
        };
        state.last_loss = loss;
        (trained, None, delta)
    };

    for ((c, &w), &m) in state
        .confidences
        .iter_mut()
        .zip(weights_used)
        .zip(&state.last_sampled_mask)
    {
        if m {
            *c -= w * loss_trust;
        }
    }
    state.sample_weights = to_sample_weights(&state.confidences);
    Ok(DtsOutcome {
        model,
        recovery,
        loss_trust,
    })
}
