use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelVector, Targets, Task, TaskKind};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` global epochs.
    StepDecay { every: usize, factor: f64 },
}

/// Local optimiser settings owned by one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub schedule: LrSchedule,
}

impl OptState {
    pub fn new(learning_rate: f64, local_epochs: usize, batch_size: usize, rng_seed: u64) -> Self {
        Self {
            learning_rate,
            local_epochs,
            batch_size,
            rng_seed,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidParams(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidParams(
                "local_epochs and batch_size must be >= 1".into(),
            ));
        }
        if let LrSchedule::StepDecay { every, factor } = self.schedule {
            if every == 0 || !(factor > 0.0) {
                return Err(ModelError::InvalidParams(
                    "step decay needs every >= 1 and factor > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Rate in force during global epoch `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::StepDecay { every, factor } => {
                self.learning_rate * factor.powi((epoch.saturating_sub(1) / every) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub test_loss: f64,
    /// Only defined for classification.
    pub test_accuracy: Option<f64>,
}

fn check(task: &Task, w: &ModelVector) -> Result<(), ModelError> {
    if w.dim() != task.param_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: task.param_dim(),
            got: w.dim(),
        });
    }
    if !w.is_finite() {
        return Err(ModelError::NonFiniteModel);
    }
    Ok(())
}

/// Per-sample loss, accumulating the gradient into `grad` when given.
/// Least squares uses `½(x·w + b − y)²`, softmax regression cross-entropy.
fn sample_loss(task: &Task, i: usize, w: &[f64], grad: Option<&mut [f64]>, scratch: &mut [f64]) -> f64 {
    let x = task.row(i);
    let f = x.len();
    match &task.targets {
        Targets::Real(ys) => {
            let pred = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[f];
            let r = pred - ys[i];
            if let Some(g) = grad {
                for (gk, xk) in g.iter_mut().zip(x) {
                    *gk += r * xk;
                }
                g[f] += r;
            }
            0.5 * r * r
        }
        Targets::Class(labels) => {
            let c = task.n_classes();
            let logits = &mut scratch[..c];
            for (k, z) in logits.iter_mut().enumerate() {
                let row = &w[k * (f + 1)..(k + 1) * (f + 1)];
                *z = x.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + row[f];
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let log_z = max + norm.ln();
            let y = labels[i];
            let loss = log_z - logits[y];
            if let Some(g) = grad {
                for k in 0..c {
                    let p = (logits[k] - log_z).exp() - if k == y { 1.0 } else { 0.0 };
                    let row = &mut g[k * (f + 1)..(k + 1) * (f + 1)];
                    for (gk, xk) in row.iter_mut().zip(x) {
                        *gk += p * xk;
                    }
                    row[f] += p;
                }
            }
            loss
        }
    }
}

/// Mean loss of `w` over the given sample indices.
pub fn loss_on(task: &Task, indices: &[usize], w: &ModelVector) -> Result<f64, ModelError> {
    check(task, w)?;
    if indices.is_empty() {
        return Err(ModelError::InvalidParams("loss over an empty index set".into()));
    }
    let mut scratch = vec![0.0; task.n_classes()];
    let total: f64 = indices
        .iter()
        .map(|&i| sample_loss(task, i, w.as_slice(), None, &mut scratch))
        .sum();
    Ok(total / indices.len() as f64)
}

/// Mean gradient of the loss over the given sample indices.
pub fn gradient_on(task: &Task, indices: &[usize], w: &ModelVector) -> Result<Vec<f64>, ModelError> {
    check(task, w)?;
    let mut grad = vec![0.0; w.dim()];
    let mut scratch = vec![0.0; task.n_classes()];
    for &i in indices {
        sample_loss(task, i, w.as_slice(), Some(&mut grad), &mut scratch);
    }
    let n = indices.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Worker `worker`'s local loss.
pub fn loss(task: &Task, worker: usize, w: &ModelVector) -> Result<f64, ModelError> {
    let idx = task.worker_indices(worker)?;
    if idx.is_empty() {
        return Err(ModelError::EmptyPartition(worker));
    }
    loss_on(task, idx, w)
}

/// Runs `opt.local_epochs` passes of mini-batch SGD over the worker's shard,
/// starting from `w`, during global epoch `epoch`.
///
/// Shuffling is seeded by `(opt.rng_seed, worker, epoch, pass)`. If the
/// iterate stops being finite, training halts and the non-finite model is
/// returned for the trust system to catch.
pub fn local_train(
    task: &Task,
    worker: usize,
    w: &ModelVector,
    opt: &OptState,
    epoch: usize,
) -> Result<ModelVector, ModelError> {
    check(task, w)?;
    let idx = task.worker_indices(worker)?;
    if idx.is_empty() {
        return Err(ModelError::EmptyPartition(worker));
    }
    let lr = opt.learning_rate_at(epoch);
    let mut params = w.clone().into_inner();
    if lr == 0.0 {
        return Ok(ModelVector::new(params));
    }
    let mut order = idx.to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut scratch = vec![0.0; task.n_classes()];
    for pass in 0..opt.local_epochs {
        let mut rng = rng_for(
            opt.rng_seed,
            Stream::Shuffle,
            &[worker as u64, epoch as u64, pass as u64],
        );
        order.shuffle(&mut rng);
        for batch in order.chunks(opt.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                sample_loss(task, i, &params, Some(&mut grad), &mut scratch);
            }
            let step = lr / batch.len() as f64;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        if !params.iter().all(|p| p.is_finite()) {
            break;
        }
    }
    Ok(ModelVector::new(params))
}

/// Test-split metrics. Accuracy breaks argmax ties towards the lowest class.
pub fn evaluate(task: &Task, w: &ModelVector) -> Result<Evaluation, ModelError> {
    let test_loss = loss_on(task, &task.test, w)?;
    let test_accuracy = match task.kind() {
        TaskKind::LeastSquares => None,
        TaskKind::SoftmaxRegression => {
            let f = task.n_features();
            let c = task.n_classes();
            let params = w.as_slice();
            let correct = task
                .test
                .iter()
                .filter(|&&i| {
                    let x = task.row(i);
                    let mut best = (f64::NEG_INFINITY, 0);
                    for k in 0..c {
                        let row = &params[k * (f + 1)..(k + 1) * (f + 1)];
                        let z = x.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + row[f];
                        if z > best.0 {
                            best = (z, k);
                        }
                    }
                    Some(best.1) == task.label(i)
                })
                .count();
            Some(correct as f64 / task.test.len() as f64)
        }
    };
    Ok(Evaluation {
        test_loss,
        test_accuracy,
    })
}

/// Closed-form least-squares minimiser over `indices` (bias last).
pub fn least_squares_optimum(task: &Task, indices: &[usize]) -> Result<ModelVector, ModelError> {
    let Targets::Real(ys) = &task.targets else {
        return Err(ModelError::InvalidParams(
            "closed-form optimum only exists for least squares".into(),
        ));
    };
    let f = task.n_features();
    let a = DMatrix::from_fn(indices.len(), f + 1, |r, c| {
        if c < f {
            task.row(indices[r])[c]
        } else {
            1.0
        }
    });
    let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| ys[i]));
    let gram = a.transpose() * &a;
    let rhs = a.transpose() * y;
    let chol = gram.cholesky().ok_or(ModelError::Singular)?;
    Ok(ModelVector::new(chol.solve(&rhs).iter().copied().collect()))
}
