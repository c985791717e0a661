//! Models as flat parameter vectors, plus the desk-scale learning tasks
//! workers train on.

mod task;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use task::{make_task, partition_noniid, Targets, Task, TaskKind, TaskSpec};
pub use train::{
    evaluate, gradient_on, least_squares_optimum, local_train, loss, loss_on, Evaluation,
    LrSchedule, OptState,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid task parameters: {0}")]
    InvalidParams(String),
    #[error("model has non-finite parameters")]
    NonFiniteModel,
    #[error("model dimension {got} does not match task dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("worker {0} holds no training data")]
    EmptyPartition(usize),
    #[error("worker {worker} out of range for a partition of {n} workers")]
    UnknownWorker { worker: usize, n: usize },
    #[error("singular normal equations")]
    Singular,
    #[error("task io: {0}")]
    Io(#[from] std::io::Error),
    #[error("task csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("task json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A model's parameters laid out as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    /// Wraps `params`. Panics on an empty vector.
    pub fn new(params: Vec<f64>) -> Self {
        assert!(!params.is_empty(), "model vectors have at least one parameter");
        Self(params)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True iff every parameter is a finite real.
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Dataset-weighted mean of `models`; weights need not be normalised.
    pub fn weighted_mean<'a, I>(items: I) -> Option<ModelVector>
    where
        I: IntoIterator<Item = (f64, &'a ModelVector)>,
    {
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (w, m) in items {
            let buf = acc.get_or_insert_with(|| vec![0.0; m.dim()]);
            for (a, x) in buf.iter_mut().zip(m.as_slice()) {
                *a += w * x;
            }
            total += w;
        }
        let mut buf = acc?;
        if total <= 0.0 {
            return None;
        }
        buf.iter_mut().for_each(|a| *a /= total);
        Some(ModelVector(buf))
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}
