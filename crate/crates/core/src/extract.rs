//! Global-model extraction: average the final models of disjoint groups of
//! honest workers and score each average on the held-out test set.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::model::{evaluate, ModelError, ModelVector, Task};
use crate::rng::{rng_for, Stream};
use crate::runtime::Role;
use crate::scenario::{build_scenario, read_final_models, read_manifest, ScenarioError};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("need {needed} eligible workers for the requested groups, have {available}")]
    NotEnoughWorkers { needed: usize, available: usize },
    #[error("groups and per_draw must both be >= 1")]
    EmptyRequest,
    #[error("group {0} has no finite model")]
    NonFiniteGroup(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupResult {
    pub members: Vec<usize>,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub groups: Vec<GroupResult>,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for `n = 1`).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Draws `groups` disjoint groups of `per_draw` workers from `eligible`,
/// averages each group's models weighted by dataset size and evaluates the
/// averages.
pub fn extract_global_model(
    task: &Task,
    models: &[ModelVector],
    sizes: &[u64],
    eligible: &[usize],
    groups: usize,
    per_draw: usize,
    seed: u64,
) -> Result<Extraction, ExtractError> {
    if groups == 0 || per_draw == 0 {
        return Err(ExtractError::EmptyRequest);
    }
    let needed = groups * per_draw;
    if needed > eligible.len() {
        return Err(ExtractError::NotEnoughWorkers {
            needed,
            available: eligible.len(),
        });
    }
    let mut pool = eligible.to_vec();
    pool.shuffle(&mut rng_for(seed, Stream::Extraction, &[]));
    let mut results = Vec::with_capacity(groups);
    for (g, chunk) in pool.chunks(per_draw).take(groups).enumerate() {
        let mut members = chunk.to_vec();
        members.sort_unstable();
        let avg = ModelVector::weighted_mean(
            members
                .iter()
                .filter(|&&w| models[w].is_finite())
                .map(|&w| (sizes[w] as f64, &models[w])),
        )
        .ok_or(ExtractError::NonFiniteGroup(g))?;
        let e = evaluate(task, &avg)?;
        results.push(GroupResult {
            members,
            test_loss: e.test_loss,
            test_acc: e.test_accuracy,
        });
    }
    let (mean_loss, std_loss) = mean_std(&results.iter().map(|r| r.test_loss).collect::<Vec<_>>());
    let accs: Option<Vec<f64>> = results.iter().map(|r| r.test_acc).collect();
    let (mean_acc, std_acc) = match accs {
        Some(a) => {
            let (m, s) = mean_std(&a);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(Extraction {
        groups: results,
        mean_loss,
        std_loss,
        mean_acc,
        std_acc,
    })
}

/// Extraction over the honest workers of a run directory. The task is
/// regenerated from the config echoed in the manifest.
pub fn extract_from_dir(dir: &Path, groups: usize, per_draw: usize, seed: u64) -> Result<Extraction, ScenarioError> {
    let manifest = read_manifest(dir)?;
    let sc = build_scenario(&manifest.config)?;
    let models = read_final_models(dir)?;
    if models.len() != sc.n_workers() {
        return Err(ScenarioError::Artifact(
            dir.to_path_buf(),
            format!("{} final models for {} workers", models.len(), sc.n_workers()),
        ));
    }
    let honest: Vec<usize> = (0..sc.n_workers()).filter(|&w| sc.roles[w] == Role::Honest).collect();
    Ok(extract_global_model(
        &sc.task,
        &models,
        &sc.topology.dataset_sizes,
        &honest,
        groups,
        per_draw,
        seed,
    )?)
}
