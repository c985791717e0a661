use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Role, RuntimeError, WorkerState};
use crate::model::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DirtyKind {
    Nan,
    Infinite,
    /// Finite but huge: every coordinate set to `±scale`.
    Magnitude { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryParams {
    pub noise_scale: f64,
    pub dirty: DirtyKind,
    /// First epoch on which a dirty attacker publishes garbage.
    pub fire_from: usize,
    /// Last firing epoch; `None` keeps firing to the end.
    pub fire_until: Option<usize>,
}

impl Default for AdversaryParams {
    fn default() -> Self {
        Self {
            noise_scale: 1.0,
            dirty: DirtyKind::Nan,
            fire_from: 1,
            fire_until: None,
        }
    }
}

impl AdversaryParams {
    pub fn fires_at(&self, epoch: usize) -> bool {
        epoch >= self.fire_from && self.fire_until.is_none_or(|u| epoch <= u)
    }
}

/// The model an attacking worker publishes this epoch.
///
/// A noise attacker sends `reference + N(0, noise_scale²)`. A dirty-model
/// attacker sends `outgoing` unchanged outside its firing window and a
/// dirty vector inside it.
pub fn apply_adversary<R: Rng>(
    worker: &WorkerState,
    outgoing: &ModelVector,
    reference: &ModelVector,
    params: &AdversaryParams,
    rng: &mut R,
) -> Result<ModelVector, RuntimeError> {
    match worker.role {
        Role::Honest => Err(RuntimeError::HonestAdversary(worker.id)),
        Role::NoiseAttacker => {
            let normal = Normal::new(0.0, params.noise_scale.max(0.0))
                .map_err(|e| RuntimeError::ConfigInvalid(format!("noise_scale: {e}")))?;
            Ok(ModelVector::new(
                reference.as_slice().iter().map(|x| x + normal.sample(rng)).collect(),
            ))
        }
        Role::DirtyModelAttacker => {
            if !params.fires_at(worker.epoch) {
                return Ok(outgoing.clone());
            }
            let dim = outgoing.dim();
            let v = match params.dirty {
                DirtyKind::Nan => vec![f64::NAN; dim],
                DirtyKind::Infinite => (0..dim)
                    .map(|k| if k % 2 == 0 { f64::INFINITY } else { f64::NEG_INFINITY })
                    .collect(),
                DirtyKind::Magnitude { scale } => (0..dim)
                    .map(|_| if rng.random::<bool>() { scale } else { -scale })
                    .collect(),
            };
            Ok(ModelVector::new(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dts::ConfidenceState;
    use crate::model::OptState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn worker(role: Role, epoch: usize) -> WorkerState {
        WorkerState {
            id: 7,
            role,
            dataset_size: 10,
            outdegree: 1,
            model: ModelVector::zeros(3),
            conf: ConfidenceState::new(vec![], ModelVector::zeros(3), None),
            opt: OptState::new(0.1, 1, 1, 0),
            mailbox: vec![],
            fresh: vec![],
            epoch,
            recoveries: 0,
        }
    }

    #[test]
    fn honest_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ModelVector::zeros(3);
        let r = apply_adversary(&worker(Role::Honest, 1), &m, &m, &AdversaryParams::default(), &mut rng);
        assert!(matches!(r, Err(RuntimeError::HonestAdversary(7))));
    }

    #[test]
    fn dirty_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ModelVector::new(vec![1.0, 2.0, 3.0]);
        let p = AdversaryParams {
            fire_from: 3,
            fire_until: Some(4),
            ..Default::default()
        };
        for (epoch, dirty) in [(2, false), (3, true), (4, true), (5, false)] {
            let out = apply_adversary(&worker(Role::DirtyModelAttacker, epoch), &m, &m, &p, &mut rng).unwrap();
            assert_eq!(!out.is_finite(), dirty, "epoch {epoch}");
        }
        let p = AdversaryParams {
            dirty: DirtyKind::Magnitude { scale: 1e6 },
            ..Default::default()
        };
        let out = apply_adversary(&worker(Role::DirtyModelAttacker, 1), &m, &m, &p, &mut rng).unwrap();
        assert!(out.is_finite() && out.as_slice().iter().all(|x| x.abs() == 1e6));
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = ModelVector::new(vec![5.0; 20_000]);
        let p = AdversaryParams {
            noise_scale: 2.0,
            ..Default::default()
        };
        let out = apply_adversary(&worker(Role::NoiseAttacker, 1), &reference, &reference, &p, &mut rng).unwrap();
        let d: Vec<f64> = out.as_slice().iter().map(|x| x - 5.0).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 0.05 && (sd - 2.0).abs() < 0.05, "{mean} {sd}");
    }
}
