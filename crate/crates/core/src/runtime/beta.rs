use super::{Role, RunReport};
use crate::model::ModelVector;

const MIN_DENOMINATOR: f64 = 1e-12;

/// Per-worker contraction of aggregation towards the global model at epoch
/// `t`: `‖w_i^{t+1} − w_g^t‖ / ‖w̃_i^t − w_g^t‖`, where `w̃_i^t` is worker
/// `i`'s trained model, `w_i^{t+1}` its next aggregate, and `w_g^t` the
/// dataset-weighted mean of the trained models of all data-holding workers.
///
/// `None` for attackers, for epochs without a successor, for non-finite
/// models and when the denominator vanishes.
pub fn estimate_beta(report: &RunReport, t: usize) -> Vec<Option<f64>> {
    let n = report.n_workers();
    let mut out = vec![None; n];
    if t == 0 {
        return out;
    }
    let trained = |w: usize| report.trained_history.get(w).and_then(|h| h.get(t - 1));
    let global = ModelVector::weighted_mean((0..n).filter(|&w| report.roles[w].trains()).filter_map(|w| {
        trained(w)
            .filter(|m| m.is_finite())
            .map(|m| (report.dataset_sizes[w] as f64, m))
    }));
    let Some(global) = global else {
        return out;
    };
    for (w, slot) in out.iter_mut().enumerate() {
        if report.roles[w] != Role::Honest {
            continue;
        }
        let (Some(tr), Some(next)) = (trained(w), report.aggregated_history[w].get(t)) else {
            continue;
        };
        let den = tr.distance(&global);
        let num = next.distance(&global);
        if den.is_finite() && num.is_finite() && den >= MIN_DENOMINATOR {
            *slot = Some(num / den);
        }
    }
    out
}

pub(super) fn fill_beta(report: &mut RunReport) {
    let epochs = report.epochs_reached();
    let betas: Vec<Vec<Option<f64>>> = (0..=epochs).map(|t| estimate_beta(report, t)).collect();
    for row in &mut report.rows {
        row.beta = betas[row.epoch][row.worker];
    }
}
