//! Browser bindings for three small demos. Every exported function returns a
//! JSON string; the page in `www/` draws it on a canvas.

use defta_core::aggregate::WeightRule;
use defta_core::config::ScenarioConfig;
use defta_core::graph::{
    build_transition_matrix, dataset_proportions, generate_topology, l1_distance, stationary_distribution,
    BinomialParams, Matrix, Topology,
};
use defta_core::runtime::Role;
use defta_core::scenario::run_scenario;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Stationary {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub dataset_sizes: Vec<u64>,
    pub outdegrees: Vec<usize>,
    pub target: Vec<f64>,
    pub naive: Vec<f64>,
    pub corrected: Vec<f64>,
    pub naive_l1: f64,
    pub corrected_l1: f64,
}

#[derive(Debug, Serialize)]
pub struct Collapse {
    pub naive: Vec<f64>,
    pub corrected: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrustTrace {
    pub epochs: Vec<usize>,
    /// Mean incoming sampling weight of the attackers, per epoch.
    pub attacker_theta: Vec<f64>,
    pub honest_theta: Vec<f64>,
    pub honest_acc: Vec<f64>,
    pub restores: u64,
}

fn topology(n: usize, degree: u64, seed: u64) -> Result<Topology, String> {
    let params = BinomialParams {
        n_degree: degree.min(n.saturating_sub(1) as u64).max(1),
        ..BinomialParams::default()
    };
    generate_topology(n, params, seed, true).map_err(|e| e.to_string())
}

/// Stationary mixtures of both weight rules against the dataset proportions.
pub fn stationary(n: usize, degree: u64, seed: u64) -> Result<Stationary, String> {
    let topo = topology(n, degree, seed)?;
    let target = dataset_proportions(&topo);
    let limit = |rule| -> Result<Vec<f64>, String> {
        let p = build_transition_matrix(&topo, rule).map_err(|e| e.to_string())?;
        stationary_distribution(&p, 1e-13, 1_000_000).map_err(|e| e.to_string())
    };
    let naive = limit(WeightRule::NaiveDatasetRatio)?;
    let corrected = limit(WeightRule::OutdegreeNormalized)?;
    Ok(Stationary {
        n,
        edges: topo.edges(),
        outdegrees: (0..n).map(|i| topo.outdegree(i)).collect(),
        naive_l1: l1_distance(&naive, &target),
        corrected_l1: l1_distance(&corrected, &target),
        dataset_sizes: topo.dataset_sizes.clone(),
        target,
        naive,
        corrected,
    })
}

/// L1 distance of `Ω^t`'s mean row to the dataset proportions, t = 0..steps.
pub fn collapse(n: usize, degree: u64, seed: u64, steps: usize) -> Result<Collapse, String> {
    let topo = topology(n, degree, seed)?;
    let target = dataset_proportions(&topo);
    let trace = |rule| -> Result<Vec<f64>, String> {
        let p = build_transition_matrix(&topo, rule).map_err(|e| e.to_string())?;
        let mut omega = Matrix::identity(n);
        let mut out = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let mean: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| omega.get(i, j)).sum::<f64>() / n as f64)
                .collect();
            out.push(l1_distance(&mean, &target));
            omega = p.entries.mul(&omega);
        }
        Ok(out)
    };
    Ok(Collapse {
        naive: trace(WeightRule::NaiveDatasetRatio)?,
        corrected: trace(WeightRule::OutdegreeNormalized)?,
    })
}

/// A small noise-attack run with the trust system on.
pub fn trust(attackers: usize, epochs: usize, seed: u64) -> Result<TrustTrace, String> {
    let cfg = ScenarioConfig::from_value(serde_json::json!({
        "name": "demo",
        "seed": seed,
        "topology": {"kind": "binomial", "n_workers": 12, "n_size": 120, "n_degree": 8},
        "task": {"kind": "softmax_regression", "n_features": 6, "n_classes": 4, "noise": 1.0},
        "global_epochs": epochs,
        "local_epochs": 3,
        "batch_size": 32,
        "learning_rate": 0.02,
        "dts": {"enabled": true, "damage_threshold": 10.0},
        "adversary": {
            "kind": if attackers == 0 { "none" } else { "noise" },
            "count": attackers, "fanout": 2, "placement": "balanced", "noise_scale": 50.0
        },
        "report_interval": 1,
        "record_history": false
    }))
    .map_err(|e| e.to_string())?;
    let (sc, report) = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let bad: Vec<usize> = (0..sc.n_workers()).filter(|&w| sc.roles[w] != Role::Honest).collect();
    let good: Vec<usize> = (0..sc.n_workers()).filter(|&w| sc.roles[w] == Role::Honest).collect();
    let mean = |ws: &[usize], e: usize| {
        let v: Vec<f64> = ws.iter().filter_map(|&w| report.mean_incoming_theta(w, e)).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let epochs_seen: Vec<usize> = (0..=epochs).collect();
    Ok(TrustTrace {
        attacker_theta: epochs_seen.iter().map(|&e| mean(&bad, e)).collect(),
        honest_theta: epochs_seen.iter().map(|&e| mean(&good, e)).collect(),
        honest_acc: epochs_seen
            .iter()
            .map(|&e| {
                let v: Vec<f64> = good
                    .iter()
                    .filter_map(|&w| report.row(w, e).and_then(|r| r.test_acc))
                    .collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect(),
        restores: report.events.recoveries_from_backup + report.events.recoveries_from_initial,
        epochs: epochs_seen,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn stationary_comparison(n: usize, degree: u32, seed: u32) -> Result<String, JsValue> {
    to_js(stationary(n, degree as u64, seed as u64))
}

#[wasm_bindgen]
pub fn omega_collapse(n: usize, degree: u32, seed: u32, steps: usize) -> Result<String, JsValue> {
    to_js(collapse(n, degree as u64, seed as u64, steps))
}

#[wasm_bindgen]
pub fn trust_dynamics(attackers: usize, epochs: usize, seed: u32) -> Result<String, JsValue> {
    to_js(trust(attackers, epochs, seed as u64))
}
