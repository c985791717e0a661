//! End-to-end acceptance suite. Runs as a plain binary (`harness = false`)
//! so that every criterion prints its PASS/FAIL line even on success.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use defta_core::aggregate::{phi, PeerRecord, WeightRule};
use defta_core::config::ScenarioConfig;
use defta_core::dts::{crelu, to_sample_weights};
use defta_core::graph::{
    build_transition_matrix, dataset_proportions, generate_topology, l1_distance, omega_until_consensus,
    pair_terms, stationary_distribution, BinomialParams,
};
use defta_core::model::{gradient_on, least_squares_optimum, loss_on, make_task, ModelVector, TaskSpec};
use defta_core::runtime::{RunReport, Role};
use defta_core::scenario::{build_scenario, confidence_csv, final_models_csv, metrics_csv, run_scenario, write_run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cfg(v: Value) -> ScenarioConfig {
    ScenarioConfig::from_value(v).expect("valid config")
}

fn run(v: Value) -> (defta_core::runtime::Scenario, RunReport) {
    run_scenario(&cfg(v)).expect("run succeeds")
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn stationarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 50;
    let (mut wins, mut converged) = (0, 0);
    let mut notes = Vec::new();
    for t in 0..trials {
        let n = rng.random_range(5..=50usize);
        let params = BinomialParams {
            n_degree: 8.min(n as u64 - 1),
            ..BinomialParams::default()
        };
        let topo = generate_topology(n, params, 1000 + t, true).unwrap();
        let target = dataset_proportions(&topo);
        let limit = |rule| {
            let p = build_transition_matrix(&topo, rule).unwrap();
            let (_, omega) = omega_until_consensus(&p, 1e-6, 1_000_000).ok()?;
            let row = omega.row(0).to_vec();
            // independent check of the limit against the lazy power iteration
            let pi = stationary_distribution(&p, 1e-14, 1_000_000).ok()?;
            (l1_distance(&row, &pi) < 1e-5).then_some(row)
        };
        let (Some(fixed), Some(naive)) = (limit(WeightRule::OutdegreeNormalized), limit(WeightRule::NaiveDatasetRatio))
        else {
            notes.push(format!("trial {t} (n={n}) did not converge"));
            continue;
        };
        converged += 1;
        if l1_distance(&fixed, &target) < l1_distance(&naive, &target) {
            wins += 1;
        }
    }
    let rate = wins as f64 / trials as f64;
    outcome(
        converged == trials && rate >= 0.95,
        format!("{converged}/{trials} converged, corrected weights closer in {wins}/{trials} ({:.0}%) {}", rate * 100.0, notes.join("; ")),
    )
}

fn bias_measurement() -> Outcome {
    let (mut stat_sum, mut stat_n) = (0.0, 0usize);
    let mut naive_sum = 0.0;
    let (mut terms, mut ratios) = (Vec::new(), Vec::new());
    for t in 0..1000u64 {
        let topo = generate_topology(20, BinomialParams::default(), 50_000 + t, true).unwrap();
        let fixed = build_transition_matrix(&topo, WeightRule::OutdegreeNormalized).unwrap();
        let naive = build_transition_matrix(&topo, WeightRule::NaiveDatasetRatio).unwrap();
        for j in 0..topo.n_workers() {
            stat_sum += fixed.normalization_statistic(&topo, j);
            naive_sum += naive.normalization_statistic(&topo, j);
            stat_n += 1;
        }
        for p in pair_terms(&topo, &naive) {
            terms.push(p.scaled_term);
            ratios.push(p.degree_ratio);
        }
    }
    let mean = stat_sum / stat_n as f64;
    let r = pearson(&terms, &ratios);
    outcome(
        (mean - 1.0).abs() <= 0.10 && r > 0.9,
        format!(
            "corrected mean {mean:.4} (naive {:.4}), naive pair correlation r = {r:.4} over {} pairs",
            naive_sum / stat_n as f64,
            terms.len()
        ),
    )
}

fn isolation_cfg(seed: u64, k: usize, dts: bool) -> Value {
    json!({
        "name": format!("isolation-k{k}"),
        "seed": seed,
        "topology": {"kind": "binomial", "n_workers": 20, "n_size": 200, "p_size": 0.5, "n_degree": 10, "p_degree": 0.5},
        "task": {"kind": "softmax_regression", "n_features": 10, "n_classes": 10, "noise": 1.0, "separation": 1.0},
        "global_epochs": 40, "local_epochs": 10, "batch_size": 32, "learning_rate": 0.01,
        "dts": {"enabled": dts, "damage_threshold": 10.0},
        "adversary": {
            "kind": if k == 0 { "none" } else { "noise" }, "count": k,
            "fanout": 2, "placement": "balanced", "noise_scale": 100.0
        },
        "report_interval": 10
    })
}

fn dts_isolation() -> Outcome {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut pass = true;
    let mut lines = Vec::new();
    let baseline: Vec<f64> = seeds
        .iter()
        .map(|&s| run(isolation_cfg(s, 0, true)).1.mean_final_honest(|r| r.test_acc).unwrap())
        .collect();
    lines.push(format!("baseline acc {:.3?}", baseline));
    for k in [1usize, 5, 10, 20, 40] {
        let mut isolated = 0;
        let mut worst_ratio = f64::INFINITY;
        for (i, &s) in seeds.iter().enumerate() {
            let (sc, r) = run(isolation_cfg(s, k, true));
            let attackers: Vec<usize> = (0..sc.n_workers()).filter(|&w| sc.roles[w] == Role::NoiseAttacker).collect();
            assert_eq!(attackers.len(), k);
            if attackers.iter().all(|&a| r.mean_incoming_theta(a, 30).is_some_and(|t| t < 0.01)) {
                isolated += 1;
            }
            worst_ratio = worst_ratio.min(r.mean_final_honest(|x| x.test_acc).unwrap() / baseline[i]);
        }
        let floor = if k <= 20 { 0.9 } else { 0.7 };
        let ok = isolated as f64 >= 0.9 * seeds.len() as f64 && worst_ratio >= floor;
        pass &= ok;
        lines.push(format!("k={k}: isolated {isolated}/5, worst acc ratio {worst_ratio:.3}"));
    }
    let off: Vec<f64> = seeds
        .iter()
        .map(|&s| run(isolation_cfg(s, 1, false)).1.mean_final_honest(|r| r.test_acc).unwrap())
        .collect();
    let off_mean = off.iter().sum::<f64>() / off.len() as f64;
    let chance = 0.1;
    pass &= (off_mean - chance).abs() <= 0.05;
    lines.push(format!("trust off k=1 acc {off:.3?} mean {off_mean:.3} (chance {chance})"));
    outcome(pass, lines.join("; "))
}

fn time_machine() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut v = isolation_cfg(seed, 0, true);
        let (_, clean) = run(v.clone());
        v["adversary"] = json!({"kind": "dirty_model", "count": 1, "fire_from": 10, "dirty": {"kind": "nan"}});
        let (sc, dirty) = run(v.clone());
        let (_, again) = run(v);
        let honest: Vec<usize> = (0..sc.n_workers()).filter(|&w| sc.roles[w] == Role::Honest).collect();
        // round-end models; the raw aggregates are allowed to be damaged
        let finite = honest.iter().all(|&w| dirty.trained_history[w].iter().all(ModelVector::is_finite));
        let caught: usize = honest
            .iter()
            .map(|&w| dirty.aggregated_history[w].iter().filter(|m| !m.is_finite()).count())
            .sum();
        let l_clean = clean.mean_final_honest(|r| r.test_loss).unwrap();
        let l_dirty = dirty.mean_final_honest(|r| r.test_loss).unwrap();
        let rel = (l_dirty - l_clean).abs() / l_clean;
        let restores = dirty.events.recoveries_from_backup + dirty.events.recoveries_from_initial;
        let deterministic = metrics_csv(&dirty) == metrics_csv(&again) && dirty.final_models == again.final_models;
        let ok = finite && rel <= 0.10 && caught > 0 && restores > 0 && deterministic;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: finite={finite} loss {l_dirty:.4} vs {l_clean:.4} ({:+.2}%), damaged aggregates={caught}, restores={restores}, deterministic={deterministic}",
            100.0 * (l_dirty - l_clean) / l_clean
        ));
    }
    outcome(pass, lines.join("; "))
}

fn async_cfg(seed: u64) -> Value {
    json!({
        "name": "async",
        "seed": seed,
        "topology": {"kind": "binomial", "n_workers": 10, "n_size": 200, "p_size": 0.5, "n_degree": 6, "p_degree": 0.5},
        "task": {"kind": "least_squares", "n_features": 10, "noise": 0.5},
        "global_epochs": 10, "local_epochs": 2, "batch_size": 16, "learning_rate": 0.005,
        "report_interval": 10
    })
}

fn same_trajectory(a: &RunReport, b: &RunReport) -> bool {
    metrics_csv(a) == metrics_csv(b)
        && a.final_models == b.final_models
        && a.trained_history == b.trained_history
        && a.confidence_trace == b.confidence_trace
}

fn async_equivalence() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    let fast = 0usize;
    for seed in [1u64, 2, 3] {
        let base = async_cfg(seed);
        let (_, sync) = run(base.clone());

        let mut uniform = base.clone();
        uniform["runtime"] = json!({"mode": "async"});
        let exact_ls = same_trajectory(&sync, &run(uniform).1);
        let mut attacked = isolation_cfg(seed, 5, true);
        attacked["global_epochs"] = json!(12);
        let (_, attacked_sync) = run(attacked.clone());
        attacked["runtime"] = json!({"mode": "async"});
        let exact_dts = same_trajectory(&attacked_sync, &run(attacked).1);

        let mut one_x = base.clone();
        one_x["runtime"] = json!({"mode": "async", "speed_multipliers": {"0": 0.1}});
        let mut five_x = one_x.clone();
        five_x["runtime"]["epoch_budgets"] = json!({"0": 50});
        let (_, r1) = run(one_x);
        let (_, r5) = run(five_x);
        let sync_loss = sync.mean_final_honest(|r| r.test_loss).unwrap();
        let async_loss = r5.mean_final_honest(|r| r.test_loss).unwrap();
        let rel = (async_loss - sync_loss).abs() / sync_loss;
        let own1 = r1.row(fast, 10).and_then(|r| r.train_loss).unwrap();
        let own5 = r5.row(fast, 50).and_then(|r| r.train_loss).unwrap();
        let gap = (own1 - own5) / own5;
        let ok = exact_ls && exact_dts && rel <= 0.05 && gap >= 0.02;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: bit-exact {exact_ls}/{exact_dts}, 5x test loss {async_loss:.4} vs sync {sync_loss:.4} ({:.2}%), fast worker 1x {own1:.4} vs 5x {own5:.4} (+{:.1}%)",
            rel * 100.0,
            gap * 100.0
        ));
    }
    outcome(pass, lines.join("; "))
}

fn convex_consensus() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let v = json!({
            "name": "consensus",
            "seed": seed,
            "topology": {"kind": "binomial", "n_workers": 10, "n_size": 200, "p_size": 0.5, "n_degree": 6, "p_degree": 0.5},
            "task": {"kind": "least_squares", "n_features": 10, "noise": 0.5},
            "global_epochs": 100, "local_epochs": 2, "batch_size": 16, "learning_rate": 0.01,
            "lr_schedule": {"kind": "step_decay", "every": 20, "factor": 0.5},
            "init": {"kind": "gaussian", "scale": 1.0, "shared": false},
            "report_interval": 10
        });
        let (sc, r) = run(v);
        let n = sc.n_workers();
        let spread = |m: &dyn Fn(usize) -> ModelVector| {
            let ms: Vec<ModelVector> = (0..n).map(m).collect();
            let mut s = 0.0f64;
            for a in 0..n {
                for b in a + 1..n {
                    s = s.max(ms[a].distance(&ms[b]));
                }
            }
            s
        };
        let initial = spread(&|w| sc.initial_model(w));
        let last = spread(&|w| r.final_models[w].clone());
        let union: Vec<usize> = sc.task.partition.concat();
        let opt = least_squares_optimum(&sc.task, &union).unwrap();
        let l_opt = loss_on(&sc.task, &union, &opt).unwrap();
        let worst = (0..n)
            .map(|w| loss_on(&sc.task, &union, &r.final_models[w]).unwrap() / l_opt - 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = last < 1e-2 * initial && worst <= 0.10;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: spread {last:.2e} vs initial {initial:.2e}, worst loss {:+.2}% above optimum {l_opt:.4}",
            worst * 100.0
        ));
    }
    outcome(pass, lines.join("; "))
}

fn oracle_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut lines = Vec::new();

    // gradients against central differences
    let mut grad_ok = true;
    let mut worst = 0.0f64;
    for spec in [TaskSpec::least_squares(200, 5, 0.3), TaskSpec::softmax(200, 4, 3, 1.0)] {
        let task = make_task(&spec, 5).unwrap();
        let idx: Vec<usize> = task.train.iter().copied().take(50).collect();
        for _ in 0..5 {
            let w = ModelVector::new((0..task.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g = gradient_on(&task, &idx, &w).unwrap();
            let h = 1e-6;
            for k in 0..w.dim() {
                let shift = |d: f64| {
                    let mut p = w.as_slice().to_vec();
                    p[k] += d;
                    loss_on(&task, &idx, &ModelVector::new(p)).unwrap()
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let rel = (g[k] - fd).abs() / g[k].abs().max(1e-3);
                worst = worst.max(rel);
                grad_ok &= rel < 1e-4;
            }
        }
    }
    lines.push(format!("gradient worst relative error {worst:.1e}"));

    // convex hull containment of the aggregate
    let mut hull_ok = 0;
    let trials = 10_000;
    for t in 0..trials {
        let m = rng.random_range(1..=8usize);
        let dim = rng.random_range(1..=6usize);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let records: Vec<PeerRecord> = (0..m)
            .map(|j| PeerRecord {
                peer: j,
                dataset_size: rng.random_range(1..=1000),
                outdegree: rng.random_range(1..=10),
                model: ModelVector::new((0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect()),
                epoch_tag: 0,
            })
            .collect();
        let rule = if t % 2 == 0 { WeightRule::OutdegreeNormalized } else { WeightRule::NaiveDatasetRatio };
        let out = phi(&records, rule).unwrap();
        let inside = (0..dim).all(|k| {
            let xs = records.iter().map(|r| r.model.as_slice()[k]);
            let lo = xs.clone().fold(f64::INFINITY, f64::min);
            let hi = xs.fold(f64::NEG_INFINITY, f64::max);
            (lo..=hi).contains(&out.as_slice()[k])
        });
        hull_ok += inside as usize;
    }
    lines.push(format!("hull containment {hull_ok}/{trials}"));

    // crelu and softmax worked examples
    let e1 = (-1f64).exp();
    let examples_ok = crelu(-3.0) == -3.0
        && crelu(0.0) == 0.0
        && crelu(5.0) == 1.0
        && crelu(0.5) == 0.1
        && to_sample_weights(&[0.0, 0.0, 0.0, 0.0]) == vec![0.25; 4]
        && to_sample_weights(&[5.0, 0.0]) == vec![1.0 / (1.0 + e1), e1 / (1.0 + e1)]
        && to_sample_weights(&[-1.0, 0.0]) == vec![e1 / (1.0 + e1), 1.0 / (1.0 + e1)];
    lines.push(format!("crelu/softmax examples {}", if examples_ok { "exact" } else { "MISMATCH" }));
    outcome(grad_ok && hull_ok == trials && examples_ok, lines.join("; "))
}

fn determinism() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    let mut attacked = isolation_cfg(9, 5, true);
    attacked["global_epochs"] = json!(12);
    let mut jittered = async_cfg(9);
    jittered["runtime"] = json!({"mode": "async", "latency": 0.05, "jitter": 0.3, "speed_multipliers": {"2": 0.5, "7": 3.0}});
    for (label, v) in [("sync+trust+noise", attacked), ("async+jitter", jittered)] {
        let c = cfg(v);
        let files: Vec<Vec<Vec<u8>>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let sc = build_scenario(&c).unwrap();
                let report = defta_core::scenario::run_scenario(&c).unwrap().1;
                write_run(dir.path(), &c, &sc, &report).unwrap();
                ["metrics.csv", "confidence.csv", "final_models.csv"]
                    .iter()
                    .map(|f| std::fs::read(dir.path().join(f)).unwrap())
                    .collect()
            })
            .collect();
        let (_, r) = run_scenario(&c).unwrap();
        let same = files[0] == files[1]
            && files[0][0] == metrics_csv(&r).into_bytes()
            && files[0][1] == confidence_csv(&r).into_bytes()
            && files[0][2] == final_models_csv(&r).into_bytes();
        pass &= same;
        lines.push(format!("{label}: {} metric bytes identical={same}", files[0][0].len()));
    }
    outcome(pass, lines.join("; "))
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<u64>); 8] = [
        ("1 stationarity", stationarity, Some(10)),
        ("2 bias measurement", bias_measurement, Some(30)),
        ("3 trust isolation", dts_isolation, Some(300)),
        ("4 time machine", time_machine, None),
        ("5 async equivalence", async_equivalence, Some(180)),
        ("6 convex consensus", convex_consensus, Some(60)),
        ("7 oracle micro-checks", oracle_checks, None),
        ("8 determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|s| took <= Duration::from_secs(s));
        let pass = o.pass && in_time;
        failed += !pass as usize;
        let budget = limit.map(|s| format!(" / {s}s")).unwrap_or_default();
        println!(
            "{} criterion {name} [{:.2}s{budget}]: {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
