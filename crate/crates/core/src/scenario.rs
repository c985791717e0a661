//! Materialising a config into a [`Scenario`], running it and writing the
//! run directory.
//!
//! A run directory holds:
//!
//! - `metrics.csv`: `worker,epoch,train_loss,test_loss,test_acc,beta`
//! - `confidence.csv`: `epoch,worker,peer,confidence,theta`
//! - `final_models.csv`: `worker,role,p0,p1,...`
//! - `topology.json` and, when defined, `transition_matrix.csv`
//! - `manifest.json`: config echo, seed, config hash and run summary

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AdversaryKind, ConfigError, Placement, ScenarioConfig, TopologyConfig};
use crate::graph::{
    build_transition_matrix, generate_fixed_degree, generate_topology, BinomialParams, GraphError, Topology, ERGODIC_ATTEMPTS,
};
use crate::model::{make_task, partition_noniid, ModelError, ModelVector, TaskKind};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::runtime::{
    run_async, run_sync, EventSummary, Role, RunParams, RunReport, RuntimeError, RuntimeMode, Scenario, Timing,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology: {0}")]
    Graph(#[from] GraphError),
    #[error("task: {0}")]
    Model(#[from] ModelError),
    #[error("run failed: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("extraction: {0}")]
    Extract(#[from] crate::extract::ExtractError),
    #[error("malformed run directory {0}: {1}")]
    Artifact(PathBuf, String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The attacker-free topology described by the config.
///
/// Generated topologies are redrawn (with derived seeds) until every worker
/// has at least `sample_count` in-neighbours.
pub fn build_topology(cfg: &ScenarioConfig) -> Result<Topology, ScenarioError> {
    let draw = |seed: u64| -> Result<Option<Topology>, ScenarioError> {
        Ok(Some(match &cfg.topology {
            TopologyConfig::Binomial {
                n_workers,
                n_size,
                p_size,
                n_degree,
                p_degree,
                require_ergodic,
            } => generate_topology(
                *n_workers,
                BinomialParams {
                    n_size: *n_size,
                    p_size: *p_size,
                    n_degree: *n_degree,
                    p_degree: *p_degree,
                },
                seed,
                *require_ergodic,
            )?,
            TopologyConfig::FixedDegree {
                n_workers,
                degree,
                n_size,
                p_size,
                require_ergodic,
            } => generate_fixed_degree(*n_workers, *degree, *n_size, *p_size, seed, *require_ergodic)?,
            TopologyConfig::File { .. } => return Ok(None),
        }))
    };
    let enough = |t: &Topology| t.in_neighbors().iter().all(|v| v.len() >= cfg.sample_count);
    for attempt in 0..ERGODIC_ATTEMPTS as u64 {
        let seed = if attempt == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, Stream::Topology, &[attempt])
        };
        match draw(seed)? {
            Some(t) if enough(&t) => return Ok(t),
            Some(_) => continue,
            None => break,
        }
    }
    match &cfg.topology {
        TopologyConfig::File { path } => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            Ok(Topology::from_json(&text)?)
        }
        _ => Err(ConfigError::Invalid(format!(
            "no generated topology gives every worker {} in-neighbours",
            cfg.sample_count
        ))
        .into()),
    }
}

/// Adds the configured attackers to the honest topology and returns the
/// full topology with every worker's role.
pub fn place_adversaries(cfg: &ScenarioConfig, honest: Topology) -> Result<(Topology, Vec<Role>), ScenarioError> {
    let n = honest.n_workers();
    let a = &cfg.adversary;
    match a.kind {
        AdversaryKind::None => Ok((honest, vec![Role::Honest; n])),
        AdversaryKind::Noise => {
            if a.fanout > n {
                return Err(ConfigError::Invalid(format!("adversary.fanout {} exceeds {n} honest workers", a.fanout)).into());
            }
            let mean = honest.dataset_sizes.iter().sum::<u64>() as f64 / n as f64;
            let advertised = a.advertised_size.unwrap_or(mean.round().max(1.0) as u64);
            let mut edges = honest.edges();
            let mut sizes = honest.dataset_sizes.clone();
            let mut load = vec![0usize; n];
            for k in 0..a.count {
                let mut rng = rng_for(cfg.seed, Stream::Placement, &[k as u64]);
                let mut targets = match a.placement {
                    Placement::Random => index::sample(&mut rng, n, a.fanout).into_vec(),
                    Placement::Balanced => {
                        let mut order: Vec<usize> = (0..n).collect();
                        order.shuffle(&mut rng);
                        order.sort_by_key(|&w| load[w]);
                        order.truncate(a.fanout);
                        order
                    }
                };
                for &t in &targets {
                    load[t] += 1;
                }
                targets.sort_unstable();
                edges.extend(targets.into_iter().map(|t| (n + k, t)));
                sizes.push(advertised);
            }
            let topo = Topology::from_edges(n + a.count, &edges, sizes)?;
            let mut roles = vec![Role::Honest; n];
            roles.extend(std::iter::repeat_n(Role::NoiseAttacker, a.count));
            Ok((topo, roles))
        }
        AdversaryKind::DirtyModel => {
            if a.count >= n {
                return Err(ConfigError::Invalid(format!("{} dirty-model attackers among {n} workers", a.count)).into());
            }
            let mut rng = rng_for(cfg.seed, Stream::Placement, &[]);
            let mut roles = vec![Role::Honest; n];
            for w in index::sample(&mut rng, n, a.count) {
                roles[w] = Role::DirtyModelAttacker;
            }
            Ok((honest, roles))
        }
    }
}

/// Builds topology, roles, partitioned task and run parameters.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let (topology, roles) = place_adversaries(cfg, build_topology(cfg)?)?;
    let n = topology.n_workers();
    let sizes: Vec<usize> = (0..n)
        .map(|w| if roles[w].trains() { topology.dataset_sizes[w] as usize } else { 0 })
        .collect();

    let mut spec = cfg.task.clone();
    if spec.n_samples == 0 {
        // Headroom so every worker's shards can be filled from its own labels.
        let total = sizes.iter().sum::<usize>() * 3 / 2;
        let mut m = (total as f64 / (1.0 - spec.test_fraction)).ceil() as usize;
        while m - ((spec.test_fraction * m as f64).round() as usize) < total {
            m += 1;
        }
        spec.n_samples = m.max(spec.n_features);
    }
    let task = make_task(&spec, cfg.seed)?;
    let task = partition_noniid(&task, &sizes, spec.shards_per_worker, cfg.seed)?;

    for (what, keys) in [
        ("lr_overrides", cfg.lr_overrides.keys().copied().collect::<Vec<_>>()),
        ("runtime.speed_multipliers", cfg.runtime.speed_multipliers.keys().copied().collect()),
        ("runtime.epoch_budgets", cfg.runtime.epoch_budgets.keys().copied().collect()),
    ] {
        if let Some(w) = keys.into_iter().find(|&w| w >= n) {
            return Err(ConfigError::Invalid(format!("{what} names worker {w}, but there are {n}")).into());
        }
    }
    let speed = (0..n)
        .map(|w| cfg.runtime.speed_multipliers.get(&w).copied().unwrap_or(1.0))
        .collect();
    let params = RunParams {
        weight_rule: cfg.weight_rule,
        dts: cfg.dts.params(),
        sample_count: cfg.sample_count,
        global_epochs: cfg.global_epochs,
        epoch_budgets: cfg.runtime.epoch_budgets.clone(),
        learning_rate: cfg.learning_rate,
        lr_overrides: cfg.lr_overrides.clone(),
        schedule: cfg.lr_schedule,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        adversary: cfg.adversary.params,
        send_to_sampled_only: cfg.runtime.send_to_sampled_only,
        report_interval: cfg.report_interval,
        init: cfg.init,
        timing: Timing {
            base_step_time: cfg.runtime.base_step_time,
            latency: cfg.runtime.latency,
            jitter: cfg.runtime.jitter,
            speed,
        },
        record_history: cfg.record_history,
    };
    let sc = Scenario {
        topology,
        task,
        roles,
        params,
    };
    sc.validate()?;
    Ok(sc)
}

/// Runs a scenario with the engine selected by the config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(Scenario, RunReport), ScenarioError> {
    let sc = build_scenario(cfg)?;
    #[cfg(not(target_arch = "wasm32"))]
    let start = std::time::Instant::now();
    #[cfg_attr(target_arch = "wasm32", allow(unused_mut))]
    let mut report = match cfg.runtime.mode {
        RuntimeMode::Sync => run_sync(&sc)?,
        RuntimeMode::Async => run_async(&sc)?,
    };
    #[cfg(not(target_arch = "wasm32"))]
    {
        report.wall_time_secs = start.elapsed().as_secs_f64();
    }
    Ok((sc, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub task_kind: TaskKind,
    pub mode: RuntimeMode,
    pub roles: Vec<Role>,
    pub epochs_reached: usize,
    pub events: EventSummary,
    pub sim_end_time: f64,
    pub wall_time_secs: f64,
    pub files: Vec<String>,
    pub version: String,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

pub fn metrics_csv(report: &RunReport) -> String {
    let mut s = String::from("worker,epoch,train_loss,test_loss,test_acc,beta\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.worker,
            r.epoch,
            opt(r.train_loss),
            opt(r.test_loss),
            opt(r.test_acc),
            opt(r.beta)
        );
    }
    s
}

pub fn confidence_csv(report: &RunReport) -> String {
    let mut s = String::from("epoch,worker,peer,confidence,theta\n");
    for c in &report.confidence_trace {
        let _ = writeln!(s, "{},{},{},{:.16e},{:.16e}", c.epoch, c.worker, c.peer, c.confidence, c.theta);
    }
    s
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Honest => "honest",
        Role::NoiseAttacker => "noise_attacker",
        Role::DirtyModelAttacker => "dirty_model_attacker",
    }
}

pub fn final_models_csv(report: &RunReport) -> String {
    let dim = report.final_models.first().map_or(0, ModelVector::dim);
    let mut s = String::from("worker,role");
    for k in 0..dim {
        let _ = write!(s, ",p{k}");
    }
    s.push('\n');
    for (w, m) in report.final_models.iter().enumerate() {
        s.push_str(&format!("{w},{}", role_name(report.roles[w])));
        for x in m.as_slice() {
            let _ = write!(s, ",{x:.16e}");
        }
        s.push('\n');
    }
    s
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, sc: &Scenario, report: &RunReport) -> Result<RunManifest, ScenarioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, body: &str| -> Result<String, ScenarioError> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
        Ok(name.to_string())
    };
    let mut files = vec![
        write("metrics.csv", &metrics_csv(report))?,
        write("confidence.csv", &confidence_csv(report))?,
        write("final_models.csv", &final_models_csv(report))?,
        write("topology.json", &sc.topology.to_json())?,
    ];
    if let Ok(p) = build_transition_matrix(&sc.topology, cfg.weight_rule) {
        files.push(write("transition_matrix.csv", &p.to_csv())?);
    }
    files.push("manifest.json".into());
    let manifest = RunManifest {
        name: cfg.name.clone(),
        seed: cfg.seed,
        config_hash: cfg.content_hash(),
        config: cfg.clone(),
        task_kind: sc.task.kind(),
        mode: report.mode,
        roles: report.roles.clone(),
        epochs_reached: report.epochs_reached(),
        events: report.events.clone(),
        sim_end_time: report.sim_end_time,
        wall_time_secs: report.wall_time_secs,
        files,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write("manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ScenarioError> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads `final_models.csv` back.
pub fn read_final_models(dir: &Path) -> Result<Vec<ModelVector>, ScenarioError> {
    let p = dir.join("final_models.csv");
    let mut rdr = csv::Reader::from_path(&p)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let worker: usize = rec[0]
            .parse()
            .map_err(|_| ScenarioError::Artifact(p.clone(), format!("bad worker id {:?}", &rec[0])))?;
        if worker != i {
            return Err(ScenarioError::Artifact(p, format!("row {i} holds worker {worker}")));
        }
        let params = rec
            .iter()
            .skip(2)
            .map(|x| x.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ScenarioError::Artifact(p.clone(), e.to_string()))?;
        out.push(ModelVector::new(params));
    }
    Ok(out)
}

/// Final-epoch metrics of one run directory, for report tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalMetrics {
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Means over honest workers of each worker's last metrics row.
pub fn read_final_metrics(dir: &Path, roles: &[Role]) -> Result<FinalMetrics, ScenarioError> {
    let p = dir.join("metrics.csv");
    let mut rdr = csv::Reader::from_path(&p)?;
    let mut last: Vec<Option<(usize, [Option<f64>; 3])>> = vec![None; roles.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |m: String| ScenarioError::Artifact(p.clone(), m);
        let worker: usize = rec[0].parse().map_err(|_| bad(format!("bad worker {:?}", &rec[0])))?;
        let epoch: usize = rec[1].parse().map_err(|_| bad(format!("bad epoch {:?}", &rec[1])))?;
        if worker >= roles.len() {
            return Err(bad(format!("worker {worker} not in manifest")));
        }
        let mut vals = [None; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = &rec[2 + k];
            if !field.is_empty() {
                *v = Some(field.parse::<f64>().map_err(|_| bad(format!("bad number {field:?}")))?);
            }
        }
        if last[worker].is_none_or(|(e, _)| epoch >= e) {
            last[worker] = Some((epoch, vals));
        }
    }
    let mean_of = |k: usize| {
        let v: Vec<f64> = (0..roles.len())
            .filter(|&w| roles[w] == Role::Honest)
            .filter_map(|w| last[w].and_then(|(_, vals)| vals[k]))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(FinalMetrics {
        train_loss: mean_of(0),
        test_loss: mean_of(1),
        test_acc: mean_of(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskSpec;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::from_json_str(
            r#"{
                "seed": 9,
                "topology": {"kind": "fixed_degree", "n_workers": 6, "degree": 3, "n_size": 60},
                "task": {"kind": "least_squares", "n_features": 3},
                "global_epochs": 3, "local_epochs": 1, "batch_size": 8, "learning_rate": 0.05,
                "report_interval": 1
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn auto_sizes_the_dataset() {
        let sc = build_scenario(&cfg()).unwrap();
        let total: u64 = sc.topology.dataset_sizes.iter().sum();
        assert!(sc.task.train.len() as u64 >= total);
        for w in 0..6 {
            assert_eq!(sc.task.partition[w].len() as u64, sc.topology.dataset_sizes[w]);
        }
    }

    #[test]
    fn noise_attackers_are_appended() {
        let mut c = cfg();
        c.adversary.kind = AdversaryKind::Noise;
        c.adversary.count = 2;
        c.adversary.fanout = 3;
        let sc = build_scenario(&c).unwrap();
        assert_eq!(sc.n_workers(), 8);
        assert_eq!(&sc.roles[6..], &[Role::NoiseAttacker; 2]);
        assert!(sc.task.partition[6].is_empty());
        assert_eq!(sc.topology.outdegree(7), 3);
        assert!(sc.topology.out_edges.iter().all(|o| o.iter().all(|&d| d < 6)));
    }

    #[test]
    fn balanced_placement_spreads_load() {
        let mut c = cfg();
        c.adversary.kind = AdversaryKind::Noise;
        c.adversary.count = 9;
        c.adversary.fanout = 2;
        c.adversary.placement = Placement::Balanced;
        let sc = build_scenario(&c).unwrap();
        let mut load = [0; 6];
        for a in 6..15 {
            for &t in &sc.topology.out_edges[a] {
                load[t] += 1;
            }
        }
        assert_eq!(load, [3; 6]);
    }

    #[test]
    fn dirty_attackers_convert_workers() {
        let mut c = cfg();
        c.adversary.kind = AdversaryKind::DirtyModel;
        c.adversary.count = 1;
        let sc = build_scenario(&c).unwrap();
        assert_eq!(sc.n_workers(), 6);
        assert_eq!(sc.roles.iter().filter(|r| **r == Role::DirtyModelAttacker).count(), 1);
    }

    #[test]
    fn out_of_range_worker_keys_rejected() {
        let mut c = cfg();
        c.runtime.speed_multipliers.insert(9, 0.5);
        assert!(matches!(build_scenario(&c), Err(ScenarioError::Config(ConfigError::Invalid(_)))));
    }

    #[test]
    fn writes_and_reads_back() {
        let c = cfg();
        let (sc, report) = run_scenario(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_run(dir.path(), &c, &sc, &report).unwrap();
        assert_eq!(m.epochs_reached, 3);
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(read_final_models(dir.path()).unwrap(), report.final_models);
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + 6 * 3);
        let fm = read_final_metrics(dir.path(), &back.roles).unwrap();
        let expect = report.mean_final_honest(|r| r.test_loss).unwrap();
        assert!((fm.test_loss.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn generated_topologies_support_the_sample_count() {
        for seed in 0..20 {
            let mut c = cfg();
            c.seed = seed;
            c.sample_count = 3;
            let t = build_topology(&c).unwrap();
            assert!(t.in_neighbors().iter().all(|v| v.len() >= 3));
        }
    }

    #[test]
    fn spec_helper_matches_json() {
        assert_eq!(cfg().task.kind, TaskSpec::least_squares(0, 3, 0.1).kind);
    }
}
