//! Protocol engines.
//!
//! Both engines drive the same per-worker step: aggregate the sampled
//! mailbox records, train locally, run the trust update, sample the next
//! peer set and publish the model to out-neighbours. [`run_sync`] inserts a
//! barrier after every round. [`run_async`] replays the protocol on a
//! discrete-event clock where each worker waits only for fresh models from
//! the peers it sampled.

mod adversary;
mod async_engine;
mod beta;
mod clock;
mod sync_engine;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{
    aggregation_weights, combine, combine_unchecked, AggregateError, PeerRecord, WeightRule,
};
use crate::dts::{self, ConfidenceState, DtsError, DtsParams, Recovery};
use crate::graph::Topology;
use crate::model::{self, LrSchedule, ModelError, ModelVector, OptState, Task};
use crate::rng::{rng_for, Stream};

pub use adversary::{apply_adversary, AdversaryParams, DirtyKind};
pub use async_engine::run_async;
pub use beta::estimate_beta;
pub use clock::{Event, EventKind, SimClock};
pub use sync_engine::run_sync;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Dts(#[from] DtsError),
    #[error("deadlock: {}", describe_starved(.0))]
    Deadlock(Vec<Starved>),
    #[error("worker {0} is honest and cannot act as an adversary")]
    HonestAdversary(usize),
}

/// A worker left waiting when the event queue ran dry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Starved {
    pub worker: usize,
    pub completed_epochs: usize,
    pub waiting_on: Vec<usize>,
}

fn describe_starved(s: &[Starved]) -> String {
    s.iter()
        .map(|x| {
            format!(
                "worker {} (after epoch {}) waits on {:?}",
                x.worker, x.completed_epochs, x.waiting_on
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    /// Publishes the current honest global model plus Gaussian noise and
    /// holds no data.
    NoiseAttacker,
    /// Trains like an honest worker but publishes a dirty model on its
    /// firing schedule.
    DirtyModelAttacker,
}

impl Role {
    /// Whether the worker holds data and runs the training step.
    pub fn trains(self) -> bool {
        !matches!(self, Role::NoiseAttacker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeMode {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitSpec {
    Zeros,
    /// Gaussian parameters with standard deviation `scale`, drawn once and
    /// shared, or drawn per worker.
    Gaussian { scale: f64, shared: bool },
}

/// Simulated-time model of the asynchronous engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub base_step_time: f64,
    /// Constant per-message transport delay.
    pub latency: f64,
    /// Upper bound of the uniform per-message extra delay.
    pub jitter: f64,
    /// Step-duration multiplier per worker (0.1 = ten times faster).
    pub speed: Vec<f64>,
}

/// Protocol and optimiser settings shared by every worker.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub weight_rule: WeightRule,
    /// `None` runs without the trust system: uniform sampling, no damage
    /// screening, no backups.
    pub dts: Option<DtsParams>,
    pub sample_count: usize,
    pub global_epochs: usize,
    /// Per-worker epoch budgets overriding `global_epochs`.
    pub epoch_budgets: BTreeMap<usize, usize>,
    pub learning_rate: f64,
    pub lr_overrides: BTreeMap<usize, f64>,
    pub schedule: LrSchedule,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adversary: AdversaryParams,
    pub send_to_sampled_only: bool,
    pub report_interval: usize,
    pub init: InitSpec,
    pub timing: Timing,
    /// Keep every worker's per-epoch models (needed for β).
    pub record_history: bool,
}

/// A fully materialised experiment: topology, partitioned task, roles.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub task: Task,
    pub roles: Vec<Role>,
    pub params: RunParams,
}

impl Scenario {
    pub fn n_workers(&self) -> usize {
        self.topology.n_workers()
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let n = self.n_workers();
        let p = &self.params;
        let invalid = |m: String| Err(RuntimeError::ConfigInvalid(m));
        if self.roles.len() != n {
            return invalid(format!("{} roles for {n} workers", self.roles.len()));
        }
        if self.task.partition.len() != n {
            return invalid(format!("task partitioned for {} workers, topology has {n}", self.task.partition.len()));
        }
        if p.sample_count == 0 {
            return invalid("sample_count must be >= 1".into());
        }
        if p.global_epochs == 0 {
            return invalid("global_epochs must be >= 1".into());
        }
        if let Some((w, b)) = p.epoch_budgets.iter().find(|(w, b)| **w >= n || **b == 0) {
            return invalid(format!("epoch budget {b} for worker {w} is invalid"));
        }
        if p.report_interval == 0 {
            return invalid("report_interval must be >= 1".into());
        }
        if p.timing.speed.len() != n {
            return invalid(format!("{} speed multipliers for {n} workers", p.timing.speed.len()));
        }
        if let Some((w, s)) = p.timing.speed.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return invalid(format!("worker {w} has speed multiplier {s}; must be > 0"));
        }
        if !(p.timing.base_step_time > 0.0) || p.timing.latency < 0.0 || p.timing.jitter < 0.0 {
            return invalid("base_step_time must be > 0 and latency/jitter >= 0".into());
        }
        if let Some(d) = &p.dts {
            if !(d.penalty_cap > 0.0 && d.penalty_cap.is_finite()) || !(d.damage_threshold > 0.0) {
                return invalid("dts penalty_cap and damage_threshold must be positive".into());
            }
        }
        let ins = self.topology.in_neighbors();
        for (w, senders) in ins.iter().enumerate() {
            let has_data = !self.task.partition[w].is_empty();
            if self.roles[w].trains() {
                if !has_data {
                    return invalid(format!("worker {w} trains but holds no data"));
                }
                if senders.len() < p.sample_count {
                    return invalid(format!(
                        "worker {w} has {} in-neighbours, fewer than sample_count {}",
                        senders.len(),
                        p.sample_count
                    ));
                }
                self.opt_for(w).validate()?;
            }
        }
        if !self.roles.contains(&Role::Honest) {
            return invalid("scenario has no honest worker".into());
        }
        Ok(())
    }

    pub fn budget_of(&self, worker: usize) -> usize {
        self.params
            .epoch_budgets
            .get(&worker)
            .copied()
            .unwrap_or(self.params.global_epochs)
    }

    pub fn max_budget(&self) -> usize {
        (0..self.n_workers()).map(|w| self.budget_of(w)).max().unwrap_or(0)
    }

    pub fn opt_for(&self, worker: usize) -> OptState {
        let p = &self.params;
        OptState {
            learning_rate: p.lr_overrides.get(&worker).copied().unwrap_or(p.learning_rate),
            local_epochs: p.local_epochs,
            batch_size: p.batch_size,
            rng_seed: p.seed,
            schedule: p.schedule,
        }
    }

    pub fn initial_model(&self, worker: usize) -> ModelVector {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let dim = self.task.param_dim();
        match self.params.init {
            InitSpec::Zeros => ModelVector::zeros(dim),
            InitSpec::Gaussian { scale, shared } => {
                let key = if shared { 0 } else { worker as u64 + 1 };
                let mut rng = rng_for(self.params.seed, Stream::Init, &[key]);
                ModelVector::new(
                    (0..dim)
                        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            }
        }
    }
}

/// Per-worker state owned by the engine.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub role: Role,
    pub dataset_size: u64,
    pub outdegree: usize,
    pub model: ModelVector,
    pub conf: ConfidenceState,
    pub opt: OptState,
    /// Latest record from each in-neighbour, aligned with `conf.peers`.
    pub mailbox: Vec<Option<PeerRecord>>,
    /// Whether the record arrived after this worker last consumed it.
    pub fresh: Vec<bool>,
    /// Completed epochs.
    pub epoch: usize,
    pub recoveries: usize,
}

impl WorkerState {
    fn deposit(&mut self, record: PeerRecord) -> bool {
        match self.conf.position(record.peer) {
            Some(k) => {
                self.mailbox[k] = Some(record);
                self.fresh[k] = true;
                true
            }
            None => false,
        }
    }
}

/// A message in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub dataset_size: u64,
    pub outdegree: usize,
    pub model: ModelVector,
    pub epoch_tag: usize,
    pub deliver_at: f64,
}

impl RoundMessage {
    pub fn into_record(self) -> PeerRecord {
        PeerRecord {
            peer: self.sender,
            dataset_size: self.dataset_size,
            outdegree: self.outdegree,
            model: self.model,
            epoch_tag: self.epoch_tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub worker: usize,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub beta: Option<f64>,
    pub sim_time: f64,
    pub recovery: Option<Recovery>,
}

/// Confidence and sampling weight worker `worker` holds for `peer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSample {
    pub epoch: usize,
    pub worker: usize,
    pub peer: usize,
    pub confidence: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub aggregations: u64,
    pub recoveries_from_backup: u64,
    pub recoveries_from_initial: u64,
    pub events_processed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: RuntimeMode,
    pub roles: Vec<Role>,
    pub dataset_sizes: Vec<u64>,
    /// Sorted by `(epoch, worker)`.
    pub rows: Vec<MetricRow>,
    pub final_models: Vec<ModelVector>,
    pub confidence_trace: Vec<ConfidenceSample>,
    pub events: EventSummary,
    /// `trained_history[w][t-1]`: worker `w`'s model at the end of epoch `t`.
    pub trained_history: Vec<Vec<ModelVector>>,
    /// `aggregated_history[w][t-1]`: its aggregate at the start of epoch `t`.
    pub aggregated_history: Vec<Vec<ModelVector>>,
    pub sim_end_time: f64,
    /// Filled in by the caller; never part of any determinism check.
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn epochs_reached(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn n_workers(&self) -> usize {
        self.roles.len()
    }

    pub fn row(&self, worker: usize, epoch: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.worker == worker && r.epoch == epoch)
    }

    /// Last row of every honest worker.
    pub fn final_honest_rows(&self) -> Vec<&MetricRow> {
        (0..self.n_workers())
            .filter(|&w| self.roles[w] == Role::Honest)
            .filter_map(|w| self.rows.iter().rev().find(|r| r.worker == w))
            .collect()
    }

    pub fn mean_final_honest(&self, pick: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.final_honest_rows().into_iter().filter_map(pick).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Mean sampling weight that the receivers of `peer` hold for it at
    /// `epoch`, from the confidence trace.
    pub fn mean_incoming_theta(&self, peer: usize, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .confidence_trace
            .iter()
            .filter(|s| s.peer == peer && s.epoch == epoch && self.roles[s.worker] == Role::Honest)
            .map(|s| s.theta)
            .collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

/// What one training step produced.
pub(crate) struct StepOutput {
    pub epoch: usize,
    pub aggregated: ModelVector,
    pub train_loss: Option<f64>,
    pub recovery: Option<Recovery>,
}

/// Shared engine state: worker states plus everything being recorded.
pub(crate) struct Core<'a> {
    pub sc: &'a Scenario,
    pub workers: Vec<WorkerState>,
    pub rows: Vec<MetricRow>,
    pub trace: Vec<ConfidenceSample>,
    pub events: EventSummary,
    pub trained_history: Vec<Vec<ModelVector>>,
    pub aggregated_history: Vec<Vec<ModelVector>>,
}

impl<'a> Core<'a> {
    /// Builds every worker and runs the connection handshake: each worker
    /// deposits its initial model, size and outdegree with its receivers.
    pub fn bootstrap(sc: &'a Scenario) -> Result<Self, RuntimeError> {
        sc.validate()?;
        let n = sc.n_workers();
        let ins = sc.topology.in_neighbors();
        let mut workers = Vec::with_capacity(n);
        for (id, peers) in ins.into_iter().enumerate() {
            let model = sc.initial_model(id);
            let role = sc.roles[id];
            let initial_loss = if role.trains() {
                Some(model::loss(&sc.task, id, &model)?)
            } else {
                None
            };
            let k = peers.len();
            workers.push(WorkerState {
                id,
                role,
                dataset_size: sc.topology.dataset_sizes[id],
                outdegree: sc.topology.outdegree(id),
                conf: ConfidenceState::new(peers, model.clone(), initial_loss),
                model,
                opt: sc.opt_for(id),
                mailbox: vec![None; k],
                fresh: vec![false; k],
                epoch: 0,
                recoveries: 0,
            });
        }
        let mut core = Core {
            sc,
            workers,
            rows: Vec::new(),
            trace: Vec::new(),
            events: EventSummary::default(),
            trained_history: vec![Vec::new(); n],
            aggregated_history: vec![Vec::new(); n],
        };
        for s in 0..n {
            let msg = core.message_from(s, core.workers[s].model.clone(), 0.0);
            for d in sc.topology.out_edges[s].clone() {
                core.workers[d].deposit(msg.clone().into_record());
            }
        }
        for w in 0..n {
            core.record_trace(w, 0);
        }
        Ok(core)
    }

    pub fn message_from(&self, sender: usize, model: ModelVector, deliver_at: f64) -> RoundMessage {
        let w = &self.workers[sender];
        RoundMessage {
            sender,
            dataset_size: w.dataset_size,
            outdegree: w.outdegree,
            model,
            epoch_tag: w.epoch,
            deliver_at,
        }
    }

    /// Receivers of `sender`'s next publication.
    pub fn targets(&self, sender: usize) -> Vec<usize> {
        let outs = &self.sc.topology.out_edges[sender];
        if !self.sc.params.send_to_sampled_only {
            return outs.clone();
        }
        outs.iter()
            .copied()
            .filter(|&d| {
                let conf = &self.workers[d].conf;
                conf.position(sender).is_some_and(|k| conf.last_sampled_mask[k])
            })
            .collect()
    }

    /// Dataset-weighted mean of the honest workers' current models: the
    /// reference a noise attacker perturbs.
    pub fn honest_reference(&self) -> ModelVector {
        ModelVector::weighted_mean(
            self.workers
                .iter()
                .filter(|w| w.role == Role::Honest && w.model.is_finite())
                .map(|w| (w.dataset_size as f64, &w.model)),
        )
        .unwrap_or_else(|| self.sc.initial_model(0))
    }

    pub fn record_trace(&mut self, worker: usize, epoch: usize) {
        let w = &self.workers[worker];
        if !w.role.trains() || (!epoch.is_multiple_of(self.sc.params.report_interval) && epoch != self.sc.budget_of(worker)) {
            return;
        }
        for (k, &peer) in w.conf.peers.iter().enumerate() {
            self.trace.push(ConfidenceSample {
                epoch,
                worker,
                peer,
                confidence: w.conf.confidences[k],
                theta: w.conf.sample_weights[k],
            });
        }
    }

    /// Bookkeeping after a worker completed `epoch`.
    pub fn record_step(&mut self, worker: usize, out: Option<StepOutput>, published: &ModelVector, sim_time: f64) -> Result<(), RuntimeError> {
        let w = &self.workers[worker];
        let epoch = w.epoch;
        let (train_loss, recovery) = match &out {
            Some(o) => (o.train_loss, o.recovery),
            None => (None, None),
        };
        let (test_loss, test_acc) = if w.role.trains() && w.model.is_finite() {
            let e = model::evaluate(&self.sc.task, &w.model)?;
            (Some(e.test_loss), e.test_accuracy)
        } else {
            (None, None)
        };
        match recovery {
            Some(Recovery::Backup) => self.events.recoveries_from_backup += 1,
            Some(Recovery::InitialModel) => self.events.recoveries_from_initial += 1,
            None => {}
        }
        if self.sc.params.record_history {
            let trained = if w.role.trains() { w.model.clone() } else { published.clone() };
            self.trained_history[worker].push(trained);
            if let Some(o) = out {
                debug_assert_eq!(o.epoch, epoch);
                self.aggregated_history[worker].push(o.aggregated);
            }
        }
        self.rows.push(MetricRow {
            worker,
            epoch,
            train_loss,
            test_loss,
            test_acc,
            beta: None,
            sim_time,
            recovery,
        });
        self.record_trace(worker, epoch);
        Ok(())
    }

    pub fn finish(mut self, mode: RuntimeMode, sim_end_time: f64) -> RunReport {
        self.rows.sort_by_key(|r| (r.epoch, r.worker));
        self.trace.sort_by_key(|s| (s.epoch, s.worker, s.peer));
        let mut report = RunReport {
            mode,
            roles: self.sc.roles.clone(),
            dataset_sizes: self.sc.topology.dataset_sizes.clone(),
            rows: self.rows,
            final_models: self.workers.iter().map(|w| w.model.clone()).collect(),
            confidence_trace: self.trace,
            events: self.events,
            trained_history: self.trained_history,
            aggregated_history: self.aggregated_history,
            sim_end_time,
            wall_time_secs: 0.0,
        };
        if self.sc.params.record_history {
            beta::fill_beta(&mut report);
        }
        report
    }
}

/// One protocol step for a training worker: aggregate the sampled records,
/// train, update trust, and draw the next sample. Advances `w.epoch`.
pub(crate) fn train_step(sc: &Scenario, w: &mut WorkerState) -> Result<StepOutput, RuntimeError> {
    let epoch = w.epoch + 1;
    let p = &sc.params;
    let positions: Vec<usize> = (0..w.conf.peers.len())
        .filter(|&k| w.conf.last_sampled_mask[k])
        .collect();
    let records: Vec<PeerRecord> = positions
        .iter()
        .map(|&k| {
            w.mailbox[k].clone().ok_or_else(|| {
                RuntimeError::ConfigInvalid(format!(
                    "worker {} has no record from peer {}",
                    w.id, w.conf.peers[k]
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let weights = aggregation_weights(&records, p.weight_rule)?;

    let aggregated = match p.dts {
        Some(_) if records.iter().any(|r| !r.model.is_finite()) => None,
        Some(_) => Some(combine(&records, &weights)?),
        None => Some(combine_unchecked(&records, &weights)),
    };
    let aggregated_model = aggregated
        .clone()
        .unwrap_or_else(|| combine_unchecked(&records, &weights));
    let trained = match &aggregated {
        Some(m) if m.is_finite() => model::local_train(&sc.task, w.id, m, &w.opt, epoch)?,
        _ => aggregated_model.clone(),
    };
    let loss_of = |m: &ModelVector| -> Result<Option<f64>, RuntimeError> {
        if m.is_finite() {
            Ok(Some(model::loss(&sc.task, w.id, m)?))
        } else {
            Ok(None)
        }
    };
    let loss = loss_of(&trained)?;

    let (final_model, recovery) = match &p.dts {
        Some(params) => {
            let mut full = vec![0.0; w.conf.peers.len()];
            for (&k, &x) in positions.iter().zip(&weights) {
                full[k] = x;
            }
            let mut comp = w.opt.clone();
            comp.local_epochs = 1;
            let out = dts::dts_step(&mut w.conf, params, trained, loss, &full, |m| {
                model::local_train(&sc.task, w.id, m, &comp, epoch)
            })?;
            (out.model, out.recovery)
        }
        None => (trained, None),
    };
    let train_loss = match recovery {
        Some(_) => loss_of(&final_model)?,
        None => loss,
    };
    if recovery.is_some() {
        w.recoveries += 1;
    }

    let mut rng = rng_for(p.seed, Stream::Sampling, &[w.id as u64, epoch as u64]);
    dts::sample_peers(&mut w.conf, p.sample_count, &mut rng)?;
    w.model = final_model;
    w.epoch = epoch;
    Ok(StepOutput {
        epoch,
        aggregated: aggregated_model,
        train_loss,
        recovery,
    })
}

/// Advances any worker by one epoch and returns the model it publishes.
pub(crate) fn worker_step(
    sc: &Scenario,
    w: &mut WorkerState,
    reference: &ModelVector,
) -> Result<(Option<StepOutput>, ModelVector), RuntimeError> {
    match w.role {
        Role::Honest => {
            let out = train_step(sc, w)?;
            Ok((Some(out), w.model.clone()))
        }
        Role::DirtyModelAttacker => {
            let out = train_step(sc, w)?;
            let mut rng = rng_for(sc.params.seed, Stream::Adversary, &[w.id as u64, w.epoch as u64]);
            let published = apply_adversary(w, &w.model, reference, &sc.params.adversary, &mut rng)?;
            Ok((Some(out), published))
        }
        Role::NoiseAttacker => {
            w.epoch += 1;
            let mut rng = rng_for(sc.params.seed, Stream::Adversary, &[w.id as u64, w.epoch as u64]);
            let published = apply_adversary(w, &w.model, reference, &sc.params.adversary, &mut rng)?;
            Ok((None, published))
        }
    }
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::graph::Topology;
    use crate::model::{make_task, partition_noniid, TaskSpec};

    pub fn params(epochs: usize, n: usize) -> RunParams {
        RunParams {
            weight_rule: WeightRule::OutdegreeNormalized,
            dts: Some(DtsParams::default()),
            sample_count: 2,
            global_epochs: epochs,
            epoch_budgets: BTreeMap::new(),
            learning_rate: 0.05,
            lr_overrides: BTreeMap::new(),
            schedule: LrSchedule::Constant,
            local_epochs: 2,
            batch_size: 16,
            seed: 3,
            adversary: AdversaryParams::default(),
            send_to_sampled_only: false,
            report_interval: 1,
            init: InitSpec::Zeros,
            timing: Timing {
                base_step_time: 1.0,
                latency: 0.0,
                jitter: 0.0,
                speed: vec![1.0; n],
            },
            record_history: true,
        }
    }

    pub fn scenario_on(topology: Topology, spec: TaskSpec, roles: Vec<Role>, epochs: usize) -> Scenario {
        let n = topology.n_workers();
        let task = make_task(&spec, 5).unwrap();
        let sizes: Vec<usize> = (0..n)
            .map(|w| if roles[w].trains() { topology.dataset_sizes[w] as usize } else { 0 })
            .collect();
        let task = partition_noniid(&task, &sizes, 2, 5).unwrap();
        Scenario {
            topology,
            task,
            roles,
            params: params(epochs, n),
        }
    }

    /// Circulant graph: `i` sends to `i+1, i+2, i+3`.
    pub fn circulant(n: usize) -> Topology {
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (1..=3).map(move |k| (i, (i + k) % n))).collect();
        let sizes = (0..n as u64).map(|i| 40 + 7 * (i % 4)).collect();
        Topology::from_edges(n, &edges, sizes).unwrap()
    }

    pub fn small(n: usize, epochs: usize) -> Scenario {
        let topo = circulant(n);
        scenario_on(topo, TaskSpec::least_squares(80 * n, 3, 0.1), vec![Role::Honest; n], epochs)
    }
}
