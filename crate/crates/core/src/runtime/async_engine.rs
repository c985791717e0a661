use rand::Rng;

use super::clock::{
    EventKind, SimClock, PHASE_DELIVER, PHASE_START_ATTACKER, PHASE_START_TRAINER, PHASE_STEP_DONE,
};
use super::{worker_step, Core, Role, RunReport, RuntimeError, RuntimeMode, Scenario, Starved};
use crate::model::ModelVector;
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Default)]
struct Activity {
    busy: bool,
    waiting: bool,
    finished: bool,
    pending: Option<ModelVector>,
}

/// Runs the protocol on a simulated clock without global barriers.
///
/// A worker's step takes `base_step_time × speed[w]`; it computes at the
/// start of the step and publishes at the end. Messages arrive after
/// `latency` plus a uniform draw from `[0, jitter)`. A worker starts its next
/// step once every peer it sampled has delivered a model it has not yet
/// consumed, or has finished its epoch budget. With uniform speeds and no
/// latency the run reproduces [`run_sync`](super::run_sync) exactly.
pub fn run_async(sc: &Scenario) -> Result<RunReport, RuntimeError> {
    let mut core = Core::bootstrap(sc)?;
    let n = core.workers.len();
    let timing = &sc.params.timing;
    let mut act = vec![Activity::default(); n];
    let mut clock = SimClock::new();
    let start_phase = |role: Role| {
        if role.trains() {
            PHASE_START_TRAINER
        } else {
            PHASE_START_ATTACKER
        }
    };
    for w in 0..n {
        clock.schedule(0.0, start_phase(sc.roles[w]), EventKind::TryStart { worker: w });
    }

    while let Some(ev) = clock.pop() {
        core.events.events_processed += 1;
        let now = ev.time;
        match ev.kind {
            EventKind::Deliver { to, record } => {
                if act[to].finished {
                    core.events.messages_dropped += 1;
                    continue;
                }
                if core.workers[to].deposit(record) {
                    core.events.messages_delivered += 1;
                }
                if act[to].waiting {
                    act[to].waiting = false;
                    clock.schedule(now, start_phase(sc.roles[to]), EventKind::TryStart { worker: to });
                }
            }
            EventKind::TryStart { worker } => {
                if act[worker].finished || act[worker].busy {
                    continue;
                }
                let w = &core.workers[worker];
                if w.role.trains() && !blocking_peers(&core, &act, worker).is_empty() {
                    act[worker].waiting = true;
                    continue;
                }
                if w.role.trains() {
                    let w = &mut core.workers[worker];
                    for k in 0..w.fresh.len() {
                        if w.conf.last_sampled_mask[k] {
                            w.fresh[k] = false;
                        }
                    }
                    core.events.aggregations += 1;
                }
                let reference = if sc.roles[worker] == Role::NoiseAttacker {
                    core.honest_reference()
                } else {
                    ModelVector::zeros(sc.task.param_dim())
                };
                let (out, published) = worker_step(sc, &mut core.workers[worker], &reference)?;
                core.record_step(worker, out, &published, now)?;
                act[worker].busy = true;
                act[worker].pending = Some(published);
                let done = now + timing.base_step_time * timing.speed[worker];
                clock.schedule(done, PHASE_STEP_DONE, EventKind::StepDone { worker });
            }
            EventKind::StepDone { worker } => {
                act[worker].busy = false;
                let model = act[worker].pending.take().expect("step in flight");
                let epoch = core.workers[worker].epoch;
                let msg = core.message_from(worker, model, now);
                for d in core.targets(worker) {
                    let mut delay = timing.latency;
                    if timing.jitter > 0.0 {
                        let mut rng = rng_for(
                            sc.params.seed,
                            Stream::Latency,
                            &[worker as u64, epoch as u64, d as u64],
                        );
                        delay += rng.random_range(0.0..timing.jitter);
                    }
                    core.events.messages_sent += 1;
                    clock.schedule(
                        now + delay,
                        PHASE_DELIVER,
                        EventKind::Deliver {
                            to: d,
                            record: msg.clone().into_record(),
                        },
                    );
                }
                if epoch >= sc.budget_of(worker) {
                    act[worker].finished = true;
                    for &d in &sc.topology.out_edges[worker] {
                        if act[d].waiting {
                            act[d].waiting = false;
                            clock.schedule(now, start_phase(sc.roles[d]), EventKind::TryStart { worker: d });
                        }
                    }
                } else {
                    clock.schedule(now, start_phase(sc.roles[worker]), EventKind::TryStart { worker });
                }
            }
        }
    }

    let starved: Vec<Starved> = (0..n)
        .filter(|&w| !act[w].finished)
        .map(|w| Starved {
            worker: w,
            completed_epochs: core.workers[w].epoch,
            waiting_on: blocking_peers(&core, &act, w),
        })
        .collect();
    if !starved.is_empty() {
        return Err(RuntimeError::Deadlock(starved));
    }
    let end = clock.now();
    Ok(core.finish(RuntimeMode::Async, end))
}

/// Sampled peers of `worker` that have neither delivered a fresh model nor
/// finished.
fn blocking_peers(core: &Core<'_>, act: &[Activity], worker: usize) -> Vec<usize> {
    let w = &core.workers[worker];
    (0..w.conf.peers.len())
        .filter(|&k| w.conf.last_sampled_mask[k])
        .filter(|&k| {
            let peer = w.conf.peers[k];
            let ready = w.mailbox[k].is_some() && (w.fresh[k] || act[peer].finished);
            !ready
        })
        .map(|k| w.conf.peers[k])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::super::{run_sync, Role};
    use super::*;
    use crate::graph::Topology;
    use crate::model::TaskSpec;

    #[test]
    fn uniform_speeds_match_sync_exactly() {
        let sc = small(7, 4);
        let s = run_sync(&sc).unwrap();
        let a = run_async(&sc).unwrap();
        assert_eq!(s.final_models, a.final_models);
        assert_eq!(s.rows.len(), a.rows.len());
        for (x, y) in s.rows.iter().zip(&a.rows) {
            assert_eq!((x.worker, x.epoch, x.train_loss, x.test_loss), (y.worker, y.epoch, y.train_loss, y.test_loss));
        }
        assert_eq!(s.confidence_trace, a.confidence_trace);
    }

    #[test]
    fn equivalence_holds_with_attackers() {
        let core = circulant(6);
        let mut edges = core.edges();
        edges.extend([(6, 0), (6, 2), (6, 4)]);
        let mut sizes = core.dataset_sizes.clone();
        sizes.push(60);
        let topo = Topology::from_edges(7, &edges, sizes).unwrap();
        let mut roles = vec![Role::Honest; 6];
        roles.push(Role::NoiseAttacker);
        let sc = scenario_on(topo, TaskSpec::least_squares(600, 3, 0.1), roles, 4);
        let s = run_sync(&sc).unwrap();
        let a = run_async(&sc).unwrap();
        assert_eq!(s.final_models, a.final_models);
    }

    #[test]
    fn fast_worker_waits_for_peers_then_runs_ahead() {
        let mut sc = small(6, 3);
        sc.params.timing.speed[0] = 0.1;
        sc.params.epoch_budgets.insert(0, 10);
        let r = run_async(&sc).unwrap();
        assert_eq!(r.rows.len(), 5 * 3 + 10);
        assert_eq!(r.row(0, 3).unwrap().sim_time, 2.0);
        let t = r.row(0, 10).unwrap().sim_time;
        assert!((t - 3.6).abs() < 1e-9, "{t}");
    }

    #[test]
    fn uniform_speeds_with_budgets_match_sync() {
        let mut sc = small(6, 3);
        sc.params.epoch_budgets.insert(2, 6);
        assert_eq!(run_sync(&sc).unwrap().final_models, run_async(&sc).unwrap().final_models);
    }

    #[test]
    fn latency_and_jitter_are_deterministic() {
        let mut sc = small(6, 4);
        sc.params.timing.latency = 0.3;
        sc.params.timing.jitter = 0.5;
        sc.params.timing.speed = vec![1.0, 0.5, 2.0, 1.0, 1.5, 0.7];
        let a = run_async(&sc).unwrap();
        let b = run_async(&sc).unwrap();
        assert_eq!(a, b);
        assert!(a.sim_end_time > 4.0);
    }
}
