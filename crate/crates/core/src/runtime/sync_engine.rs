#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{worker_step, Core, RunReport, RuntimeError, RuntimeMode, Scenario, StepOutput};
use crate::model::ModelVector;

type Stepped = Result<Option<(Option<StepOutput>, ModelVector)>, RuntimeError>;

/// Runs the protocol in lock-step rounds with a barrier after each.
///
/// Every training worker steps on the mailbox contents from the previous
/// round; attackers then perturb the freshly updated honest models; finally
/// all messages are delivered at once.
pub fn run_sync(sc: &Scenario) -> Result<RunReport, RuntimeError> {
    let mut core = Core::bootstrap(sc)?;
    let step_time = sc.params.timing.base_step_time;
    let last = sc.max_budget();
    for epoch in 1..=last {
        let placeholder = ModelVector::zeros(sc.task.param_dim());
        let active: Vec<bool> = (0..core.workers.len()).map(|w| sc.budget_of(w) >= epoch).collect();
        let step = |w: &mut super::WorkerState| -> Stepped {
            if w.role.trains() && sc.budget_of(w.id) > w.epoch {
                worker_step(sc, w, &placeholder).map(Some)
            } else {
                Ok(None)
            }
        };
        #[cfg(feature = "parallel")]
        let trained: Vec<Stepped> = core.workers.par_iter_mut().map(step).collect();
        #[cfg(not(feature = "parallel"))]
        let trained: Vec<Stepped> = core.workers.iter_mut().map(step).collect();

        let reference = core.honest_reference();
        let mut published = Vec::with_capacity(core.workers.len());
        for (id, t) in trained.into_iter().enumerate() {
            if !active[id] {
                published.push(None);
                continue;
            }
            let (out, model) = match t? {
                Some(x) => x,
                None => worker_step(sc, &mut core.workers[id], &reference)?,
            };
            if out.is_some() {
                core.events.aggregations += 1;
            }
            core.record_step(id, out, &model, epoch as f64 * step_time)?;
            published.push(Some(model));
        }

        for (s, model) in published.into_iter().enumerate() {
            let Some(model) = model else { continue };
            let targets = core.targets(s);
            let msg = core.message_from(s, model, epoch as f64 * step_time);
            for d in targets {
                core.events.messages_sent += 1;
                if !active[d] || sc.budget_of(d) == epoch {
                    core.events.messages_dropped += 1;
                    continue;
                }
                if core.workers[d].deposit(msg.clone().into_record()) {
                    core.events.messages_delivered += 1;
                }
            }
        }
    }
    Ok(core.finish(RuntimeMode::Sync, last as f64 * step_time))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::*;

    #[test]
    fn rows_cover_every_worker_and_epoch() {
        let sc = small(6, 3);
        let r = run_sync(&sc).unwrap();
        assert_eq!(r.rows.len(), 18);
        assert_eq!(r.epochs_reached(), 3);
        assert!(r.rows.windows(2).all(|w| (w[0].epoch, w[0].worker) < (w[1].epoch, w[1].worker)));
        assert_eq!(r.trained_history[0].len(), 3);
    }

    #[test]
    fn per_worker_budgets() {
        let mut sc = small(6, 2);
        sc.params.epoch_budgets.insert(0, 5);
        let r = run_sync(&sc).unwrap();
        assert_eq!(r.rows.len(), 6 * 2 + 3);
        assert_eq!(r.epochs_reached(), 5);
    }

    #[test]
    fn deterministic() {
        let sc = small(6, 3);
        let a = run_sync(&sc).unwrap();
        let b = run_sync(&sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_loss() {
        let sc = small(6, 8);
        let r = run_sync(&sc).unwrap();
        let first: f64 = r.rows.iter().filter(|x| x.epoch == 1).map(|x| x.test_loss.unwrap()).sum();
        let last: f64 = r.rows.iter().filter(|x| x.epoch == 8).map(|x| x.test_loss.unwrap()).sum();
        assert!(last < first, "{first} -> {last}");
    }
}
