//! Brute-force references for checking the scheduler on small graphs.

use thiserror::Error;

use crate::cost::HardwareProfile;
use crate::graph::{validate_graph, Lane, TaskGraph, TaskId, Violation};
use crate::schedule::Simulation;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("graph has {tasks} tasks, oracle limit is {limit}")]
    TooManyTasks { tasks: usize, limit: usize },
    #[error("max_tasks {0} exceeds the hard cap of {MAX_ORACLE_TASKS}")]
    LimitTooLarge(usize),
    #[error("time step must be positive and finite (got {0})")]
    BadStep(f64),
    #[error("invalid task graph ({} violations)", .0.len())]
    InvalidGraph(Vec<Violation>),
    #[error("discrete replay did not finish within {0} steps")]
    NoProgress(u64),
}

/// Hard cap on graph size for exhaustive search.
pub const MAX_ORACLE_TASKS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleLimit {
    pub max_tasks: usize,
    /// Step for discrete-time replay, as a fraction of the makespan scale.
    pub time_step: f64,
}

impl Default for OracleLimit {
    fn default() -> Self {
        Self {
            max_tasks: 12,
            time_step: 1e-4,
        }
    }
}

impl OracleLimit {
    /// Absolute replay step for a graph: `time_step` times the serial work.
    pub fn step_for(&self, graph: &TaskGraph) -> f64 {
        let total: f64 = graph.tasks.iter().map(|t| t.duration).sum();
        self.time_step * total.max(f64::MIN_POSITIVE)
    }
}

/// Minimum makespan over every priority-list policy.
///
/// Each non-idling priority list induces a sequence of choices (which ready
/// task an idle lane starts), and every such choice sequence is induced by
/// some priority list (order tasks by start time), so exploring the choice
/// tree covers exactly the list-scheduling policy class. Branches whose
/// lane-work bound cannot beat the incumbent are pruned. The result is an
/// upper bound on the unrestricted optimum, not the optimum itself.
pub fn optimal_makespan_bruteforce(
    graph: &TaskGraph,
    profile: &HardwareProfile,
    limit: OracleLimit,
) -> Result<f64, OracleError> {
    if limit.max_tasks > MAX_ORACLE_TASKS {
        return Err(OracleError::LimitTooLarge(limit.max_tasks));
    }
    if graph.len() > limit.max_tasks {
        return Err(OracleError::TooManyTasks {
            tasks: graph.len(),
            limit: limit.max_tasks,
        });
    }
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(OracleError::InvalidGraph(violations));
    }
    let succ = graph.successors();
    let mut best = f64::INFINITY;
    explore(
        Simulation::new(graph, &succ, profile.contention_factor),
        &mut best,
    );
    Ok(best)
}

fn explore(mut sim: Simulation<'_>, best: &mut f64) {
    loop {
        for lane in [Lane::Compute, Lane::Comm] {
            match sim.choices(lane).len() {
                0 => {}
                1 => {
                    let t = sim.choices(lane)[0];
                    sim.start(lane, t);
                }
                _ => {
                    let options: Vec<TaskId> = sim.choices(lane).to_vec();
                    for t in options {
                        let mut branch = sim.clone();
                        branch.start(lane, t);
                        explore(branch, best);
                    }
                    return;
                }
            }
        }
        if sim.remaining_bound() >= *best {
            return;
        }
        if !sim.advance() {
            break;
        }
    }
    if sim.is_done() && sim.time < *best {
        *best = sim.time;
    }
}

/// Greedy policy replayed in fixed time steps.
///
/// Completions are only noticed at step boundaries and the contention rate of
/// a step is fixed by whether a collective was running at its start, so each
/// event costs at most about one step of error.
pub fn discrete_time_replay(
    graph: &TaskGraph,
    profile: &HardwareProfile,
    step: f64,
) -> Result<f64, OracleError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(OracleError::BadStep(step));
    }
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(OracleError::InvalidGraph(violations));
    }
    let n = graph.len();
    let mut succ: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    for t in &graph.tasks {
        for &d in &t.deps {
            succ[d].push(t.id);
        }
    }
    let mut waiting: Vec<usize> = graph.tasks.iter().map(|t| t.deps.len()).collect();
    let mut ready: Vec<TaskId> = (0..n).filter(|&i| waiting[i] == 0).collect();
    // (task, remaining uncontended seconds) per lane
    let mut running: [Option<(TaskId, f64)>; 2] = [None, None];
    let mut done = 0usize;
    let slow_rate = 1.0 / (1.0 + profile.contention_factor);
    let eps = step * 1e-9;

    let total: f64 = graph.tasks.iter().map(|t| t.duration).sum();
    let max_steps =
        ((total * (1.0 + profile.contention_factor)) / step).ceil() as u64 + 2 * n as u64 + 16;

    let mut k: u64 = 0;
    loop {
        loop {
            let mut changed = false;
            for slot in running.iter_mut() {
                if let Some((task, rem)) = *slot {
                    if rem <= eps {
                        *slot = None;
                        done += 1;
                        changed = true;
                        for &s in &succ[task] {
                            waiting[s] -= 1;
                            if waiting[s] == 0 {
                                ready.push(s);
                            }
                        }
                    }
                }
            }
            for lane in [Lane::Compute, Lane::Comm] {
                if running[lane.index()].is_some() {
                    continue;
                }
                let pick = ready
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| graph.tasks[t].lane == lane)
                    .min_by_key(|(_, &t)| graph.tasks[t].priority_key())
                    .map(|(i, _)| i);
                if let Some(i) = pick {
                    let t = ready.swap_remove(i);
                    running[lane.index()] = Some((t, graph.tasks[t].duration));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if done == n {
            return Ok(k as f64 * step);
        }
        if k >= max_steps {
            return Err(OracleError::NoProgress(k));
        }
        let comm_busy = running[Lane::Comm.index()].is_some();
        if let Some((_, rem)) = running[Lane::Compute.index()].as_mut() {
            *rem -= step * if comm_busy { slow_rate } else { 1.0 };
        }
        if let Some((_, rem)) = running[Lane::Comm.index()].as_mut() {
            *rem -= step;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::StageKind;
    use crate::graph::Task;
    use crate::schedule::run_schedule;

    fn task(id: TaskId, lane: Lane, duration: f64, deps: Vec<TaskId>) -> Task {
        Task {
            id,
            micro_batch: 0,
            layer: 0,
            stage: if lane == Lane::Comm {
                StageKind::MlpAllReduce
            } else {
                StageKind::DownProj
            },
            block: 0,
            duration,
            lane,
            deps,
            token_start: 0,
            token_len: 0,
        }
    }

    fn profile(cf: f64) -> HardwareProfile {
        HardwareProfile {
            name: "oracle".into(),
            compute_throughput: 1.0,
            comm_bandwidth: 1.0,
            comm_base_latency: 0.0,
            contention_factor: cf,
            launch_overhead: 0.0,
            comm_element_bytes: 2,
        }
    }

    #[test]
    fn chain_is_sum() {
        let g = TaskGraph::from_tasks(vec![
            task(0, Lane::Compute, 1.0, vec![]),
            task(1, Lane::Comm, 2.0, vec![0]),
            task(2, Lane::Compute, 3.0, vec![1]),
        ]);
        assert_eq!(
            optimal_makespan_bruteforce(&g, &profile(0.2), OracleLimit::default()).unwrap(),
            6.0
        );
    }

    #[test]
    fn independent_pair_is_max() {
        let g = TaskGraph::from_tasks(vec![
            task(0, Lane::Compute, 4.0, vec![]),
            task(1, Lane::Comm, 7.0, vec![]),
        ]);
        assert_eq!(
            optimal_makespan_bruteforce(&g, &profile(0.0), OracleLimit::default()).unwrap(),
            7.0
        );
    }

    #[test]
    fn bruteforce_finds_better_order_than_greedy() {
        // Greedy starts the short compute task 0 first by id; starting task 1
        // first lets the long collective behind it overlap with task 0.
        let g = TaskGraph::from_tasks(vec![
            task(0, Lane::Compute, 1.0, vec![]),
            task(1, Lane::Compute, 1.0, vec![]),
            task(2, Lane::Comm, 5.0, vec![1]),
        ]);
        let greedy = run_schedule(&g, &profile(0.0)).unwrap().makespan;
        let best = optimal_makespan_bruteforce(&g, &profile(0.0), OracleLimit::default()).unwrap();
        assert_eq!(greedy, 7.0);
        assert_eq!(best, 6.0);
    }

    #[test]
    fn size_guards() {
        let tasks = (0..13)
            .map(|i| task(i, Lane::Compute, 1.0, vec![]))
            .collect();
        let g = TaskGraph::from_tasks(tasks);
        assert!(matches!(
            optimal_makespan_bruteforce(&g, &profile(0.0), OracleLimit::default()),
            Err(OracleError::TooManyTasks {
                tasks: 13,
                limit: 12
            })
        ));
        let limit = OracleLimit {
            max_tasks: 15,
            ..Default::default()
        };
        assert!(matches!(
            optimal_makespan_bruteforce(&g, &profile(0.0), limit),
            Err(OracleError::LimitTooLarge(15))
        ));
        let limit = OracleLimit {
            max_tasks: 14,
            ..Default::default()
        };
        assert_eq!(
            optimal_makespan_bruteforce(&g, &profile(0.0), limit).unwrap(),
            13.0
        );
    }

    #[test]
    fn replay_matches_contention_example() {
        let g = TaskGraph::from_tasks(vec![
            task(0, Lane::Compute, 10.0, vec![]),
            task(1, Lane::Comm, 10.0, vec![]),
        ]);
        for step in [1e-2, 1e-3, 1e-4] {
            let m = discrete_time_replay(&g, &profile(0.2), step).unwrap();
            assert!(
                (m - 11.666_666_666_666_666).abs() <= 2.0 * step,
                "step {step}: {m}"
            );
        }
    }

    #[test]
    fn replay_without_contention() {
        let g = TaskGraph::from_tasks(vec![
            task(0, Lane::Compute, 1.25, vec![]),
            task(1, Lane::Comm, 0.5, vec![0]),
            task(2, Lane::Compute, 0.75, vec![]),
            task(3, Lane::Compute, 2.0, vec![1]),
        ]);
        let exact = run_schedule(&g, &profile(0.0)).unwrap().makespan;
        let m = discrete_time_replay(&g, &profile(0.0), 1e-3).unwrap();
        assert!((m - exact).abs() <= 2.0 * 1e-3 * g.len() as f64);
        assert!(discrete_time_replay(&g, &profile(0.0), 0.0).is_err());
    }
}
