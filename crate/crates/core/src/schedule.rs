//! Event-driven list scheduling of a task graph onto one compute lane and one
//! communication lane.
//!
//! Compute tasks slow down while a collective is in flight: their remaining
//! work (in uncontended seconds) drains at rate `1 / (1 + contention_factor)`
//! whenever the comm lane is busy, and at rate 1 otherwise. Collectives always
//! run at full speed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{HardwareProfile, ModelSpec, StageKind, Workload};
use crate::graph::{
    build_graph, validate_graph, GraphError, Lane, Strategy, TaskGraph, TaskId, Violation,
};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid task graph: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("trace I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace: {0}")]
    Trace(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub start: f64,
    pub end: f64,
    pub lane: Lane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Indexed by task id.
    pub placements: Vec<Placement>,
    pub makespan: f64,
    /// Maximal intervals during which both lanes were busy.
    pub contention_intervals: Vec<(f64, f64)>,
}

/// Relative gap under which two lane completions count as simultaneous.
const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Running {
    task: TaskId,
    start: f64,
    /// Comm: absolute end time. Compute: remaining uncontended seconds.
    remaining: f64,
}

/// Simulation state shared by the greedy scheduler and the brute-force oracle.
#[derive(Debug, Clone)]
pub(crate) struct Simulation<'g> {
    graph: &'g TaskGraph,
    succ: &'g [Vec<TaskId>],
    slowdown: f64,
    pub(crate) time: f64,
    pending_deps: Vec<usize>,
    ready: [Vec<TaskId>; 2],
    running: [Option<Running>; 2],
    placements: Vec<Option<Placement>>,
    finished: usize,
}

impl<'g> Simulation<'g> {
    pub(crate) fn new(
        graph: &'g TaskGraph,
        succ: &'g [Vec<TaskId>],
        contention_factor: f64,
    ) -> Self {
        let pending_deps: Vec<usize> = graph.tasks.iter().map(|t| t.deps.len()).collect();
        let mut ready = [Vec::new(), Vec::new()];
        for t in graph.tasks.iter().filter(|t| t.deps.is_empty()) {
            ready[t.lane.index()].push(t.id);
        }
        Self {
            graph,
            succ,
            slowdown: 1.0 + contention_factor,
            time: 0.0,
            pending_deps,
            ready,
            running: [None, None],
            placements: vec![None; graph.len()],
            finished: 0,
        }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.finished == self.graph.len()
    }

    /// Ready tasks of a lane if it is idle, else an empty slice.
    pub(crate) fn choices(&self, lane: Lane) -> &[TaskId] {
        if self.running[lane.index()].is_some() {
            &[]
        } else {
            &self.ready[lane.index()]
        }
    }

    pub(crate) fn start(&mut self, lane: Lane, task: TaskId) {
        let li = lane.index();
        debug_assert!(self.running[li].is_none());
        let pos = self.ready[li]
            .iter()
            .position(|&t| t == task)
            .expect("task not ready");
        self.ready[li].swap_remove(pos);
        let duration = self.graph.tasks[task].duration;
        let remaining = match lane {
            Lane::Comm => self.time + duration,
            Lane::Compute => duration,
        };
        self.running[li] = Some(Running {
            task,
            start: self.time,
            remaining,
        });
    }

    fn complete(&mut self, lane: Lane) {
        let r = self.running[lane.index()].take().expect("lane idle");
        self.placements[r.task] = Some(Placement {
            start: r.start,
            end: self.time,
            lane,
        });
        self.finished += 1;
        for &s in self.succ[r.task].iter() {
            self.pending_deps[s] -= 1;
            if self.pending_deps[s] == 0 {
                let l = self.graph.tasks[s].lane;
                self.ready[l.index()].push(s);
            }
        }
    }

    /// Advances to the next task completion. Returns false if nothing runs.
    pub(crate) fn advance(&mut self) -> bool {
        let comm_end = self.running[Lane::Comm.index()].map(|r| r.remaining);
        let comm_busy = comm_end.is_some();
        let compute = self.running[Lane::Compute.index()];
        let rate_inv = if comm_busy { self.slowdown } else { 1.0 };
        let compute_end = compute.map(|r| self.time + r.remaining * rate_inv);

        match (compute_end, comm_end) {
            (None, None) => false,
            (Some(ce), None) => {
                self.time = ce;
                self.complete(Lane::Compute);
                true
            }
            (None, Some(me)) => {
                self.time = me;
                self.complete(Lane::Comm);
                true
            }
            (Some(ce), Some(me)) => {
                if (ce - me).abs() <= COINCIDENT * ce.abs().max(me.abs()) {
                    // Both finish before either lane picks again, so rounding
                    // noise cannot change which tasks are ready.
                    let (first, second) = if ce <= me {
                        ((ce, Lane::Compute), (me, Lane::Comm))
                    } else {
                        ((me, Lane::Comm), (ce, Lane::Compute))
                    };
                    self.time = first.0;
                    self.complete(first.1);
                    self.time = second.0;
                    self.complete(second.1);
                } else if ce < me {
                    self.time = ce;
                    self.complete(Lane::Compute);
                } else {
                    let r = self.running[Lane::Compute.index()].as_mut().unwrap();
                    r.remaining -= (me - self.time) / self.slowdown;
                    if r.remaining < 0.0 {
                        r.remaining = 0.0;
                    }
                    self.time = me;
                    self.complete(Lane::Comm);
                }
                true
            }
        }
    }

    /// Lower bound on the makespan of any completion of this state.
    pub(crate) fn remaining_bound(&self) -> f64 {
        let mut lane_work = [0.0f64; 2];
        for (i, r) in self.running.iter().enumerate() {
            if let Some(r) = r {
                lane_work[i] += match i {
                    0 => r.remaining,
                    _ => r.remaining - self.time,
                };
            }
        }
        for (i, p) in self.placements.iter().enumerate() {
            let t = &self.graph.tasks[i];
            let running = self.running.iter().flatten().any(|r| r.task == i);
            if p.is_none() && !running {
                lane_work[t.lane.index()] += t.duration;
            }
        }
        self.time + lane_work[0].max(lane_work[1])
    }

    pub(crate) fn into_schedule(self) -> Schedule {
        let placements: Vec<Placement> = self
            .placements
            .into_iter()
            .map(|p| p.expect("unscheduled task"))
            .collect();
        let makespan = placements.iter().map(|p| p.end).fold(0.0, f64::max);
        let contention_intervals = both_busy_intervals(&placements);
        Schedule {
            placements,
            makespan,
            contention_intervals,
        }
    }
}

/// Intersections of the busy periods of the two lanes, merged.
fn both_busy_intervals(placements: &[Placement]) -> Vec<(f64, f64)> {
    let busy = |lane: Lane| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = placements
            .iter()
            .filter(|p| p.lane == lane && p.end > p.start)
            .map(|p| (p.start, p.end))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let compute = busy(Lane::Compute);
    let comm = busy(Lane::Comm);
    let mut out: Vec<(f64, f64)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < compute.len() && j < comm.len() {
        let lo = compute[i].0.max(comm[j].0);
        let hi = compute[i].1.min(comm[j].1);
        if lo < hi {
            match out.last_mut() {
                Some(last) if last.1 >= lo => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        if compute[i].1 < comm[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Greedy non-preemptive list schedule. Each idle lane starts its ready task
/// with the smallest `(micro_batch, layer, stage, block, id)`.
pub fn run_schedule(
    graph: &TaskGraph,
    profile: &HardwareProfile,
) -> Result<Schedule, ScheduleError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(ScheduleError::InvalidGraph(violations));
    }
    Ok(greedy(graph, profile.contention_factor))
}

pub(crate) fn greedy(graph: &TaskGraph, contention_factor: f64) -> Schedule {
    let succ = graph.successors();
    let mut sim = Simulation::new(graph, &succ, contention_factor);
    loop {
        for lane in [Lane::Compute, Lane::Comm] {
            let pick = sim
                .choices(lane)
                .iter()
                .copied()
                .min_by_key(|&t| graph.tasks[t].priority_key());
            if let Some(t) = pick {
                sim.start(lane, t);
            }
        }
        if !sim.advance() {
            break;
        }
    }
    assert!(sim.is_done(), "scheduler stalled on an acyclic graph");
    sim.into_schedule()
}

/// `max(critical path, compute lane work, comm lane work)` with uncontended
/// durations.
pub fn makespan_lower_bound(graph: &TaskGraph) -> f64 {
    let mut finish = vec![0.0f64; graph.len()];
    let mut lane_work = [0.0f64; 2];
    let order = graph
        .topological_order()
        .expect("lower bound needs an acyclic graph");
    for t in order.into_iter().map(|i| &graph.tasks[i]) {
        let ready = t.deps.iter().map(|&d| finish[d]).fold(0.0, f64::max);
        finish[t.id] = ready + t.duration;
        lane_work[t.lane.index()] += t.duration;
    }
    let critical = finish.into_iter().fold(0.0, f64::max);
    critical.max(lane_work[0]).max(lane_work[1])
}

/// Serial makespan of the same work a strategy performs. For request overlap
/// this is both requests run back to back.
pub fn serial_baseline(
    strategy: &Strategy,
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
) -> Result<f64, ScheduleError> {
    let mut total = run_schedule(
        &build_graph(Strategy::Serial, model, workload, profile)?,
        profile,
    )?
    .makespan;
    if let Strategy::RequestOverlap { second_prompt_len } = *strategy {
        let second = Workload {
            prompt_len: second_prompt_len.unwrap_or(workload.prompt_len),
            ..*workload
        };
        total += run_schedule(
            &build_graph(Strategy::Serial, model, &second, profile)?,
            profile,
        )?
        .makespan;
    }
    Ok(total)
}

/// `1 - makespan(strategy) / makespan(serial)`.
pub fn speedup_vs_serial(
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
    strategy: Strategy,
) -> Result<f64, ScheduleError> {
    let serial = serial_baseline(&strategy, model, workload, profile)?;
    let graph = build_graph(strategy, model, workload, profile)?;
    let makespan = run_schedule(&graph, profile)?.makespan;
    Ok(1.0 - makespan / serial)
}

/// One placed task in a Gantt trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub name: String,
    pub lane: Lane,
    pub start_us: f64,
    pub duration_us: f64,
    pub micro_batch: usize,
    pub layer: usize,
    pub stage: StageKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Latest `start_us + duration_us` over all records.
    pub makespan_us: f64,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn from_schedule(graph: &TaskGraph, schedule: &Schedule) -> Self {
        let records: Vec<TraceRecord> = graph
            .tasks
            .iter()
            .zip(&schedule.placements)
            .map(|(t, p)| {
                let start_us = p.start * 1e6;
                let name = if is_block_task(graph, t.id) {
                    format!("mb{}.L{}.{}.b{}", t.micro_batch, t.layer, t.stage, t.block)
                } else {
                    format!("mb{}.L{}.{}", t.micro_batch, t.layer, t.stage)
                };
                TraceRecord {
                    name,
                    lane: p.lane,
                    start_us,
                    duration_us: p.end * 1e6 - start_us,
                    micro_batch: t.micro_batch,
                    layer: t.layer,
                    stage: t.stage,
                }
            })
            .collect();
        let makespan_us = recompute_makespan_us(&records);
        Trace {
            makespan_us,
            records,
        }
    }

    pub fn recomputed_makespan_us(&self) -> f64 {
        recompute_makespan_us(&self.records)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScheduleError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ScheduleError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| ScheduleError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ScheduleError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScheduleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn is_block_task(graph: &TaskGraph, id: TaskId) -> bool {
    matches!(
        graph.meta.as_ref().map(|m| m.strategy),
        Some(Strategy::GemmOverlap { .. })
    ) && matches!(
        graph.tasks[id].stage,
        StageKind::OProj | StageKind::AttnAllReduce | StageKind::DownProj | StageKind::MlpAllReduce
    )
}

fn recompute_makespan_us(records: &[TraceRecord]) -> f64 {
    records
        .iter()
        .map(|r| r.start_us + r.duration_us)
        .fold(0.0, f64::max)
}
