//! Discrete-event model of tensor-parallel prefill under different
//! computation/communication overlap strategies.
//!
//! The pieces compose bottom-up: [`cost`] turns a model, workload and
//! hardware profile into per-stage durations, [`graph`] arranges those stages
//! into a dependency DAG for a strategy, [`schedule`] places the DAG onto a
//! compute lane and a communication lane, [`optimizer`] searches chunk split
//! ratios, and [`harness`] sweeps whole experiment grids. [`oracle`] holds
//! brute-force references used by the tests.

pub mod cost;
pub mod graph;
pub mod harness;
pub mod optimizer;
pub mod oracle;
pub mod presets;
pub mod schedule;

pub use cost::{
    regime_report, stage_comm_bytes, stage_duration, stage_flops, CostError, HardwareProfile,
    ModelSpec, Regime, RegimeReport, StageKind, Workload,
};
pub use graph::{
    build_graph, validate_graph, GraphError, Lane, Strategy, Task, TaskGraph, TaskId, Violation,
};
pub use schedule::{
    makespan_lower_bound, run_schedule, speedup_vs_serial, Placement, Schedule, ScheduleError,
    Trace,
};
