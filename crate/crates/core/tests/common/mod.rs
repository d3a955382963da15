//! Shared helpers for the integration tests.
#![allow(dead_code)]

use isosim::{
    HardwareProfile, Lane, ModelSpec, Schedule, StageKind, Strategy, Task, TaskGraph, Workload,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn tiny_model(layers: u64) -> ModelSpec {
    ModelSpec {
        num_layers: layers,
        hidden_size: 512,
        num_heads: 8,
        num_kv_heads: 8,
        ffn_size: 2048,
        weight_bytes: 2,
        activation_bytes: 2,
    }
}

pub fn random_model(rng: &mut impl Rng) -> ModelSpec {
    let heads = *[4u64, 8, 16, 32].choose(rng).unwrap();
    let head_dim = *[32u64, 64, 128].choose(rng).unwrap();
    let kv_options: Vec<u64> = [1u64, 2, heads / 2, heads]
        .into_iter()
        .filter(|&k| heads.is_multiple_of(k))
        .collect();
    let kv_heads = *kv_options.choose(rng).unwrap();
    let hidden = heads * head_dim;
    ModelSpec {
        num_layers: rng.gen_range(1..=6),
        hidden_size: hidden,
        num_heads: heads,
        num_kv_heads: kv_heads,
        ffn_size: hidden * rng.gen_range(2..=4),
        weight_bytes: *[1u64, 2].choose(rng).unwrap(),
        activation_bytes: *[1u64, 2, 4].choose(rng).unwrap(),
    }
}

pub fn random_profile(rng: &mut impl Rng) -> HardwareProfile {
    HardwareProfile {
        name: "random".into(),
        compute_throughput: 10f64.powf(rng.gen_range(12.0..15.0)),
        comm_bandwidth: 10f64.powf(rng.gen_range(9.0..12.0)),
        comm_base_latency: rng.gen_range(0.0..50e-6),
        contention_factor: rng.gen_range(0.0..0.5),
        launch_overhead: rng.gen_range(0.0..50e-6),
        comm_element_bytes: *[1u64, 2, 4].choose(rng).unwrap(),
    }
}

pub fn random_strategy(rng: &mut impl Rng) -> Strategy {
    match rng.gen_range(0..5) {
        0 => Strategy::Serial,
        1 => Strategy::GemmOverlap {
            num_blocks: rng.gen_range(2..=6),
        },
        2 => Strategy::RequestOverlap {
            second_prompt_len: if rng.gen_bool(0.5) {
                None
            } else {
                Some(rng.gen_range(16..=4096))
            },
        },
        3 => Strategy::IsoTwoChunk {
            split_ratio: rng.gen_range(0.2..0.8),
        },
        _ => {
            let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
            let sum: f64 = raw.iter().sum();
            let mut ratios = raw.map(|r| r / sum);
            ratios[3] = 1.0 - ratios[0] - ratios[1] - ratios[2];
            Strategy::IsoFourPart { ratios }
        }
    }
}

pub fn random_scenario(rng: &mut impl Rng) -> (ModelSpec, Workload, HardwareProfile, Strategy) {
    let tp = *[1u64, 2, 4, 8].choose(rng).unwrap();
    let workload = Workload {
        prompt_len: rng.gen_range(64..=16384),
        tp_degree: tp,
        prefix_len: if rng.gen_bool(0.2) {
            rng.gen_range(0..4096)
        } else {
            0
        },
    };
    (
        random_model(rng),
        workload,
        random_profile(rng),
        random_strategy(rng),
    )
}

/// Random DAG with deps only on earlier ids; stage labels are arbitrary.
pub fn random_small_graph(rng: &mut impl Rng, n: usize) -> TaskGraph {
    let tasks = (0..n)
        .map(|id| {
            let lane = if rng.gen_bool(0.4) {
                Lane::Comm
            } else {
                Lane::Compute
            };
            let deps: Vec<usize> = (0..id).filter(|_| rng.gen_bool(0.3)).collect();
            Task {
                id,
                micro_batch: rng.gen_range(0..2),
                layer: rng.gen_range(0..2),
                stage: if lane == Lane::Comm {
                    StageKind::AttnAllReduce
                } else {
                    StageKind::AttnCore
                },
                block: 0,
                duration: rng.gen_range(1..=20) as f64 * 0.25,
                lane,
                deps,
                token_start: 0,
                token_len: 0,
            }
        })
        .collect();
    TaskGraph::from_tasks(tasks)
}

/// Dependency feasibility and lane exclusivity, checked exactly.
pub fn check_schedule(graph: &TaskGraph, schedule: &Schedule) -> Result<(), String> {
    if schedule.placements.len() != graph.len() {
        return Err(format!(
            "{} placements for {} tasks",
            schedule.placements.len(),
            graph.len()
        ));
    }
    for t in &graph.tasks {
        let p = schedule.placements[t.id];
        if p.lane != t.lane {
            return Err(format!("task {} placed on {:?}", t.id, p.lane));
        }
        if !(p.start >= 0.0 && p.end >= p.start) {
            return Err(format!(
                "task {} has interval [{}, {}]",
                t.id, p.start, p.end
            ));
        }
        for &d in &t.deps {
            if p.start < schedule.placements[d].end {
                return Err(format!(
                    "task {} starts at {} before dep {} ends at {}",
                    t.id, p.start, d, schedule.placements[d].end
                ));
            }
        }
    }
    for lane in [Lane::Compute, Lane::Comm] {
        let mut spans: Vec<(f64, f64, usize)> = graph
            .tasks
            .iter()
            .filter(|t| t.lane == lane)
            .map(|t| {
                (
                    schedule.placements[t.id].start,
                    schedule.placements[t.id].end,
                    t.id,
                )
            })
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(format!(
                    "tasks {} and {} overlap on {:?}",
                    w[0].2, w[1].2, lane
                ));
            }
        }
    }
    let end = schedule
        .placements
        .iter()
        .map(|p| p.end)
        .fold(0.0, f64::max);
    if end != schedule.makespan {
        return Err(format!(
            "makespan {} but last end {}",
            schedule.makespan, end
        ));
    }
    Ok(())
}

/// Uncontended work each compute task actually received, given the comm lane
/// busy intervals.
pub fn delivered_work(graph: &TaskGraph, schedule: &Schedule, contention_factor: f64) -> Vec<f64> {
    let comm: Vec<(f64, f64)> = graph
        .tasks
        .iter()
        .filter(|t| t.lane == Lane::Comm)
        .map(|t| {
            (
                schedule.placements[t.id].start,
                schedule.placements[t.id].end,
            )
        })
        .collect();
    graph
        .tasks
        .iter()
        .map(|t| {
            let p = schedule.placements[t.id];
            let span = p.end - p.start;
            if t.lane == Lane::Comm {
                return span;
            }
            let contended: f64 = comm
                .iter()
                .map(|&(s, e)| (e.min(p.end) - s.max(p.start)).max(0.0))
                .sum();
            (span - contended) + contended / (1.0 + contention_factor)
        })
        .collect()
}
