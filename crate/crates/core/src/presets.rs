//! Bundled model stand-ins and calibrated hardware profiles.
//!
//! Absolute throughputs and bandwidths are effective values chosen so the
//! serial compute/communication shares land where the measured platforms do;
//! they are not datasheet numbers. `launch_overhead` is the effective fixed
//! cost of one GEMM kernel, including launch latency and the tail
//! inefficiency of a smaller problem, which is what makes very short prompts
//! lose from splitting.

use crate::cost::{HardwareProfile, ModelSpec};

/// ~30B dense MHA stand-in.
pub fn model_30b() -> ModelSpec {
    ModelSpec {
        num_layers: 48,
        hidden_size: 7168,
        num_heads: 56,
        num_kv_heads: 56,
        ffn_size: 28672,
        weight_bytes: 1,
        activation_bytes: 2,
    }
}

/// ~70B dense GQA stand-in.
pub fn model_70b() -> ModelSpec {
    ModelSpec {
        num_layers: 80,
        hidden_size: 8192,
        num_heads: 64,
        num_kv_heads: 8,
        ffn_size: 28672,
        weight_bytes: 1,
        activation_bytes: 2,
    }
}

pub const MODEL_NAMES: [&str; 2] = ["30b", "70b"];

pub fn model(name: &str) -> Option<ModelSpec> {
    match name {
        "30b" => Some(model_30b()),
        "70b" => Some(model_70b()),
        _ => None,
    }
}

/// Consumer cards over PCIe: int8 on the wire, no measurable SM contention.
pub fn rtx4090_tp4() -> HardwareProfile {
    HardwareProfile {
        name: "4090-like-tp4".into(),
        compute_throughput: 165e12,
        comm_bandwidth: 7.0e9,
        comm_base_latency: 30e-6,
        contention_factor: 0.0,
        launch_overhead: 20e-6,
        comm_element_bytes: 1,
    }
}

/// Eight cards spread over more PCIe switches; per-device ring bandwidth is
/// set so the 8k regime shares match the four-card profile.
pub fn rtx4090_tp8() -> HardwareProfile {
    HardwareProfile {
        name: "4090-like-tp8".into(),
        comm_bandwidth: 16.0e9,
        ..rtx4090_tp4()
    }
}

/// NVLink datacenter cards: float16 on the wire, collectives steal SMs.
pub fn a800_tp4() -> HardwareProfile {
    HardwareProfile {
        name: "A800-like-tp4".into(),
        compute_throughput: 400e12,
        comm_bandwidth: 165e9,
        comm_base_latency: 25e-6,
        contention_factor: 0.18,
        launch_overhead: 50e-6,
        comm_element_bytes: 2,
    }
}

/// Eight-way shards leave narrower GEMMs per device, so the effective
/// throughput is lower than at four ways.
pub fn a800_tp8() -> HardwareProfile {
    HardwareProfile {
        name: "A800-like-tp8".into(),
        compute_throughput: 260e12,
        ..a800_tp4()
    }
}

pub const PROFILE_NAMES: [&str; 4] = [
    "4090-like-tp4",
    "4090-like-tp8",
    "A800-like-tp4",
    "A800-like-tp8",
];

pub fn profile(name: &str) -> Option<HardwareProfile> {
    match name {
        "4090-like-tp4" => Some(rtx4090_tp4()),
        "4090-like-tp8" => Some(rtx4090_tp8()),
        "A800-like-tp4" => Some(a800_tp4()),
        "A800-like-tp8" => Some(a800_tp8()),
        _ => None,
    }
}
