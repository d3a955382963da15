//! Analytic cost model for one tensor-parallel transformer layer.
//!
//! Compute stages are costed with dense-GEMM FLOP counts and an exact causal
//! prefix-sum for attention, so splitting a token range into chunks never
//! changes the total work. Collectives use the ring all-reduce volume
//! `2 (p - 1) / p * payload` per device.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid model spec: {0}")]
    InvalidModel(String),
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("{0} is a communication stage, expected a compute stage")]
    NotComputeStage(StageKind),
    #[error("{0} is a compute stage, expected an all-reduce stage")]
    NotCommStage(StageKind),
    #[error("FLOP count overflows u64")]
    Overflow,
    #[error("failed to parse {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: toml::de::Error,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Transformer architecture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub num_layers: u64,
    pub hidden_size: u64,
    pub num_heads: u64,
    /// Equal to `num_heads` for MHA, smaller for GQA.
    pub num_kv_heads: u64,
    pub ffn_size: u64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), CostError> {
        let err = |msg: String| Err(CostError::InvalidModel(msg));
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("ffn_size", self.ffn_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !self.num_heads.is_multiple_of(self.num_kv_heads) {
            return err(format!(
                "num_heads ({}) not divisible by num_kv_heads ({})",
                self.num_heads, self.num_kv_heads
            ));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return err(format!(
                "hidden_size ({}) not divisible by num_heads ({})",
                self.hidden_size, self.num_heads
            ));
        }
        for (name, v) in [
            ("weight_bytes", self.weight_bytes),
            ("activation_bytes", self.activation_bytes),
        ] {
            if !matches!(v, 1 | 2 | 4) {
                return err(format!("{name} must be 1, 2 or 4 (got {v})"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CostError> {
        let spec: Self = toml::from_str(text).map_err(|source| CostError::Parse {
            what: "model spec",
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        Self::from_toml_str(&read_file(path.as_ref())?)
    }

    /// Width of the K and V projections combined relative to `hidden_size`.
    fn kv_width(&self) -> u64 {
        2 * self.hidden_size * self.num_kv_heads / self.num_heads
    }
}

/// Effective (not peak) device and interconnect characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    /// FLOP/s per device.
    pub compute_throughput: f64,
    /// Bytes/s per device on the collective wire.
    pub comm_bandwidth: f64,
    /// Seconds per collective launch.
    pub comm_base_latency: f64,
    /// Fractional compute slowdown while a collective is in flight.
    pub contention_factor: f64,
    /// Fixed seconds per compute kernel.
    pub launch_overhead: f64,
    /// 2 for float16 on the wire, 1 for int8.
    pub comm_element_bytes: u64,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        let err = |msg: String| Err(CostError::InvalidProfile(format!("{}: {msg}", self.name)));
        if !(self.compute_throughput.is_finite() && self.compute_throughput > 0.0) {
            return err("compute_throughput must be positive and finite".into());
        }
        if !(self.comm_bandwidth.is_finite() && self.comm_bandwidth > 0.0) {
            return err("comm_bandwidth must be positive and finite".into());
        }
        for (name, v) in [
            ("comm_base_latency", self.comm_base_latency),
            ("contention_factor", self.contention_factor),
            ("launch_overhead", self.launch_overhead),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0"));
            }
        }
        if !matches!(self.comm_element_bytes, 1 | 2 | 4) {
            return err(format!(
                "comm_element_bytes must be 1, 2 or 4 (got {})",
                self.comm_element_bytes
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CostError> {
        let profile: Self = toml::from_str(text).map_err(|source| CostError::Parse {
            what: "hardware profile",
            source,
        })?;
        if profile.name.is_empty() {
            return Err(CostError::InvalidProfile("missing name".into()));
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        Self::from_toml_str(&read_file(path.as_ref())?)
    }
}

fn read_file(path: &Path) -> Result<String, CostError> {
    std::fs::read_to_string(path).map_err(|source| CostError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Workload {
    pub prompt_len: u64,
    pub tp_degree: u64,
    /// Tokens already resident in the KV cache before this request.
    pub prefix_len: u64,
}

impl Workload {
    pub fn new(prompt_len: u64, tp_degree: u64) -> Self {
        Self {
            prompt_len,
            tp_degree,
            prefix_len: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if self.tp_degree == 0 {
            return Err(CostError::InvalidWorkload("tp_degree must be >= 1".into()));
        }
        Ok(())
    }
}

/// The seven per-layer stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageKind {
    QkvProj,
    AttnCore,
    OProj,
    AttnAllReduce,
    UpGateProj,
    DownProj,
    MlpAllReduce,
}

impl StageKind {
    pub const ALL: [StageKind; 7] = [
        StageKind::QkvProj,
        StageKind::AttnCore,
        StageKind::OProj,
        StageKind::AttnAllReduce,
        StageKind::UpGateProj,
        StageKind::DownProj,
        StageKind::MlpAllReduce,
    ];

    /// Position within the layer, 0..7.
    pub fn order(self) -> usize {
        self as usize
    }

    pub fn is_all_reduce(self) -> bool {
        matches!(self, StageKind::AttnAllReduce | StageKind::MlpAllReduce)
    }

    /// The stage that must finish before this one within a layer, if any.
    pub fn predecessor(self) -> Option<StageKind> {
        self.order().checked_sub(1).map(|i| Self::ALL[i])
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::QkvProj => "QkvProj",
            StageKind::AttnCore => "AttnCore",
            StageKind::OProj => "OProj",
            StageKind::AttnAllReduce => "AttnAllReduce",
            StageKind::UpGateProj => "UpGateProj",
            StageKind::DownProj => "DownProj",
            StageKind::MlpAllReduce => "MlpAllReduce",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Triangular number `n (n + 1) / 2`.
fn triangular(n: u64) -> u128 {
    let n = n as u128;
    n * (n + 1) / 2
}

/// FLOPs of one compute stage over tokens `[chunk_start, chunk_start + chunk_len)`
/// of a single layer, before division across TP ranks.
pub fn stage_flops(
    stage: StageKind,
    model: &ModelSpec,
    chunk_start: u64,
    chunk_len: u64,
) -> Result<u64, CostError> {
    let h = model.hidden_size as u128;
    let n = chunk_len as u128;
    let flops: u128 = match stage {
        StageKind::QkvProj => 2 * n * h * (h + model.kv_width() as u128),
        StageKind::OProj => 2 * n * h * h,
        StageKind::UpGateProj => 2 * n * h * (2 * model.ffn_size as u128),
        StageKind::DownProj => 2 * n * model.ffn_size as u128 * h,
        // Token i attends to i + 1 positions: QK^T and PV each cost 2 h (i + 1).
        StageKind::AttnCore => {
            let end = chunk_start
                .checked_add(chunk_len)
                .ok_or(CostError::Overflow)?;
            4 * h * (triangular(end) - triangular(chunk_start))
        }
        StageKind::AttnAllReduce | StageKind::MlpAllReduce => {
            return Err(CostError::NotComputeStage(stage))
        }
    };
    u64::try_from(flops).map_err(|_| CostError::Overflow)
}

/// Bytes reduced by one all-reduce over `chunk_len` tokens (the activation
/// tensor as it appears on the wire).
pub fn allreduce_payload_bytes(
    model: &ModelSpec,
    chunk_len: u64,
    profile: &HardwareProfile,
) -> u64 {
    chunk_len * model.hidden_size * profile.comm_element_bytes
}

/// Per-device ring all-reduce wire volume for one collective stage.
pub fn stage_comm_bytes(
    stage: StageKind,
    model: &ModelSpec,
    chunk_len: u64,
    tp_degree: u64,
    profile: &HardwareProfile,
) -> Result<f64, CostError> {
    if !stage.is_all_reduce() {
        return Err(CostError::NotCommStage(stage));
    }
    if tp_degree <= 1 {
        return Ok(0.0);
    }
    let payload = allreduce_payload_bytes(model, chunk_len, profile) as f64;
    Ok(payload * (2 * (tp_degree - 1)) as f64 / tp_degree as f64)
}

/// Uncontended duration of one stage on one chunk, in seconds.
pub fn stage_duration(
    stage: StageKind,
    model: &ModelSpec,
    workload: &Workload,
    chunk_start: u64,
    chunk_len: u64,
    profile: &HardwareProfile,
) -> Result<f64, CostError> {
    let tp = workload.tp_degree.max(1);
    if stage.is_all_reduce() {
        if tp == 1 {
            return Ok(0.0);
        }
        let bytes = stage_comm_bytes(stage, model, chunk_len, tp, profile)?;
        Ok(profile.comm_base_latency + bytes / profile.comm_bandwidth)
    } else {
        let flops = stage_flops(stage, model, chunk_start, chunk_len)? as f64;
        Ok(flops / tp as f64 / profile.compute_throughput + profile.launch_overhead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    CommDominant,
    ComputeDominant,
    Balanced,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::CommDominant => "CommDominant",
            Regime::ComputeDominant => "ComputeDominant",
            Regime::Balanced => "Balanced",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relative tolerance under which compute and comm time count as equal.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    /// Per-layer compute seconds (all five compute stages, whole prompt).
    pub compute_seconds: f64,
    /// Per-layer all-reduce seconds (both collectives, whole prompt).
    pub comm_seconds: f64,
    /// `comm_seconds / compute_seconds`.
    pub ratio: f64,
    pub regime: Regime,
}

impl RegimeReport {
    pub fn comm_share(&self) -> f64 {
        self.comm_seconds / (self.comm_seconds + self.compute_seconds)
    }

    pub fn compute_share(&self) -> f64 {
        self.compute_seconds / (self.comm_seconds + self.compute_seconds)
    }
}

/// Classifies a serial layer by whether compute or communication dominates.
pub fn regime_report(
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
) -> Result<RegimeReport, CostError> {
    let mut compute = 0.0;
    let mut comm = 0.0;
    for stage in StageKind::ALL {
        let d = stage_duration(
            stage,
            model,
            workload,
            workload.prefix_len,
            workload.prompt_len,
            profile,
        )?;
        if stage.is_all_reduce() {
            comm += d;
        } else {
            compute += d;
        }
    }
    let regime = if (comm - compute).abs() <= BALANCE_TOLERANCE * comm.max(compute) {
        Regime::Balanced
    } else if comm > compute {
        Regime::CommDominant
    } else {
        Regime::ComputeDominant
    };
    Ok(RegimeReport {
        compute_seconds: compute,
        comm_seconds: comm,
        ratio: comm / compute,
        regime,
    })
}
