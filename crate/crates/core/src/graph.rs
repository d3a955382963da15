//! Task graphs for one prefill pass under each overlap strategy.
//!
//! Every strategy emits the same seven stages per (micro-batch, layer); they
//! differ in how tokens are partitioned into micro-batches, whether the
//! o_proj/down GEMMs and their collectives are cut into blocks, and whether
//! attention is ordered across micro-batches (the intra-sequence variants,
//! where chunk `k` reads the KV cache written by chunk `k - 1`).

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    allreduce_payload_bytes, stage_duration, stage_flops, CostError, HardwareProfile, ModelSpec,
    StageKind, Workload,
};

pub type TaskId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("split of {tokens} tokens produces an empty micro-batch ({detail})")]
    EmptyChunk { tokens: u64, detail: String },
    #[error("graph has no provenance metadata")]
    NoMetadata,
}

/// How one prefill pass is decomposed for overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Original pipeline: compute and collectives strictly alternate.
    Serial,
    /// o_proj and down GEMMs, and the all-reduce after each, cut into
    /// `num_blocks` token blocks so block `i`'s collective overlaps block
    /// `i + 1`'s GEMM.
    GemmOverlap { num_blocks: usize },
    /// Two independent requests interleaved as micro-batches. `None` means a
    /// twin request of the same length as the first.
    RequestOverlap { second_prompt_len: Option<u64> },
    /// One request split into two chunks; `split_ratio` is the token fraction
    /// of the first chunk.
    IsoTwoChunk { split_ratio: f64 },
    /// One request split into four chunks with the given token fractions.
    IsoFourPart { ratios: [f64; 4] },
}

impl Strategy {
    pub fn validate(&self) -> Result<(), GraphError> {
        let err = |msg: String| Err(GraphError::InvalidStrategy(msg));
        match *self {
            Strategy::Serial => Ok(()),
            Strategy::GemmOverlap { num_blocks } if num_blocks < 2 => {
                err(format!("num_blocks must be >= 2 (got {num_blocks})"))
            }
            Strategy::GemmOverlap { .. } => Ok(()),
            Strategy::RequestOverlap {
                second_prompt_len: Some(0),
            } => err("second_prompt_len must be >= 1".into()),
            Strategy::RequestOverlap { .. } => Ok(()),
            Strategy::IsoTwoChunk { split_ratio } => {
                if split_ratio > 0.0 && split_ratio < 1.0 {
                    Ok(())
                } else {
                    err(format!(
                        "split_ratio must lie in (0, 1) (got {split_ratio})"
                    ))
                }
            }
            Strategy::IsoFourPart { ratios } => {
                if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return err(format!(
                        "four-part ratios must be positive (got {ratios:?})"
                    ));
                }
                let sum: f64 = ratios.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return err(format!("four-part ratios must sum to 1 (got {sum})"));
                }
                Ok(())
            }
        }
    }

    pub fn is_intra_sequence(&self) -> bool {
        matches!(
            self,
            Strategy::IsoTwoChunk { .. } | Strategy::IsoFourPart { .. }
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Serial => f.write_str("serial"),
            Strategy::GemmOverlap { num_blocks } => write!(f, "gemm:{num_blocks}"),
            Strategy::RequestOverlap {
                second_prompt_len: None,
            } => f.write_str("request"),
            Strategy::RequestOverlap {
                second_prompt_len: Some(n),
            } => write!(f, "request:{n}"),
            Strategy::IsoTwoChunk { split_ratio } => write!(f, "iso:{split_ratio}"),
            Strategy::IsoFourPart {
                ratios: [a, b, c, d],
            } => write!(f, "iso4:{a},{b},{c},{d}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = GraphError;

    /// Parses `serial`, `gemm:N`, `request[:LEN]`, `iso:R` or `iso4:A,B,C,D`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| GraphError::InvalidStrategy(format!("`{s}`: {why}"));
        let (kind, arg) = match s.trim().split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s.trim(), None),
        };
        let strategy = match (kind, arg) {
            ("serial", None) => Strategy::Serial,
            ("gemm", Some(a)) => Strategy::GemmOverlap {
                num_blocks: a.parse().map_err(|_| bad("block count"))?,
            },
            ("gemm", None) => Strategy::GemmOverlap { num_blocks: 4 },
            ("request", None) => Strategy::RequestOverlap {
                second_prompt_len: None,
            },
            ("request", Some(a)) => Strategy::RequestOverlap {
                second_prompt_len: Some(a.parse().map_err(|_| bad("prompt length"))?),
            },
            ("iso", None) => Strategy::IsoTwoChunk { split_ratio: 0.5 },
            ("iso", Some(a)) => Strategy::IsoTwoChunk {
                split_ratio: a.parse().map_err(|_| bad("split ratio"))?,
            },
            ("iso4", a) => {
                let ratios = match a {
                    None => [0.25; 4],
                    Some(a) => {
                        let parts = a
                            .split(',')
                            .map(|p| p.trim().parse::<f64>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|_| bad("ratios"))?;
                        <[f64; 4]>::try_from(parts).map_err(|_| bad("expected four ratios"))?
                    }
                };
                Strategy::IsoFourPart { ratios }
            }
            _ => return Err(bad("unknown strategy")),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Lane {
    #[serde(rename = "ComputeLane")]
    Compute,
    #[serde(rename = "CommLane")]
    Comm,
}

impl Lane {
    pub fn for_stage(stage: StageKind) -> Lane {
        if stage.is_all_reduce() {
            Lane::Comm
        } else {
            Lane::Compute
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Compute => "ComputeLane",
            Lane::Comm => "CommLane",
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub micro_batch: usize,
    pub layer: usize,
    pub stage: StageKind,
    /// GEMM segment index; 0 when the stage is not segmented.
    pub block: usize,
    /// Uncontended seconds.
    pub duration: f64,
    pub lane: Lane,
    pub deps: Vec<TaskId>,
    /// First absolute token position covered (includes any KV prefix).
    pub token_start: u64,
    pub token_len: u64,
}

impl Task {
    /// Greedy dispatch priority: lower sorts first.
    pub fn priority_key(&self) -> (usize, usize, usize, usize, TaskId) {
        (
            self.micro_batch,
            self.layer,
            self.stage.order(),
            self.block,
            self.id,
        )
    }
}

/// Inputs a builder graph was produced from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMeta {
    pub strategy: Strategy,
    pub model: ModelSpec,
    pub workload: Workload,
    pub profile: HardwareProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    /// `None` for hand-assembled graphs; those skip the stage-structure checks.
    pub meta: Option<GraphMeta>,
}

impl TaskGraph {
    pub fn from_tasks(tasks: Vec<Task>) -> Self {
        Self { tasks, meta: None }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn num_micro_batches(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| t.micro_batch + 1)
            .max()
            .unwrap_or(0)
    }

    /// Successor lists; dependencies that point outside the graph are skipped.
    pub fn successors(&self) -> Vec<Vec<TaskId>> {
        let mut succ = vec![Vec::new(); self.tasks.len()];
        for t in &self.tasks {
            for &d in &t.deps {
                if d < succ.len() {
                    succ[d].push(t.id);
                }
            }
        }
        succ
    }

    /// Kahn order, or `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<TaskId>> {
        let (order, _) = kahn(self);
        (order.len() == self.len()).then_some(order)
    }

    /// Total compute FLOPs (before TP division) over all compute tasks.
    pub fn compute_flops(&self) -> Result<u64, GraphError> {
        let meta = self.meta.as_ref().ok_or(GraphError::NoMetadata)?;
        let mut total = 0u64;
        for t in self.tasks.iter().filter(|t| t.lane == Lane::Compute) {
            let f = stage_flops(t.stage, &meta.model, t.token_start, t.token_len)?;
            total = total.checked_add(f).ok_or(CostError::Overflow)?;
        }
        Ok(total)
    }

    /// Total all-reduce payload bytes over all collective tasks.
    pub fn allreduce_payload(&self) -> Result<u64, GraphError> {
        let meta = self.meta.as_ref().ok_or(GraphError::NoMetadata)?;
        Ok(self
            .tasks
            .iter()
            .filter(|t| t.lane == Lane::Comm)
            .map(|t| allreduce_payload_bytes(&meta.model, t.token_len, &meta.profile))
            .sum())
    }

    /// One task per line: `id micro_batch layer stage block duration lane deps`,
    /// deps comma-separated or `-` when empty.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            let deps = if t.deps.is_empty() {
                "-".to_string()
            } else {
                t.deps
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                t.id, t.micro_batch, t.layer, t.stage, t.block, t.duration, t.lane, deps
            )
            .unwrap();
        }
        out
    }
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Splits `len` tokens by cumulative fractions, rounding each boundary
/// half-up. Returns `(offset, len)` pairs relative to the range start.
fn split_tokens(len: u64, ratios: &[f64]) -> Result<Vec<(u64, u64)>, GraphError> {
    let mut bounds = vec![0u64];
    let mut cum = 0.0;
    for r in &ratios[..ratios.len() - 1] {
        cum += r;
        bounds.push(round_half_up(cum * len as f64).min(len));
    }
    bounds.push(len);
    let parts: Vec<(u64, u64)> = bounds
        .windows(2)
        .map(|w| (w[0], w[1].saturating_sub(w[0])))
        .collect();
    if parts.iter().any(|&(_, n)| n == 0) {
        return Err(GraphError::EmptyChunk {
            tokens: len,
            detail: format!(
                "ratios {ratios:?} give chunk lengths {:?}",
                parts.iter().map(|p| p.1).collect::<Vec<_>>()
            ),
        });
    }
    Ok(parts)
}

/// Token ranges of the micro-batches a strategy produces for a workload.
pub fn micro_batch_ranges(
    strategy: &Strategy,
    workload: &Workload,
) -> Result<Vec<(u64, u64)>, GraphError> {
    let s = workload.prompt_len;
    let base = workload.prefix_len;
    let ranges = match *strategy {
        Strategy::Serial | Strategy::GemmOverlap { .. } => split_tokens(s, &[1.0])?,
        Strategy::RequestOverlap { second_prompt_len } => {
            let first = split_tokens(s, &[1.0])?;
            let second = split_tokens(second_prompt_len.unwrap_or(s), &[1.0])?;
            return Ok(vec![
                (base + first[0].0, first[0].1),
                (base + second[0].0, second[0].1),
            ]);
        }
        Strategy::IsoTwoChunk { split_ratio } => {
            split_tokens(s, &[split_ratio, 1.0 - split_ratio])?
        }
        Strategy::IsoFourPart { ratios } => split_tokens(s, &ratios)?,
    };
    Ok(ranges.into_iter().map(|(off, n)| (base + off, n)).collect())
}

fn is_segmented(stage: StageKind) -> bool {
    matches!(
        stage,
        StageKind::OProj | StageKind::AttnAllReduce | StageKind::DownProj | StageKind::MlpAllReduce
    )
}

/// Builds the dependency DAG for every layer of one prefill pass.
pub fn build_graph(
    strategy: Strategy,
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
) -> Result<TaskGraph, GraphError> {
    model.validate()?;
    profile.validate()?;
    workload.validate()?;
    strategy.validate()?;

    let ranges = micro_batch_ranges(&strategy, workload)?;
    let num_blocks = match strategy {
        Strategy::GemmOverlap { num_blocks } => num_blocks,
        _ => 1,
    };
    // Block boundaries inside each micro-batch, shared by all segmented stages.
    let block_ranges: Vec<Vec<(u64, u64)>> = ranges
        .iter()
        .map(|&(start, len)| {
            let parts = split_tokens(len, &vec![1.0 / num_blocks as f64; num_blocks])?;
            Ok(parts.into_iter().map(|(off, n)| (start + off, n)).collect())
        })
        .collect::<Result<_, GraphError>>()?;

    let cross_attention = strategy.is_intra_sequence();
    let mut tasks: Vec<Task> = Vec::new();
    // Tail tasks (MlpAllReduce) of the previous layer, per micro-batch.
    let mut tails: Vec<Vec<TaskId>> = vec![Vec::new(); ranges.len()];
    let mut prev_attn: Option<TaskId>;

    for layer in 0..model.num_layers as usize {
        prev_attn = None;
        for (mb, &(start, len)) in ranges.iter().enumerate() {
            let mut prev = std::mem::take(&mut tails[mb]);
            for stage in StageKind::ALL {
                let segments: Vec<(u64, u64)> = if is_segmented(stage) {
                    block_ranges[mb].clone()
                } else {
                    vec![(start, len)]
                };
                let mut ids = Vec::with_capacity(segments.len());
                for (block, &(seg_start, seg_len)) in segments.iter().enumerate() {
                    let mut deps = if prev.len() == segments.len() {
                        vec![prev[block]]
                    } else {
                        prev.clone()
                    };
                    if stage == StageKind::AttnCore && cross_attention {
                        deps.extend(prev_attn);
                    }
                    let id = tasks.len();
                    tasks.push(Task {
                        id,
                        micro_batch: mb,
                        layer,
                        stage,
                        block,
                        duration: stage_duration(
                            stage, model, workload, seg_start, seg_len, profile,
                        )?,
                        lane: Lane::for_stage(stage),
                        deps,
                        token_start: seg_start,
                        token_len: seg_len,
                    });
                    ids.push(id);
                }
                if stage == StageKind::AttnCore {
                    prev_attn = Some(ids[0]);
                }
                prev = ids;
            }
            tails[mb] = prev;
        }
    }

    Ok(TaskGraph {
        tasks,
        meta: Some(GraphMeta {
            strategy,
            model: *model,
            workload: *workload,
            profile: profile.clone(),
        }),
    })
}

/// A structural problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    IdMismatch {
        index: usize,
        id: TaskId,
    },
    DanglingDependency {
        task: TaskId,
        dep: TaskId,
    },
    Cycle {
        tasks: Vec<TaskId>,
    },
    WrongLane {
        task: TaskId,
        stage: StageKind,
        lane: Lane,
    },
    MissingStageEdge {
        task: TaskId,
        stage: StageKind,
        missing: Vec<TaskId>,
    },
    MissingPredecessorStage {
        task: TaskId,
        stage: StageKind,
    },
    MissingKvOrderEdge {
        task: TaskId,
        layer: usize,
        micro_batch: usize,
        expected: TaskId,
    },
    UnexpectedCrossBatchEdge {
        task: TaskId,
        dep: TaskId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IdMismatch { index, id } => write!(f, "task at index {index} has id {id}"),
            Violation::DanglingDependency { task, dep } => {
                write!(f, "task {task} depends on missing task {dep}")
            }
            Violation::Cycle { tasks } => write!(f, "dependency cycle through tasks {tasks:?}"),
            Violation::WrongLane { task, stage, lane } => {
                write!(f, "task {task} ({stage}) placed on {lane}")
            }
            Violation::MissingStageEdge {
                task,
                stage,
                missing,
            } => {
                write!(
                    f,
                    "task {task} ({stage}) lacks stage-order edges to {missing:?}"
                )
            }
            Violation::MissingPredecessorStage { task, stage } => {
                write!(f, "task {task} ({stage}) has no predecessor-stage tasks")
            }
            Violation::MissingKvOrderEdge {
                task,
                layer,
                micro_batch,
                expected,
            } => write!(
                f,
                "AttnCore task {task} (micro-batch {micro_batch}, layer {layer}) does not wait for \
                 KV write of task {expected}"
            ),
            Violation::UnexpectedCrossBatchEdge { task, dep } => {
                write!(f, "task {task} has a cross-micro-batch edge to task {dep}")
            }
        }
    }
}

/// Checks structure; an empty result means the graph is valid.
pub fn validate_graph(graph: &TaskGraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n = graph.tasks.len();

    for (index, t) in graph.tasks.iter().enumerate() {
        if t.id != index {
            violations.push(Violation::IdMismatch { index, id: t.id });
        }
        for &dep in &t.deps {
            if dep >= n {
                violations.push(Violation::DanglingDependency { task: t.id, dep });
            }
        }
        let lane = Lane::for_stage(t.stage);
        if t.lane != lane {
            violations.push(Violation::WrongLane {
                task: t.id,
                stage: t.stage,
                lane: t.lane,
            });
        }
    }
    if !violations.is_empty() {
        return violations;
    }

    let leftover = unsorted_tasks(graph);
    if !leftover.is_empty() {
        violations.push(Violation::Cycle { tasks: leftover });
    }

    if let Some(meta) = &graph.meta {
        check_stage_structure(graph, meta.strategy.is_intra_sequence(), &mut violations);
    }
    violations
}

/// Returns the sorted prefix and the residual in-degrees.
fn kahn(graph: &TaskGraph) -> (Vec<TaskId>, Vec<usize>) {
    let succ = graph.successors();
    let mut indegree: Vec<usize> = graph.tasks.iter().map(|t| t.deps.len()).collect();
    let mut queue: std::collections::VecDeque<TaskId> =
        (0..graph.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(graph.len());
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &s in &succ[v] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    (order, indegree)
}

/// Tasks left over after Kahn's algorithm, i.e. those on or behind a cycle.
fn unsorted_tasks(graph: &TaskGraph) -> Vec<TaskId> {
    let (order, indegree) = kahn(graph);
    if order.len() == graph.len() {
        return Vec::new();
    }
    (0..graph.len()).filter(|&i| indegree[i] > 0).collect()
}

fn check_stage_structure(graph: &TaskGraph, intra_sequence: bool, out: &mut Vec<Violation>) {
    // (micro_batch, layer, stage) -> task ids ordered by block
    let mut groups: HashMap<(usize, usize, StageKind), BTreeMap<usize, TaskId>> = HashMap::new();
    for t in &graph.tasks {
        groups
            .entry((t.micro_batch, t.layer, t.stage))
            .or_default()
            .insert(t.block, t.id);
    }
    let group = |key: &(usize, usize, StageKind)| -> Vec<TaskId> {
        groups
            .get(key)
            .map(|g| g.values().copied().collect())
            .unwrap_or_default()
    };

    for t in &graph.tasks {
        let pred_key = match (t.stage.predecessor(), t.layer) {
            (Some(p), _) => Some((t.micro_batch, t.layer, p)),
            (None, 0) => None,
            (None, l) => Some((t.micro_batch, l - 1, StageKind::MlpAllReduce)),
        };
        if let Some(key) = pred_key {
            let preds = group(&key);
            let own = group(&(t.micro_batch, t.layer, t.stage)).len();
            if preds.is_empty() {
                out.push(Violation::MissingPredecessorStage {
                    task: t.id,
                    stage: t.stage,
                });
            } else {
                let required: Vec<TaskId> = if preds.len() == own {
                    preds.get(t.block).copied().into_iter().collect()
                } else {
                    preds
                };
                let missing: Vec<TaskId> = required
                    .into_iter()
                    .filter(|r| !t.deps.contains(r))
                    .collect();
                if !missing.is_empty() {
                    out.push(Violation::MissingStageEdge {
                        task: t.id,
                        stage: t.stage,
                        missing,
                    });
                }
            }
        }

        for &dep in &t.deps {
            let d = &graph.tasks[dep];
            if d.micro_batch == t.micro_batch {
                continue;
            }
            let kv_edge = intra_sequence
                && t.stage == StageKind::AttnCore
                && d.stage == StageKind::AttnCore
                && d.layer == t.layer
                && d.micro_batch + 1 == t.micro_batch;
            if !kv_edge {
                out.push(Violation::UnexpectedCrossBatchEdge { task: t.id, dep });
            }
        }

        if intra_sequence && t.stage == StageKind::AttnCore && t.micro_batch > 0 {
            if let Some(&expected) = groups
                .get(&(t.micro_batch - 1, t.layer, StageKind::AttnCore))
                .and_then(|g| g.values().next())
            {
                if !t.deps.contains(&expected) {
                    out.push(Violation::MissingKvOrderEdge {
                        task: t.id,
                        layer: t.layer,
                        micro_batch: t.micro_batch,
                        expected,
                    });
                }
            }
        }
    }
}
