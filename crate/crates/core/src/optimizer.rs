//! Exhaustive grid search over intra-sequence split ratios.
//!
//! Candidates are evaluated in parallel; the winner is chosen by a total
//! order on `(makespan, tie-break key)`, so the result does not depend on
//! evaluation order.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{HardwareProfile, ModelSpec, Workload};
use crate::graph::{build_graph, GraphError, Strategy};
use crate::schedule::{run_schedule, ScheduleError};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("four-part grid would have {0} candidates (limit {MAX_FOUR_PART_CANDIDATES})")]
    TooManyCandidates(u64),
    #[error("prompt of {0} tokens cannot form {1} nonempty chunks")]
    TooFewTokens(u64, usize),
    #[error("no grid point yields nonempty chunks")]
    NoFeasibleSplit,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

pub const MAX_FOUR_PART_CANDIDATES: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSearchConfig {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_step: f64,
}

impl Default for SplitSearchConfig {
    fn default() -> Self {
        Self {
            ratio_min: 0.30,
            ratio_max: 0.70,
            ratio_step: 0.01,
        }
    }
}

impl SplitSearchConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ok = 0.0 < self.ratio_min
            && self.ratio_min < self.ratio_max
            && self.ratio_max < 1.0
            && self.ratio_step > 0.0
            && self.ratio_step.is_finite();
        if ok {
            Ok(())
        } else {
            Err(OptimizeError::InvalidConfig(format!("{self:?}")))
        }
    }

    /// Grid points `ratio_min + i * ratio_step` up to `ratio_max`, snapped to
    /// 1e-12 so decimal steps print cleanly.
    pub fn grid(&self) -> Vec<f64> {
        let count =
            ((self.ratio_max - self.ratio_min) / self.ratio_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| snap(self.ratio_min + i as f64 * self.ratio_step))
            .collect()
    }
}

fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoChunkResult {
    pub ratio: f64,
    pub makespan: f64,
    /// Every feasible grid point with its makespan, in grid order.
    pub evaluated: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourPartResult {
    pub ratios: [f64; 4],
    pub makespan: f64,
    pub evaluated: usize,
}

/// Makespan of one strategy, or `None` if its split leaves a chunk empty.
fn evaluate(
    strategy: Strategy,
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
) -> Result<Option<f64>, OptimizeError> {
    match build_graph(strategy, model, workload, profile) {
        Ok(graph) => Ok(Some(run_schedule(&graph, profile)?.makespan)),
        Err(GraphError::EmptyChunk { .. }) => Ok(None),
        Err(e) => Err(ScheduleError::from(e).into()),
    }
}

/// Best first-chunk token fraction for a two-chunk split. Ties go to the
/// ratio closest to 0.5, then to the smaller ratio.
pub fn optimize_two_chunk_ratio(
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
    config: &SplitSearchConfig,
) -> Result<TwoChunkResult, OptimizeError> {
    config.validate()?;
    if workload.prompt_len < 2 {
        return Err(OptimizeError::TooFewTokens(workload.prompt_len, 2));
    }
    let results: Vec<Option<(f64, f64)>> = config
        .grid()
        .into_par_iter()
        .map(|ratio| {
            let strategy = Strategy::IsoTwoChunk { split_ratio: ratio };
            Ok(evaluate(strategy, model, workload, profile)?.map(|m| (ratio, m)))
        })
        .collect::<Result<_, OptimizeError>>()?;
    let evaluated: Vec<(f64, f64)> = results.into_iter().flatten().collect();

    let key = |r: f64| (((r - 0.5).abs() * 1e9).round() as i64, r);
    let &(ratio, makespan) = evaluated
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| key(a.0).0.cmp(&key(b.0).0))
                .then_with(|| a.0.total_cmp(&b.0))
        })
        .ok_or(OptimizeError::NoFeasibleSplit)?;
    Ok(TwoChunkResult {
        ratio,
        makespan,
        evaluated,
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Best four-way token split on the simplex grid of the given step, each part
/// at least one step. Ties go to the split closest to uniform (L1 distance),
/// then lexicographically smallest.
pub fn optimize_four_part(
    model: &ModelSpec,
    workload: &Workload,
    profile: &HardwareProfile,
    step: f64,
) -> Result<FourPartResult, OptimizeError> {
    if workload.prompt_len < 4 {
        return Err(OptimizeError::TooFewTokens(workload.prompt_len, 4));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(OptimizeError::InvalidConfig(format!("step {step}")));
    }
    let units = (1.0 / step).round();
    if (units * step - 1.0).abs() > 1e-9 || units < 4.0 {
        return Err(OptimizeError::InvalidConfig(format!(
            "step {step} does not divide 1 into at least four parts"
        )));
    }
    if units > 1e7 {
        return Err(OptimizeError::TooManyCandidates(u64::MAX));
    }
    let n = units as u64;
    let count = binomial(n - 1, 3);
    if count > MAX_FOUR_PART_CANDIDATES {
        return Err(OptimizeError::TooManyCandidates(count));
    }

    let mut grid: Vec<[u64; 4]> = Vec::with_capacity(count as usize);
    for a in 1..n {
        for b in 1..n - a {
            for c in 1..n - a - b {
                grid.push([a, b, c, n - a - b - c]);
            }
        }
    }
    let evaluated: Vec<([u64; 4], f64)> = grid
        .into_par_iter()
        .map(|parts| {
            let ratios = parts.map(|p| p as f64 / n as f64);
            let strategy = Strategy::IsoFourPart { ratios };
            Ok(evaluate(strategy, model, workload, profile)?.map(|m| (parts, m)))
        })
        .collect::<Result<Vec<_>, OptimizeError>>()?
        .into_iter()
        .flatten()
        .collect();

    let spread = |p: &[u64; 4]| p.iter().map(|&x| (4 * x).abs_diff(n)).sum::<u64>();
    let order = |a: &([u64; 4], f64), b: &([u64; 4], f64)| -> Ordering {
        a.1.total_cmp(&b.1)
            .then_with(|| spread(&a.0).cmp(&spread(&b.0)))
            .then_with(|| a.0.cmp(&b.0))
    };
    let (parts, makespan) = evaluated
        .iter()
        .min_by(|a, b| order(a, b))
        .copied()
        .ok_or(OptimizeError::NoFeasibleSplit)?;
    Ok(FourPartResult {
        ratios: parts.map(|p| p as f64 / n as f64),
        makespan,
        evaluated: evaluated.len(),
    })
}
