//! Experiment sweeps over platforms, models, prompt lengths and strategies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::cost::{regime_report, CostError, HardwareProfile, ModelSpec, Regime, Workload};
use crate::graph::{build_graph, GraphError, Strategy};
use crate::presets;
use crate::schedule::{run_schedule, serial_baseline, ScheduleError, Trace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("profile section `{key}` names itself `{name}`")]
    ProfileNameMismatch { key: String, name: String },
    #[error("bad scenario key `{0}` (expected PROFILE/MODEL/TP/PROMPT_LEN[/STRATEGY])")]
    BadScenarioKey(String),
    #[error("no results to tabulate")]
    NoResults,
    #[error("failed to parse config: {0}")]
    Config(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// A hardware profile paired with the TP degree it runs at.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    pub profile: String,
    pub tp: u64,
    /// Prompt lengths above this are skipped for the platform.
    #[serde(default)]
    pub max_prompt_len: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub platforms: Vec<Platform>,
    pub models: Vec<String>,
    pub prompt_lens: Vec<u64>,
    pub strategies: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let platform = |profile: &str, tp, max| Platform {
            profile: profile.into(),
            tp,
            max_prompt_len: max,
        };
        Self {
            platforms: vec![
                platform("4090-like-tp4", 4, Some(32 * 1024)),
                platform("4090-like-tp8", 8, Some(64 * 1024)),
                platform("A800-like-tp4", 4, None),
                platform("A800-like-tp8", 8, None),
            ],
            models: presets::MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
            prompt_lens: DEFAULT_PROMPT_LENS.to_vec(),
            strategies: vec!["iso:0.5".into(), "gemm:4".into(), "request".into()],
        }
    }
}

pub const DEFAULT_PROMPT_LENS: [u64; 8] = [1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072];

/// Sweep configuration: the sweep lists plus optional user-defined profiles
/// and models, which shadow bundled ones of the same name.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sweep: SweepSection,
    pub profiles: BTreeMap<String, HardwareProfile>,
    pub models: BTreeMap<String, ModelSpec>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut config: SweepConfig = toml::from_str(text)?;
        for (key, profile) in config.profiles.iter_mut() {
            if profile.name.is_empty() {
                profile.name = key.clone();
            } else if &profile.name != key {
                return Err(HarnessError::ProfileNameMismatch {
                    key: key.clone(),
                    name: profile.name.clone(),
                });
            }
            profile.validate()?;
        }
        for model in config.models.values() {
            model.validate()?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn profile(&self, name: &str) -> Result<HardwareProfile, HarnessError> {
        self.profiles
            .get(name)
            .cloned()
            .or_else(|| presets::profile(name))
            .ok_or_else(|| HarnessError::UnknownProfile(name.to_string()))
    }

    pub fn model(&self, name: &str) -> Result<ModelSpec, HarnessError> {
        self.models
            .get(name)
            .copied()
            .or_else(|| presets::model(name))
            .ok_or_else(|| HarnessError::UnknownModel(name.to_string()))
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>, HarnessError> {
        Ok(self
            .sweep
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, GraphError>>()?)
    }

    /// Every scenario of the sweep in output order.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, HarnessError> {
        let strategies = self.strategies()?;
        let mut lens = self.sweep.prompt_lens.clone();
        lens.sort_unstable();
        lens.dedup();
        let mut out = Vec::new();
        for platform in &self.sweep.platforms {
            self.profile(&platform.profile)?;
            for model in &self.sweep.models {
                self.model(model)?;
                for &len in lens
                    .iter()
                    .filter(|&&l| platform.max_prompt_len.is_none_or(|m| l <= m))
                {
                    for &strategy in &strategies {
                        out.push(Scenario {
                            profile: platform.profile.clone(),
                            model: model.clone(),
                            tp: platform.tp,
                            prompt_len: len,
                            strategy,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub profile: String,
    pub model: String,
    pub tp: u64,
    pub prompt_len: u64,
    pub strategy: Strategy,
}

impl Scenario {
    /// `PROFILE/MODEL/TP/PROMPT_LEN/STRATEGY`
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.profile, self.model, self.tp, self.prompt_len, self.strategy
        )
    }

    /// Parses a scenario key; a missing strategy defaults to `iso:0.5`.
    pub fn parse_key(key: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::BadScenarioKey(key.to_string());
        let parts: Vec<&str> = key.splitn(5, '/').collect();
        if parts.len() < 4 {
            return Err(bad());
        }
        Ok(Scenario {
            profile: parts[0].to_string(),
            model: parts[1].to_string(),
            tp: parts[2].parse().map_err(|_| bad())?,
            prompt_len: parts[3].parse().map_err(|_| bad())?,
            strategy: match parts.get(4) {
                Some(s) => s.parse()?,
                None => Strategy::IsoTwoChunk { split_ratio: 0.5 },
            },
        })
    }

    pub fn workload(&self) -> Workload {
        Workload::new(self.prompt_len, self.tp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub serial_makespan: f64,
    pub strategy_makespan: f64,
    pub speedup: f64,
    pub regime: Regime,
}

pub fn evaluate_scenario(
    config: &SweepConfig,
    scenario: &Scenario,
) -> Result<ExperimentResult, HarnessError> {
    let profile = config.profile(&scenario.profile)?;
    let model = config.model(&scenario.model)?;
    let workload = scenario.workload();
    let serial = serial_baseline(&scenario.strategy, &model, &workload, &profile)?;
    let graph = build_graph(scenario.strategy, &model, &workload, &profile)?;
    let makespan = run_schedule(&graph, &profile)?.makespan;
    Ok(ExperimentResult {
        scenario: scenario.clone(),
        serial_makespan: serial,
        strategy_makespan: makespan,
        speedup: 1.0 - makespan / serial,
        regime: regime_report(&model, &workload, &profile)?.regime,
    })
}

/// Evaluates every scenario (in parallel), returned in scenario order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<ExperimentResult>, HarnessError> {
    config
        .scenarios()?
        .par_iter()
        .map(|s| evaluate_scenario(config, s))
        .collect()
}

fn length_label(len: u64) -> String {
    if len >= 1024 && len.is_multiple_of(1024) {
        format!("{}k", len / 1024)
    } else {
        len.to_string()
    }
}

/// Table row label: profile, tp, model.
type Row = (String, u64, String);

/// Percentage tables, one per strategy: rows are (profile, tp, model),
/// columns are prompt lengths, cells are whole-percent speedups.
pub fn emit_table(results: &[ExperimentResult]) -> Result<String, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoResults);
    }
    let mut strategies: Vec<String> = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut lens: Vec<u64> = Vec::new();
    let mut cells: BTreeMap<(String, Row, u64), f64> = BTreeMap::new();
    for r in results {
        let s = &r.scenario;
        let strategy = s.strategy.to_string();
        let row = (s.profile.clone(), s.tp, s.model.clone());
        if !strategies.contains(&strategy) {
            strategies.push(strategy.clone());
        }
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        if !lens.contains(&s.prompt_len) {
            lens.push(s.prompt_len);
        }
        cells.insert((strategy, row, s.prompt_len), r.speedup);
    }
    lens.sort_unstable();

    let label_width = rows
        .iter()
        .map(|(p, tp, m)| format!("{p} tp{tp} {m}").len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = String::new();
    for (i, strategy) in strategies.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(
            out,
            "prefill duration decrease vs serial, strategy {strategy}"
        )
        .unwrap();
        write!(out, "{:label_width$}", "").unwrap();
        for &len in &lens {
            write!(out, " {:>6}", length_label(len)).unwrap();
        }
        out.push('\n');
        for row in &rows {
            write!(
                out,
                "{:label_width$}",
                format!("{} tp{} {}", row.0, row.1, row.2)
            )
            .unwrap();
            for &len in &lens {
                let cell = match cells.get(&(strategy.clone(), row.clone(), len)) {
                    Some(v) => format!("{}%", (v * 100.0).round() as i64),
                    None => "-".to_string(),
                };
                write!(out, " {cell:>6}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub const RESULTS_HEADER: [&str; 9] = [
    "profile",
    "model",
    "tp",
    "prompt_len",
    "strategy",
    "serial_s",
    "strategy_s",
    "speedup",
    "regime",
];

/// Full-precision delimited results with the fixed header row.
pub fn write_results_csv(results: &[ExperimentResult], path: &Path) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in results {
        let s = &r.scenario;
        w.write_record([
            s.profile.clone(),
            s.model.clone(),
            s.tp.to_string(),
            s.prompt_len.to_string(),
            s.strategy.to_string(),
            r.serial_makespan.to_string(),
            r.strategy_makespan.to_string(),
            r.speedup.to_string(),
            r.regime.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Schedules one scenario and writes its Gantt trace to `path`.
pub fn emit_trace(
    config: &SweepConfig,
    scenario: &Scenario,
    path: &Path,
) -> Result<Trace, HarnessError> {
    let profile = config.profile(&scenario.profile)?;
    let model = config.model(&scenario.model)?;
    let graph = build_graph(scenario.strategy, &model, &scenario.workload(), &profile)?;
    let schedule = run_schedule(&graph, &profile)?;
    let trace = Trace::from_schedule(&graph, &schedule);
    trace.write(path)?;
    Ok(trace)
}
