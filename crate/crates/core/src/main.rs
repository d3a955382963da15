use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use isosim::harness::{self, Scenario, SweepConfig};
use isosim::optimizer::{optimize_four_part, optimize_two_chunk_ratio, SplitSearchConfig};
use isosim::schedule::serial_baseline;
use isosim::Strategy;

#[derive(Parser)]
#[command(
    name = "isosim",
    version,
    about = "Tensor-parallel prefill overlap simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write table.txt and results.csv.
    Sweep {
        /// TOML sweep config; bundled defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
        /// Strategies overriding the config, e.g. `iso:0.5 gemm:4 request`.
        #[arg(long, num_args = 0.., value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Schedule one scenario and write its Gantt trace as JSON.
    Trace {
        /// PROFILE/MODEL/TP/PROMPT_LEN[/STRATEGY]
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "trace.json")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Search chunk split ratios for one scenario.
    Optimize {
        /// PROFILE/MODEL/TP/PROMPT_LEN (a trailing strategy is ignored)
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value_t = Mode::TwoChunk)]
        mode: Mode,
        /// Grid step (0.01 for two-chunk, 0.05 for four-part by default).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TwoChunk,
    FourPart,
}

fn load_config(path: Option<&PathBuf>) -> Result<SweepConfig> {
    match path {
        Some(p) => SweepConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SweepConfig::default()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sweep {
            config,
            out,
            strategies,
        } => {
            let mut config = load_config(config.as_ref())?;
            if let Some(s) = strategies {
                config.sweep.strategies = s;
            }
            let results = harness::run_sweep(&config)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            harness::write_results_csv(&results, &out.join("results.csv"))?;
            if results.is_empty() {
                eprintln!("no scenarios selected; wrote an empty results.csv");
                return Ok(());
            }
            let table = harness::emit_table(&results)?;
            let table_path = out.join("table.txt");
            std::fs::write(&table_path, &table)
                .with_context(|| format!("writing {}", table_path.display()))?;
            print!("{table}");
        }
        Command::Trace {
            scenario,
            out,
            config,
        } => {
            let config = load_config(config.as_ref())?;
            let scenario = Scenario::parse_key(&scenario)?;
            let trace = harness::emit_trace(&config, &scenario, &out)?;
            println!(
                "{}: {} records, makespan {:.3} us -> {}",
                scenario.key(),
                trace.records.len(),
                trace.makespan_us,
                out.display()
            );
        }
        Command::Optimize {
            scenario,
            mode,
            step,
            config,
        } => {
            let config = load_config(config.as_ref())?;
            let scenario = Scenario::parse_key(&scenario)?;
            let model = config.model(&scenario.model)?;
            let profile = config.profile(&scenario.profile)?;
            let workload = scenario.workload();
            let serial = serial_baseline(&Strategy::Serial, &model, &workload, &profile)?;
            let (desc, makespan) = match mode {
                Mode::TwoChunk => {
                    let search = SplitSearchConfig {
                        ratio_step: step.unwrap_or(0.01),
                        ..Default::default()
                    };
                    let r = optimize_two_chunk_ratio(&model, &workload, &profile, &search)?;
                    (format!("ratio {}", r.ratio), r.makespan)
                }
                Mode::FourPart => {
                    let r = optimize_four_part(&model, &workload, &profile, step.unwrap_or(0.05))?;
                    (format!("ratios {:?}", r.ratios), r.makespan)
                }
            };
            println!(
                "{desc}  makespan {makespan:.6} s  serial {serial:.6} s  speedup {:.2}%",
                100.0 * (1.0 - makespan / serial)
            );
        }
    }
    Ok(())
}
