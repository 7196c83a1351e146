use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dyngrasp_core::harness::{
    render, run_scenario, write_traces, Format, ScenarioName, ScenarioOptions, SimConfig,
};
use dyngrasp_core::reward::STAGES;
use dyngrasp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dyngrasp", version, about = "Seeded dynamic-grasping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print or write its metrics table.
    Run {
        /// speed_sweep, time_limits, workspace, tracking_loss or ablation
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Freeze the estimate during loss instead of filtering.
        #[arg(long)]
        no_ekf: bool,
        /// Curriculum stage used for reward logging.
        #[arg(long, default_value_t = STAGES - 1)]
        stage: u8,
        /// TOML file overriding any default.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Directory for per-episode JSON-lines traces.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print the default configuration as TOML.
    Config,
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: &str,
    episodes: usize,
    seed: u64,
    no_ekf: bool,
    stage: u8,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Format,
    trace: Option<PathBuf>,
) -> Result<()> {
    let name: ScenarioName = scenario.parse()?;
    if stage >= STAGES {
        return Err(Error::StageOutOfRange(stage));
    }
    let sim = match &config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    let opts = ScenarioOptions {
        sim,
        ekf_enabled: !no_ekf,
        stage,
        record_trace: trace.is_some(),
        ..ScenarioOptions::default()
    };
    let result = run_scenario(name, episodes, seed, &opts)?;
    if let Some(dir) = &trace {
        write_traces(dir, name.label(), &result.results)?;
    }
    let text = render(&result.rows, format);
    match &out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            scenario,
            episodes,
            seed,
            no_ekf,
            stage,
            config,
            out,
            format,
            trace,
            threads,
        } => {
            if threads > 0 {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            run(&scenario, episodes, seed, no_ekf, stage, config, out, format, trace)
        }
        Command::Config => SimConfig::default().to_toml().map(|t| print!("{t}")),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
