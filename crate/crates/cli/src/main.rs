mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use csb_core::dataflow::CellKind;
use csb_core::{EngineConfig, SharingMode};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "csb", version, about = "CSB pruning, compilation and engine simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// `AxB` pair such as `4x4`.
fn pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(clap::Args)]
struct EngineArgs {
    /// PEGroup grid, rows x columns.
    #[arg(long, value_parser = pair, default_value = "4x4")]
    grid: (usize, usize),
    /// PEs per group, rows x columns.
    #[arg(long, value_parser = pair, default_value = "4x4")]
    pe: (usize, usize),
    #[arg(long, default_value = "two_d")]
    mode: SharingMode,
    /// Elements per cycle of the element-wise units.
    #[arg(long, default_value_t = 1)]
    ew_width: usize,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig, CliError> {
        let cfg = EngineConfig {
            ew_width: self.ew_width,
            ..EngineConfig::new(self.grid.0, self.grid.1, self.pe.0, self.pe.1, self.mode)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a dense baseline on the synthetic task and search the pruning fraction.
    Prune {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long, env = "CSB_SEED")]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile a CSB model to a micro program, or an RNN cell to a macro program.
    #[command(group(ArgGroup::new("source").required(true).args(["model", "cell"])))]
    Compile {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cell: Option<CellKind>,
        #[arg(long, requires = "cell")]
        input_dim: Option<usize>,
        #[arg(long, requires = "cell")]
        hidden_dim: Option<usize>,
        /// Block edge used to count MVM block iterations.
        #[arg(long, default_value_t = 16)]
        block: usize,
        #[command(flatten)]
        engine: EngineArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a micro program on the engine model and report cycles and utilization.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        program: PathBuf,
        /// JSON array with the input vector; all ones when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// CSV stats file; stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Per-iteration group cycles as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Output vector as a JSON array.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Compare the engine output with the reference kernel.
        #[arg(long)]
        verify: bool,
    },
    /// Simulate every block size and sharing mode over a synthetic suite.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CSB_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// CSV file; defaults to `sweep.csv` in the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a sweep CSV per sharing mode.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prune { config, seed, out } => commands::prune(&RunConfig::load(&config, seed)?, out),
        Command::Compile {
            model,
            cell,
            input_dim,
            hidden_dim,
            block,
            engine,
            out,
        } => {
            let engine = engine.config()?;
            match (model, cell) {
                (Some(m), _) => commands::compile_model(&m, &engine, out.as_deref()),
                (None, Some(cell)) => {
                    let (Some(i), Some(h)) = (input_dim, hidden_dim) else {
                        return Err(CliError::Config("--cell needs --input-dim and --hidden-dim".into()));
                    };
                    commands::compile_cell(cell, i, h, block, &engine, out.as_deref())
                }
                (None, None) => unreachable!("clap requires a source"),
            }
        }
        Command::Simulate {
            model,
            program,
            input,
            csv,
            trace,
            output,
            verify,
        } => commands::simulate(&commands::SimulateArgs {
            model: &model,
            program: &program,
            input: input.as_deref(),
            csv: csv.as_deref(),
            trace: trace.as_deref(),
            output: output.as_deref(),
            verify,
        }),
        Command::Sweep {
            config,
            seed,
            jobs,
            out,
        } => {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be positive".into()));
            }
            commands::sweep(&RunConfig::load(&config, seed)?, jobs, out)
        }
        Command::Report { csv, json } => commands::report(&csv, json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
