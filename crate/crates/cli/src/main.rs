use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use optomag::protocol::{load_config, ProtocolConfig};
use optomag_cli::{failed_observables, render, run, CliError, CliResult, Command, ExperimentSpec, OutputFormat, Sweep};

#[derive(Parser)]
#[command(name = "optomag", version, about = "Heralded magnon entanglement: exact engine and Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Config file (flat dotted keys, # comments); defaults apply when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormat,

    /// Overrides mc.seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides mc.trials
    #[arg(long, global = true)]
    trials: Option<u64>,

    /// field:start:stop:count
    #[arg(long, global = true)]
    sweep: Option<Sweep>,

    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Herald fidelity vs temperature or thermal ratio
    FidelitySweep,
    /// Exact witness curve over the read phase
    WitnessSweep,
    /// Monte Carlo click records
    McRun,
    /// Monte Carlo estimates against the exact engine
    OracleCompare,
    /// Witness curves of separable magnon states
    Baseline,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::FidelitySweep => Command::FidelitySweep,
            Cmd::WitnessSweep => Command::WitnessSweep,
            Cmd::McRun => Command::McRun,
            Cmd::OracleCompare => Command::OracleCompare,
            Cmd::Baseline => Command::Baseline,
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => ProtocolConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.mc.seed = s;
    }
    if let Some(t) = cli.trials {
        config.mc.trials = t;
    }
    let spec = ExperimentSpec {
        command: cli.command.into(),
        config,
        sweep: cli.sweep,
        output_path: cli.out,
        output_format: cli.format,
    };
    let table = run(&spec)?;
    let text = render(&table, spec.output_format);
    match &spec.output_path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    if spec.command == Command::OracleCompare {
        let failed = failed_observables(&table);
        if !failed.is_empty() {
            return Err(CliError::OracleFailed(failed));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
