//! `mit` — the command-line harness: dataset generation, training,
//! evaluation, gradient checking, cost reports and ablation sweeps.
//! Exit codes: 0 success, 1 runtime/IO failure, 2 usage/config error.

mod ckpt;
mod commands;
mod config;
mod dataio;
mod pgm;
mod sweeps;

use std::env::VarError;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mit_core::heads::Task;

use commands::{usage, CmdError, GradcheckArgs};
use sweeps::{AblateArgs, CostArgs, SchemaSweepArgs};

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TaskArg {
    Seg,
    Cls,
    Msa,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Seg => Task::Seg,
            TaskArg::Cls => Task::Cls,
            TaskArg::Msa => Task::Msa,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mit",
    version,
    about = "Multimodal infusion tuning on a frozen micro-transformer"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a validated synthetic dataset into a directory
    GenData {
        #[arg(long)]
        task: TaskArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per a JSON run config; writes checkpoint, history and reports
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a finished run on a dataset (metrics.csv, seg masks as PGM)
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; defaults to RUN/eval
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against f64 central differences
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Coordinates probed per tensor (0 = all)
        #[arg(long, default_value_t = 64)]
        max_per_tensor: usize,
        /// Perturb trainables by this scale before checking (0 = check at init)
        #[arg(long, default_value_t = 0.0)]
        nudge: f64,
    },
    /// Closed-form cost sweep with slope fits and an instrumented check
    Cost {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "L=32..512")]
        sweep: String,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every on/off combination of infusion axes and tabulate
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "kv,ff,rescale")]
        axes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare last-token vs task-token extraction across padded lengths
    SchemaSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "8..96")]
        lengths: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Data loading is sequential in this build, so any positive cap is
/// honored; the variable is still validated so scripts fail loudly.
fn mit_threads() -> Result<usize, CmdError> {
    match std::env::var("MIT_THREADS") {
        Err(VarError::NotPresent) => Ok(1),
        Err(VarError::NotUnicode(_)) => Err(usage("MIT_THREADS is not valid unicode")),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| usage(format!("MIT_THREADS='{v}' must be a positive integer"))),
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.cmd {
        Cmd::GenData { task, n, seed, out } => commands::cmd_gen_data(task.into(), n, seed, &out),
        Cmd::Train { config, data, out } => commands::cmd_train(&config, &data, &out),
        Cmd::Eval { run, data, out } => commands::cmd_eval(&run, &data, out.as_deref()),
        Cmd::Gradcheck { config, step, tol, max_per_tensor, nudge } => {
            commands::cmd_gradcheck(&GradcheckArgs {
                config,
                step,
                tolerance: tol,
                max_per_tensor,
                nudge,
            })
        }
        Cmd::Cost { config, sweep, out } => sweeps::cmd_cost(&CostArgs { config, sweep, out }),
        Cmd::Ablate { config, axes, out } => sweeps::cmd_ablate(&AblateArgs { config, axes, out }),
        Cmd::SchemaSweep { config, lengths, out } => {
            sweeps::cmd_schema_sweep(&SchemaSweepArgs { config, lengths, out })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match mit_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CmdError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
