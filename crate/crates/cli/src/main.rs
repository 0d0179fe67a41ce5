mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "unimatch", version, about = "Partial multi-graph matching through a learned universe")]
struct Cli {
    /// Overrides the seed of the config or of the evaluation.
    #[arg(long, global = true, env = "UNIMATCH_SEED")]
    seed: Option<u64>,
    /// Worker threads for parallel loss evaluation.
    #[arg(long, global = true, env = "UNIMATCH_THREADS")]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Also write the report as CSV (metric,value,context).
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a TOML config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a metric and write a checkpoint plus per-epoch history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or run the gradient check.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long, required_if_eq_any([("mode", "pairs"), ("mode", "online"), ("mode", "cluster")]))]
        data: Option<PathBuf>,
        #[arg(long, required_if_eq_any([("mode", "pairs"), ("mode", "online"), ("mode", "cluster")]))]
        checkpoint: Option<PathBuf>,
        /// Clusters for `cluster` mode.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Sampled pairs (`pairs`) or random instances (`gradcheck`).
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Graphs admitted in `online` mode.
        #[arg(long, default_value_t = 15)]
        graphs: usize,
        #[arg(long, value_enum, default_value_t = Sampling::SameClass)]
        sampling: Sampling,
    },
    /// Dump checkpoint metadata.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Pairs,
    Online,
    Cluster,
    Gradcheck,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    SameClass,
    HalfMixed,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let report = match cli.command {
        Command::Gen { config, out } => commands::gen(&config, &out, cli.seed)?,
        Command::Train {
            data,
            config,
            out,
            history,
        } => {
            let history = history.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".history.csv");
                p.into()
            });
            commands::train(&data, &config, &out, &history, cli.seed)?
        }
        Command::Eval {
            mode,
            data,
            checkpoint,
            k,
            pairs,
            graphs,
            sampling,
        } => commands::eval(&commands::EvalArgs {
            mode,
            data,
            checkpoint,
            k,
            pairs,
            graphs,
            sampling,
            seed: cli.seed.unwrap_or(0),
        })?,
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint)?,
    };
    report.emit(cli.report.as_deref(), cli.csv.as_deref())?;
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
