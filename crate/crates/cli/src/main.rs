use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use graphmark_cli::commands::{self, exit_code_for};
use graphmark_cli::config::RunConfig;
use graphmark_cli::report::cmd_report;
use graphmark_core::error::{Error, Result};

/// Embed, verify and stress-test black-box watermarks in self-supervised
/// graph encoders.
#[derive(Parser)]
#[command(name = "graphmark", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared run options; `--set key=value` can override any config key.
#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root random seed (all streams derive from it)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts
    #[arg(long)]
    out: Option<String>,
    /// Dataset: sbm, cora, citeseer or files
    #[arg(long)]
    dataset: Option<String>,
    /// Weight of the internal (compactness) watermark term
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the external (repulsion) watermark term
    #[arg(long)]
    lambda2: Option<f64>,
    /// Pre-training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra config override, repeatable: --set wm.n_t=20
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        if let Some(v) = &self.dataset {
            overrides.push(("dataset".into(), v.clone()));
        }
        if let Some(v) = self.seed {
            overrides.push(("seed".into(), v.to_string()));
        }
        if let Some(v) = &self.out {
            overrides.push(("out".into(), v.clone()));
        }
        if let Some(v) = self.lambda1 {
            overrides.push(("wm.lambda1".into(), v.to_string()));
        }
        if let Some(v) = self.lambda2 {
            overrides.push(("wm.lambda2".into(), v.to_string()));
        }
        if let Some(v) = self.epochs {
            overrides.push(("train.epochs".into(), v.to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("--set expects key=value, got {kv:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train an encoder (watermarked unless both lambdas are 0) and
    /// write checkpoint, trigger secret, loss curves and config snapshot
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a downstream head on a suspect checkpoint and test the trigger
    /// concentration; exit 0 = watermarked, 1 = not confirmed
    Verify {
        /// Encoder checkpoint of the suspect model
        #[arg(long)]
        checkpoint: PathBuf,
        /// The owner's trigger-set file
        #[arg(long)]
        trigger: PathBuf,
        /// Downstream task: node, link or community
        #[arg(long)]
        task: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Magnitude-pruning robustness sweep over an alpha grid
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trigger: PathBuf,
        /// Comma-separated pruning rates, e.g. "0,0.3,0.6,0.9"
        #[arg(long)]
        alpha_grid: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize paired clean/watermarked runs under a directory
    Report {
        /// Directory holding run subdirectories with metrics.csv files
        #[arg(long)]
        dir: PathBuf,
    },
    /// Export joint 2-D PCA coordinates of normal and trigger embeddings
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trigger: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Pretrain { run } => {
            commands::cmd_pretrain(&run.resolve()?)?;
            Ok(commands::EXIT_CONFIRMED)
        }
        Command::Verify {
            checkpoint,
            trigger,
            task,
            run,
        } => {
            let task = task.parse()?;
            let cfg = run.resolve()?;
            let (_, code) = commands::cmd_verify(&checkpoint, &trigger, task, &cfg)?;
            Ok(code)
        }
        Command::Attack {
            checkpoint,
            trigger,
            alpha_grid,
            run,
        } => {
            let mut overrides = run;
            if let Some(grid) = alpha_grid {
                overrides.set.push(format!("attack.grid={grid}"));
            }
            commands::cmd_attack(&checkpoint, &trigger, &overrides.resolve()?)?;
            Ok(commands::EXIT_CONFIRMED)
        }
        Command::Report { dir } => {
            cmd_report(&dir)?;
            Ok(commands::EXIT_CONFIRMED)
        }
        Command::ExportEmbeddings {
            checkpoint,
            trigger,
            run,
        } => {
            commands::cmd_export_embeddings(&checkpoint, &trigger, &run.resolve()?)?;
            Ok(commands::EXIT_CONFIRMED)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
