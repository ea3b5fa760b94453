//! `brwsel`: run branching-selection experiments from TOML configs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use brw_core::harness::{
    emit_plot_data, list_experiments, run_experiment, ExperimentConfig, ExperimentKind, RunOptions,
};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "brwsel", version, about = "Branching random walks with selection: experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write `<stem>.jsonl` and `<stem>_summary.csv`.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long, env = "BRW_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Long-format plot CSV from one or more result files.
    PlotData {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Expected experiment kind.
        #[arg(long)]
        kind: Option<String>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    ListExperiments,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().cmd {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            if workers == Some(0) {
                bail!("--workers must be at least 1");
            }
            let opts = RunOptions {
                out_dir: out,
                seed,
                workers,
            };
            let res = run_experiment(&cfg, &opts).with_context(|| format!("running {}", config.display()))?;
            print!("{}", res.summary_csv);
            for note in &res.evaluation.notes {
                println!("# {note}");
            }
            eprintln!(
                "wrote {} and {}",
                res.records_path.display(),
                res.summary_path.display()
            );
        }
        Command::PlotData { results, kind, out } => {
            let kind = kind.as_deref().map(ExperimentKind::parse).transpose()?;
            let csv = emit_plot_data(&results, kind)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("ok: {} ({})", cfg.experiment.name(), &cfg.hash()[..16]);
        }
        Command::ListExperiments => {
            for (name, about) in list_experiments() {
                println!("{name:<24} {about}");
            }
        }
    }
    Ok(())
}
