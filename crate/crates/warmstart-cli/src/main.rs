//! Pipeline driver: generate datasets, train warm-start predictors, evaluate
//! them against baselines, and compute generalization certificates, all from
//! one TOML config with full seed provenance.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use warmstart::pipeline::{
    cmd_bound, cmd_eval, cmd_generate, cmd_report, cmd_train, demo_illustrative, RunConfig,
};

#[derive(Parser)]
#[command(name = "warmstart", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the TOML run config.
    #[arg(short, long)]
    config: PathBuf,
    /// Override individual keys, e.g. --set train.epochs=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the output directory from the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> warmstart::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config, &self.overrides)?;
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.clone();
        }
        if cfg.run.workers > 0 {
            // Ignore failures: the global pool may already be initialized.
            let _ = rayon_pool(cfg.run.workers);
        }
        Ok(cfg)
    }
}

fn rayon_pool(workers: usize) -> Result<(), Box<dyn std::error::Error>> {
    warmstart::pipeline::init_workers(workers);
    Ok(())
}

#[derive(Subcommand)]
enum Command {
    /// Sample problem instances and cache ground truths.
    Generate(ConfigArgs),
    /// Train one model per (loss, k) grid point, optionally after a sweep.
    Train(ConfigArgs),
    /// Run all methods on the test set and emit residual/gain/iteration tables.
    Eval(ConfigArgs),
    /// Compute PAC-Bayes certificates for every trained model.
    Bound(ConfigArgs),
    /// Reproduce the two-dimensional warm-start comparison.
    DemoIllustrative {
        /// Output directory for the residual curves.
        #[arg(short, long, default_value = "runs/illustrative")]
        out: PathBuf,
    },
    /// Summarize the contents of a run directory.
    Report {
        /// Run directory to summarize.
        dir: PathBuf,
    },
}

fn run() -> warmstart::Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => cmd_generate(&args.load()?),
        Command::Train(args) => {
            let cfg = args.load()?;
            let models = cmd_train(&cfg)?;
            println!("trained {} models into {}", models.len(), cfg.run.out_dir.display());
            Ok(())
        }
        Command::Eval(args) => {
            let cfg = args.load()?;
            let report = cmd_eval(&cfg)?;
            println!(
                "evaluated {} methods on {} instances (t_max = {})",
                report.methods.len(),
                report.instance_count,
                report.t_max
            );
            Ok(())
        }
        Command::Bound(args) => {
            let cfg = args.load()?;
            let reports = cmd_bound(&cfg)?;
            for (tag, rs) in &reports {
                for r in rs {
                    println!(
                        "{tag}: t={} gamma={:.4} certificate_rhs={:.6e}",
                        r.t, r.gamma, r.certificate_rhs
                    );
                }
            }
            Ok(())
        }
        Command::DemoIllustrative { out } => {
            let curves = demo_illustrative(&out)?;
            for (label, c) in &curves {
                println!("{label}: residuals {:?}", &c[..6.min(c.len())]);
            }
            println!("ordering purple < orange < green holds on steps 1-5");
            Ok(())
        }
        Command::Report { dir } => {
            let mut stdout = std::io::stdout().lock();
            cmd_report(&dir, &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = match &e {
                warmstart::Error::Io(_) => "io",
                warmstart::Error::Parse(_) | warmstart::Error::Config(_) => "usage",
                warmstart::Error::Missing(_) => "missing-input",
                warmstart::Error::Diverged { .. } => "diverged",
                _ => "numeric",
            };
            eprintln!("error [{category}]: {e}");
            ExitCode::FAILURE
        }
    }
}
