use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use idens_bench::experiment::{
    audit, evaluate_fold, prepare, train_fold, tune_all, ExperimentOutput,
};
use idens_bench::io::{
    checkpoint_path, read_checkpoint, read_tuned, write_checkpoint, write_json, write_outputs,
};
use idens_bench::results::read_results;
use idens_bench::{compare_methods, run_experiment, ExperimentConfig};
use idens_core::data::save_csv;

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)
    };
}

#[derive(Parser)]
#[command(
    name = "idens",
    version,
    about = "Interventional density estimation benchmarks"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the configured one.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for folds and tuning.
    #[arg(long, short, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the configured synthetic dataset and write it as CSV.
    Generate,
    /// Tune hyperparameters on the first split; writes tuned.json.
    Tune,
    /// Fit every fold and write checkpoints.
    Train {
        /// Reuse an existing tuned.json instead of tuning.
        #[arg(long)]
        tuned: Option<PathBuf>,
        /// Only this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Evaluate checkpoints written by `train`.
    Evaluate,
    /// Tune, fit and evaluate every fold.
    Benchmark,
    /// Summarize one or more results.csv files.
    Compare {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli
        .config
        .as_ref()
        .context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn tuned_or_tune(
    cfg: &ExperimentConfig,
    p: &idens_bench::experiment::Prepared,
    path: Option<&Path>,
    jobs: usize,
) -> Result<idens_bench::experiment::Tuned> {
    Ok(match path {
        Some(path) => read_tuned(path).with_context(|| format!("reading {}", path.display()))?,
        None => tune_all(cfg, p, jobs)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let (cfg, out) = load_config(&cli)?;
            let data = idens_bench::experiment::load_dataset(&cfg)?;
            let path = out.join(format!("{}.csv", cfg.data.id()));
            let schema = save_csv(&path, &data)?;
            say!("wrote {} rows to {}", data.len(), path.display())?;
            say!("[data.schema]\n{}", toml::to_string(&schema)?)?;
        }
        Command::Tune => {
            let (cfg, out) = load_config(&cli)?;
            let p = prepare(&cfg)?;
            let tuned = tune_all(&cfg, &p, cli.jobs)?;
            write_json(&out.join("tuned.json"), &tuned)?;
            for (family, t) in &tuned {
                say!("{}: {:?}", family.name(), t.chosen)?;
            }
        }
        Command::Train { tuned, fold } => {
            let (cfg, out) = load_config(&cli)?;
            let p = prepare(&cfg)?;
            let tuned = tuned_or_tune(&cfg, &p, tuned.as_deref(), cli.jobs)?;
            write_json(&out.join("tuned.json"), &tuned)?;
            let folds: Vec<usize> = match fold {
                Some(f) if *f >= cfg.split.folds => {
                    bail!("fold {f} out of range for {} folds", cfg.split.folds)
                }
                Some(f) => vec![*f],
                None => (0..cfg.split.folds).collect(),
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.jobs.max(1))
                .build()?;
            let written: Vec<Result<PathBuf>> = pool.install(|| {
                folds
                    .par_iter()
                    .map(|&f| Ok(write_checkpoint(&out, &train_fold(&cfg, &p, &tuned, f)?)?))
                    .collect()
            });
            for w in written {
                say!("wrote {}", w?.display())?;
            }
        }
        Command::Evaluate => {
            let (cfg, out) = load_config(&cli)?;
            let p = prepare(&cfg)?;
            let tuned = read_tuned(&out.join("tuned.json"))
                .context("evaluate needs tuned.json from `train`")?;
            let mut result = ExperimentOutput {
                rows: Vec::new(),
                tuned,
                audits: Vec::new(),
                dumps: Vec::new(),
            };
            for fold in 0..cfg.split.folds {
                let path = checkpoint_path(&out, fold);
                let ckpt = read_checkpoint(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                if ckpt.dataset_id != p.dataset_id || ckpt.fold != fold {
                    bail!(
                        "{} belongs to {} fold {}",
                        path.display(),
                        ckpt.dataset_id,
                        ckpt.fold
                    );
                }
                let ev = evaluate_fold(&cfg, &p, &ckpt)?;
                result.rows.extend(ev.rows);
                result.dumps.extend(ev.dumps);
                result.audits.push(audit(&ckpt));
            }
            write_outputs(&out, &result)?;
            say!(
                "wrote {} rows to {}",
                result.rows.len(),
                out.join("results.csv").display()
            )?;
        }
        Command::Benchmark => {
            let (cfg, out) = load_config(&cli)?;
            let result = run_experiment(&cfg, cli.jobs)?;
            write_outputs(&out, &result)?;
            say!(
                "wrote {} rows to {}",
                result.rows.len(),
                out.join("results.csv").display()
            )?;
        }
        Command::Compare { results } => {
            let mut rows = Vec::new();
            for path in results {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                rows.extend(
                    read_results(f).with_context(|| format!("reading {}", path.display()))?,
                );
            }
            let summary = compare_methods(&rows)?;
            say!("{}", serde_json::to_string_pretty(&summary)?)?;
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)?;
                write_json(&out.join("summary.json"), &summary)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
