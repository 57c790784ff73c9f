//! Command line front end. Every subcommand resolves its configuration
//! first (file, then `--set` overrides), runs exactly one pipeline
//! stage, and leaves a `run-manifest.json` next to its artifacts so a
//! run can be reproduced from the manifest alone. Failures exit with a
//! stable code per error class and a single JSON line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use modsense_core::config::{load_config, RunConfig};
use modsense_core::dataset::{clean, load_catalog, Catalog};
use modsense_core::ingest::ingest;
use modsense_core::models::Model;
use modsense_core::physics::ContactParams;
use modsense_core::pipeline::{split, SplitMode, SplitSet};
use modsense_core::report::{
    best_seed, breakdown, eval_report, mean_se, read_predictions, rolling_windows, scatter_table,
    write_breakdown, write_predictions, write_scatter, write_scatter_table, write_windows,
    BreakdownBy, PredictionRow,
};
use modsense_core::synth::write_generated;
use modsense_core::train::{evaluate, run_seeds};
use modsense_core::{CoreError, Result};

#[derive(Parser)]
#[command(name = "modsense", version, about = "Tactile compliance estimation toolkit")]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory; defaults to the config's output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw capture tree into the canonical dataset layout.
    Ingest {
        /// Raw capture root (metadata.csv plus grasp directories).
        #[arg(long, value_name = "DIR")]
        raw: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Generator seed; the same seed reproduces the dataset byte
        /// for byte.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Clean the dataset and write a train/validation/test split.
    Split {
        /// `seen` or `unseen` (object-level holdout).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model per seed and report aggregate test metrics.
    Train {
        /// Reuse a split file instead of computing one.
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Comma-separated training seeds; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint on the test portion of a split.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        split: PathBuf,
    },
    /// Regroup an existing predictions file.
    Report {
        #[arg(long, value_name = "CSV")]
        predictions: PathBuf,
        /// `material`, `shape` or `window`.
        #[arg(long)]
        by: String,
        /// Undersampling seed for window statistics.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, class) = classify(&err);
            let line = serde_json::json!({
                "error": class,
                "message": err.to_string(),
                "exit": code,
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

/// Stable exit codes: 2 configuration, 3 data, 4 training.
fn classify(err: &CoreError) -> (u8, &'static str) {
    match err {
        CoreError::Config(_) => (2, "config"),
        CoreError::DivergedTraining(_) | CoreError::Nn(_) => (4, "training"),
        _ => (3, "data"),
    }
}

fn run(cli: Cli) -> Result<()> {
    // the config must be readable before any stage starts, even for
    // subcommands that only use a corner of it; everything that goes
    // wrong in this phase is a configuration error, including a
    // missing file
    let cfg = load_config(cli.config.as_deref(), &cli.overrides).map_err(|e| match e {
        CoreError::Config(_) => e,
        other => CoreError::Config(other.to_string()),
    })?;
    match cli.command {
        Command::Ingest { raw } => cmd_ingest(&cfg, cli.out.as_deref(), &raw),
        Command::Synth { seed } => cmd_synth(&cfg, cli.out.as_deref(), seed),
        Command::Split { mode, seed } => cmd_split(&cfg, cli.out.as_deref(), mode.as_deref(), seed),
        Command::Train { split, seeds } => {
            cmd_train(&cfg, cli.out.as_deref(), split.as_deref(), seeds)
        }
        Command::Eval { checkpoint, split } => {
            cmd_eval(&cfg, cli.out.as_deref(), &checkpoint, &split)
        }
        Command::Report {
            predictions,
            by,
            seed,
        } => cmd_report(&cfg, cli.out.as_deref(), &predictions, &by, seed),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    /// Digest of the effective configuration, overrides included.
    config_sha256: String,
    seeds: Vec<u64>,
    toolchain: &'a str,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, seeds: Vec<u64>) -> Result<()> {
    let digest = Sha256::digest(serde_json::to_vec(cfg)?);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = RunManifest {
        command,
        config_sha256: hex,
        seeds,
        toolchain: env!("MODSENSE_TOOLCHAIN"),
    };
    let file = std::fs::File::create(out.join("run-manifest.json"))?;
    serde_json::to_writer_pretty(&file, &manifest)?;
    Ok(())
}

fn out_dir(cli_out: Option<&Path>, fallback: &Path) -> Result<PathBuf> {
    let dir = cli_out.unwrap_or(fallback).to_path_buf();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_clean_catalog(cfg: &RunConfig) -> Result<Catalog> {
    clean(&load_catalog(&cfg.data_root)?)
}

fn read_split(path: &Path) -> Result<SplitSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CoreError::MissingFile(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_ingest(cfg: &RunConfig, cli_out: Option<&Path>, raw: &Path) -> Result<()> {
    let out = out_dir(cli_out, &cfg.data_root)?;
    let summary = ingest(raw, &out, &ContactParams::default())?;
    let file = std::fs::File::create(out.join("ingest-summary.json"))?;
    serde_json::to_writer_pretty(&file, &summary)?;
    write_manifest(&out, "ingest", cfg, Vec::new())?;
    println!(
        "ingested {} objects ({} skipped), {} grasps ({} skipped), {} estimates refit -> {}",
        summary.objects,
        summary.objects_skipped,
        summary.grasps,
        summary.grasps_skipped,
        summary.estimates_computed,
        out.display()
    );
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, cli_out: Option<&Path>, seed: u64) -> Result<()> {
    let out = out_dir(cli_out, &cfg.data_root)?;
    let catalog = write_generated(&cfg.synth, seed, &out)?;
    write_manifest(&out, "synth", cfg, vec![seed])?;
    println!(
        "generated {} objects / {} grasps -> {}",
        catalog.objects.len(),
        catalog.grasps.len(),
        out.display()
    );
    Ok(())
}

fn parse_mode(raw: &str) -> Result<SplitMode> {
    match raw {
        "seen" | "seen-object" => Ok(SplitMode::SeenObject),
        "unseen" | "unseen-object" => Ok(SplitMode::UnseenObject),
        other => Err(CoreError::Config(format!("unknown split mode {other:?}"))),
    }
}

fn cmd_split(
    cfg: &RunConfig,
    cli_out: Option<&Path>,
    mode: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let mode = match mode {
        Some(raw) => parse_mode(raw)?,
        None => cfg.split_mode,
    };
    let seed = seed.unwrap_or(cfg.split_seed);
    let out = out_dir(cli_out, &cfg.output_dir)?;
    let catalog = load_clean_catalog(cfg)?;
    let sets = split(&catalog, mode, seed)?;
    let file = std::fs::File::create(out.join("split.json"))?;
    serde_json::to_writer_pretty(&file, &sets)?;
    write_manifest(&out, "split", cfg, vec![seed])?;
    println!(
        "split {} grasps into {}/{}/{} (train/validation/test) -> {}",
        sets.train.len() + sets.validation.len() + sets.test.len(),
        sets.train.len(),
        sets.validation.len(),
        sets.test.len(),
        out.join("split.json").display()
    );
    Ok(())
}

/// Windows, scatter table and scatter plot for one set of predictions.
fn write_row_artifacts(
    out: &Path,
    rows: &[PredictionRow],
    n_mse: f64,
    window_seed: u64,
) -> Result<()> {
    write_predictions(&out.join("predictions.csv"), rows)?;
    write_windows(&out.join("windows.csv"), &rolling_windows(rows, window_seed)?)?;
    let table = scatter_table(rows, BreakdownBy::Material, mean_se(rows))?;
    write_scatter_table(&out.join("scatter.csv"), &table)?;
    write_scatter(&out.join("scatter.svg"), rows, n_mse)?;
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    cli_out: Option<&Path>,
    split_file: Option<&Path>,
    seeds: Option<Vec<u64>>,
) -> Result<()> {
    let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
    if seeds.is_empty() {
        return Err(CoreError::Config("no training seeds given".into()));
    }
    let out = out_dir(cli_out, &cfg.output_dir)?;
    let catalog = load_clean_catalog(cfg)?;
    let sets = match split_file {
        Some(path) => read_split(path)?,
        None => split(&catalog, cfg.split_mode, cfg.split_seed)?,
    };

    let multi = run_seeds(&catalog, &sets, &cfg.model, &cfg.train, &seeds)?;
    for run in &multi.runs {
        std::fs::write(
            out.join(format!("checkpoint-seed{}.bin", run.seed)),
            &run.checkpoint,
        )?;
    }
    let report = eval_report(&multi.runs, &multi.failures);
    let file = std::fs::File::create(out.join("report.json"))?;
    serde_json::to_writer_pretty(&file, &report)?;

    // row-level artifacts follow the best run by test error
    if let Some(best) = best_seed(&multi.runs) {
        write_row_artifacts(&out, &best.eval.rows, best.eval.n_mse, best.seed)?;
    }
    write_manifest(&out, "train", cfg, seeds)?;

    for run in &multi.runs {
        println!(
            "seed {}: accuracy {:.4}, n_mse {:.6}, r^2 {:.4} ({} epochs, best {})",
            run.seed,
            run.eval.accuracy,
            run.eval.n_mse,
            run.eval.r_squared,
            run.outcome.epochs_run,
            run.outcome.best_epoch
        );
    }
    for failure in &multi.failures {
        println!("seed {}: failed: {}", failure.seed, failure.error);
    }
    println!(
        "mean accuracy {:.4}, mean n_mse {:.6} over {} run(s) -> {}",
        report.accuracy.mean,
        report.n_mse.mean,
        report.seeds.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    cli_out: Option<&Path>,
    checkpoint: &Path,
    split_file: &Path,
) -> Result<()> {
    let out = out_dir(cli_out, &cfg.output_dir)?;
    let catalog = load_clean_catalog(cfg)?;
    let sets = read_split(split_file)?;
    let mut model = Model::<f32>::new(&cfg.model, 0)?;
    model.load_checkpoint(checkpoint)?;
    let eval = evaluate(
        &model,
        &catalog,
        &sets.test,
        &cfg.train.bounds,
        cfg.train.batch_size,
    )?;

    let file = std::fs::File::create(out.join("report.json"))?;
    serde_json::to_writer_pretty(&file, &eval)?;
    write_row_artifacts(&out, &eval.rows, eval.n_mse, 0)?;
    write_manifest(&out, "eval", cfg, Vec::new())?;
    println!(
        "{} test grasps: accuracy {:.4}, n_mse {:.6}, r^2 {:.4} -> {}",
        eval.rows.len(),
        eval.accuracy,
        eval.n_mse,
        eval.r_squared,
        out.display()
    );
    Ok(())
}

fn cmd_report(
    cfg: &RunConfig,
    cli_out: Option<&Path>,
    predictions: &Path,
    by: &str,
    seed: u64,
) -> Result<()> {
    let out = out_dir(cli_out, &cfg.output_dir)?;
    let rows = read_predictions(predictions)?;
    match BreakdownBy::from_str(by).map_err(|_| {
        CoreError::Config(format!("--by must be material, shape or window, got {by:?}"))
    })? {
        BreakdownBy::Window => {
            let stats = rolling_windows(&rows, seed)?;
            write_windows(&out.join("windows.csv"), &stats)?;
            for w in &stats {
                match w.n_mse {
                    Some(n_mse) => println!(
                        "window {} [1e{:.0}, 1e{:.0}): {} grasps ({} used), n_mse {:.6}",
                        w.index, w.log10_lo, w.log10_hi, w.total, w.used, n_mse
                    ),
                    None => println!(
                        "window {} [1e{:.0}, 1e{:.0}): empty",
                        w.index, w.log10_lo, w.log10_hi
                    ),
                }
            }
        }
        by => {
            let stats = breakdown(&rows, by)?;
            write_breakdown(&out.join(format!("breakdown-{}.csv", by.as_str())), &stats)?;
            for g in &stats {
                println!(
                    "{}: {} grasps, accuracy {:.4}, n_mse {:.6}",
                    g.key, g.count, g.accuracy, g.n_mse
                );
            }
        }
    }
    write_manifest(&out, "report", cfg, vec![seed])?;
    Ok(())
}
