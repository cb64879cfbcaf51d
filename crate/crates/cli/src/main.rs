//! `gazegrid`: synthetic fixtures, single-model training/evaluation, the
//! 48-configuration sweep, and report rendering.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure. Models train in f32.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use gazegrid::corpus::{load_dataset, write_fixture, SplitTag};
use gazegrid::encoder::EncoderConfig;
use gazegrid::error::Error;
use gazegrid::eval::{mae, rank, read_results, write_results, RunOutcome, RunResult};
use gazegrid::regress::{gold_targets, TrainConfig, TrainedModel};
use gazegrid::sweep::{
    build_report, enumerate_grid, fit, run_sweep, sha256_hex, ReportMeta, RunConfig, SweepData,
};

#[derive(Parser)]
#[command(name = "gazegrid", version, about = "Word-level reading-time feature prediction over a 48-configuration experiment grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic gaze corpus (train/dev/test CSVs)
    Fixture {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sentences: usize,
        /// Comma-separated language codes, e.g. en,zh
        #[arg(long, default_value = "en")]
        languages: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration and save the model
    Train {
        /// RunConfig as canonical JSON
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a CSV and append a result line
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full 48-configuration grid
    Sweep {
        /// JSON with base `train` and `encoder` sections
        #[arg(long = "base-config")]
        base_config: PathBuf,
        /// Directory containing train.csv, dev.csv, test.csv
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        parallelism: usize,
        /// Output directory for results.jsonl, report.md, report.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a report from a results file
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Base hyperparameters shared by every sweep run.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseConfig {
    train: TrainConfig,
    encoder: EncoderConfig,
}

fn exit_code_of(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Schema(_) | Error::Parse(_) | Error::Integrity(_) | Error::Format(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
        Error::Shape(_) | Error::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_of(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fixture {
            seed,
            sentences,
            languages,
            out,
        } => {
            let languages: Vec<String> = languages
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            write_fixture(seed, sentences, &languages, &out)?;
            println!(
                "wrote train.csv, dev.csv, test.csv to {} (seed {seed}, {sentences} sentences)",
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            train,
            dev,
            out,
        } => {
            let run_config = load_run_config(&config)?;
            let train_ds = load_dataset::<f32>(&train, SplitTag::Train)?;
            let dev_ds = load_dataset::<f32>(&dev, SplitTag::Dev)?;
            let artifacts = fit(&run_config, &train_ds, Some(&dev_ds))?;
            artifacts.model.save(&out)?;
            let final_loss = artifacts.log.epoch_mean_loss.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} ({} epochs, final train loss {final_loss:.4})",
                run_config.name,
                artifacts.log.epoch_mean_loss.len()
            );
            if let Some(dev_mae) = artifacts.dev_mae {
                println!("dev MAE: {:.4}", dev_mae.overall);
            }
            println!("model saved to {}", out.display());
            Ok(())
        }
        Command::Evaluate { model, data, out } => {
            let model = TrainedModel::<f32>::load(&model)?;
            let ds = load_dataset::<f32>(&data, SplitTag::Test)?;
            let started = std::time::Instant::now();
            let preds = model.predict_dataset(&ds)?;
            let summary = mae(&preds, &gold_targets(&ds))?;
            let result = RunResult {
                config: model.config.clone(),
                mae: summary.clone(),
                wall_time_secs: started.elapsed().as_secs_f64(),
            };
            std::fs::write(&out, write_results(&[RunOutcome::Success(result)])?)?;
            println!(
                "{}: MAE ffd_avg {:.4}, ffd_std {:.4}, trt_avg {:.4}, trt_std {:.4}, overall {:.4}",
                model.config.name,
                summary.ffd_avg,
                summary.ffd_std,
                summary.trt_avg,
                summary.trt_std,
                summary.overall
            );
            println!("result written to {}", out.display());
            Ok(())
        }
        Command::Sweep {
            base_config,
            data,
            parallelism,
            out,
        } => {
            let base: BaseConfig = parse_config_file(&base_config)?;
            let grid = enumerate_grid(&base.train, &base.encoder);
            let sweep_data = SweepData::<f32>::load_dir(&data)?;
            let fingerprint = sweep_data.fingerprint();

            let started = std::time::Instant::now();
            let outcomes = run_sweep(&grid, &sweep_data, parallelism)?;
            let elapsed = started.elapsed();
            let ok = outcomes.iter().filter(|o| o.as_success().is_some()).count();
            println!(
                "{} runs finished in {:.1}s ({} ok, {} failed, parallelism {parallelism})",
                outcomes.len(),
                elapsed.as_secs_f64(),
                ok,
                outcomes.len() - ok
            );

            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("results.jsonl"), write_results(&outcomes)?)?;
            let report = build_report(
                &outcomes,
                ReportMeta {
                    global_seed: Some(base.train.seed),
                    data_fingerprint: fingerprint,
                    code_version: env!("CARGO_PKG_VERSION").to_string(),
                },
            )?;
            std::fs::write(out.join("report.md"), report.render_markdown())?;
            std::fs::write(out.join("report.json"), report.to_json()?)?;

            let results: Vec<RunResult> = outcomes
                .iter()
                .filter_map(|o| o.as_success().cloned())
                .collect();
            if let Some(best) = rank(&results, 1).first() {
                println!("best: {} (MAE {:.3})", best.name(), best.mae.overall);
            }
            println!("results and report written to {}", out.display());
            Ok(())
        }
        Command::Report { results, out } => {
            let bytes = std::fs::read(&results)?;
            let text = String::from_utf8_lossy(&bytes);
            let outcomes = read_results(&text)?;
            let report = build_report(
                &outcomes,
                ReportMeta {
                    global_seed: None,
                    data_fingerprint: sha256_hex(&bytes),
                    code_version: env!("CARGO_PKG_VERSION").to_string(),
                },
            )?;
            std::fs::write(&out, report.render_markdown())?;
            let json_path = out.with_extension("json");
            std::fs::write(&json_path, report.to_json()?)?;
            println!(
                "report written to {} and {}",
                out.display(),
                json_path.display()
            );
            Ok(())
        }
    }
}

/// Config files are user input: any malformed JSON maps to a usage error.
fn parse_config_file<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C, Error> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_run_config(path: &Path) -> Result<RunConfig, Error> {
    let mut config: RunConfig = parse_config_file(path)?;
    config.ensure_name();
    config.validate()?;
    Ok(config)
}

