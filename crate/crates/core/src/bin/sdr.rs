//! `sdr`: simulate datasets, estimate average treatment effects and run the
//! Monte Carlo benchmark.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on estimator failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdr_core::bench::{emit_table, parse_json, parse_plan, run_monte_carlo, TableFormat};
use sdr_core::{estimate_ate, load_dataset, save_dataset, simulate, EstimatorConfig, Method, ScenarioConfig, SdrError};

#[derive(Parser)]
#[command(name = "sdr", version, about = "Sparsity double robust ATE estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from a scenario and write it as CSV (y,w,x1..xp).
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the population parameters as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Estimate the ATE from a CSV dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "sdr")]
        method: Method,
        /// Estimator configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Result JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the fold split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a column of ones to the design.
        #[arg(long)]
        add_intercept: bool,
        /// The CSV has no header row.
        #[arg(long)]
        no_header: bool,
    },
    /// Run a Monte Carlo experiment plan.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        /// Full results JSON.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate table; `.csv` selects CSV, anything else markdown.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SdrError> {
    let text = fs::read_to_string(path)?;
    parse_json(&text).map_err(|e| match e {
        SdrError::Schema { pointer, message } => SdrError::Schema {
            pointer: format!("{}#{pointer}", path.display()),
            message,
        },
        other => other,
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), SdrError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(command: Command) -> Result<(), SdrError> {
    match command {
        Command::Simulate {
            scenario,
            seed,
            out,
            truth,
        } => {
            let mut config: ScenarioConfig = read_json(&scenario)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let (data, params) = simulate(&config)?;
            save_dataset(&data, &out)?;
            if let Some(path) = truth {
                write_json(&params, Some(&path))?;
            }
            eprintln!(
                "wrote n = {}, p = {} ({} treated) to {}; tau_true = {}",
                data.n(),
                data.p(),
                data.arm_size(1),
                out.display(),
                params.tau_true
            );
        }
        Command::Estimate {
            data,
            method,
            config,
            out,
            seed,
            add_intercept,
            no_header,
        } => {
            let cfg: EstimatorConfig = match config {
                Some(path) => read_json(&path)?,
                None => EstimatorConfig::default(),
            };
            cfg.validate()?;
            let mut dataset = load_dataset(&data, !no_header)?;
            if add_intercept {
                dataset = dataset.with_intercept();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let estimate = estimate_ate(method, &dataset, &cfg, &mut rng)?;
            for w in estimate.warnings() {
                eprintln!("warning: {w}");
            }
            write_json(&estimate, out.as_deref())?;
        }
        Command::Bench {
            plan,
            out,
            table,
            reps,
            seed,
            workers,
        } => {
            let mut plan = parse_plan(&plan)?;
            if let Some(r) = reps {
                plan.reps = r;
            }
            if let Some(s) = seed {
                plan.master_seed = s;
            }
            if workers.is_some() {
                plan.parallelism = workers;
            }
            let result = run_monte_carlo(&plan)?;
            write_json(&result, Some(&out))?;
            let (path, format) = match &table {
                Some(p) => (Some(p.as_path()), TableFormat::from_path(p)),
                None => (None, TableFormat::Markdown),
            };
            let rendered = emit_table(&result, format);
            match path {
                Some(p) => fs::write(p, &rendered)?,
                None => print!("{rendered}"),
            }
            for s in &result.scenarios {
                for m in s.methods.iter().filter(|m| m.failures > 0) {
                    eprintln!("{} / {}: {} of {} replications failed", s.name, m.method, m.failures, plan.reps);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
