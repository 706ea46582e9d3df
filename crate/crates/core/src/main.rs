use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use decoylab::config::{FormatSpec, RunConfig};
use decoylab::corpus::{load_interactions, summarize, Format};
use decoylab::experiment::{
    aggregate_bias, plan_status, read_bias_trials, read_sweep_config, rebuild_sweep_results, run_bias_study, run_sweep,
    write_bias_report, write_bias_trials, BiasConfig, RunHeader, SweepOptions, MANIFEST_FILE,
};
use decoylab::par::{self, Execution};
use decoylab::rng;
use decoylab::splitting::{crossfold_users, write_plan};
use decoylab::Error;

#[derive(Parser)]
#[command(name = "decoylab", version, about = "Offline top-N recommender evaluation lab")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "DECOYLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print size, density and Gini index of a ratings file.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        /// Format preset (ml100k, csv, csv-header, implicit).
        #[arg(long, default_value = "ml100k")]
        format: String,
        #[arg(long)]
        json: bool,
    },
    /// Write cross-validation folds.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run (or resume) the candidate-strategy sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Print the cell plan without computing anything.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run the simulated bias-estimation study.
    Simulate {
        /// Config with a [simulation] section; the desk preset is used without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Rebuild aggregate CSVs from the per-cell or per-trial files in a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Command failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } | Error::Numerical(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn resolve_out(flag: &OutArg, cfg: Option<&RunConfig>) -> PathBuf {
    flag.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    Ok(RunConfig::load(path)?)
}

fn cmd_inspect(data: &Path, format: &str, json: bool) -> Result<u8, Failure> {
    let start = Instant::now();
    let fmt = FormatSpec::Preset(format.to_owned()).resolve()?;
    let set = load_interactions(data, &fmt)?;
    let summary = summarize(&set)?;
    if json {
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    } else {
        let name = data.parent().and_then(|p| p.file_name()).unwrap_or(data.as_os_str());
        println!("{}", decoylab::corpus::DatasetSummary::CSV_HEADER);
        println!("{}", summary.csv_row(&name.to_string_lossy()));
    }
    log::info!("inspected {} in {:.2?}", data.display(), start.elapsed());
    Ok(0)
}

fn load_dataset(cfg: &RunConfig) -> Result<decoylab::corpus::InteractionSet, Failure> {
    let (path, format): (&Path, Format) = cfg.dataset()?;
    let data = load_interactions(path, &format)?;
    log::info!(
        "loaded {}: {} interactions, {} users, {} items",
        path.display(),
        data.len(),
        data.n_users(),
        data.n_items()
    );
    Ok(data)
}

fn cmd_split(config: &Path, seed: Option<u64>, out: &OutArg) -> Result<u8, Failure> {
    let mut cfg = load_config(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let data = load_dataset(&cfg)?;
    let split = cfg.split;
    let plan = crossfold_users(
        &data,
        split.n_folds,
        split.test_fraction,
        split.min_ratings,
        rng::derive_seed("sweep.split", cfg.seed(), &[]),
    )?;
    let dir = resolve_out(out, Some(&cfg)).join("splits");
    write_plan(&plan, &dir)?;
    println!("wrote {} folds to {}", plan.folds.len(), dir.display());
    Ok(0)
}

fn cmd_sweep(config: &Path, seed: Option<u64>, threads: Option<usize>, dry_run: bool, out: &OutArg) -> Result<u8, Failure> {
    let mut cfg = load_config(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let sweep = cfg.sweep_config()?;
    let dir = resolve_out(out, Some(&cfg));
    let opts = SweepOptions {
        execution: Execution::Parallel,
        dry_run,
    };
    if dry_run {
        let status = plan_status(&sweep, &dir)?;
        for (cell, done) in &status {
            println!("{}\t{}", cell.id(), if *done { "done" } else { "pending" });
        }
        let n_done = status.iter().filter(|(_, d)| *d).count();
        eprintln!("{} cells planned, {} already complete", status.len(), n_done);
        return Ok(0);
    }
    let data = load_dataset(&cfg)?;
    let outcome = par::with_threads(threads, || run_sweep(&sweep, &data, &dir, opts))?;
    eprintln!(
        "{} cells: {} computed, {} reused, {} failed",
        outcome.planned,
        outcome.computed,
        outcome.skipped,
        outcome.failed.len()
    );
    Ok(partial_code(outcome.failed.len(), outcome.planned))
}

fn partial_code(failed: usize, total: usize) -> u8 {
    match failed {
        0 => 0,
        f if f == total => 1,
        _ => 3,
    }
}

fn cmd_simulate(
    config: Option<&Path>,
    trials: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: &OutArg,
) -> Result<u8, Failure> {
    let run_cfg = config.map(load_config).transpose()?;
    let mut cfg = match &run_cfg {
        Some(c) => c.bias_config()?,
        None => BiasConfig::desk(),
    };
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = resolve_out(out, run_cfg.as_ref());
    let study = par::with_threads(threads, || run_bias_study(&cfg, Execution::Parallel))?;
    let header = RunHeader::new(cfg.seed, &cfg)?;
    write_bias_trials(&study, &header, &dir.join("bias_trials.csv"))?;
    if study.trials.is_empty() {
        return Err(Failure {
            code: 1,
            message: format!("all {} trials failed", cfg.trials),
        });
    }
    let report = aggregate_bias(study.rows(), study.failures.len())?;
    write_bias_report(&report, &header, &dir.join("bias_report.csv"))?;
    eprintln!(
        "{} trials completed, {} failed; results in {}",
        study.trials.len(),
        study.failures.len(),
        dir.display()
    );
    Ok(partial_code(study.failures.len(), cfg.trials))
}

fn cmd_report(dir: &Path) -> Result<u8, Failure> {
    let mut done = false;
    let trials = dir.join("bias_trials.csv");
    if trials.exists() {
        let (rows, n_failed, header) = read_bias_trials(&trials)?;
        let report = aggregate_bias(&rows, n_failed)?;
        write_bias_report(&report, &header, &dir.join("bias_report.csv"))?;
        println!("rebuilt {}", dir.join("bias_report.csv").display());
        done = true;
    }
    if dir.join(MANIFEST_FILE).exists() {
        let cfg = read_sweep_config(dir)?;
        rebuild_sweep_results(&cfg, dir)?;
        println!("rebuilt {}", dir.join("sweep_results.csv").display());
        done = true;
    }
    if !done {
        return Err(Failure {
            code: 2,
            message: format!("{} holds no sweep manifest or bias_trials.csv", dir.display()),
        });
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Inspect { data, format, json } => cmd_inspect(data, format, *json),
        Command::Split { config, seed, out } => cmd_split(config, *seed, out),
        Command::Sweep {
            config,
            seed,
            threads,
            dry_run,
            out,
        } => cmd_sweep(config, *seed, *threads, *dry_run, out),
        Command::Simulate {
            config,
            trials,
            seed,
            threads,
            out,
        } => cmd_simulate(config.as_deref(), *trials, *seed, *threads, out),
        Command::Report { dir } => cmd_report(dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
