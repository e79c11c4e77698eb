use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otfs_core::harness::{
    bench_complexity, parse_snr_range, run_sweep, write_csv, write_csv_to, BenchConfig,
    EqualizerKind, EstimatorKind, SimConfig,
};
use otfs_core::{validate, Error};

/// OTFS link simulator: BER sweeps, complexity benchmarks and self-checks.
#[derive(Parser)]
#[command(name = "otfs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo BER/FER sweep over SNR and estimator/equalizer pairs.
    Run {
        /// TOML config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// SNR grid in dB as `a:step:b` or a single value.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// ideal, proposed or pn; comma-separated for several.
        #[arg(long, value_delimiter = ',')]
        estimator: Vec<String>,
        /// wiener, mmse or ofdm-mmse; comma-separated for several.
        #[arg(long, value_delimiter = ',')]
        equalizer: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when neither this nor the config sets one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Times estimators and equalizers over a ladder of delay-bin counts.
    Bench {
        /// Comma-separated M values.
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the built-in oracle checks and prints PASS/FAIL per check.
    Validate,
}

fn build_config(
    config: Option<PathBuf>,
    snr: Option<String>,
    trials: Option<usize>,
    estimator: Vec<String>,
    equalizer: Vec<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<SimConfig, Error> {
    let mut cfg = match config {
        Some(path) => SimConfig::from_file(&path)?,
        None => SimConfig::default(),
    };
    if let Some(s) = snr {
        cfg.snr_db = parse_snr_range(&s)?;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if !estimator.is_empty() {
        cfg.estimators = estimator
            .iter()
            .map(|s| s.parse::<EstimatorKind>())
            .collect::<Result<_, _>>()?;
    }
    if !equalizer.is_empty() {
        cfg.equalizers = equalizer
            .iter()
            .map(|s| s.parse::<EqualizerKind>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.out = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Run {
            config,
            snr,
            trials,
            estimator,
            equalizer,
            seed,
            out,
        } => {
            let cfg = build_config(config, snr, trials, estimator, equalizer, seed, out)?;
            let res = run_sweep(&cfg)?;
            match &cfg.out {
                Some(path) => {
                    for r in &res.rows {
                        eprintln!(
                            "{:>6.1} dB  {:<8} {:<9}  BER {:.3e}  FER {:.3}  NMSE {:>7.2} dB  paths {:.1}",
                            r.snr_db, r.estimator, r.equalizer, r.ber, r.fer, r.mean_nmse_db, r.mean_paths
                        );
                    }
                    eprintln!("wrote {} ({:.1} s)", path.display(), res.wall_seconds);
                }
                None => write_csv_to(std::io::stdout().lock(), &res.rows)?,
            }
            Ok(true)
        }
        Command::Bench {
            sizes,
            reps,
            seed,
            out,
        } => {
            let cfg = BenchConfig {
                sizes,
                reps,
                seed,
                ..BenchConfig::default()
            };
            let report = bench_complexity(&cfg)?;
            for r in &report.rows {
                if r.skipped {
                    eprintln!("{:<12} M={:<4} N={:<3} skipped: size guard", r.method, r.m, r.n);
                } else {
                    eprintln!("{:<12} M={:<4} N={:<3} {:.3e} s", r.method, r.m, r.n, r.median_seconds);
                }
            }
            match out {
                Some(path) => {
                    write_csv(&path, &report.rows)?;
                    eprintln!("wrote {}", path.display());
                }
                None => write_csv_to(std::io::stdout().lock(), &report.rows)?,
            }
            Ok(true)
        }
        Command::Validate => {
            let checks = validate::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
