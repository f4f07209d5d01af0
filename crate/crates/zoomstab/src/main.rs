//! Command-line interface: run experiments, compute channel thresholds and
//! exponents, evaluate stability conditions, and summarize result files.
//!
//! Exit codes: 0 = ran, 2 = invalid configuration or parameters,
//! 3 = verdict failure under `--assert`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zoomstab::channel::DmcModel;
use zoomstab::config::{load_config, ExperimentConfig};
use zoomstab::error::ConfigError;
use zoomstab::experiment::{read_records, run_experiment, summarize};
use zoomstab::infotheory::{
    chernoff_sanov_bound, check_second_moment_conditions, dmc_capacity, kappa_bound,
    random_coding_exponent, ConditionMode, ErrorRates,
};

#[derive(Parser)]
#[command(name = "zoomstab", about = "Adaptive-zoom quantized control simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ChannelArgs {
    /// Binary symmetric channel with this crossover probability.
    #[arg(long, conflicts_with_all = ["erasure", "matrix"])]
    bsc: Option<f64>,
    /// Binary erasure channel with this erasure probability.
    #[arg(long, conflicts_with = "matrix")]
    erasure: Option<f64>,
    /// Row-stochastic transition matrix as JSON, e.g. "[[0.9,0.1],[0.1,0.9]]".
    #[arg(long)]
    matrix: Option<String>,
}

impl ChannelArgs {
    fn build(&self) -> Result<DmcModel, ConfigError> {
        if let Some(eps) = self.bsc {
            DmcModel::bsc(eps)
        } else if let Some(eps) = self.erasure {
            DmcModel::erasure(eps)
        } else if let Some(json) = &self.matrix {
            let rows: Vec<Vec<f64>> = serde_json::from_str(json)
                .map_err(|e| ConfigError::Parse(format!("bad --matrix JSON: {e}")))?;
            DmcModel::new(rows)
        } else {
            Err(ConfigError::Channel(
                "specify a channel via --bsc, --erasure, or --matrix".into(),
            ))
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment described by a TOML config file.
    Simulate {
        config: PathBuf,
        /// Master seed override (precedence: this flag > ZOOMSTAB_SEED > file).
        #[arg(long)]
        seed: Option<u64>,
        /// Replica count override.
        #[arg(long)]
        replicas: Option<u64>,
        /// Results file (JSON lines) override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with code 3 if any replica diverged.
        #[arg(long)]
        assert: bool,
    },
    /// Channel capacity in bits.
    Capacity {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Random-coding error exponent at a rate in bits.
    Exponent {
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        rate: f64,
    },
    /// Supremum of admissible excursion exponents κ.
    Kappa {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        alpha: f64,
    },
    /// Evaluate the finite-n second-moment sufficiency conditions.
    CheckConditions {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        n: u32,
        #[arg(long, value_parser = ["general", "uniform", "a0"], default_value = "uniform")]
        mode: String,
        #[arg(long, default_value_t = 0.0)]
        pgg: f64,
        #[arg(long, default_value_t = 0.0)]
        pzg: f64,
        #[arg(long, default_value_t = 0.0)]
        pgz: f64,
        #[arg(long, default_value_t = 0.0)]
        pbar: f64,
        /// Block rate R'(n) in bits, for the rate-condition verdict.
        #[arg(long)]
        r_prime: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        slack: f64,
        /// Exit with code 3 unless every condition is satisfied.
        #[arg(long)]
        assert: bool,
    },
    /// Geometric excursion tail bound at excursion count k.
    TailBound {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        pe: f64,
    },
    /// Summarize a results file produced by `simulate`.
    Analyze { results: PathBuf },
}

fn resolve_seed(flag: Option<u64>, cfg: &ExperimentConfig) -> Result<u64, ConfigError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("ZOOMSTAB_SEED") {
        return v
            .parse()
            .map_err(|_| ConfigError::Parse(format!("ZOOMSTAB_SEED is not a valid u64: {v}")));
    }
    Ok(cfg.raw.run.master_seed)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run() -> Result<Option<String>, ConfigError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, seed, replicas, out, assert } => {
            let mut cfg = load_config(&config)?;
            let seed = resolve_seed(seed, &cfg)?;
            cfg.raw.run.master_seed = seed;
            if let Some(r) = replicas {
                if r == 0 {
                    return Err(ConfigError::Domain("--replicas must be >= 1".into()));
                }
                cfg.raw.run.replicas = r;
            }
            let out_path = out.or_else(|| cfg.raw.output.path.clone().map(PathBuf::from));
            let records = run_experiment(&cfg, out_path.as_deref())?;
            let summary = summarize(&records)?;
            print_json(&summary);
            if assert && summary.divergence_rate > 0.0 {
                return Ok(Some(format!(
                    "assertion failed: {:.1}% of replicas diverged",
                    summary.divergence_rate * 100.0
                )));
            }
            Ok(None)
        }
        Command::Capacity { channel, tol } => {
            let ch = channel.build()?;
            print_json(&dmc_capacity(&ch, tol)?);
            Ok(None)
        }
        Command::Exponent { channel, rate } => {
            let ch = channel.build()?;
            let e = random_coding_exponent(&ch, rate)?;
            print_json(&serde_json::json!({
                "rate_bits": rate,
                "exponent_bits": e,
                "unit": "bits"
            }));
            Ok(None)
        }
        Command::Kappa { a, delta, alpha } => {
            let bound = kappa_bound(a, delta, alpha)?;
            print_json(&serde_json::json!({
                "kappa_supremum": bound,
                "note": "admissible kappa must be strictly below this value",
                "unit": "dimensionless"
            }));
            Ok(None)
        }
        Command::CheckConditions {
            a,
            delta,
            alpha,
            kappa,
            n,
            mode,
            pgg,
            pzg,
            pgz,
            pbar,
            r_prime,
            slack,
            assert,
        } => {
            let mode = match mode.as_str() {
                "general" => ConditionMode::General,
                "uniform" => ConditionMode::Uniform,
                _ => ConditionMode::A0,
            };
            let report = check_second_moment_conditions(
                a,
                delta,
                alpha,
                kappa,
                n,
                ErrorRates { pgg, pzg, pgz, pbar },
                mode,
                r_prime,
                slack,
            )?;
            print_json(&report);
            if assert && !report.all_satisfied() {
                return Ok(Some("assertion failed: a condition is violated".into()));
            }
            Ok(None)
        }
        Command::TailBound { k, kappa, pe } => {
            print_json(&chernoff_sanov_bound(k, kappa, pe)?);
            Ok(None)
        }
        Command::Analyze { results } => {
            let records = read_records(&results)?;
            print_json(&summarize(&records)?);
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
