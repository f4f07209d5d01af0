//! Monte Carlo replication: deterministic per-replica seeding, optional
//! data-parallel execution, line-delimited result persistence, and the
//! cross-replica summary fold.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{ConfigError, Result};
use crate::sim::{ScalarLoop, SimOutput, VectorLoop};
use crate::stability::{ergodic_diagnostics, track_stopping_times, ErgodicDiagnostics, GapHistogram};

/// Per-replica result record; one JSON line each.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub replica: u64,
    pub master_seed: u64,
    pub diverged: bool,
    /// Final |x_T| (or ‖x_T‖ for vector systems).
    pub final_abs_x: f64,
    /// ln(1 + |x_T|), finite even on diverged runs.
    pub log_final_abs_x: f64,
    /// Running average of x² at T/2 and at T (0 when the trajectory was not
    /// recorded or the run diverged first).
    pub cesaro_x2_half: f64,
    pub cesaro_x2_end: f64,
    /// |end − half| / half, the late-trajectory settling measure.
    pub cesaro_rel_drift: f64,
    pub diagnostics: ErgodicDiagnostics,
    pub gap_histogram: GapHistogram,
    /// Block decode outcomes indexed
    /// [none, granular-to-granular, granular-to-overflow, overflow-to-granular].
    pub error_counts: [u64; 4],
}

/// Replica RNG: one ChaCha stream per replica index, so streams are
/// non-overlapping by construction and independent of scheduling.
pub fn replica_rng(master_seed: u64, replica: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

fn cesaro_stats(trajectory: &[f64]) -> (f64, f64, f64) {
    if trajectory.len() < 2 {
        return (0.0, 0.0, 0.0);
    }
    let t = trajectory.len();
    let half = t / 2;
    let mut sum = 0.0f64;
    let mut c_half = 0.0f64;
    for (i, &x) in trajectory.iter().enumerate() {
        sum += x * x;
        if i + 1 == half {
            c_half = sum / half as f64;
        }
    }
    let c_end = sum / t as f64;
    let drift = if c_half > 0.0 { (c_end - c_half).abs() / c_half } else { 0.0 };
    (c_half, c_end, drift)
}

fn record_from_output(cfg: &ExperimentConfig, replica: u64, out: &SimOutput) -> ExperimentRecord {
    let n = cfg.axes[0].policy.n;
    let hs: Vec<f64> = out.block_samples.iter().map(|b| b.h).collect();
    let diagnostics =
        ergodic_diagnostics(&out.trajectory, cfg.raw.diagnostics.set_a, &hs, out.diverged);
    let log = track_stopping_times(&out.block_samples, n);
    let (c_half, c_end, drift) = cesaro_stats(&out.trajectory);
    ExperimentRecord {
        config_hash: cfg.config_hash.clone(),
        replica,
        master_seed: cfg.raw.run.master_seed,
        diverged: out.diverged,
        final_abs_x: out.final_x.abs(),
        log_final_abs_x: out.final_x.abs().ln_1p(),
        cesaro_x2_half: c_half,
        cesaro_x2_end: c_end,
        cesaro_rel_drift: drift,
        diagnostics,
        gap_histogram: GapHistogram::from_log(&log),
        error_counts: out.error_counts,
    }
}

fn run_replica(cfg: &ExperimentConfig, cb: &crate::channel::BlockCodebook, replica: u64) -> Result<ExperimentRecord> {
    let mut rng = replica_rng(cfg.raw.run.master_seed, replica);
    let out = if cfg.is_vector() {
        let system = cfg.vector_system.clone().expect("vector config");
        let lp = VectorLoop {
            system,
            policies: cfg.axes.iter().map(|a| a.policy).collect(),
            zooms: cfg.axes.iter().map(|a| a.zoom).collect(),
            ks: cfg.axes.iter().map(|a| a.k).collect(),
            initial_delta_exps: cfg.axes.iter().map(|a| a.initial_delta_exp).collect(),
            codebook: cb,
            channel: &cfg.channel,
            horizon: cfg.raw.run.horizon,
            divergence_guard: cfg.raw.run.divergence_guard,
            record_trajectory: cfg.raw.run.record_trajectory,
            initial_x: None,
        };
        lp.run(&mut rng)?
    } else {
        let axis = &cfg.axes[0];
        let lp = ScalarLoop {
            system: cfg.scalar_system.expect("scalar config"),
            policy: axis.policy,
            zoom: axis.zoom,
            k: axis.k,
            initial_delta_exp: axis.initial_delta_exp,
            codebook: cb,
            decode_table: None,
            channel: &cfg.channel,
            horizon: cfg.raw.run.horizon,
            divergence_guard: cfg.raw.run.divergence_guard,
            record_trajectory: cfg.raw.run.record_trajectory,
            initial_x: None,
        };
        lp.run(&mut rng)?
    };
    Ok(record_from_output(cfg, replica, &out))
}

struct Appender<'a> {
    file: Option<Mutex<std::fs::File>>,
    path: Option<&'a Path>,
}

impl<'a> Appender<'a> {
    fn open(path: Option<&'a Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(p).map_err(|e| {
                    ConfigError::Parse(format!("cannot open {}: {e}", p.display()))
                })?,
            )),
            None => None,
        };
        Ok(Appender { file, path })
    }

    fn append<T: Serialize>(&self, value: &T) -> Result<()> {
        if let Some(m) = &self.file {
            let line = serde_json::to_string(value)
                .map_err(|e| ConfigError::Parse(format!("serialization failed: {e}")))?;
            let mut f = m.lock().expect("appender lock");
            writeln!(f, "{line}").map_err(|e| {
                ConfigError::Parse(format!(
                    "write to {} failed: {e} (partial results preserved)",
                    self.path.map(|p| p.display().to_string()).unwrap_or_default()
                ))
            })?;
        }
        Ok(())
    }
}

/// Runs all replicas (in parallel when the `parallel` feature is active),
/// appending each record to `out_path` as it completes, and returns them
/// ordered by replica index.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_path: Option<&Path>,
) -> Result<Vec<ExperimentRecord>> {
    let cb = cfg.build_codebook()?;
    let appender = Appender::open(out_path)?;
    let replicas: Vec<u64> = (0..cfg.raw.run.replicas).collect();

    #[cfg(feature = "parallel")]
    let results: Vec<Result<ExperimentRecord>> = {
        use rayon::prelude::*;
        replicas
            .par_iter()
            .map(|&r| {
                let rec = run_replica(cfg, &cb, r)?;
                appender.append(&rec)?;
                Ok(rec)
            })
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ExperimentRecord>> = replicas
        .iter()
        .map(|&r| {
            let rec = run_replica(cfg, &cb, r)?;
            appender.append(&rec)?;
            Ok(rec)
        })
        .collect();

    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    // deterministic order regardless of completion order
    records.sort_by_key(|r| r.replica);
    let summary = summarize(&records)?;
    appender.append(&SummaryLine { summary: &summary })?;
    Ok(records)
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a Summary,
}

/// Cross-replica aggregate (a deterministic fold in replica-index order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub replicas: u64,
    pub divergence_rate: f64,
    pub median_log_final_abs_x: f64,
    pub mean_cesaro_x2_end: f64,
    pub median_cesaro_x2_end: f64,
    /// Replicas whose late-trajectory relative drift stayed below 5%.
    pub settled_replicas: u64,
    pub mean_perfect_zoom_fraction: f64,
    pub merged_gap_histogram: GapHistogram,
    pub total_error_counts: [u64; 4],
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates records into a summary; records must be non-empty.
pub fn summarize(records: &[ExperimentRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(ConfigError::Domain("summarize needs at least one record".into()));
    }
    let n = records.len() as f64;
    let diverged = records.iter().filter(|r| r.diverged).count() as f64;
    let mut logs: Vec<f64> = records.iter().map(|r| r.log_final_abs_x).collect();
    let mut ends: Vec<f64> = records.iter().map(|r| r.cesaro_x2_end).collect();
    let mean_end = ends.iter().sum::<f64>() / n;
    let settled = records
        .iter()
        .filter(|r| !r.diverged && r.cesaro_rel_drift < 0.05)
        .count() as u64;
    let mean_pzf = records
        .iter()
        .map(|r| r.diagnostics.perfect_zoom_fraction)
        .sum::<f64>()
        / n;
    let mut hist = GapHistogram::default();
    let mut errs = [0u64; 4];
    for r in records {
        hist.merge(&r.gap_histogram);
        for i in 0..4 {
            errs[i] += r.error_counts[i];
        }
    }
    Ok(Summary {
        replicas: records.len() as u64,
        divergence_rate: diverged / n,
        median_log_final_abs_x: median(&mut logs),
        mean_cesaro_x2_end: mean_end,
        median_cesaro_x2_end: median(&mut ends),
        settled_replicas: settled,
        mean_perfect_zoom_fraction: mean_pzf,
        merged_gap_histogram: hist,
        total_error_counts: errs,
    })
}

/// Reads records back from a line-delimited results file (summary lines are
/// skipped).
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if line.contains("\"summary\"") {
            continue;
        }
        records.push(
            serde_json::from_str(line)
                .map_err(|e| ConfigError::Parse(format!("bad record line: {e}")))?,
        );
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config_str;

    const CFG: &str = r#"
schema_version = 1

[system]
a = 2.0
b = 1.0
noise_std = 1.0
x0_mean = 0.0
x0_std = 1.0

[quantizer]
n = 1
s = 1.0
L = 1.0
alpha = 0.5
delta = 2.0
K = 6

[channel]
kind = "noiseless"
alphabet = 7

[run]
horizon = 2000
replicas = 4
master_seed = 11
"#;

    #[test]
    fn replica_streams_differ_but_reproduce() {
        use rand::Rng;
        let mut a0 = replica_rng(5, 0);
        let mut a0b = replica_rng(5, 0);
        let mut a1 = replica_rng(5, 1);
        let x: Vec<u64> = (0..8).map(|_| a0.random()).collect();
        let y: Vec<u64> = (0..8).map(|_| a0b.random()).collect();
        let z: Vec<u64> = (0..8).map(|_| a1.random()).collect();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn experiment_reproducible_and_stable() {
        let cfg = load_config_str(CFG).unwrap();
        let a = run_experiment(&cfg, None).unwrap();
        let b = run_experiment(&cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| !r.diverged));
        let summary = summarize(&a).unwrap();
        assert_eq!(summary.divergence_rate, 0.0);
        assert!(summary.mean_perfect_zoom_fraction > 0.5);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let cfg = load_config_str(CFG).unwrap();
        let records = run_experiment(&cfg, Some(&path)).unwrap();
        let read = read_records(&path).unwrap();
        let mut read_sorted = read;
        read_sorted.sort_by_key(|r| r.replica);
        assert_eq!(records, read_sorted);
    }

    #[test]
    fn summary_examples() {
        let cfg = load_config_str(CFG).unwrap();
        let records = run_experiment(&cfg, None).unwrap();
        // single record: summary equals that record's values
        let s1 = summarize(&records[..1]).unwrap();
        assert_eq!(s1.mean_cesaro_x2_end, records[0].cesaro_x2_end);
        assert_eq!(s1.merged_gap_histogram, records[0].gap_histogram);
        // merged histogram equals histogram of the concatenation
        let s = summarize(&records).unwrap();
        let mut manual = GapHistogram::default();
        for r in &records {
            manual.merge(&r.gap_histogram);
        }
        assert_eq!(s.merged_gap_histogram, manual);
        // divergence rate on a synthetic mixed pair
        let mut pair = vec![records[0].clone(), records[1].clone()];
        pair[0].diverged = true;
        assert_eq!(summarize(&pair).unwrap().divergence_rate, 0.5);
    }
}
