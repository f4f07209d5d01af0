//! Trajectory-level stochastic-stability diagnostics: stopping times at
//! perfect-zoom re-entries, geometric tail fitting with confidence limits,
//! empirical drift-inequality verification, and Cesàro/recurrence checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::channel::ErrorClass;
use crate::error::{ConfigError, Result};

/// One closed-loop observation at a block boundary t = kn.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockSample {
    pub t: u64,
    /// Scalar state (or state norm for vector systems).
    pub x: f64,
    /// Quantizer bin size at t.
    pub delta: f64,
    /// Zoom ratio h = x / (Δ·2^{R'−1}); the state is perfectly zoomed iff |h| ≤ 1.
    pub h: f64,
    /// Decoding outcome of the block that ended at t (None for t = 0).
    pub error_class: ErrorClass,
}

/// One inter-stop interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalRecord {
    /// Gap in blocks: (τ_{z+1} − τ_z)/n.
    pub gap_blocks: u64,
    /// Error class of the first block after τ_z (the case split that decides
    /// how the excursion starts).
    pub first_error: ErrorClass,
    /// Counts of each error class observed during the interval,
    /// indexed [none, granular-to-granular, granular-to-overflow, overflow-to-granular].
    pub error_counts: [u64; 4],
    /// Bin size at the start of the interval.
    pub delta_at_start: f64,
}

/// Stopping times τ_z of perfect-zoom re-entry and the annotated intervals
/// between them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingTimeLog {
    pub n: u32,
    /// τ₀ = 0 followed by the recorded re-entry times (strictly increasing,
    /// all multiples of n).
    pub tau: Vec<u64>,
    pub intervals: Vec<IntervalRecord>,
}

fn class_slot(c: ErrorClass) -> usize {
    match c {
        ErrorClass::None => 0,
        ErrorClass::TypeIA => 1,
        ErrorClass::TypeIB => 2,
        ErrorClass::TypeII => 3,
    }
}

/// Scans block-boundary samples and records every re-entry into the
/// perfectly zoomed region: τ_{z+1} = inf{kn > τ_z : |h_{kn}| ≤ 1}.
pub fn track_stopping_times(samples: &[BlockSample], n: u32) -> StoppingTimeLog {
    let mut tau = vec![0u64];
    let mut intervals = Vec::new();
    let mut interval_start_idx = 0usize;
    for (i, s) in samples.iter().enumerate() {
        if s.t == 0 {
            continue;
        }
        if s.h.abs() <= 1.0 {
            let prev_t = *tau.last().unwrap();
            let gap_blocks = (s.t - prev_t) / n as u64;
            let first_error = samples
                .get(interval_start_idx + 1)
                .map(|b| b.error_class)
                .unwrap_or(ErrorClass::None);
            let mut error_counts = [0u64; 4];
            for b in &samples[interval_start_idx + 1..=i] {
                error_counts[class_slot(b.error_class)] += 1;
            }
            intervals.push(IntervalRecord {
                gap_blocks,
                first_error,
                error_counts,
                delta_at_start: samples[interval_start_idx].delta,
            });
            tau.push(s.t);
            interval_start_idx = i;
        }
    }
    StoppingTimeLog { n, tau, intervals }
}

/// Gap histogram in blocks; associative/commutative merge for cross-replica
/// aggregation.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct GapHistogram {
    pub counts: BTreeMap<u64, u64>,
}

impl GapHistogram {
    pub fn from_log(log: &StoppingTimeLog) -> Self {
        let mut counts = BTreeMap::new();
        for iv in &log.intervals {
            *counts.entry(iv.gap_blocks).or_insert(0) += 1;
        }
        GapHistogram { counts }
    }

    pub fn merge(&mut self, other: &GapHistogram) {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Clopper–Pearson one-sided 95% upper confidence limit for `x` successes in
/// `n` trials.
pub fn clopper_pearson_upper(x: u64, n: u64) -> f64 {
    if n == 0 || x >= n {
        return 1.0;
    }
    Beta::new((x + 1) as f64, (n - x) as f64)
        .expect("valid beta parameters")
        .inverse_cdf(0.95)
}

/// Clopper–Pearson one-sided 95% lower confidence limit.
pub fn clopper_pearson_lower(x: u64, n: u64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if x >= n {
        return Beta::new(n as f64, 1.0).expect("valid beta parameters").inverse_cdf(0.05);
    }
    Beta::new(x as f64, (n - x + 1) as f64)
        .expect("valid beta parameters")
        .inverse_cdf(0.05)
}

/// One point of the empirical tail curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailPoint {
    pub k: u64,
    /// Number of gaps ≥ k.
    pub count: u64,
    pub p_hat: f64,
    pub upper95: f64,
    pub lower95: f64,
    /// Geometric bound (e·Pe^κ)^{k−2}, present only in the validity regime
    /// k ≥ ⌈1/κ⌉ + 1.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailVerdict {
    Fitted,
    /// Fewer than 100 usable gap samples.
    Undersampled,
}

/// Result of fitting the excursion-length tail against the geometric bound.
/// The bound is asymptotic in the starting bin size, so gaps are filtered to
/// stops with Δ ≥ `delta_min` before comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricTailFit {
    pub verdict: TailVerdict,
    pub samples_used: u64,
    pub tail: Vec<TailPoint>,
    /// Least-squares slope of ln P(gap ≥ k) against k; −∞ when all mass sits
    /// at the minimum gap.
    pub fitted_log_slope: f64,
    /// Smallest k at which the bound applies: ⌈1/κ⌉ + 1.
    pub k_min: u64,
    /// k values where the empirical lower confidence limit exceeds the bound.
    pub violations: Vec<u64>,
}

/// Fits the empirical tail of the gap distribution and compares it with the
/// geometric domination curve (e·Pe^κ)^{k−2} in its validity regime.
pub fn fit_geometric_tail(
    log: &StoppingTimeLog,
    pe: f64,
    kappa: f64,
    delta_min: f64,
) -> Result<GeometricTailFit> {
    if !(pe > 0.0 && pe < 1.0) {
        return Err(ConfigError::Domain(format!("Pe must be in (0,1), got {pe}")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(ConfigError::Domain(format!("kappa must be in (0,1), got {kappa}")));
    }
    let gaps: Vec<u64> = log
        .intervals
        .iter()
        .filter(|iv| iv.delta_at_start >= delta_min)
        .map(|iv| iv.gap_blocks)
        .collect();
    let total = gaps.len() as u64;
    let k_min = (1.0 / kappa).ceil() as u64 + 1;
    if total < 100 {
        return Ok(GeometricTailFit {
            verdict: TailVerdict::Undersampled,
            samples_used: total,
            tail: Vec::new(),
            fitted_log_slope: f64::NAN,
            k_min,
            violations: Vec::new(),
        });
    }
    let max_gap = *gaps.iter().max().unwrap();
    let base = std::f64::consts::E * pe.powf(kappa);
    let mut tail = Vec::new();
    for k in 1..=max_gap {
        let count = gaps.iter().filter(|&&g| g >= k).count() as u64;
        let p_hat = count as f64 / total as f64;
        let bound = if k >= k_min { Some(base.powf((k - 2) as f64)) } else { None };
        tail.push(TailPoint {
            k,
            count,
            p_hat,
            upper95: clopper_pearson_upper(count, total),
            lower95: clopper_pearson_lower(count, total),
            bound,
        });
    }
    // least-squares slope of ln(p_hat) over the strictly positive tail
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|p| p.p_hat > 0.0)
        .map(|p| (p.k as f64, p.p_hat.ln()))
        .collect();
    let fitted_log_slope = if pts.len() < 2 {
        f64::NEG_INFINITY
    } else {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let violations = tail
        .iter()
        .filter(|p| p.bound.map(|b| p.lower95 > b).unwrap_or(false))
        .map(|p| p.k)
        .collect();
    Ok(GeometricTailFit {
        verdict: TailVerdict::Fitted,
        samples_used: total,
        tail,
        fitted_log_slope,
        k_min,
        violations,
    })
}

/// The drift inequality under test, expressed through closures on an opaque
/// state type: outside the set C,
/// E[V(next stop)] ≤ V(current) − δ(current) (+ b inside C), and
/// E[Σ f between stops] ≤ δ(current).
pub struct DriftCheckSpec<'a, S> {
    pub v: Box<dyn Fn(&S) -> f64 + 'a>,
    pub delta_fn: Box<dyn Fn(&S) -> f64 + 'a>,
    pub in_c: Box<dyn Fn(&S) -> bool + 'a>,
    /// Partition key for conditional-expectation binning (default scheme:
    /// dyadic bins of log₂ of the scale variable).
    pub bin: Box<dyn Fn(&S) -> i64 + 'a>,
    pub b: f64,
    /// Minimum samples per bin before a verdict is attempted.
    pub min_bin_count: usize,
}

/// One drift sample: state at a stop, state at the next stop, and the sum of
/// f over the intervening steps.
pub struct DriftSample<S> {
    pub current: S,
    pub next: S,
    pub sum_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftVerdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Per-bin conditional-mean estimates with one-sided 95% CIs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftBinRecord {
    pub bin: i64,
    pub count: usize,
    /// Mean of V(next) − V(current) + δ(current); must be ≤ 0 outside C.
    pub v_margin_mean: f64,
    pub v_margin_upper95: f64,
    /// Mean of Σf − δ(current); must be ≤ 0.
    pub f_margin_mean: f64,
    pub f_margin_upper95: f64,
    pub verdict: DriftVerdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    pub bins: Vec<DriftBinRecord>,
    /// Samples starting inside C (excluded from the inequality check).
    pub skipped_in_c: usize,
    pub verdict: DriftVerdict,
}

fn one_sided_bounds(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    (mean, mean + 1.645 * se, mean - 1.645 * se)
}

/// Estimates the conditional drift margins by binning starting states and
/// renders PASS / FAIL / INCONCLUSIVE:
/// a bin PASSes when the one-sided 95% upper limit of both margins is ≤ 0,
/// FAILs when a lower limit is > 0, and is INCONCLUSIVE otherwise (including
/// undersampled bins). The overall verdict is FAIL if any bin fails, else
/// INCONCLUSIVE if any bin is inconclusive, else PASS.
pub fn verify_drift<S>(samples: &[DriftSample<S>], spec: &DriftCheckSpec<'_, S>) -> DriftReport {
    let mut by_bin: BTreeMap<i64, Vec<&DriftSample<S>>> = BTreeMap::new();
    let mut skipped_in_c = 0usize;
    for s in samples {
        if (spec.in_c)(&s.current) {
            skipped_in_c += 1;
            continue;
        }
        by_bin.entry((spec.bin)(&s.current)).or_default().push(s);
    }
    let mut bins = Vec::new();
    for (bin, group) in by_bin {
        let count = group.len();
        if count < spec.min_bin_count {
            bins.push(DriftBinRecord {
                bin,
                count,
                v_margin_mean: f64::NAN,
                v_margin_upper95: f64::NAN,
                f_margin_mean: f64::NAN,
                f_margin_upper95: f64::NAN,
                verdict: DriftVerdict::Inconclusive,
            });
            continue;
        }
        let v_margins: Vec<f64> = group
            .iter()
            .map(|s| (spec.v)(&s.next) - (spec.v)(&s.current) + (spec.delta_fn)(&s.current))
            .collect();
        let f_margins: Vec<f64> =
            group.iter().map(|s| s.sum_f - (spec.delta_fn)(&s.current)).collect();
        let (vm, vu, vl) = one_sided_bounds(&v_margins);
        let (fm, fu, fl) = one_sided_bounds(&f_margins);
        let verdict = if vl > 0.0 || fl > 0.0 {
            DriftVerdict::Fail
        } else if vu <= 0.0 && fu <= 0.0 {
            DriftVerdict::Pass
        } else {
            DriftVerdict::Inconclusive
        };
        bins.push(DriftBinRecord {
            bin,
            count,
            v_margin_mean: vm,
            v_margin_upper95: vu,
            f_margin_mean: fm,
            f_margin_upper95: fu,
            verdict,
        });
    }
    let verdict = if bins.iter().any(|b| b.verdict == DriftVerdict::Fail) {
        DriftVerdict::Fail
    } else if bins.is_empty() || bins.iter().any(|b| b.verdict == DriftVerdict::Inconclusive) {
        DriftVerdict::Inconclusive
    } else {
        DriftVerdict::Pass
    };
    DriftReport { bins, skipped_in_c, verdict }
}

/// Cesàro-average / recurrence evidence. Finite runs can only be
/// "consistent with" asymptotic-mean-stationarity, never certify it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErgodicDiagnostics {
    /// (t, running average of x²) at log-spaced checkpoints plus the horizon.
    pub cesaro_x2: Vec<(u64, f64)>,
    /// (t, running average of ln(1+|x|)).
    pub cesaro_logx: Vec<(u64, f64)>,
    /// Visits to the configured compact set A.
    pub recurrence_count: u64,
    pub diverged: bool,
    /// Fraction of block samples with |h| ≤ 1.
    pub perfect_zoom_fraction: f64,
}

/// Streams through a scalar trajectory computing running Cesàro averages at
/// logarithmically spaced checkpoints, counting visits to `set_a`, and
/// recording the perfect-zoom fraction over the supplied block samples.
pub fn ergodic_diagnostics(
    trajectory: &[f64],
    set_a: (f64, f64),
    h_samples: &[f64],
    diverged: bool,
) -> ErgodicDiagnostics {
    let t_len = trajectory.len() as u64;
    let mut checkpoints: Vec<u64> = Vec::new();
    let mut c = 1u64;
    while c < t_len {
        checkpoints.push(c);
        c *= 2;
    }
    if t_len > 0 {
        checkpoints.push(t_len);
    }
    let mut cesaro_x2 = Vec::new();
    let mut cesaro_logx = Vec::new();
    let mut sum_x2 = 0.0f64;
    let mut sum_log = 0.0f64;
    let mut recurrence_count = 0u64;
    let mut next_cp = 0usize;
    for (i, &x) in trajectory.iter().enumerate() {
        sum_x2 += x * x;
        sum_log += x.abs().ln_1p();
        if x >= set_a.0 && x <= set_a.1 {
            recurrence_count += 1;
        }
        let t = (i + 1) as u64;
        if next_cp < checkpoints.len() && t == checkpoints[next_cp] {
            cesaro_x2.push((t, sum_x2 / t as f64));
            cesaro_logx.push((t, sum_log / t as f64));
            next_cp += 1;
        }
    }
    let perfect = h_samples.iter().filter(|h| h.abs() <= 1.0).count();
    let perfect_zoom_fraction = if h_samples.is_empty() {
        0.0
    } else {
        perfect as f64 / h_samples.len() as f64
    };
    ErgodicDiagnostics {
        cesaro_x2,
        cesaro_logx,
        recurrence_count,
        diverged,
        perfect_zoom_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn sample(t: u64, h: f64, delta: f64, ec: ErrorClass) -> BlockSample {
        BlockSample { t, x: h * delta, delta, h, error_class: ec }
    }

    #[test]
    fn stops_every_block_when_error_free() {
        let n = 4u32;
        let samples: Vec<BlockSample> =
            (0..=10).map(|k| sample(k * n as u64, 0.5, 1.0, ErrorClass::None)).collect();
        let log = track_stopping_times(&samples, n);
        assert_eq!(log.tau.len(), 11);
        assert!(log.intervals.iter().all(|iv| iv.gap_blocks == 1));
        assert!(log.tau.windows(2).all(|w| w[1] > w[0] && w[1] % n as u64 == 0));
    }

    #[test]
    fn scripted_overflow_gap() {
        // 3 blocks out of zoom, then recovery: gap of 4 blocks
        let n = 2u32;
        let mut samples = vec![sample(0, 0.5, 1.0, ErrorClass::None)];
        for k in 1..=3u64 {
            samples.push(sample(k * 2, 2.0, 4.0, ErrorClass::TypeIB));
        }
        samples.push(sample(8, 0.9, 2.0, ErrorClass::None));
        let log = track_stopping_times(&samples, n);
        assert_eq!(log.tau, vec![0, 8]);
        assert_eq!(log.intervals.len(), 1);
        assert_eq!(log.intervals[0].gap_blocks, 4);
        assert_eq!(log.intervals[0].first_error, ErrorClass::TypeIB);
        assert_eq!(log.intervals[0].error_counts[2], 3);
        assert_eq!(log.intervals[0].delta_at_start, 1.0);
    }

    #[test]
    fn empty_trajectory_gives_origin_only() {
        let log = track_stopping_times(&[], 4);
        assert_eq!(log.tau, vec![0]);
        assert!(log.intervals.is_empty());
    }

    #[test]
    fn histogram_merge_is_concatenation() {
        let n = 1u32;
        let mk = |gaps: &[u64]| {
            let mut t = 0;
            let mut samples = vec![sample(0, 0.0, 1.0, ErrorClass::None)];
            for &g in gaps {
                for b in 1..g {
                    samples.push(sample(t + b, 5.0, 1.0, ErrorClass::TypeIA));
                }
                t += g;
                samples.push(sample(t, 0.0, 1.0, ErrorClass::None));
            }
            GapHistogram::from_log(&track_stopping_times(&samples, n))
        };
        let mut a = mk(&[1, 2, 2, 5]);
        let b = mk(&[2, 3]);
        let joint = mk(&[1, 2, 2, 5, 2, 3]);
        a.merge(&b);
        assert_eq!(a, joint);
    }

    #[test]
    fn clopper_pearson_sane() {
        let u = clopper_pearson_upper(0, 100);
        assert!(u > 0.0 && u < 0.05, "{u}");
        assert_eq!(clopper_pearson_lower(0, 100), 0.0);
        let l = clopper_pearson_lower(50, 100);
        let u2 = clopper_pearson_upper(50, 100);
        assert!(l < 0.5 && u2 > 0.5);
    }

    #[test]
    fn tail_fit_undersampled() {
        let log = track_stopping_times(
            &[sample(0, 0.0, 1.0, ErrorClass::None), sample(1, 0.0, 1.0, ErrorClass::None)],
            1,
        );
        let fit = fit_geometric_tail(&log, 0.1, 0.5, 0.0).unwrap();
        assert_eq!(fit.verdict, TailVerdict::Undersampled);
    }

    fn log_from_gaps(gaps: &[u64]) -> StoppingTimeLog {
        let mut t = 0u64;
        let tau = std::iter::once(0)
            .chain(gaps.iter().map(|&g| {
                t += g;
                t
            }))
            .collect();
        StoppingTimeLog {
            n: 1,
            tau,
            intervals: gaps
                .iter()
                .map(|&g| IntervalRecord {
                    gap_blocks: g,
                    first_error: ErrorClass::None,
                    error_counts: [0; 4],
                    delta_at_start: 1e6,
                })
                .collect(),
        }
    }

    #[test]
    fn tail_fit_calibrated_on_geometric_data() {
        // gaps = 1 + Geometric(p): P(gap >= k) = (1-p)^{k-1}
        let p = 0.4f64;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let gaps: Vec<u64> = (0..20_000)
            .map(|_| {
                let mut g = 1u64;
                while rng.random::<f64>() >= p {
                    g += 1;
                }
                g
            })
            .collect();
        let fit = fit_geometric_tail(&log_from_gaps(&gaps), 0.3, 0.5, 0.0).unwrap();
        assert_eq!(fit.verdict, TailVerdict::Fitted);
        let expect = (1.0 - p).ln();
        assert!((fit.fitted_log_slope - expect).abs() < 0.05, "{}", fit.fitted_log_slope);
        // the one-sided 95% limits form a 90% two-sided interval; require
        // coverage of the truth at the large majority of well-sampled k
        let checked: Vec<&TailPoint> = fit.tail.iter().filter(|pt| pt.count >= 50).collect();
        let covered = checked
            .iter()
            .filter(|pt| {
                let truth = (1.0 - p).powi(pt.k as i32 - 1);
                pt.lower95 <= truth && truth <= pt.upper95
            })
            .count();
        assert!(
            covered * 10 >= checked.len() * 8,
            "covered {covered}/{}",
            checked.len()
        );
    }

    #[test]
    fn tail_fit_noiseless_mass_at_one() {
        let gaps = vec![1u64; 200];
        let fit = fit_geometric_tail(&log_from_gaps(&gaps), 0.01, 0.5, 0.0).unwrap();
        assert_eq!(fit.tail[0].p_hat, 1.0);
        assert_eq!(fit.fitted_log_slope, f64::NEG_INFINITY);
        assert!(fit.violations.is_empty());
    }

    #[test]
    fn bound_curve_arithmetic() {
        // κ=1/3 ⇒ k_min = 4; bound at k: (e·0.01^{1/3})^{k−2}
        let gaps: Vec<u64> = (0..200).map(|i| 1 + (i % 5) as u64).collect();
        let fit = fit_geometric_tail(&log_from_gaps(&gaps), 0.01, 1.0 / 3.0, 0.0).unwrap();
        assert_eq!(fit.k_min, 4);
        let base = std::f64::consts::E * 0.01f64.powf(1.0 / 3.0);
        let pt = fit.tail.iter().find(|p| p.k == 4).unwrap();
        assert!((pt.bound.unwrap() - base.powi(2)).abs() < 1e-15);
        assert!(fit.tail.iter().find(|p| p.k == 3).unwrap().bound.is_none());
    }

    #[test]
    fn delta_min_filters_stops() {
        let mut log = log_from_gaps(&vec![1u64; 150]);
        for iv in log.intervals.iter_mut().take(100) {
            iv.delta_at_start = 0.5;
        }
        let fit = fit_geometric_tail(&log, 0.1, 0.5, 1.0).unwrap();
        assert_eq!(fit.verdict, TailVerdict::Undersampled);
        assert_eq!(fit.samples_used, 50);
    }

    fn scalar_spec<'a>(delta: f64, c_half: f64) -> DriftCheckSpec<'a, f64> {
        DriftCheckSpec {
            v: Box::new(|x: &f64| x * x),
            delta_fn: Box::new(move |_x: &f64| delta),
            in_c: Box::new(move |x: &f64| x.abs() <= c_half),
            bin: Box::new(|x: &f64| x.abs().log2().floor() as i64),
            b: 0.0,
            min_bin_count: 30,
        }
    }

    #[test]
    fn drift_pass_on_decreasing_chain() {
        // V = |x| decreases by exactly 1 per stop outside C, with δ = 1:
        // the margin is exactly zero pathwise, so the inequality holds
        let samples: Vec<DriftSample<f64>> = (0..200)
            .map(|i| {
                let x = 100.0 + (i % 50) as f64;
                DriftSample { current: x, next: x - 1.0, sum_f: 0.5 }
            })
            .collect();
        let spec = DriftCheckSpec {
            v: Box::new(|x: &f64| x.abs()),
            delta_fn: Box::new(|_: &f64| 1.0),
            in_c: Box::new(|x: &f64| x.abs() <= 2.0),
            bin: Box::new(|x: &f64| x.abs().log2().floor() as i64),
            b: 0.0,
            min_bin_count: 30,
        };
        let rep = verify_drift(&samples, &spec);
        assert_eq!(rep.verdict, DriftVerdict::Pass);
    }

    #[test]
    fn drift_fail_on_increasing_chain() {
        let samples: Vec<DriftSample<f64>> = (0..200)
            .map(|i| {
                let v = 100.0 + (i % 50) as f64;
                DriftSample { current: v.sqrt(), next: (v + 5.0).sqrt(), sum_f: 0.0 }
            })
            .collect();
        let spec = scalar_spec(1.0, 2.0);
        let rep = verify_drift(&samples, &spec);
        assert_eq!(rep.verdict, DriftVerdict::Fail);
    }

    #[test]
    fn drift_inconclusive_when_undersampled() {
        let samples: Vec<DriftSample<f64>> =
            (0..5).map(|_| DriftSample { current: 8.0, next: 7.0, sum_f: 0.0 }).collect();
        let spec = scalar_spec(1.0, 2.0);
        assert_eq!(verify_drift(&samples, &spec).verdict, DriftVerdict::Inconclusive);
    }

    #[test]
    fn drift_ar1_passes() {
        // x' = 0.5x + w, V = x², δ(x) = 0.5·V(x), C = [−10,10]
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut samples = Vec::new();
        for i in 0..20_000 {
            let x = 10.5 + (i % 100) as f64 * 0.4; // start outside C
            let w = crate::plant::sample_noise(&mut rng, 1.0);
            samples.push(DriftSample { current: x, next: 0.5 * x + w, sum_f: 0.0 });
        }
        let spec = DriftCheckSpec {
            v: Box::new(|x: &f64| x * x),
            delta_fn: Box::new(|x: &f64| 0.5 * x * x),
            in_c: Box::new(|x: &f64| x.abs() <= 10.0),
            bin: Box::new(|x: &f64| x.abs().log2().floor() as i64),
            b: 0.0,
            min_bin_count: 30,
        };
        assert_eq!(verify_drift(&samples, &spec).verdict, DriftVerdict::Pass);
    }

    #[test]
    fn ergodic_constant_zero() {
        let traj = vec![0.0; 1000];
        let d = ergodic_diagnostics(&traj, (-1.0, 1.0), &[], false);
        assert!(d.cesaro_x2.iter().all(|&(_, v)| v == 0.0));
        assert_eq!(d.recurrence_count, 1000);
        assert!(!d.diverged);
    }

    #[test]
    fn ergodic_checkpoints_match_suffix_recomputation() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let traj: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let d = ergodic_diagnostics(&traj, (-1.0, 1.0), &[0.5, 2.0], false);
        for &(t, v) in &d.cesaro_x2 {
            let direct: f64 =
                traj[..t as usize].iter().map(|x| x * x).sum::<f64>() / t as f64;
            assert!((v - direct).abs() < 1e-12);
        }
        assert_eq!(d.perfect_zoom_fraction, 0.5);
    }

    #[test]
    fn ergodic_doubling_trajectory_flagged() {
        let traj: Vec<f64> = (0..60).map(|t| 2.0f64.powi(t)).collect();
        let d = ergodic_diagnostics(&traj, (-1.0, 1.0), &[], true);
        assert!(d.diverged);
        let last = d.cesaro_x2.last().unwrap().1;
        assert!(last > 1e30);
    }
}
