//! Threshold and sufficiency-condition calculators: channel capacity,
//! minimum stabilization rate, the excursion exponent bound κ, the
//! random-coding error exponent, the Chernoff–Sanov tail bound, and the
//! second-moment stability condition checkers.
//!
//! Unit convention: every rate or capacity is in bits (base-2 logs); large-
//! deviation divergences and exponent terms that multiply probabilities are
//! in nats (natural logs). Struct fields carry explicit unit tags.

use serde::{Deserialize, Serialize};

use crate::channel::DmcModel;
use crate::error::{ConfigError, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Output of the capacity computation (alternating maximization with a
/// per-iteration upper/lower bracket).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity_bits: f64,
    pub optimal_input_dist: Vec<f64>,
    pub iterations: usize,
    pub tolerance: f64,
    pub unit: String,
}

/// Channel capacity of a DMC in bits, via alternating maximization over the
/// input distribution. Each iteration yields a lower bound (the mutual
/// information of the current input) and an upper bound (the max relative
/// entropy of a row to the induced output); iteration stops when the bracket
/// width is ≤ `tol`.
pub fn dmc_capacity(ch: &DmcModel, tol: f64) -> Result<CapacityResult> {
    if !(tol > 0.0) {
        return Err(ConfigError::Domain(format!("capacity tolerance must be > 0, got {tol}")));
    }
    let m = ch.input_size();
    let k = ch.output_size();
    let mut p = vec![1.0 / m as f64; m];
    let max_iters = 100_000;
    let mut iterations = 0;
    let mut lower_bits;
    loop {
        iterations += 1;
        // induced output distribution
        let mut q = vec![0.0f64; k];
        for (j, &pj) in p.iter().enumerate() {
            for y in 0..k {
                q[y] += pj * ch.prob(j, y);
            }
        }
        // D(P(·|j) || q) in nats
        let d: Vec<f64> = (0..m)
            .map(|j| {
                (0..k)
                    .map(|y| {
                        let w = ch.prob(j, y);
                        if w > 0.0 {
                            w * (w / q[y]).ln()
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect();
        let lower: f64 = p.iter().zip(&d).map(|(&pj, &dj)| pj * dj).sum();
        let upper = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lower_bits = lower / LN2;
        let upper_bits = upper / LN2;
        if upper_bits - lower_bits <= tol || iterations >= max_iters {
            break;
        }
        // multiplicative update p'_j ∝ p_j e^{D_j}
        let dmax = upper;
        let mut z = 0.0;
        for (pj, &dj) in p.iter_mut().zip(&d) {
            *pj *= (dj - dmax).exp();
            z += *pj;
        }
        for pj in p.iter_mut() {
            *pj /= z;
        }
    }
    Ok(CapacityResult {
        capacity_bits: lower_bits.max(0.0),
        optimal_input_dist: p,
        iterations,
        tolerance: tol,
        unit: "bits".into(),
    })
}

/// Minimum rate needed to stabilize a linear system with the given open-loop
/// eigenvalues: Σ_i max(0, log₂|λ_i|) bits per time step.
pub fn min_stabilization_rate(eigenvalues: &[f64]) -> f64 {
    eigenvalues.iter().map(|l| l.abs().log2().max(0.0)).sum()
}

/// Supremum of admissible excursion exponents κ:
/// 1 / log_{(|a|+δ)/|a|}((|a|+δ)/α). Callers must pick κ strictly below it.
pub fn kappa_bound(a: f64, delta: f64, alpha: f64) -> Result<f64> {
    let aa = a.abs();
    if aa < 1.0 {
        return Err(ConfigError::Domain(format!("|a| must be >= 1, got {aa}")));
    }
    if !(delta > 0.0) {
        return Err(ConfigError::Domain(format!("delta must be > 0, got {delta}")));
    }
    if !(alpha > 0.0) || alpha >= aa + delta {
        return Err(ConfigError::Domain(format!(
            "alpha must satisfy 0 < alpha < |a|+delta, got {alpha}"
        )));
    }
    // change of base: 1/log_b(x) = ln(b)/ln(x)
    Ok(((aa + delta) / aa).ln() / ((aa + delta) / alpha).ln())
}

/// Precomputed E₀(ρ) curve for one channel, so the exponent can be evaluated
/// at many rates without redoing the inner optimizations. ρ runs on a 10⁻³
/// grid over [0,1]; the final maximization over ρ is refined by golden
/// section around the best grid point.
#[derive(Debug, Clone)]
pub struct ExponentCurve {
    channel: DmcModel,
    rho_grid: Vec<f64>,
    e0_bits: Vec<f64>,
}

const RHO_STEP: f64 = 1e-3;

impl ExponentCurve {
    pub fn new(ch: &DmcModel) -> Self {
        let steps = (1.0 / RHO_STEP).round() as usize;
        let rho_grid: Vec<f64> = (0..=steps).map(|i| i as f64 * RHO_STEP).collect();
        let e0_bits = rho_grid.iter().map(|&rho| e0_optimized_bits(ch, rho)).collect();
        ExponentCurve { channel: ch.clone(), rho_grid, e0_bits }
    }

    /// E_r(R) = max_ρ [E₀(ρ) − ρR], in bits, clamped at 0.
    pub fn exponent(&self, r_bits: f64) -> f64 {
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for (i, (&rho, &e0)) in self.rho_grid.iter().zip(&self.e0_bits).enumerate() {
            let v = e0 - rho * r_bits;
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        // golden-section refinement of ρ within one grid cell on each side
        let lo = if best == 0 { 0.0 } else { self.rho_grid[best - 1] };
        let hi = if best + 1 < self.rho_grid.len() { self.rho_grid[best + 1] } else { 1.0 };
        let refined = golden_max(
            |rho| e0_optimized_bits(&self.channel, rho) - rho * r_bits,
            lo,
            hi,
            1e-7,
        );
        best_val.max(refined).max(0.0)
    }
}

/// Random-coding exponent E_r(R) in bits for one rate. Building the curve is
/// the dominant cost; evaluate many rates through [`ExponentCurve`] instead.
pub fn random_coding_exponent(ch: &DmcModel, r_bits: f64) -> Result<f64> {
    if !(r_bits >= 0.0) {
        return Err(ConfigError::Domain(format!("rate must be >= 0, got {r_bits}")));
    }
    Ok(ExponentCurve::new(ch).exponent(r_bits))
}

/// max_Q E₀(ρ, Q) in bits, where
/// E₀(ρ,Q) = −log₂ Σ_y (Σ_x Q(x) P(y|x)^{1/(1+ρ)})^{1+ρ}.
/// The inner minimization of the sum is convex in Q and solved by the
/// alternating multiplicative update Q'(x) ∝ Q(x)·g_x^{−1/ρ} with
/// g_x = Σ_y a_{xy} α_y^ρ, with a first-order duality bracket as the stop
/// rule.
fn e0_optimized_bits(ch: &DmcModel, rho: f64) -> f64 {
    if rho <= 1e-12 {
        return 0.0;
    }
    let m = ch.input_size();
    let k = ch.output_size();
    let exp = 1.0 / (1.0 + rho);
    let a: Vec<Vec<f64>> = (0..m)
        .map(|x| (0..k).map(|y| ch.prob(x, y).powf(exp)).collect())
        .collect();
    let mut q = vec![1.0 / m as f64; m];
    let mut f = f64::INFINITY;
    for _ in 0..10_000 {
        let mut alpha_y = vec![0.0f64; k];
        for (x, row) in a.iter().enumerate() {
            for (y, &axy) in row.iter().enumerate() {
                alpha_y[y] += q[x] * axy;
            }
        }
        let g: Vec<f64> = (0..m)
            .map(|x| (0..k).map(|y| a[x][y] * alpha_y[y].powf(rho)).sum())
            .collect();
        f = q.iter().zip(&g).map(|(&qx, &gx)| qx * gx).sum();
        // convexity bracket: F* >= (1+ρ)·min_x g_x − ρ·F
        let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let f_lb = (1.0 + rho) * gmin - rho * f;
        if f - f_lb <= 1e-13 * f.max(1e-300) {
            break;
        }
        let mut z = 0.0;
        for (qx, &gx) in q.iter_mut().zip(&g) {
            if gx > 0.0 {
                *qx *= gx.powf(-1.0 / rho);
            }
            z += *qx;
        }
        if !(z > 0.0) || !z.is_finite() {
            break;
        }
        for qx in q.iter_mut() {
            *qx /= z;
        }
    }
    -f.log2()
}

/// Golden-section maximization of a unimodal function on [lo, hi].
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Both forms of the geometric excursion tail bound at excursion count `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChernoffSanovBound {
    /// ζ = κ − (1−κ)/(k−2), the tail fraction being bounded.
    pub zeta: f64,
    /// D(ζ, Pe) = ζ ln(ζ/Pe) + (1−ζ) ln((1−ζ)/(1−Pe)).
    pub divergence_nats: f64,
    /// e^{−(k−2) D(ζ, Pe)}.
    pub chernoff: f64,
    /// (e · Pe^ζ)^{k−2}, the weakened closed form.
    pub weakened: f64,
}

/// Binary relative entropy D(ζ || Pe) in nats.
pub fn binary_divergence_nats(zeta: f64, pe: f64) -> f64 {
    let term = |z: f64, p: f64| if z > 0.0 { z * (z / p).ln() } else { 0.0 };
    term(zeta, pe) + term(1.0 - zeta, 1.0 - pe)
}

/// Large-deviation bound on the probability that an excursion needs at least
/// `k` blocks, driven by the per-block escape failure probability `Pe` and
/// the excursion exponent `kappa`. Valid only when ζ ∈ (Pe, 1).
pub fn chernoff_sanov_bound(k: u64, kappa: f64, pe: f64) -> Result<ChernoffSanovBound> {
    if k < 3 {
        return Err(ConfigError::Domain(format!("k must be >= 3, got {k}")));
    }
    if !(pe > 0.0 && pe < 1.0) {
        return Err(ConfigError::Domain(format!("Pe must be in (0,1), got {pe}")));
    }
    let km2 = (k - 2) as f64;
    let zeta = kappa - (1.0 - kappa) / km2;
    if !(zeta > pe && zeta < 1.0) {
        return Err(ConfigError::Domain(format!(
            "zeta = {zeta:.6} outside (Pe, 1) = ({pe}, 1); bound not applicable"
        )));
    }
    let d = binary_divergence_nats(zeta, pe);
    Ok(ChernoffSanovBound {
        zeta,
        divergence_nats: d,
        chernoff: (-km2 * d).exp(),
        weakened: (std::f64::consts::E * pe.powf(zeta)).powf(km2),
    })
}

/// Error probabilities fed to the condition checker.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorRates {
    /// max granular→other-granular probability.
    pub pgg: f64,
    /// max granular→Z probability.
    pub pzg: f64,
    /// Z→granular probability.
    pub pgz: f64,
    /// worst-case block error over all messages.
    pub pbar: f64,
}

/// Which sufficiency theorem the checker instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    /// Three per-type inequalities.
    General,
    /// Single worst-case inequality.
    Uniform,
    /// Protected-Z product condition (needs PZg = PgZ = 0, κ > 1/2).
    A0,
}

/// One inequality evaluated at finite n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub unit: String,
}

/// Verdict of the second-moment condition checker. The underlying theory
/// states n→∞ limits; these are finite-n surrogates, so the verdict is
/// "indicative at n", never a proof.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentConditionReport {
    pub mode: ConditionMode,
    pub kappa: f64,
    pub kappa_bound: f64,
    pub conditions: Vec<ConditionRecord>,
    /// Threshold n·log₂(|a|/α) the block rate R'(n) must exceed.
    pub rate_threshold_bits: f64,
    /// Verdict on the rate condition when R'(n) was supplied.
    pub rate_condition: Option<ConditionRecord>,
    pub indicative_at_n: u32,
}

impl MomentConditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
            && self.rate_condition.as_ref().map(|c| c.satisfied).unwrap_or(true)
    }
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Evaluates the finite-n second-moment sufficiency inequalities.
///
/// Base convention (matching the mixed-log statement of the conditions): the
/// probability exponent terms (1/n)·log P use natural logs; the 2·log(|a|+δ)
/// and 2κ·log(α) terms use base-2 logs.
///
/// `r_prime_bits`: block rate log₂|M(n)\{Z}| if known, for the rate-condition
/// verdict. `slack`: optional additive slack in the κ admissibility
/// denominator (default 0 keeps the strict bound).
#[allow(clippy::too_many_arguments)]
pub fn check_second_moment_conditions(
    a: f64,
    delta: f64,
    alpha: f64,
    kappa: f64,
    n: u32,
    probs: ErrorRates,
    mode: ConditionMode,
    r_prime_bits: Option<f64>,
    slack: f64,
) -> Result<MomentConditionReport> {
    let aa = a.abs();
    let bound = kappa_bound(a, delta, alpha)?;
    let effective_bound = if slack > 0.0 { 1.0 / (1.0 / bound + slack) } else { bound };
    match mode {
        ConditionMode::General | ConditionMode::Uniform => {
            if !(kappa > 0.0 && kappa < effective_bound) {
                return Err(ConfigError::Domain(format!(
                    "kappa = {kappa} must lie in (0, {effective_bound:.6}) for this mode"
                )));
            }
        }
        ConditionMode::A0 => {
            if probs.pzg != 0.0 || probs.pgz != 0.0 {
                return Err(ConfigError::Domain(
                    "a0 mode requires PZg = PgZ = 0 (protected overflow symbol)".into(),
                ));
            }
        }
    }
    if n == 0 {
        return Err(ConfigError::Domain("block length n must be >= 1".into()));
    }
    let nf = n as f64;
    let two_log_gain = 2.0 * (aa + delta).log2();
    let mut conditions = Vec::new();
    match mode {
        ConditionMode::General => {
            conditions.push(ConditionRecord {
                name: "granular-to-overflow drift".into(),
                lhs: ln_or_neg_inf(probs.pzg) / nf + two_log_gain,
                rhs: 0.0,
                satisfied: ln_or_neg_inf(probs.pzg) / nf + two_log_gain < 0.0,
                unit: "mixed log (nats/n + bits)".into(),
            });
            conditions.push(ConditionRecord {
                name: "overflow-to-granular drift".into(),
                lhs: kappa * ln_or_neg_inf(probs.pgz) / nf + two_log_gain,
                rhs: 0.0,
                satisfied: kappa * ln_or_neg_inf(probs.pgz) / nf + two_log_gain < 0.0,
                unit: "mixed log (nats/n + bits)".into(),
            });
            let lhs3 =
                kappa * ln_or_neg_inf(probs.pgg) / nf + two_log_gain + 2.0 * kappa * alpha.log2();
            conditions.push(ConditionRecord {
                name: "granular-to-granular drift".into(),
                lhs: lhs3,
                rhs: 0.0,
                satisfied: lhs3 < 0.0,
                unit: "mixed log (nats/n + bits)".into(),
            });
        }
        ConditionMode::Uniform => {
            let lhs = kappa * ln_or_neg_inf(probs.pbar) / nf + two_log_gain;
            conditions.push(ConditionRecord {
                name: "uniform worst-case drift".into(),
                lhs,
                rhs: 0.0,
                satisfied: lhs < 0.0,
                unit: "mixed log (nats/n + bits)".into(),
            });
        }
        ConditionMode::A0 => {
            let lhs = probs.pbar * (aa + delta).powi(2 * n as i32);
            conditions.push(ConditionRecord {
                name: "protected-overflow product".into(),
                lhs,
                rhs: 1.0,
                satisfied: lhs < 1.0,
                unit: "dimensionless".into(),
            });
            conditions.push(ConditionRecord {
                name: "kappa above one half".into(),
                lhs: kappa,
                rhs: 0.5,
                satisfied: kappa > 0.5,
                unit: "dimensionless".into(),
            });
        }
    }
    let rate_threshold_bits = nf * (aa / alpha).log2();
    let rate_condition = r_prime_bits.map(|r| ConditionRecord {
        name: "block rate exceeds instability rate".into(),
        lhs: r,
        rhs: rate_threshold_bits,
        satisfied: r > rate_threshold_bits,
        unit: "bits".into(),
    });
    Ok(MomentConditionReport {
        mode,
        kappa,
        kappa_bound: effective_bound,
        conditions,
        rate_threshold_bits,
        rate_condition,
        indicative_at_n: n,
    })
}

/// Binary entropy in bits.
pub fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}
