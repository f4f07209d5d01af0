//! Uniform quantizer with a single overflow bin, the adaptive zoom update on
//! an exact integer lattice of bin sizes, the decoder-side estimator, and the
//! block-end controller (scalar and vector forms).
//!
//! The bin size is never stored as a float: the state carries the integer
//! lattice exponent `e` with `Δ = 2^(e·s)`, and zoom updates are integer
//! additions. The two step integers (zoom-out, zoom-in) must be relatively
//! prime, which is validated when the policy is resolved.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Result};
use crate::plant::SystemParams;

/// Zoom policy constants: block length `n`, zoom-in base `α`, zoom-out slack
/// `δ` over `|a|`, zoom-in floor `L`, and the lattice granule `s` for `log₂Δ`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZoomPolicy {
    pub n: u32,
    pub alpha: f64,
    pub delta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub s: f64,
}

/// A zoom policy resolved against a concrete `|a|`: the integer lattice steps
/// and the floor index, all exact.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedZoom {
    pub policy: ZoomPolicy,
    /// `log₂((|a|+δ)ⁿ)/s`, positive.
    pub zoom_out_step: i64,
    /// `log₂(αⁿ)/s`, negative.
    pub zoom_in_step: i64,
    /// Lattice index of `L` rounded up; zoom-in applies only at or above it.
    pub l_exp: i64,
    /// Lattice index of the floor `L' = L·αⁿ`; `delta_exp` never goes below.
    pub floor_exp: i64,
}

const LATTICE_TOL: f64 = 1e-9;

fn as_lattice_integer(value: f64) -> Option<i64> {
    let r = value.round();
    if (value - r).abs() <= LATTICE_TOL * (1.0 + value.abs()) {
        Some(r as i64)
    } else {
        None
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl ZoomPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(ConfigError::Quantizer("block length n must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Quantizer(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.delta > 0.0) {
            return Err(ConfigError::Quantizer("delta must be > 0".into()));
        }
        if !(self.l > 0.0) {
            return Err(ConfigError::Quantizer("L must be > 0".into()));
        }
        if !(self.s > 0.0) {
            return Err(ConfigError::Quantizer("lattice granule s must be > 0".into()));
        }
        Ok(())
    }

    /// Resolves the lattice integers against `|a|`, enforcing exact lattice
    /// membership and relative primality of the two step integers.
    pub fn resolve(&self, a_abs: f64) -> Result<ResolvedZoom> {
        self.validate()?;
        let n = self.n as f64;
        let out_raw = n * (a_abs + self.delta).log2() / self.s;
        let in_raw = n * self.alpha.log2() / self.s;
        let zoom_out_step = as_lattice_integer(out_raw).ok_or_else(|| {
            ConfigError::Quantizer(format!(
                "log2((|a|+delta)^n)/s = {out_raw} is not an integer; bin sizes must live on \
                 an exact lattice. {}",
                suggestion_text(a_abs, self)
            ))
        })?;
        let zoom_in_step = as_lattice_integer(in_raw).ok_or_else(|| {
            ConfigError::Quantizer(format!(
                "log2(alpha^n)/s = {in_raw} is not an integer; bin sizes must live on an \
                 exact lattice. {}",
                suggestion_text(a_abs, self)
            ))
        })?;
        if zoom_out_step <= 0 || zoom_in_step >= 0 {
            return Err(ConfigError::Quantizer(
                "zoom-out step must be positive and zoom-in step negative".into(),
            ));
        }
        if gcd(zoom_out_step as u64, (-zoom_in_step) as u64) != 1 {
            return Err(ConfigError::Quantizer(format!(
                "lattice integers {zoom_out_step} and {zoom_in_step} share a common factor; \
                 they must be relatively prime for the sampled chain to be irreducible. {}",
                suggestion_text(a_abs, self)
            )));
        }
        let l_exp = (self.l.log2() / self.s).ceil() as i64;
        Ok(ResolvedZoom {
            policy: *self,
            zoom_out_step,
            zoom_in_step,
            l_exp,
            floor_exp: l_exp + zoom_in_step,
        })
    }

    /// Rate condition `R'(n) > n·log₂(|a|/α)` for a given granular count `K`.
    pub fn rate_condition_holds(&self, a_abs: f64, k: u64) -> bool {
        (k as f64).log2() > self.n as f64 * (a_abs / self.alpha).log2()
    }

    /// Smallest even `K` with `log₂K > n·log₂(|a|/α) + margin`.
    pub fn auto_k(&self, a_abs: f64, margin_bits: f64) -> u64 {
        let target = self.n as f64 * (a_abs / self.alpha).log2() + margin_bits;
        let mut k = 2u64.max(2.0f64.powf(target).ceil() as u64);
        if k % 2 == 1 {
            k += 1;
        }
        while (k as f64).log2() <= target {
            k += 2;
        }
        k
    }
}

/// Nearest valid (α, δ) on the lattice, used in rejection messages.
pub fn suggest_policy(a_abs: f64, p: &ZoomPolicy) -> (f64, f64) {
    let n = p.n as f64;
    let mut zo = ((n * (a_abs + p.delta).log2() / p.s).round() as i64).max(1);
    let zi = ((n * p.alpha.log2() / p.s).round() as i64).min(-1);
    while gcd(zo as u64, (-zi) as u64) != 1 {
        zo += 1;
    }
    let delta = (zo as f64 * p.s / n).exp2() - a_abs;
    let alpha = (zi as f64 * p.s / n).exp2();
    (alpha, delta)
}

fn suggestion_text(a_abs: f64, p: &ZoomPolicy) -> String {
    let (alpha, delta) = suggest_policy(a_abs, p);
    format!("nearest valid pair: alpha = {alpha}, delta = {delta}")
}

/// Quantizer state: granular level count `K` (even) and the exact lattice
/// index of the bin size, `Δ = 2^(delta_exp·s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizerState {
    pub k: u64,
    pub delta_exp: i64,
    s_bits: u64,
}

impl QuantizerState {
    pub fn new(k: u64, delta_exp: i64, s: f64) -> Result<Self> {
        if k < 2 || k % 2 != 0 {
            return Err(ConfigError::Quantizer(format!(
                "K must be an even number >= 2, got {k}"
            )));
        }
        if !(s > 0.0) {
            return Err(ConfigError::Quantizer("lattice granule s must be > 0".into()));
        }
        Ok(QuantizerState { k, delta_exp, s_bits: s.to_bits() })
    }

    pub fn s(&self) -> f64 {
        f64::from_bits(self.s_bits)
    }

    /// Current bin size `Δ = 2^(delta_exp·s)`.
    pub fn delta(&self) -> f64 {
        (self.delta_exp as f64 * self.s()).exp2()
    }

    /// `R' = log₂K`.
    pub fn r_prime(&self) -> f64 {
        (self.k as f64).log2()
    }

    /// Half-width of the granular region, `KΔ/2 = Δ·2^(R'−1)`.
    pub fn granular_half_range(&self) -> f64 {
        self.k as f64 * self.delta() / 2.0
    }
}

/// Quantizer output: a granular cell index in `1..=K`, or the overflow symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantizerSymbol {
    Granular(u64),
    Overflow,
}

impl QuantizerSymbol {
    pub fn is_overflow(&self) -> bool {
        matches!(self, QuantizerSymbol::Overflow)
    }
}

/// Cells are half-open `[(k−1−K/2)Δ, (k−K/2)Δ)` for `k = 1..K`, with the
/// single top-edge closure `x = KΔ/2 ↦ K`; anything outside is overflow.
pub fn quantize(x: f64, q: &QuantizerState) -> QuantizerSymbol {
    let half = q.granular_half_range();
    if x.abs() > half {
        return QuantizerSymbol::Overflow;
    }
    if x == half {
        return QuantizerSymbol::Granular(q.k);
    }
    let cell = (x / q.delta() + q.k as f64 / 2.0).floor() as i64 + 1;
    QuantizerSymbol::Granular(cell.clamp(1, q.k as i64) as u64)
}

/// Cell midpoint for granular symbols; 0 for the overflow symbol.
pub fn reconstruct(sym: QuantizerSymbol, q: &QuantizerState) -> f64 {
    match sym {
        QuantizerSymbol::Granular(k) => (k as f64 - (q.k as f64 + 1.0) / 2.0) * q.delta(),
        QuantizerSymbol::Overflow => 0.0,
    }
}

/// Zoom update: overflow zooms out, a granular decode zooms in while the bin
/// size is at or above `L`, and below `L` the bin size is unchanged. All
/// updates are exact integer additions on the lattice exponent.
pub fn zoom_update(
    q: &QuantizerState,
    decoded: QuantizerSymbol,
    zoom: &ResolvedZoom,
) -> QuantizerState {
    let mut next = *q;
    match decoded {
        QuantizerSymbol::Overflow => next.delta_exp += zoom.zoom_out_step,
        QuantizerSymbol::Granular(_) => {
            if q.delta_exp >= zoom.l_exp {
                next.delta_exp += zoom.zoom_in_step;
            }
        }
    }
    next
}

/// `u_t = −1_{t=(k+1)n−1}·(aⁿ/b)·x̂`; zero except at the last step of a block,
/// and zero on overflow decodes (the estimator outputs 0 on Z).
pub fn control_signal(
    decoded: QuantizerSymbol,
    q: &QuantizerState,
    params: &SystemParams,
    policy: &ZoomPolicy,
    t: u64,
) -> f64 {
    let n = policy.n as u64;
    if t % n != n - 1 {
        return 0.0;
    }
    -(params.a.powi(policy.n as i32) / params.b) * reconstruct(decoded, q)
}

/// Zoom ratio `h = x/(Δ·2^(R'−1))`; the quantizer is perfectly zoomed when
/// `|h| ≤ 1`.
pub fn zoom_ratio(x: f64, q: &QuantizerState) -> f64 {
    x / q.granular_half_range()
}

/// Scalar message set `M = {0..K}`: granular cell `k` maps to `k−1`, and the
/// overflow symbol to the final index `K`.
pub fn to_message(sym: QuantizerSymbol, k: u64) -> usize {
    match sym {
        QuantizerSymbol::Granular(c) => (c - 1) as usize,
        QuantizerSymbol::Overflow => k as usize,
    }
}

pub fn from_message(msg: usize, k: u64) -> QuantizerSymbol {
    if msg as u64 >= k {
        QuantizerSymbol::Overflow
    } else {
        QuantizerSymbol::Granular(msg as u64 + 1)
    }
}

/// Per-axis quantizer states and zoom policies; overflow is joint.
#[derive(Debug, Clone)]
pub struct VectorQuantizerState {
    pub axes: Vec<QuantizerState>,
    pub zooms: Vec<ResolvedZoom>,
}

/// Joint quantizer output: overflow as soon as any coordinate leaves the
/// product granular region, otherwise the tuple of per-axis cell indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VectorSymbol {
    Granular(Vec<u64>),
    Overflow,
}

impl VectorQuantizerState {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Granular message count `∏K_i`; the joint overflow symbol is the extra
    /// message with index `∏K_i`.
    pub fn granular_message_count(&self) -> usize {
        self.axes.iter().map(|a| a.k as usize).product()
    }
}

pub fn quantize_vector(x: &[f64], vq: &VectorQuantizerState) -> VectorSymbol {
    debug_assert_eq!(x.len(), vq.dim());
    for (xi, q) in x.iter().zip(&vq.axes) {
        if xi.abs() > q.granular_half_range() {
            return VectorSymbol::Overflow;
        }
    }
    let indices = x
        .iter()
        .zip(&vq.axes)
        .map(|(xi, q)| match quantize(*xi, q) {
            QuantizerSymbol::Granular(k) => k,
            QuantizerSymbol::Overflow => unreachable!("joint overflow already checked"),
        })
        .collect();
    VectorSymbol::Granular(indices)
}

/// Mixed-radix flattening of the per-axis indices into one message in
/// `0..∏K_i`; the joint overflow gets the dedicated last index.
pub fn vector_to_message(sym: &VectorSymbol, vq: &VectorQuantizerState) -> usize {
    match sym {
        VectorSymbol::Overflow => vq.granular_message_count(),
        VectorSymbol::Granular(indices) => {
            let mut msg = 0usize;
            for (idx, q) in indices.iter().zip(&vq.axes).rev() {
                msg = msg * q.k as usize + (*idx as usize - 1);
            }
            msg
        }
    }
}

pub fn vector_from_message(msg: usize, vq: &VectorQuantizerState) -> VectorSymbol {
    if msg >= vq.granular_message_count() {
        return VectorSymbol::Overflow;
    }
    let mut rem = msg;
    let indices = vq
        .axes
        .iter()
        .map(|q| {
            let k = q.k as usize;
            let idx = rem % k;
            rem /= k;
            idx as u64 + 1
        })
        .collect();
    VectorSymbol::Granular(indices)
}

/// Per-axis midpoint reconstruction; the joint overflow estimates the origin.
pub fn reconstruct_vector(sym: &VectorSymbol, vq: &VectorQuantizerState) -> Vec<f64> {
    match sym {
        VectorSymbol::Overflow => vec![0.0; vq.dim()],
        VectorSymbol::Granular(indices) => indices
            .iter()
            .zip(&vq.axes)
            .map(|(k, q)| reconstruct(QuantizerSymbol::Granular(*k), q))
            .collect(),
    }
}
