//! Experiment configuration: TOML schema, validation with actionable
//! messages, and resolution into ready-to-run loop parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{BlockCodebook, Channel, DmcModel, MemoryChannelModel};
use crate::error::{ConfigError, Result};
use crate::plant::{SystemParams, VectorSystemParams};
use crate::quantizer::{ResolvedZoom, ZoomPolicy};

pub const SCHEMA_VERSION: u32 = 1;

/// Raw TOML shape. Field names and units are documented in the README.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawConfig {
    pub schema_version: u32,
    pub system: SystemSection,
    pub quantizer: QuantizerSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub codebook: CodebookSection,
    pub run: RunSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSection {
    Scalar(SystemParams),
    Vector(VectorSystemParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizerSection {
    pub n: u32,
    pub s: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Scalar-system fields; for vector systems use `axes` instead.
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<u64>,
    /// Initial bin size; defaults to the smallest lattice point above
    /// max(L, 2·x0_std·2^(1−R')).
    pub initial_delta: Option<f64>,
    /// Extra bits above the rate threshold when K is chosen automatically.
    #[serde(default = "default_margin")]
    pub auto_k_margin_bits: f64,
    pub axes: Option<Vec<AxisSection>>,
}

fn default_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisSection {
    pub alpha: f64,
    pub delta: f64,
    #[serde(rename = "K")]
    pub k: Option<u64>,
    pub initial_delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSection {
    Bsc { epsilon: f64 },
    Erasure { epsilon: f64 },
    Noiseless { alphabet: usize },
    Matrix { transition: Vec<Vec<f64>> },
    GilbertElliott {
        epsilon_good: f64,
        epsilon_bad: f64,
        p_good_to_bad: f64,
        p_bad_to_good: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodebookSection {
    /// One symbol per message over a channel whose alphabet covers the
    /// message set; requires n block uses of the same symbol when n > 1.
    Repetition,
    /// I.i.d. codeword letters from `input_dist`, drawn from a dedicated
    /// stream of the master seed so all replicas share one codebook.
    Random { input_dist: Vec<f64> },
    Explicit { words: Vec<Vec<usize>> },
}

impl Default for CodebookSection {
    fn default() -> Self {
        CodebookSection::Repetition
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: u64,
    pub replicas: u64,
    pub master_seed: u64,
    #[serde(default = "default_guard")]
    pub divergence_guard: f64,
    #[serde(default = "default_true")]
    pub record_trajectory: bool,
}

fn default_guard() -> f64 {
    crate::sim::DEFAULT_DIVERGENCE_GUARD
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    /// Compact recurrence set A = [lo, hi].
    #[serde(default = "default_set_a")]
    pub set_a: (f64, f64),
    /// Excursion exponent for tail diagnostics.
    pub kappa: Option<f64>,
    /// Per-block escape failure probability for the tail bound curve.
    pub pe: Option<f64>,
    /// Minimum starting bin size for tail comparison; defaults to 2¹⁰·L'.
    pub delta_min: Option<f64>,
    /// Whether the overflow symbol rides a zero-error side channel.
    #[serde(default)]
    pub protected_z: bool,
}

fn default_set_a() -> (f64, f64) {
    (-10.0, 10.0)
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            set_a: default_set_a(),
            kappa: None,
            pe: None,
            delta_min: None,
            protected_z: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OutputSection {
    pub path: Option<String>,
}

/// One resolved scalar-axis quantizer.
#[derive(Debug, Clone)]
pub struct ResolvedAxis {
    pub policy: ZoomPolicy,
    pub zoom: ResolvedZoom,
    pub k: u64,
    pub initial_delta_exp: i64,
}

/// Fully validated configuration, ready to drive the simulator.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub config_hash: String,
    pub scalar_system: Option<SystemParams>,
    pub vector_system: Option<VectorSystemParams>,
    pub axes: Vec<ResolvedAxis>,
    pub channel: Channel,
    pub protected_z: bool,
}

impl ExperimentConfig {
    pub fn is_vector(&self) -> bool {
        self.vector_system.is_some()
    }

    /// Scalar granular level count K (single axis).
    pub fn scalar_k(&self) -> u64 {
        self.axes[0].k
    }

    /// Total message count |M| = granular product + 1 overflow.
    pub fn message_count(&self) -> usize {
        self.axes.iter().map(|a| a.k as usize).product::<usize>() + 1
    }

    /// Builds the codebook (deterministic given the master seed).
    pub fn build_codebook(&self) -> Result<BlockCodebook> {
        use rand::SeedableRng;
        let n = self.axes[0].policy.n as usize;
        let msg_count = self.message_count();
        let mut cb = match &self.raw.codebook {
            CodebookSection::Repetition => {
                BlockCodebook::repetition(msg_count, n, self.channel.input_size())?
            }
            CodebookSection::Random { input_dist } => {
                // dedicated stream so replica streams stay untouched
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(self.raw.run.master_seed);
                rng.set_stream(u64::MAX);
                crate::channel::build_random_codebook(msg_count, n, input_dist, &mut rng)?
            }
            CodebookSection::Explicit { words } => BlockCodebook::new(words.clone(), false)?,
        };
        cb.protected_z = self.protected_z;
        Ok(cb)
    }
}

/// 64-bit FNV-1a over the canonical serialized config, used to stamp result
/// records with the configuration they came from.
pub fn config_hash(raw: &RawConfig) -> String {
    let text = toml::to_string(raw).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn lattice_exp_for(value: f64, s: f64, strict_above: f64) -> i64 {
    // smallest e with 2^(e·s) > strict_above, starting from value's exponent
    let mut e = (value.log2() / s).round() as i64;
    while (e as f64 * s).exp2() <= strict_above {
        e += 1;
    }
    e
}

fn resolve_axis(
    a_abs: f64,
    n: u32,
    s: f64,
    l: f64,
    alpha: f64,
    delta: f64,
    k: Option<u64>,
    initial_delta: Option<f64>,
    auto_margin: f64,
    x0_std: f64,
    violations: &mut Vec<String>,
) -> Option<ResolvedAxis> {
    let policy = ZoomPolicy { n, alpha, delta, l, s };
    let zoom = match policy.resolve(a_abs) {
        Ok(z) => z,
        Err(e) => {
            violations.push(e.to_string());
            return None;
        }
    };
    let k = match k {
        Some(k) => {
            if k < 2 || k % 2 != 0 {
                violations.push(format!("K must be an even number >= 2, got {k}"));
                return None;
            }
            if !policy.rate_condition_holds(a_abs, k) {
                violations.push(format!(
                    "rate condition violated: log2(K={k}) = {:.4} must exceed n·log2(|a|/alpha) = {:.4}",
                    (k as f64).log2(),
                    n as f64 * (a_abs / alpha).log2()
                ));
                return None;
            }
            k
        }
        None => policy.auto_k(a_abs, auto_margin),
    };
    let r_prime = (k as f64).log2();
    let initial_delta_exp = match initial_delta {
        Some(d0) => {
            let e = (d0.log2() / s).round() as i64;
            if ((e as f64 * s).exp2() - d0).abs() > 1e-9 * d0 {
                violations.push(format!(
                    "initial_delta = {d0} is not on the bin-size lattice 2^(e*{s})"
                ));
                return None;
            }
            if d0 <= l {
                violations.push(format!("initial_delta = {d0} must exceed L = {l}"));
                return None;
            }
            e
        }
        None => {
            let target = l.max(2.0 * x0_std * (1.0 - r_prime).exp2());
            lattice_exp_for(target.max(1e-300), s, target)
        }
    };
    Some(ResolvedAxis { policy, zoom, k, initial_delta_exp })
}

/// Validates a raw config, returning either the resolved form or the full
/// list of violations.
pub fn validate_config(raw: RawConfig) -> Result<ExperimentConfig> {
    let mut violations: Vec<String> = Vec::new();
    if raw.schema_version != SCHEMA_VERSION {
        violations.push(format!(
            "schema_version {} unsupported; this build reads version {SCHEMA_VERSION}",
            raw.schema_version
        ));
    }
    if raw.run.horizon == 0 || raw.run.replicas == 0 {
        violations.push("run.horizon and run.replicas must be >= 1".into());
    }
    if !(raw.run.divergence_guard > 0.0) {
        violations.push("run.divergence_guard must be > 0".into());
    }

    let channel = match &raw.channel {
        ChannelSection::Bsc { epsilon } => DmcModel::bsc(*epsilon).map(Channel::dmc),
        ChannelSection::Erasure { epsilon } => DmcModel::erasure(*epsilon).map(Channel::dmc),
        ChannelSection::Noiseless { alphabet } => DmcModel::noiseless(*alphabet).map(Channel::dmc),
        ChannelSection::Matrix { transition } => DmcModel::new(transition.clone()).map(Channel::dmc),
        ChannelSection::GilbertElliott {
            epsilon_good,
            epsilon_bad,
            p_good_to_bad,
            p_bad_to_good,
        } => MemoryChannelModel::gilbert_elliott(
            *epsilon_good,
            *epsilon_bad,
            *p_good_to_bad,
            *p_bad_to_good,
        )
        .map(Channel::memory),
    };
    let channel = match channel {
        Ok(c) => Some(c),
        Err(e) => {
            violations.push(e.to_string());
            None
        }
    };

    let q = &raw.quantizer;
    let mut scalar_system = None;
    let mut vector_system = None;
    let mut axes = Vec::new();
    match &raw.system {
        SystemSection::Scalar(sys) => {
            if let Err(e) = sys.validate() {
                violations.push(e.to_string());
            }
            scalar_system = Some(*sys);
            match (q.alpha, q.delta) {
                (Some(alpha), Some(delta)) => {
                    if let Some(axis) = resolve_axis(
                        sys.a.abs(),
                        q.n,
                        q.s,
                        q.l,
                        alpha,
                        delta,
                        q.k,
                        q.initial_delta,
                        q.auto_k_margin_bits,
                        sys.x0_std,
                        &mut violations,
                    ) {
                        axes.push(axis);
                    }
                }
                _ => violations
                    .push("scalar systems need quantizer.alpha and quantizer.delta".into()),
            }
        }
        SystemSection::Vector(sys) => {
            if let Err(e) = sys.validate() {
                violations.push(e.to_string());
            }
            vector_system = Some(sys.clone());
            match &q.axes {
                Some(axis_specs) if axis_specs.len() == sys.dim() => {
                    for (spec, lam) in axis_specs.iter().zip(&sys.eigenvalues) {
                        if let Some(axis) = resolve_axis(
                            lam.abs(),
                            q.n,
                            q.s,
                            q.l,
                            spec.alpha,
                            spec.delta,
                            spec.k,
                            spec.initial_delta,
                            q.auto_k_margin_bits,
                            sys.x0_std,
                            &mut violations,
                        ) {
                            axes.push(axis);
                        }
                    }
                }
                _ => violations.push(format!(
                    "vector systems need quantizer.axes with one entry per mode ({})",
                    sys.dim()
                )),
            }
        }
    }

    if let CodebookSection::Random { input_dist } = &raw.codebook {
        let sum: f64 = input_dist.iter().sum();
        if input_dist.is_empty() || (sum - 1.0).abs() > 1e-9 {
            violations.push("codebook.input_dist must be a probability vector".into());
        }
        if let Some(ch) = &channel {
            if input_dist.len() != ch.input_size() {
                violations.push(format!(
                    "codebook.input_dist length {} must match the channel input alphabet {}",
                    input_dist.len(),
                    ch.input_size()
                ));
            }
        }
    }
    if let CodebookSection::Explicit { words } = &raw.codebook {
        if let Some(ch) = &channel {
            if words.iter().flatten().any(|&s| s >= ch.input_size()) {
                violations.push("codebook.words contain symbols outside the channel alphabet".into());
            }
        }
    }

    if !violations.is_empty() {
        return Err(ConfigError::Violations(violations));
    }
    let protected_z = raw.diagnostics.protected_z;
    let config_hash = config_hash(&raw);
    Ok(ExperimentConfig {
        raw,
        config_hash,
        scalar_system,
        vector_system,
        axes,
        channel: channel.expect("validated"),
        protected_z,
    })
}

/// Parses and validates a TOML config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", path.display())))?;
    load_config_str(&text)
}

pub fn load_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate_config(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
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

[channel]
kind = "noiseless"
alphabet = 8

[run]
horizon = 1000
replicas = 2
master_seed = 7
"#;

    #[test]
    fn minimal_config_loads_with_auto_k() {
        let cfg = load_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.scalar_k(), 6); // smallest even K above 2^2.1
        assert!(!cfg.is_vector());
        assert_eq!(cfg.message_count(), 7);
        let cb = cfg.build_codebook().unwrap();
        assert_eq!(cb.message_count(), 7);
        // default initial Δ: smallest lattice point > max(L, 2·x0_std·2^(1−R'))
        // = max(1, 2·2^(1−log2 6)) = max(1, 4/6·2) ... target < 2 ⇒ Δ₀ = 2
        let d0 = (cfg.axes[0].initial_delta_exp as f64 * 1.0).exp2();
        assert_eq!(d0, 2.0);
    }

    #[test]
    fn shared_lattice_factor_rejected() {
        let bad = MINIMAL.replace("alpha = 0.5", "alpha = 0.25");
        let err = load_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("relatively prime"), "{err}");
    }

    #[test]
    fn odd_k_rejected() {
        let bad = MINIMAL.replace("delta = 2.0", "delta = 2.0\nK = 5");
        let err = load_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
    }

    #[test]
    fn rate_condition_enforced() {
        let bad = MINIMAL.replace("delta = 2.0", "delta = 2.0\nK = 4");
        let err = load_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("rate condition"), "{err}");
    }

    #[test]
    fn violations_are_collected() {
        let bad = MINIMAL
            .replace("a = 2.0", "a = 0.5")
            .replace("horizon = 1000", "horizon = 0");
        let err = load_config_str(&bad).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("|a| >= 1"), "{text}");
        assert!(text.contains("horizon"), "{text}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = load_config_str(MINIMAL).unwrap();
        let b = load_config_str(MINIMAL).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = load_config_str(&MINIMAL.replace("master_seed = 7", "master_seed = 8")).unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn vector_config_loads() {
        let text = r#"
schema_version = 1

[system]
eigenvalues = [2.0, 1.25]
control_matrix = [[1.0, 0.0], [0.0, 1.0]]
noise_matrix = [[1.0, 0.0], [0.0, 1.0]]
noise_std = 0.5
x0_mean = 0.0
x0_std = 1.0

[quantizer]
n = 1
s = 1.0
L = 1.0
axes = [
  { alpha = 0.5, delta = 2.0, K = 6 },
  { alpha = 0.5, delta = 0.75, K = 4 },
]

[channel]
kind = "noiseless"
alphabet = 25

[run]
horizon = 1000
replicas = 2
master_seed = 1
"#;
        let cfg = load_config_str(text).unwrap();
        assert!(cfg.is_vector());
        assert_eq!(cfg.message_count(), 25);
        assert_eq!(cfg.axes.len(), 2);
    }

    #[test]
    fn parse_error_is_reported() {
        assert!(matches!(load_config_str("not = [valid"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn initial_delta_must_be_on_lattice() {
        let bad = MINIMAL.replace("delta = 2.0", "delta = 2.0\ninitial_delta = 3.0");
        let err = load_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("lattice"), "{err}");
        let good = MINIMAL.replace("delta = 2.0", "delta = 2.0\ninitial_delta = 4.0");
        let cfg = load_config_str(&good).unwrap();
        assert_eq!(cfg.axes[0].initial_delta_exp, 2);
    }
}
