//! Discrete channels (memoryless and bursty-with-memory), block codebooks
//! with an exact maximum-likelihood decoder, and the classification of
//! decoding errors into the three types that drive the zoom dynamics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A discrete memoryless channel: a row-stochastic matrix `P(q'|q)`.
/// The n-block law is the product of per-use laws; this is enforced
/// structurally by sampling each use independently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmcModel {
    pub transition: Vec<Vec<f64>>,
    #[serde(skip)]
    log_transition: Vec<Vec<f64>>,
}

impl DmcModel {
    pub fn new(transition: Vec<Vec<f64>>) -> Result<Self> {
        if transition.is_empty() || transition[0].is_empty() {
            return Err(ConfigError::Channel("transition matrix is empty".into()));
        }
        let cols = transition[0].len();
        for (i, row) in transition.iter().enumerate() {
            if row.len() != cols {
                return Err(ConfigError::Channel(format!("row {i} has ragged length")));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(ConfigError::Channel(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ConfigError::Channel(format!(
                    "row {i} sums to {sum}, must be 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        let log_transition = transition
            .iter()
            .map(|row| row.iter().map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect())
            .collect();
        Ok(DmcModel { transition, log_transition })
    }

    pub fn input_size(&self) -> usize {
        self.transition.len()
    }

    pub fn output_size(&self) -> usize {
        self.transition[0].len()
    }

    pub fn prob(&self, input: usize, output: usize) -> f64 {
        self.transition[input][output]
    }

    pub fn log_prob(&self, input: usize, output: usize) -> f64 {
        self.log_transition[input][output]
    }

    /// Binary symmetric channel with crossover `eps`.
    pub fn bsc(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(ConfigError::Channel(format!("BSC crossover must be in [0,1], got {eps}")));
        }
        DmcModel::new(vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]])
    }

    /// Binary erasure channel; output symbol 2 is the erasure.
    pub fn erasure(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(ConfigError::Channel(format!("erasure prob must be in [0,1], got {eps}")));
        }
        DmcModel::new(vec![vec![1.0 - eps, 0.0, eps], vec![0.0, 1.0 - eps, eps]])
    }

    /// Noiseless k-ary channel (identity matrix).
    pub fn noiseless(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(ConfigError::Channel("noiseless alphabet must have >= 2 symbols".into()));
        }
        DmcModel::new(
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// One channel use.
    pub fn transmit<R: Rng>(&self, input: usize, rng: &mut R) -> Result<usize> {
        if input >= self.input_size() {
            return Err(ConfigError::Channel(format!(
                "input symbol {input} outside alphabet of size {}",
                self.input_size()
            )));
        }
        let row = &self.transition[input];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(j);
            }
        }
        Ok(self.output_size() - 1)
    }
}

/// Finite-state channel with a hidden Markov state and a per-state DMC.
/// The feedback capacity of such channels is not computed here; experiments
/// on them use empirically measured error probabilities only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryChannelModel {
    pub state_transition: Vec<Vec<f64>>,
    pub per_state: Vec<DmcModel>,
    pub initial_state: usize,
}

impl MemoryChannelModel {
    pub fn new(
        state_transition: Vec<Vec<f64>>,
        per_state: Vec<DmcModel>,
        initial_state: usize,
    ) -> Result<Self> {
        let ns = per_state.len();
        if ns == 0 {
            return Err(ConfigError::Channel("memory channel needs >= 1 state".into()));
        }
        if state_transition.len() != ns || state_transition.iter().any(|r| r.len() != ns) {
            return Err(ConfigError::Channel("state transition matrix shape mismatch".into()));
        }
        for (i, row) in state_transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(ConfigError::Channel(format!("state row {i} is not stochastic")));
            }
        }
        let (isz, osz) = (per_state[0].input_size(), per_state[0].output_size());
        if per_state.iter().any(|m| m.input_size() != isz || m.output_size() != osz) {
            return Err(ConfigError::Channel("per-state models must share alphabets".into()));
        }
        if initial_state >= ns {
            return Err(ConfigError::Channel("initial state out of range".into()));
        }
        Ok(MemoryChannelModel { state_transition, per_state, initial_state })
    }

    /// Two-state Gilbert-Elliott burst channel: Good = BSC(eps_good),
    /// Bad = BSC(eps_bad), with the given switch probabilities.
    pub fn gilbert_elliott(eps_good: f64, eps_bad: f64, p_good_to_bad: f64, p_bad_to_good: f64) -> Result<Self> {
        MemoryChannelModel::new(
            vec![
                vec![1.0 - p_good_to_bad, p_good_to_bad],
                vec![p_bad_to_good, 1.0 - p_bad_to_good],
            ],
            vec![DmcModel::bsc(eps_good)?, DmcModel::bsc(eps_bad)?],
            0,
        )
    }

    pub fn input_size(&self) -> usize {
        self.per_state[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.per_state[0].output_size()
    }
}

/// Per-trajectory hidden state of a memory channel.
#[derive(Debug, Clone, Copy)]
pub struct MemoryChannelState {
    pub hidden: usize,
}

/// A channel plus whatever per-trajectory state it carries.
#[derive(Debug, Clone)]
pub enum Channel {
    Dmc(DmcModel),
    Memory(MemoryChannelModel, MemoryChannelState),
}

impl Channel {
    pub fn dmc(model: DmcModel) -> Self {
        Channel::Dmc(model)
    }

    pub fn memory(model: MemoryChannelModel) -> Self {
        let st = MemoryChannelState { hidden: model.initial_state };
        Channel::Memory(model, st)
    }

    pub fn input_size(&self) -> usize {
        match self {
            Channel::Dmc(m) => m.input_size(),
            Channel::Memory(m, _) => m.input_size(),
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            Channel::Dmc(m) => m.output_size(),
            Channel::Memory(m, _) => m.output_size(),
        }
    }

    /// The marginal DMC the decoder assumes. For memory channels this is the
    /// per-state average under the uniform state weighting; decoding against
    /// it is mismatched by construction (the diagnostics on such channels are
    /// purely empirical).
    pub fn decoding_law(&self) -> DmcModel {
        match self {
            Channel::Dmc(m) => m.clone(),
            Channel::Memory(m, _) => {
                let ns = m.per_state.len() as f64;
                let rows = (0..m.input_size())
                    .map(|i| {
                        (0..m.output_size())
                            .map(|j| m.per_state.iter().map(|d| d.prob(i, j)).sum::<f64>() / ns)
                            .collect()
                    })
                    .collect();
                DmcModel::new(rows).expect("average of stochastic rows is stochastic")
            }
        }
    }
}

/// Sends a word through the channel, one use at a time; memory channels
/// advance their hidden state after each use.
pub fn transmit_block<R: Rng>(ch: &mut Channel, word: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(word.len());
    match ch {
        Channel::Dmc(m) => {
            for &sym in word {
                out.push(m.transmit(sym, rng)?);
            }
        }
        Channel::Memory(m, st) => {
            for &sym in word {
                out.push(m.per_state[st.hidden].transmit(sym, rng)?);
                let row = &m.state_transition[st.hidden];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (j, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        st.hidden = j;
                        break;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Block codebook over the message set `{0, …, message_count−1}`.
/// The overflow message Z always occupies the last index.
///
/// `protected_z = true` models the zero-error side channel for Z: the Z
/// message is delivered noiselessly and decoding a granular transmission
/// never produces Z.
#[derive(Debug, Clone)]
pub struct BlockCodebook {
    pub n: usize,
    pub codewords: Vec<Vec<usize>>,
    pub protected_z: bool,
}

impl BlockCodebook {
    pub fn new(codewords: Vec<Vec<usize>>, protected_z: bool) -> Result<Self> {
        if codewords.len() < 2 {
            return Err(ConfigError::Codebook("need at least 2 messages".into()));
        }
        let n = codewords[0].len();
        if n == 0 || codewords.iter().any(|w| w.len() != n) {
            return Err(ConfigError::Codebook("codewords must share a positive length".into()));
        }
        Ok(BlockCodebook { n, codewords, protected_z })
    }

    pub fn message_count(&self) -> usize {
        self.codewords.len()
    }

    /// Index of the overflow message Z (always last).
    pub fn z_index(&self) -> usize {
        self.message_count() - 1
    }

    pub fn encode(&self, msg: usize) -> &[usize] {
        &self.codewords[msg]
    }

    /// Repetition/identity codebook: message `m` is the symbol `m` repeated
    /// `n` times. Requires an input alphabet at least as large as the
    /// message set, so codewords are distinct.
    pub fn repetition(message_count: usize, n: usize, alphabet: usize) -> Result<Self> {
        if message_count > alphabet {
            return Err(ConfigError::Codebook(format!(
                "repetition codebook needs alphabet >= message count ({message_count} > {alphabet})"
            )));
        }
        BlockCodebook::new((0..message_count).map(|m| vec![m; n]).collect(), false)
    }
}

/// Random codebook: i.i.d. codeword letters drawn from `input_dist`.
pub fn build_random_codebook<R: Rng>(
    message_count: usize,
    n: usize,
    input_dist: &[f64],
    rng: &mut R,
) -> Result<BlockCodebook> {
    if message_count < 2 {
        return Err(ConfigError::Codebook("need at least 2 messages".into()));
    }
    let sum: f64 = input_dist.iter().sum();
    if input_dist.is_empty() || (sum - 1.0).abs() > 1e-9 || input_dist.iter().any(|&p| p < 0.0) {
        return Err(ConfigError::Codebook("input_dist must be a probability vector".into()));
    }
    let codewords = (0..message_count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (j, &p) in input_dist.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return j;
                        }
                    }
                    input_dist.len() - 1
                })
                .collect()
        })
        .collect();
    BlockCodebook::new(codewords, false)
}

/// Exact ML decoding over the product DMC law, log-domain accumulation,
/// ties broken toward the lowest message index.
pub fn decode_block(cb: &BlockCodebook, received: &[usize], ch: &DmcModel) -> usize {
    decode_restricted(cb, received, ch, cb.message_count())
}

/// ML over the first `limit` messages only (used by protected-Z decoding,
/// which excludes Z from the granular competition).
fn decode_restricted(cb: &BlockCodebook, received: &[usize], ch: &DmcModel, limit: usize) -> usize {
    debug_assert_eq!(received.len(), cb.n);
    let mut best = 0usize;
    let mut best_ll = f64::NEG_INFINITY;
    for (msg, word) in cb.codewords.iter().take(limit).enumerate() {
        let mut ll = 0.0;
        for (&c, &r) in word.iter().zip(received) {
            ll += ch.log_prob(c, r);
            if ll == f64::NEG_INFINITY {
                break;
            }
        }
        if ll > best_ll {
            best_ll = ll;
            best = msg;
        }
    }
    best
}

/// Decode honoring the protected-Z contract: with protection on, granular
/// transmissions can never decode to Z (Z itself bypasses the channel at the
/// call site).
pub fn decode_granular_transmission(cb: &BlockCodebook, received: &[usize], ch: &DmcModel) -> usize {
    if cb.protected_z {
        decode_restricted(cb, received, ch, cb.z_index())
    } else {
        decode_block(cb, received, ch)
    }
}

/// Precomputed decode table over all output words, for channels whose output
/// space is small enough to enumerate. Received words are mixed-radix packed
/// with the first letter most significant.
#[derive(Debug, Clone)]
pub struct DecodeTable {
    pub granular: Vec<usize>,
    pub full: Vec<usize>,
    output_size: usize,
    n: usize,
}

pub const ENUMERATION_GUARD: usize = 1 << 20;

pub fn output_word_count(ch: &DmcModel, n: usize) -> Option<usize> {
    let mut total = 1usize;
    for _ in 0..n {
        total = total.checked_mul(ch.output_size())?;
        if total > ENUMERATION_GUARD {
            return None;
        }
    }
    Some(total)
}

impl DecodeTable {
    pub fn build(cb: &BlockCodebook, ch: &DmcModel) -> Result<Self> {
        let total = output_word_count(ch, cb.n).ok_or_else(|| {
            ConfigError::Domain(format!(
                "output word space exceeds the enumeration guard ({} words); use monte_carlo mode",
                ENUMERATION_GUARD
            ))
        })?;
        let mut granular = Vec::with_capacity(total);
        let mut full = Vec::with_capacity(total);
        let mut word = vec![0usize; cb.n];
        for idx in 0..total {
            unpack_word(idx, ch.output_size(), &mut word);
            full.push(decode_block(cb, &word, ch));
            granular.push(decode_restricted(cb, &word, ch, cb.z_index()));
        }
        Ok(DecodeTable { granular, full, output_size: ch.output_size(), n: cb.n })
    }

    pub fn pack(&self, word: &[usize]) -> usize {
        pack_word(word, self.output_size)
    }

    /// Table-driven equivalent of [`decode_granular_transmission`].
    pub fn decode_granular(&self, cb: &BlockCodebook, received: &[usize]) -> usize {
        let idx = self.pack(received);
        if cb.protected_z {
            self.granular[idx]
        } else {
            self.full[idx]
        }
    }

    pub fn word_count(&self) -> usize {
        self.full.len()
    }

    pub fn word_len(&self) -> usize {
        self.n
    }
}

pub fn pack_word(word: &[usize], base: usize) -> usize {
    word.iter().fold(0, |acc, &s| acc * base + s)
}

pub fn unpack_word(mut idx: usize, base: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = idx % base;
        idx /= base;
    }
}

/// Decoding error taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorClass {
    None,
    /// Granular symbol decoded as a different granular symbol.
    TypeIA,
    /// Granular symbol decoded as Z.
    TypeIB,
    /// Z decoded as a granular symbol.
    TypeII,
}

/// Pure function of (sent message, decoded message) given the Z index.
pub fn classify_error(sent: usize, decoded: usize, z_index: usize) -> ErrorClass {
    let sent_z = sent == z_index;
    let decoded_z = decoded == z_index;
    match (sent_z, decoded_z) {
        (false, false) if sent == decoded => ErrorClass::None,
        (false, false) => ErrorClass::TypeIA,
        (false, true) => ErrorClass::TypeIB,
        (true, false) => ErrorClass::TypeII,
        (true, true) => ErrorClass::None,
    }
}

/// How error probabilities are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationMode {
    Exact,
    MonteCarlo { trials: usize },
}

/// Per-message conditional decode masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageErrorRow {
    pub message: usize,
    pub p_correct: f64,
    pub p_other_granular: f64,
    pub p_z: f64,
}

/// Worst-case error probabilities: maxima over granular messages of
/// the granular→granular and granular→Z masses, the Z→granular mass, and the
/// overall worst-case word error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorProbabilities {
    pub pgg: f64,
    pub pzg: f64,
    pub pgz: f64,
    pub pbar: f64,
    pub per_message: Vec<MessageErrorRow>,
    /// Wilson 95% half-width per estimated frequency (Monte Carlo mode only).
    pub wilson_halfwidth: Option<f64>,
}

/// 95% Wilson score interval half-width for `x` successes in `n` trials.
pub fn wilson_halfwidth(x: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let z = 1.96f64;
    let nf = n as f64;
    let p = x as f64 / nf;
    z * ((p * (1.0 - p) + z * z / (4.0 * nf)) / nf).sqrt() / (1.0 + z * z / nf)
}

/// Estimates the block error probabilities of a codebook over a DMC, either
/// by exact enumeration of the output space or by Monte Carlo.
pub fn estimate_error_probabilities<R: Rng>(
    cb: &BlockCodebook,
    ch: &DmcModel,
    mode: EstimationMode,
    rng: &mut R,
) -> Result<ErrorProbabilities> {
    match mode {
        EstimationMode::Exact => exact_error_probabilities(cb, ch),
        EstimationMode::MonteCarlo { trials } => mc_error_probabilities(cb, ch, trials, rng),
    }
}

fn summarize_rows(cb: &BlockCodebook, rows: Vec<MessageErrorRow>, wilson: Option<f64>) -> ErrorProbabilities {
    let z = cb.z_index();
    let mut pgg: f64 = 0.0;
    let mut pzg: f64 = 0.0;
    let mut pbar: f64 = 0.0;
    let mut pgz = 0.0;
    for row in &rows {
        let err = 1.0 - row.p_correct;
        pbar = pbar.max(err);
        if row.message == z {
            pgz = row.p_other_granular; // every non-Z decode of Z is granular
        } else {
            pgg = pgg.max(row.p_other_granular);
            pzg = pzg.max(row.p_z);
        }
    }
    ErrorProbabilities { pgg, pzg, pgz, pbar, per_message: rows, wilson_halfwidth: wilson }
}

fn exact_error_probabilities(cb: &BlockCodebook, ch: &DmcModel) -> Result<ErrorProbabilities> {
    let table = DecodeTable::build(cb, ch)?;
    let total = table.word_count();
    let z = cb.z_index();
    let mut word = vec![0usize; cb.n];
    let mut rows = Vec::with_capacity(cb.message_count());
    for (msg, cw) in cb.codewords.iter().enumerate() {
        if cb.protected_z && msg == z {
            // Z rides the zero-error side channel.
            rows.push(MessageErrorRow { message: msg, p_correct: 1.0, p_other_granular: 0.0, p_z: 0.0 });
            continue;
        }
        let mut p_correct = 0.0;
        let mut p_other = 0.0;
        let mut p_z = 0.0;
        for idx in 0..total {
            unpack_word(idx, ch.output_size(), &mut word);
            let mut p = 1.0;
            for (&c, &r) in cw.iter().zip(&word) {
                p *= ch.prob(c, r);
                if p == 0.0 {
                    break;
                }
            }
            if p == 0.0 {
                continue;
            }
            let decoded = if cb.protected_z { table.granular[idx] } else { table.full[idx] };
            match classify_error(msg, decoded, z) {
                ErrorClass::None => p_correct += p,
                ErrorClass::TypeIA | ErrorClass::TypeII => p_other += p,
                ErrorClass::TypeIB => p_z += p,
            }
        }
        rows.push(MessageErrorRow { message: msg, p_correct, p_other_granular: p_other, p_z });
    }
    Ok(summarize_rows(cb, rows, None))
}

fn mc_error_probabilities<R: Rng>(
    cb: &BlockCodebook,
    ch: &DmcModel,
    trials: usize,
    rng: &mut R,
) -> Result<ErrorProbabilities> {
    if trials == 0 {
        return Err(ConfigError::Domain("monte_carlo mode needs trials > 0".into()));
    }
    let z = cb.z_index();
    let mut rows = Vec::with_capacity(cb.message_count());
    let mut chan = Channel::dmc(ch.clone());
    for (msg, cw) in cb.codewords.iter().enumerate() {
        if cb.protected_z && msg == z {
            rows.push(MessageErrorRow { message: msg, p_correct: 1.0, p_other_granular: 0.0, p_z: 0.0 });
            continue;
        }
        let mut correct = 0usize;
        let mut other = 0usize;
        let mut to_z = 0usize;
        for _ in 0..trials {
            let received = transmit_block(&mut chan, cw, rng)?;
            let decoded = decode_granular_transmission(cb, &received, ch);
            match classify_error(msg, decoded, z) {
                ErrorClass::None => correct += 1,
                ErrorClass::TypeIA | ErrorClass::TypeII => other += 1,
                ErrorClass::TypeIB => to_z += 1,
            }
        }
        let t = trials as f64;
        rows.push(MessageErrorRow {
            message: msg,
            p_correct: correct as f64 / t,
            p_other_granular: other as f64 / t,
            p_z: to_z as f64 / t,
        });
    }
    let half = wilson_halfwidth(trials / 2, trials);
    Ok(summarize_rows(cb, rows, Some(half)))
}
