//! The controlled linear plant: scalar and diagonal-vector forms driven by
//! i.i.d. Gaussian noise, with control applied at block boundaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Result};

/// Parameters of the scalar system `x_{t+1} = a x_t + b u_t + d_t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SystemParams {
    /// Open-loop pole. Must satisfy `|a| >= 1` (open-loop unstable).
    pub a: f64,
    /// Control gain, nonzero.
    pub b: f64,
    /// Standard deviation of the i.i.d. Gaussian disturbance `d_t`.
    pub noise_std: f64,
    pub x0_mean: f64,
    pub x0_std: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || self.a.abs() < 1.0 {
            return Err(ConfigError::System(format!(
                "|a| >= 1 required (open-loop unstable), got a = {}",
                self.a
            )));
        }
        if !self.b.is_finite() || self.b == 0.0 {
            return Err(ConfigError::System("b must be nonzero".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(ConfigError::System(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !self.x0_mean.is_finite() || !self.x0_std.is_finite() || self.x0_std < 0.0 {
            return Err(ConfigError::System("x0 distribution parameters invalid".into()));
        }
        Ok(())
    }
}

/// Diagonalized vector system `x_{t+1} = Λ x_t + B̃ u_t + G̃ d_t`.
///
/// The system is accepted already in diagonal coordinates; general
/// diagonalization of an arbitrary `A` is out of scope. A convenience
/// eigendecomposition for symmetric `A` is provided by [`symmetric_modes`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorSystemParams {
    /// Diagonal of Λ; every mode must satisfy `|λ_i| >= 1`.
    pub eigenvalues: Vec<f64>,
    /// B̃, row-major, invertible.
    pub control_matrix: Vec<Vec<f64>>,
    /// G̃, row-major.
    pub noise_matrix: Vec<Vec<f64>>,
    pub noise_std: f64,
    #[serde(default)]
    pub x0_mean: f64,
    #[serde(default = "default_x0_std")]
    pub x0_std: f64,
}

fn default_x0_std() -> f64 {
    1.0
}

impl VectorSystemParams {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(ConfigError::System("vector system has no modes".into()));
        }
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            if !lam.is_finite() || lam.abs() < 1.0 {
                return Err(ConfigError::System(format!(
                    "|λ_{i}| >= 1 required for every mode, got {lam}"
                )));
            }
        }
        for (name, m) in [("control_matrix", &self.control_matrix), ("noise_matrix", &self.noise_matrix)] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(ConfigError::Dimension(format!("{name} must be {n}x{n}")));
            }
        }
        let inv = invert(&self.control_matrix)
            .ok_or_else(|| ConfigError::System("control_matrix B̃ must be invertible".into()))?;
        let _ = inv;
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(ConfigError::System("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// B̃⁻¹, needed by the block-end controller.
    pub fn control_inverse(&self) -> Result<Vec<Vec<f64>>> {
        invert(&self.control_matrix)
            .ok_or_else(|| ConfigError::System("control_matrix B̃ must be invertible".into()))
    }
}

/// Plant state: the value `x_t` (scalar or vector) and the time index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub t: u64,
}

impl PlantState {
    pub fn scalar(x0: f64) -> Self {
        PlantState { x: vec![x0], t: 0 }
    }

    pub fn vector(x0: Vec<f64>) -> Self {
        PlantState { x: x0, t: 0 }
    }

    pub fn scalar_value(&self) -> f64 {
        self.x[0]
    }
}

/// One step of `x' = a x + b u + d`.
pub fn step_scalar(state: &PlantState, u: f64, d: f64, params: &SystemParams) -> PlantState {
    PlantState {
        x: vec![params.a * state.x[0] + params.b * u + d],
        t: state.t + 1,
    }
}

/// One step of `x' = Λ x + B̃ u + G̃ d`, componentwise.
pub fn step_vector(
    state: &PlantState,
    u: &[f64],
    d: &[f64],
    params: &VectorSystemParams,
) -> Result<PlantState> {
    let n = params.dim();
    if state.x.len() != n || u.len() != n || d.len() != n {
        return Err(ConfigError::Dimension(format!(
            "expected dimension {n}, got x={}, u={}, d={}",
            state.x.len(),
            u.len(),
            d.len()
        )));
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut v = params.eigenvalues[i] * state.x[i];
        for j in 0..n {
            v += params.control_matrix[i][j] * u[j] + params.noise_matrix[i][j] * d[j];
        }
        x[i] = v;
    }
    Ok(PlantState { x, t: state.t + 1 })
}

/// Draws from N(0, std²) with the Marsaglia polar method.
///
/// The method is fixed (not delegated to a library sampler) so trajectories
/// are reproducible across builds; the second value of each polar pair is
/// discarded to keep the draw count predictable.
pub fn sample_noise<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return std * u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Eigenvalue/eigenvector modes of a symmetric matrix via the Jacobi rotation
/// method. Convenience preprocessing only; non-symmetric input is rejected.
pub fn symmetric_modes(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(ConfigError::Dimension("matrix must be square".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-9 * (1.0 + a[i][j].abs()) {
                return Err(ConfigError::System(
                    "eigendecomposition is only provided for symmetric matrices".into(),
                ));
            }
        }
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigs: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    Ok((eigs, v))
}

/// Gauss-Jordan inverse; returns None if singular.
pub(crate) fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap()
        })?;
        if aug[pivot][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for x in aug[col].iter_mut() {
            *x /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}
