//! Max-min SINR balancing for a fixed port selection.
//!
//! The downlink problem is solved through its virtual uplink: alternate
//! between MMSE receive directions for the current uplink powers and the
//! balanced uplink power allocation for those directions. The latter is the
//! Perron eigenpair of a `(K+1) × (K+1)` nonnegative coupling matrix whose
//! dominant eigenvalue is the reciprocal of the balanced SINR. Downlink
//! powers for the final directions then follow from one `K × K` linear
//! solve, and reach the same SINR with the same total power.
//!
//! Received signal convention: user `k` sees `h_kᵀ w_j`, so the directions
//! are designed against `conj(h_k)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 10_000;

/// Selected-port channel of all users plus the power budget.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    h_sel: DMatrix<Complex64>,
    power_mw: f64,
    noise_mw: f64,
}

impl EffectiveChannel {
    /// `h_sel` is `n × K`, column `k` the channel of user `k`.
    pub fn new(h_sel: DMatrix<Complex64>, power_mw: f64, noise_mw: f64) -> Result<Self> {
        let (n, k) = h_sel.shape();
        if k == 0 {
            return Err(Error::Domain("effective channel has no users".into()));
        }
        if n < k {
            return Err(Error::Domain(format!("{n} selected ports cannot serve {k} users")));
        }
        if h_sel.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("effective channel has non-finite entries".into()));
        }
        if !(power_mw > 0.0 && power_mw.is_finite()) || !(noise_mw > 0.0 && noise_mw.is_finite()) {
            return Err(Error::Domain(format!(
                "power {power_mw} mW and noise {noise_mw} mW must be positive"
            )));
        }
        Ok(EffectiveChannel {
            h_sel,
            power_mw,
            noise_mw,
        })
    }

    pub fn h_sel(&self) -> &DMatrix<Complex64> {
        &self.h_sel
    }

    pub fn power_mw(&self) -> f64 {
        self.power_mw
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }

    pub fn ports(&self) -> usize {
        self.h_sel.nrows()
    }

    pub fn users(&self) -> usize {
        self.h_sel.ncols()
    }

    /// Per-user SINR of a downlink precoder (`n × K`, column `k` = `w_k`).
    pub fn downlink_sinrs(&self, beams: &DMatrix<Complex64>) -> Vec<f64> {
        // gains[(k, j)] = |h_kᵀ w_j|²
        let gains = (self.h_sel.transpose() * beams).map(|z| z.norm_sqr());
        (0..self.users())
            .map(|k| {
                let interference: f64 = (0..self.users()).filter(|&j| j != k).map(|j| gains[(k, j)]).sum();
                gains[(k, k)] / (interference + self.noise_mw)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    /// `n × K`, column `k` is `w_k`.
    pub beams_w: DMatrix<Complex64>,
    pub user_sinrs: Vec<f64>,
    pub gamma: f64,
    pub iterations: usize,
    /// Some user has no usable gain on the selected ports; `gamma` is 0.
    pub degenerate: bool,
}

impl BeamformingSolution {
    fn degenerate(n: usize, k: usize, iterations: usize) -> Self {
        BeamformingSolution {
            beams_w: DMatrix::zeros(n, k),
            user_sinrs: vec![0.0; k],
            gamma: 0.0,
            iterations,
            degenerate: true,
        }
    }

    pub fn total_power(&self) -> f64 {
        self.beams_w.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Balanced max-min SINR with default tolerances.
pub fn balance_default(ch: &EffectiveChannel) -> Result<BeamformingSolution> {
    balance(ch, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

pub fn balance(ch: &EffectiveChannel, tol: f64, max_iter: usize) -> Result<BeamformingSolution> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Domain(format!(
            "tol {tol} must be positive and max_iter {max_iter} at least 1"
        )));
    }
    let (n, k) = ch.h_sel.shape();
    let v = ch.h_sel.map(|z| z.conj());
    if v.column_iter().any(|c| !(c.norm_squared() > f64::MIN_POSITIVE)) {
        return Ok(BeamformingSolution::degenerate(n, k, 0));
    }

    let power = ch.power_mw;
    let noise = ch.noise_mw;
    let mut q = DVector::from_element(k, power / k as f64);
    let mut gamma_prev = f64::NAN;
    let mut residual = f64::INFINITY;

    for it in 1..=max_iter {
        let dirs = match mmse_directions(&v, &q, noise) {
            Some(d) => d,
            None => return Err(Error::Numeric("singular MMSE covariance".into())),
        };
        // cross[(k, j)] = |u_kᴴ v_j|²
        let cross = (dirs.adjoint() * &v).map(|z| z.norm_sqr());
        if (0..k).any(|i| !(cross[(i, i)] > f64::MIN_POSITIVE)) {
            return Ok(BeamformingSolution::degenerate(n, k, it));
        }
        let coupling = extended_coupling(&cross, power, noise);
        let (lambda, q_next) = uplink_balance(&coupling)?;
        let gamma = 1.0 / lambda;

        if gamma_prev.is_finite() {
            residual = (gamma - gamma_prev).abs() / gamma;
        }
        let converged = residual < tol;
        if converged || it == max_iter {
            let sol = downlink(ch, &v, &dirs, &cross, gamma, it)?;
            if converged {
                return Ok(sol);
            }
            return Err(Error::Convergence {
                iterations: it,
                residual,
                best: Box::new(sol),
            });
        }
        gamma_prev = gamma;
        q = q_next;
    }
    unreachable!("loop returns on its last iteration")
}

/// Unit-norm MMSE receive directions `∝ (σ²I + Σ q_j v_j v_jᴴ)⁻¹ v_k`.
fn mmse_directions(v: &DMatrix<Complex64>, q: &DVector<f64>, noise: f64) -> Option<DMatrix<Complex64>> {
    let n = v.nrows();
    let mut cov = DMatrix::<Complex64>::identity(n, n) * Complex64::new(noise, 0.0);
    for (j, col) in v.column_iter().enumerate() {
        cov += (col * col.adjoint()) * Complex64::new(q[j], 0.0);
    }
    let chol = cov.cholesky()?;
    let mut dirs = chol.solve(v);
    for mut col in dirs.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        col.unscale_mut(norm);
    }
    Some(dirs)
}

/// Uplink coupling matrix whose Perron eigenpair `(1/γ, [q; 1])` gives the
/// balanced SINR and powers.
fn extended_coupling(cross: &DMatrix<f64>, power: f64, noise: f64) -> DMatrix<f64> {
    let k = cross.nrows();
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        let direct = cross[(i, i)];
        for j in 0..k {
            if j != i {
                m[(i, j)] = cross[(i, j)] / direct;
            }
        }
        m[(i, k)] = noise / direct;
    }
    for j in 0..=k {
        let col_sum: f64 = (0..k).map(|i| m[(i, j)]).sum();
        m[(k, j)] = col_sum / power;
    }
    m
}

/// Dominant eigenvalue and the uplink powers read from its eigenvector.
fn uplink_balance(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let k = m.nrows() - 1;
    let (lambda, x) = match perron_power_iteration(m) {
        Some(found) => found,
        None => perron_schur(m)?,
    };
    let tail = x[k];
    if !(tail > 0.0) || !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Numeric(format!("invalid Perron pair (lambda = {lambda:e})")));
    }
    Ok((lambda, DVector::from_fn(k, |i, _| (x[i] / tail).max(0.0))))
}

/// Power iteration from the all-ones vector, stopped when the
/// Collatz-Wielandt bounds agree to `PERRON_TOL` relative.
pub(crate) fn perron_power_iteration(m: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    let dim = m.nrows();
    let mut x = DVector::from_element(dim, 1.0 / dim as f64);
    for _ in 0..PERRON_MAX_ITER {
        let y = m * &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..dim {
            if x[i] > 0.0 {
                let r = y[i] / x[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let sum = y.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return None;
        }
        x = y / sum;
        if hi - lo <= PERRON_TOL * hi {
            return Some((0.5 * (hi + lo), x));
        }
    }
    None
}

/// Fallback: Perron root from the real Schur form, eigenvector from the
/// first `K` rows with the last entry pinned to 1.
fn perron_schur(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let k = m.nrows() - 1;
    let eigs = m.clone().complex_eigenvalues();
    let lambda = eigs
        .iter()
        .filter(|z| z.im.abs() <= 1e-12 * z.norm().max(1.0))
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lambda > 0.0) {
        return Err(Error::Numeric("coupling matrix has no positive real eigenvalue".into()));
    }
    // (λI - DΨ) q = Dσ²·1
    let mut a = -m.view((0, 0), (k, k)).into_owned();
    for i in 0..k {
        a[(i, i)] += lambda;
    }
    let rhs = m.view((0, k), (k, 1)).column(0).into_owned();
    let q = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular uplink power system".into()))?;
    let mut x = DVector::from_element(k + 1, 1.0);
    x.rows_mut(0, k).copy_from(&q);
    Ok((lambda, x))
}

/// Downlink powers that equalize every user at `gamma` along `dirs`.
fn downlink(
    ch: &EffectiveChannel,
    v: &DMatrix<Complex64>,
    dirs: &DMatrix<Complex64>,
    cross: &DMatrix<f64>,
    gamma: f64,
    iterations: usize,
) -> Result<BeamformingSolution> {
    let k = v.ncols();
    // Row k: p_k |v_kᴴu_k|²/γ - Σ_{j≠k} p_j |v_kᴴu_j|² = σ², with |v_kᴴu_j|² = cross[(j, k)].
    let mut sys = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            sys[(i, j)] = if i == j { cross[(i, i)] / gamma } else { -cross[(j, i)] };
        }
    }
    let rhs = DVector::from_element(k, ch.noise_mw);
    let p = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular downlink power system".into()))?;
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Numeric("downlink power allocation is not nonnegative".into()));
    }
    let mut beams = dirs.clone();
    for (mut col, &pk) in beams.column_iter_mut().zip(p.iter()) {
        col *= Complex64::new(pk.sqrt(), 0.0);
    }
    let user_sinrs = ch.downlink_sinrs(&beams);
    Ok(BeamformingSolution {
        beams_w: beams,
        user_sinrs,
        gamma,
        iterations,
        degenerate: false,
    })
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
