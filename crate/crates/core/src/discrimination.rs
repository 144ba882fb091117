//! Chernoff-type bounds for discriminating two Gaussian states.
//!
//! `Q_s = Tr[rho0^s rho1^(1-s)]` is evaluated from the Williamson frames of
//! both covariances:
//!
//! ```text
//! Q_s = 2^n prod_k G_s(a_k) G_{1-s}(b_k) / sqrt(det Sigma_s) * exp(-d^T Sigma_s^-1 d / 2)
//! Sigma_s = S_0 Lambda_s(D_0) S_0^T + S_1 Lambda_{1-s}(D_1) S_1^T,   d = mean_0 - mean_1
//! G_p(x) = 2^p / ((x+1)^p - (x-1)^p),  Lambda_p(x) = ((x+1)^p + (x-1)^p) / ((x+1)^p - (x-1)^p)
//! ```
//!
//! Everything is accumulated as `ln Q_s`; the error exponents of interest can
//! be far below `f64::EPSILON`, so `Q_s` itself may round to one.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, WilliamsonFrame, PHYSICALITY_TOL};

/// `Q_s` is only sampled on `[S_EPS, 1 - S_EPS]`.
pub const S_EPS: f64 = 1e-6;
/// Default tolerance on the minimizing `s`.
pub const DEFAULT_S_TOL: f64 = 1e-6;
const GRID_POINTS: usize = 21;

/// Chernoff minimizer and the derived bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub s_star: f64,
    pub q_s_star: f64,
    /// `R_Q = -ln Q_QCB`, per mode.
    pub exponent: f64,
    /// `Q_QCB^M / 2` for `modes` copies.
    pub pe_bound: f64,
    pub modes: u64,
}

impl BoundResult {
    fn from_log_q(s_star: f64, log_q: f64) -> Self {
        let exponent = -log_q;
        Self {
            s_star,
            q_s_star: log_q.exp(),
            exponent,
            pe_bound: pe_bound_from_exponent(exponent, 1),
            modes: 1,
        }
    }

    /// The same bound evaluated for `m` independent mode copies.
    pub fn at_modes(self, m: u64) -> Self {
        Self {
            pe_bound: pe_bound_from_exponent(self.exponent, m),
            modes: m,
            ..self
        }
    }
}

fn lambda_and_log_g(p: f64, nu: f64) -> (f64, f64) {
    let nu = nu.max(1.0);
    let ratio = (nu - 1.0) / (nu + 1.0);
    if ratio <= 0.0 {
        // pure mode: Lambda = 1, G = 1
        return (1.0, 0.0);
    }
    let log_rp = p * ratio.ln();
    let rp = log_rp.exp();
    let one_minus = -log_rp.exp_m1();
    let lambda = (1.0 + rp) / one_minus;
    let log_g = p * std::f64::consts::LN_2 - p * (nu + 1.0).ln() - one_minus.ln();
    (lambda, log_g)
}

/// Two states prepared for repeated `Q_s` evaluation.
#[derive(Debug, Clone)]
pub struct ChernoffPair {
    n_modes: usize,
    frame0: WilliamsonFrame,
    frame1: WilliamsonFrame,
    mean_diff: nalgebra::DVector<f64>,
    same_cov: bool,
}

impl ChernoffPair {
    pub fn new(rho0: &GaussianState, rho1: &GaussianState) -> Result<Self> {
        if rho0.n_modes() != rho1.n_modes() {
            return Err(Error::ModeMismatch(rho0.n_modes(), rho1.n_modes()));
        }
        let frame0 = WilliamsonFrame::new(rho0.cov())?;
        let frame1 = WilliamsonFrame::new(rho1.cov())?;
        for frame in [&frame0, &frame1] {
            let min_nu = frame
                .symplectic_eigenvalues()?
                .last()
                .copied()
                .unwrap_or(f64::NAN);
            if !(min_nu >= 1.0 - PHYSICALITY_TOL) {
                return Err(Error::Unphysical {
                    min_symplectic: min_nu,
                });
            }
        }
        Ok(Self {
            n_modes: rho0.n_modes(),
            frame0,
            frame1,
            mean_diff: rho0.mean() - rho1.mean(),
            same_cov: rho0.cov() == rho1.cov(),
        })
    }

    /// `ln Q_s`, clamped to `<= 0`.
    pub fn log_qs(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("s must lie in [0, 1], got {s}")));
        }
        if s == 0.0 || s == 1.0 {
            return Ok(0.0);
        }
        let t = 1.0 - s;
        let sigma = self.frame0.apply(|nu| lambda_and_log_g(s, nu).0)
            + self.frame1.apply(|nu| lambda_and_log_g(t, nu).0);
        let chol = Cholesky::new(sigma.clone()).ok_or_else(|| {
            Error::Numerical("Chernoff kernel matrix is not positive definite".into())
        })?;

        // Identical covariances: the prefactor is Tr[rho^s rho^(1-s)] = 1 exactly.
        let log_prefactor = if self.same_cov {
            0.0
        } else {
            let log_g0: f64 = self
                .frame0
                .doubled_spectrum()
                .map(|nu| lambda_and_log_g(s, nu).1)
                .sum();
            let log_g1: f64 = self
                .frame1
                .doubled_spectrum()
                .map(|nu| lambda_and_log_g(t, nu).1)
                .sum();
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            self.n_modes as f64 * std::f64::consts::LN_2 + 0.5 * (log_g0 + log_g1) - 0.5 * log_det
        };

        let mean_term = if self.mean_diff.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            let solved = chol.solve(&self.mean_diff);
            0.5 * self.mean_diff.dot(&solved)
        };
        let log_q = log_prefactor - mean_term;
        if !log_q.is_finite() {
            return Err(Error::Numerical(format!("ln Q_s is not finite at s = {s}")));
        }
        Ok(log_q.min(0.0))
    }

    pub fn qs(&self, s: f64) -> Result<f64> {
        self.log_qs(s).map(f64::exp)
    }

    /// Minimizes `ln Q_s` over `[S_EPS, 1 - S_EPS]`: a 21-point grid locates
    /// the basin, golden-section search refines it to `tol` in `s`.
    pub fn qcb(&self, tol: f64) -> Result<BoundResult> {
        if !(tol > 0.0 && tol <= 1e-3) {
            return Err(Error::Domain(format!("tolerance must lie in (0, 1e-3], got {tol}")));
        }
        let (lo, hi) = (S_EPS, 1.0 - S_EPS);
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + i as f64 * step).collect();
        let values = grid
            .iter()
            .map(|&s| self.log_qs(s))
            .collect::<Result<Vec<_>>>()?;

        let center = (GRID_POINTS - 1) / 2;
        let mut best = center;
        for (i, v) in values.iter().enumerate() {
            let closer = i.abs_diff(center) < best.abs_diff(center);
            if *v < values[best] || (*v == values[best] && closer) {
                best = i;
            }
        }
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(GRID_POINTS - 1)];
        let (s_star, log_q) = golden_section(|s| self.log_qs(s), a, b, tol)?;
        let (s_star, log_q) = if values[best] < log_q {
            (grid[best], values[best])
        } else {
            (s_star, log_q)
        };
        Ok(BoundResult::from_log_q(s_star, log_q))
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
fn golden_section<F>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// `Tr[rho0^s rho1^(1-s)]` for two Gaussian states.
pub fn gaussian_qs(rho0: &GaussianState, rho1: &GaussianState, s: f64) -> Result<f64> {
    ChernoffPair::new(rho0, rho1)?.qs(s)
}

/// `ln Q_s`, accurate when `Q_s` is within machine precision of one.
pub fn gaussian_log_qs(rho0: &GaussianState, rho1: &GaussianState, s: f64) -> Result<f64> {
    ChernoffPair::new(rho0, rho1)?.log_qs(s)
}

/// Quantum Chernoff bound with the minimizing `s` resolved to `tol`.
pub fn qcb(rho0: &GaussianState, rho1: &GaussianState, tol: f64) -> Result<BoundResult> {
    ChernoffPair::new(rho0, rho1)?.qcb(tol)
}

/// The Bhattacharyya quantity `Q_{1/2}`.
pub fn bhattacharyya(rho0: &GaussianState, rho1: &GaussianState) -> Result<f64> {
    gaussian_qs(rho0, rho1, 0.5)
}

/// `min(Q^m / 2, 1/2)`, computed in log space.
pub fn pe_bound(q: f64, m: u64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1], got {q}")));
    }
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    Ok(pe_bound_from_exponent(-q.ln(), m))
}

/// `exp(-m r) / 2` for a per-mode exponent `r >= 0`.
pub fn pe_bound_from_exponent(exponent: f64, m: u64) -> f64 {
    0.5 * (-(m as f64) * exponent.max(0.0)).exp()
}

/// `10 log10(r_a / r_b)`.
pub fn exponent_advantage_db(r_a: f64, r_b: f64) -> Result<f64> {
    if !(r_a > 0.0 && r_b > 0.0) {
        return Err(Error::Domain(format!(
            "exponents must be positive, got {r_a} and {r_b}"
        )));
    }
    Ok(10.0 * (r_a / r_b).log10())
}
