//! Gaussian states of the source and of the target returns.
//!
//! Covariances are stored with the vacuum equal to the identity (the
//! `1/4`-scaled Wigner matrices multiplied by four) in `xxpp` ordering:
//! `r = (x_1, .., x_n, p_1, .., p_n)` with `x = a + a^dag`, `p = -i(a - a^dag)`.
//! A coherent amplitude `alpha` therefore has mean `(2 Re alpha, 2 Im alpha)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{overlap_coefficients, SceneGeometry};

/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Allowed shortfall of a symplectic eigenvalue below the vacuum value.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Relative tolerance when pairing the doubled spectrum of the symplectic kernel.
pub const PAIRING_TOL: f64 = 1e-8;

/// Radiometric and statistical parameters of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Roundtrip transmissivity.
    pub kappa: f64,
    /// Mean transmitted photons per signal mode.
    pub n_s: f64,
    /// Mean background photons per mode at the receiver.
    pub n_b: f64,
    /// Number of signal(-idler) mode pairs `M = WT`.
    pub m_modes: u64,
}

impl ChannelParams {
    pub fn new(kappa: f64, n_s: f64, n_b: f64, m_modes: u64) -> Result<Self> {
        let p = Self {
            kappa,
            n_s,
            n_b,
            m_modes,
        };
        p.validate()?;
        Ok(p)
    }

    /// `kappa = 0` is accepted: it is the no-signal limit used by several checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && (0.0..=1.0).contains(&self.kappa)) {
            return Err(Error::InvalidParams(format!(
                "kappa must lie in [0, 1], got {}",
                self.kappa
            )));
        }
        if !(self.n_s.is_finite() && self.n_s > 0.0) {
            return Err(Error::InvalidParams(format!(
                "n_s must be positive, got {}",
                self.n_s
            )));
        }
        if !(self.n_b.is_finite() && self.n_b >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "n_b must be non-negative, got {}",
                self.n_b
            )));
        }
        if self.m_modes == 0 {
            return Err(Error::InvalidParams("m_modes must be at least 1".into()));
        }
        Ok(())
    }

    /// Received signal-to-noise ratio `kappa n_s / n_b`.
    pub fn snr(&self) -> f64 {
        self.kappa * self.n_s / self.n_b
    }

    /// Mean received signal photons per mode for the coherent-state transmitter.
    pub fn received_photons(&self) -> f64 {
        self.kappa * self.n_s
    }
}

/// One versus two targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// A single on-axis target.
    H1,
    /// Two targets at `±theta`.
    H2,
}

/// An `n`-mode Gaussian state: quadrature means and covariance (vacuum = identity).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    n_modes: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Checks shapes, finiteness and symmetry; physicality is checked by
    /// [`validate_state`] and by every consumer of the state.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || dim % 2 != 0 || cov.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square with even size, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance is {dim}x{dim}",
                mean.len()
            )));
        }
        if !cov.iter().chain(mean.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite moment".into()));
        }
        let residual = symmetry_residual(&cov);
        if residual > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(residual));
        }
        Ok(Self {
            n_modes: dim / 2,
            mean,
            cov,
        })
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        Self::new(DVector::zeros(dim), cov)
    }

    /// The `n`-mode vacuum.
    pub fn vacuum(n_modes: usize) -> Self {
        Self::thermal(n_modes, 0.0)
    }

    /// `n` independent thermal modes of mean photon number `n_th`.
    pub fn thermal(n_modes: usize, n_th: f64) -> Self {
        let dim = 2 * n_modes;
        Self {
            n_modes,
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * (2.0 * n_th + 1.0),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Total mean photon number `(tr V - 2n)/4 + |mean|^2/4`.
    pub fn mean_photons(&self) -> f64 {
        (self.cov.trace() - 2.0 * self.n_modes as f64) / 4.0 + self.mean.norm_squared() / 4.0
    }
}

fn symmetry_residual(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symplectic form for `xxpp` ordering: `[[0, I], [-I, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(k, n_modes + k)] = 1.0;
        omega[(n_modes + k, k)] = -1.0;
    }
    omega
}

/// Spectral data needed to build functions of a covariance in its Williamson frame.
///
/// With `R = V^(1/2)` the matrix `K = R Omega^T V Omega R` is symmetric and
/// similar to `-(V Omega)^2`, so its eigenvalues are the squared symplectic
/// eigenvalues, each appearing twice. For any scalar function `f` applied
/// to the Williamson diagonal, `S f(D) S^T = R h(K) R` with `h(y) = f(sqrt y)/sqrt y`.
#[derive(Debug, Clone)]
pub(crate) struct WilliamsonFrame {
    sqrt_cov: DMatrix<f64>,
    kernel: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl WilliamsonFrame {
    pub(crate) fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || dim % 2 != 0 || cov.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "expected an even square matrix, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let residual = symmetry_residual(cov);
        if residual > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(residual));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let min_eig = eig.eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        let sqrt_cov = spectral_function(&eig, f64::sqrt);
        let omega = symplectic_form(dim / 2);
        let kernel_mat = &sqrt_cov * omega.transpose() * cov * &omega * &sqrt_cov;
        let kernel = SymmetricEigen::new(symmetrize(kernel_mat));
        if !kernel.eigenvalues.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Numerical(
                "symplectic kernel is not positive definite".into(),
            ));
        }
        Ok(Self { sqrt_cov, kernel })
    }

    /// Symplectic eigenvalues, descending, one per mode.
    pub(crate) fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        let mut squared: Vec<f64> = self.kernel.eigenvalues.iter().copied().collect();
        squared.sort_by(|a, b| b.total_cmp(a));
        let mut out = Vec::with_capacity(squared.len() / 2);
        for pair in squared.chunks(2) {
            let (hi, lo) = (pair[0], pair[1]);
            if (hi - lo).abs() > PAIRING_TOL * hi.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "symplectic spectrum does not pair: {hi} vs {lo}"
                )));
            }
            out.push((0.5 * (hi + lo)).sqrt());
        }
        Ok(out)
    }

    /// Every eigenvalue of the kernel mapped to its symplectic eigenvalue (each mode twice).
    pub(crate) fn doubled_spectrum(&self) -> impl Iterator<Item = f64> + '_ {
        self.kernel.eigenvalues.iter().map(|v| v.sqrt())
    }

    /// `S f(D) S^T`, where `f` acts on each symplectic eigenvalue.
    pub(crate) fn apply<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let h = spectral_function(&self.kernel, |y| {
            let nu = y.sqrt();
            f(nu) / nu
        });
        symmetrize(&self.sqrt_cov * h * &self.sqrt_cov)
    }
}

pub(crate) fn spectral_function<F: Fn(f64) -> f64>(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    f: F,
) -> DMatrix<f64> {
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let v = f(*lam);
        scaled.column_mut(j).scale_mut(v);
    }
    scaled * u.transpose()
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Symplectic eigenvalues of a symmetric positive-definite covariance, descending.
pub fn symplectic_eigenvalues(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    WilliamsonFrame::new(cov)?.symplectic_eigenvalues()
}

/// Outcome of [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDiagnostics {
    pub symmetry_residual: f64,
    /// `NaN` when the covariance is not positive definite.
    pub min_symplectic_eigenvalue: f64,
    pub mean_finite: bool,
    pub passes: bool,
}

/// Checks symmetry, the uncertainty principle and mean finiteness.
pub fn validate_state(state: &GaussianState) -> StateDiagnostics {
    let symmetry = symmetry_residual(&state.cov);
    let min_nu = symplectic_eigenvalues(&state.cov)
        .ok()
        .and_then(|nu| nu.last().copied())
        .unwrap_or(f64::NAN);
    let mean_finite = state.mean.iter().all(|v| v.is_finite());
    let passes = symmetry <= SYMMETRY_TOL && min_nu >= 1.0 - PHYSICALITY_TOL && mean_finite;
    StateDiagnostics {
        symmetry_residual: symmetry,
        min_symplectic_eigenvalue: min_nu,
        mean_finite,
        passes,
    }
}

/// Builds an `xxpp` covariance from the x-block; the p-block equals it with
/// the entries listed in `flip` (upper-triangle index pairs) negated.
fn block_covariance(x_block: &DMatrix<f64>, flip: &[(usize, usize)]) -> DMatrix<f64> {
    let n = x_block.nrows();
    let mut p_block = x_block.clone();
    for &(i, j) in flip {
        p_block[(i, j)] = -p_block[(i, j)];
        p_block[(j, i)] = -p_block[(j, i)];
    }
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    cov.view_mut((0, 0), (n, n)).copy_from(x_block);
    cov.view_mut((n, n), (n, n)).copy_from(&p_block);
    cov
}

/// Signal-idler state of one SPDC mode pair (modes `S`, `I`).
pub fn spdc_source_state(n_s: f64) -> Result<GaussianState> {
    if !(n_s.is_finite() && n_s > 0.0) {
        return Err(Error::InvalidParams(format!(
            "n_s must be positive, got {n_s}"
        )));
    }
    let s = 2.0 * n_s + 1.0;
    let c_q = 2.0 * (n_s * (n_s + 1.0)).sqrt();
    let x = DMatrix::from_row_slice(2, 2, &[s, c_q, c_q, s]);
    GaussianState::zero_mean(block_covariance(&x, &[(0, 1)]))
}

/// Return-idler state `(phi1, phi2, I)` of the entangled transmitter under `h`.
pub fn qi_hypothesis_state(
    p: &ChannelParams,
    geom: &SceneGeometry,
    h: Hypothesis,
) -> Result<GaussianState> {
    p.validate()?;
    let ov = overlap_coefficients(geom)?.require_two_mode()?;
    let (kappa, n_s) = (p.kappa, p.n_s);
    let s = 2.0 * n_s + 1.0;
    let c_q = 2.0 * (n_s * (n_s + 1.0)).sqrt();
    let d1 = 2.0 * p.n_b + 1.0;
    let c1 = kappa.sqrt() * c_q;
    let x = match h {
        Hypothesis::H1 => {
            let a1 = 2.0 * kappa * n_s + d1;
            DMatrix::from_row_slice(3, 3, &[a1, 0.0, c1, 0.0, d1, 0.0, c1, 0.0, s])
        }
        Hypothesis::H2 => {
            let (a, b) = (ov.a, ov.b);
            let a2 = 2.0 * a * a * kappa * n_s + d1;
            let b2 = 2.0 * a * b * kappa * n_s;
            let c2 = a * c1;
            let d2 = 2.0 * b * b * kappa * n_s + d1;
            let e2 = b * c1;
            DMatrix::from_row_slice(3, 3, &[a2, b2, c2, b2, d2, e2, c2, e2, s])
        }
    };
    GaussianState::zero_mean(block_covariance(&x, &[(0, 2), (1, 2)]))
}

/// Return state `(phi1, phi2)` of the coherent-state transmitter under `h`.
///
/// Both hypotheses are displaced thermal states of background `n_b` with
/// `kappa n_s` received photons per mode, in `xi1` (H1) or `xi2` (H2).
pub fn coherent_hypothesis_state(
    p: &ChannelParams,
    geom: &SceneGeometry,
    h: Hypothesis,
) -> Result<GaussianState> {
    p.validate()?;
    let ov = overlap_coefficients(geom)?.require_two_mode()?;
    let amp = 2.0 * p.received_photons().sqrt();
    let mut mean = DVector::zeros(4);
    match h {
        Hypothesis::H1 => mean[0] = amp,
        Hypothesis::H2 => {
            mean[0] = amp * ov.a;
            mean[1] = amp * ov.b;
        }
    }
    let cov = DMatrix::identity(4, 4) * (2.0 * p.n_b + 1.0);
    GaussianState::new(mean, cov)
}
