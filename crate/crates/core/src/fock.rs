//! Truncated Fock-space oracle.
//!
//! Every hypothesis state is rebuilt from a physical circuit (two-mode
//! squeezed vacuum, beam splitters, thermal-loss channels, displacements) in
//! a truncated number basis, and `Q_s`, the Helstrom error probability and
//! the receiver moments are computed by dense linear algebra. Nothing here is
//! used on the Gaussian path; it exists to check it.
//!
//! All circuits used here have real matrix elements in the number basis, so
//! states are stored as real matrices. Multi-mode basis indices are row-major
//! with mode 0 most significant.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gaussian::{ChannelParams, GaussianState, Hypothesis};
use crate::modes::{overlap_coefficients, SceneGeometry};
use crate::pc_receiver::ModeStatistic;

/// Default per-mode truncation tolerance on discarded probability.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;
/// Eigenvalues below this are clipped to zero before fractional powers.
pub const EIGEN_CLIP: f64 = 1e-14;
/// Hermiticity tolerance for density operators.
pub const HERMITIAN_TOL: f64 = 1e-10;
// Environment modes are truncated much more tightly than system modes.
const ENV_TAIL_TOL: f64 = 1e-15;

/// Pure state on a truncated multi-mode number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockKet {
    dims: Vec<usize>,
    amplitudes: DVector<f64>,
}

/// Dense operator (usually a density operator) on a truncated multi-mode number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dims: Vec<usize>,
    matrix: DMatrix<f64>,
}

fn total_dim(dims: &[usize]) -> usize {
    dims.iter().product()
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

fn digit(index: usize, stride: usize, dim: usize) -> usize {
    (index / stride) % dim
}

impl FockKet {
    pub fn new(dims: Vec<usize>, amplitudes: DVector<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) || total_dim(&dims) != amplitudes.len() {
            return Err(Error::DimensionMismatch(format!(
                "ket of length {} does not match dims {:?}",
                amplitudes.len(),
                dims
            )));
        }
        Ok(Self { dims, amplitudes })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amplitudes
    }

    /// Amplitude of the basis state with the given photon numbers.
    pub fn amplitude(&self, photons: &[usize]) -> f64 {
        let st = strides(&self.dims);
        let idx: usize = photons.iter().zip(&st).map(|(n, s)| n * s).sum();
        self.amplitudes[idx]
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// Appends a vacuum mode of dimension `dim` at position `at`.
    pub fn insert_vacuum_mode(&self, at: usize, dim: usize) -> Result<Self> {
        if at > self.dims.len() || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "cannot insert mode at {at} into {} modes",
                self.dims.len()
            )));
        }
        let mut dims = self.dims.clone();
        dims.insert(at, dim);
        let new_strides = strides(&dims);
        let old_strides = strides(&self.dims);
        let mut out = DVector::zeros(total_dim(&dims));
        for (i, amp) in self.amplitudes.iter().enumerate() {
            let mut j = 0;
            for (k, (&s, &d)) in old_strides.iter().zip(&self.dims).enumerate() {
                let target = if k < at { k } else { k + 1 };
                j += digit(i, s, d) * new_strides[target];
            }
            out[j] = *amp;
        }
        Self::new(dims, out)
    }

    /// Applies a beam splitter of the given transmissivity to modes `i`, `j`.
    pub fn beamsplitter(&self, mode_i: usize, mode_j: usize, transmissivity: f64) -> Result<Self> {
        let kernel = BeamSplitterKernel::from_transmissivity(transmissivity)?;
        self.apply_beamsplitter(mode_i, mode_j, &kernel)
    }

    fn apply_beamsplitter(&self, mode_i: usize, mode_j: usize, kernel: &BeamSplitterKernel) -> Result<Self> {
        check_pair(&self.dims, mode_i, mode_j)?;
        let amplitudes = apply_pair_to_vector(&self.amplitudes, &self.dims, mode_i, mode_j, kernel);
        Self::new(self.dims.clone(), amplitudes)
    }

    /// `|psi><psi|`.
    pub fn to_density(&self) -> FockOperator {
        FockOperator {
            dims: self.dims.clone(),
            matrix: &self.amplitudes * self.amplitudes.transpose(),
        }
    }
}

impl FockOperator {
    pub fn new(dims: Vec<usize>, matrix: DMatrix<f64>) -> Result<Self> {
        let d = total_dim(&dims);
        if dims.is_empty() || dims.contains(&0) || matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix does not match dims {:?}",
                matrix.nrows(),
                matrix.ncols(),
                dims
            )));
        }
        Ok(Self { dims, matrix })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    fn check_hermitian(&self) -> Result<()> {
        let r = self.hermiticity_residual();
        if r > HERMITIAN_TOL {
            Err(Error::NotSymmetric(r))
        } else {
            Ok(())
        }
    }

    /// Smallest eigenvalue, for positivity checks.
    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_spectrum(&self.matrix)
            .map(|(values, _)| values.min())
            .unwrap_or(f64::NAN)
    }

    /// `a ⊗ b`.
    pub fn tensor(&self, other: &FockOperator) -> FockOperator {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        FockOperator {
            dims,
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    /// Reduced operator on `keep` (in the given order, which must be increasing).
    pub fn partial_trace_keep(&self, keep: &[usize]) -> Result<FockOperator> {
        if keep.is_empty() || keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= self.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "invalid mode selection {keep:?} for {} modes",
                self.dims.len()
            )));
        }
        let st = strides(&self.dims);
        let kept_dims: Vec<usize> = keep.iter().map(|&k| self.dims[k]).collect();
        let kept_strides = strides(&kept_dims);
        let d = total_dim(&self.dims);
        let reduce = |i: usize| -> (usize, usize) {
            let mut kept = 0;
            let mut traced = 0;
            let mut ki = 0;
            for (m, (&s, &dim)) in st.iter().zip(&self.dims).enumerate() {
                let n = digit(i, s, dim);
                if ki < keep.len() && keep[ki] == m {
                    kept += n * kept_strides[ki];
                    ki += 1;
                } else {
                    traced = traced * dim + n;
                }
            }
            (kept, traced)
        };
        let indices: Vec<(usize, usize)> = (0..d).map(reduce).collect();
        let mut out = DMatrix::zeros(total_dim(&kept_dims), total_dim(&kept_dims));
        for r in 0..d {
            let (kr, tr) = indices[r];
            for c in 0..d {
                let (kc, tc) = indices[c];
                if tr == tc {
                    out[(kr, kc)] += self.matrix[(r, c)];
                }
            }
        }
        FockOperator::new(kept_dims, out)
    }

    /// Photon-number distribution of one mode.
    pub fn number_distribution(&self, mode: usize) -> Vec<f64> {
        let st = strides(&self.dims);
        let mut p = vec![0.0; self.dims[mode]];
        for i in 0..self.matrix.nrows() {
            p[digit(i, st[mode], self.dims[mode])] += self.matrix[(i, i)];
        }
        p
    }

    /// `U rho U^T` for a beam splitter on modes `i`, `j`.
    fn apply_beamsplitter(&self, mode_i: usize, mode_j: usize, kernel: &BeamSplitterKernel) -> Result<Self> {
        check_pair(&self.dims, mode_i, mode_j)?;
        let d = self.matrix.nrows();
        let mut left = DMatrix::zeros(d, d);
        for c in 0..d {
            let col = self.matrix.column(c).into_owned();
            left.set_column(c, &apply_pair_to_vector(&col, &self.dims, mode_i, mode_j, kernel));
        }
        let mut out = DMatrix::zeros(d, d);
        for r in 0..d {
            let row = left.row(r).transpose();
            out.set_row(r, &apply_pair_to_vector(&row, &self.dims, mode_i, mode_j, kernel).transpose());
        }
        FockOperator::new(self.dims.clone(), out)
    }

    /// Quadrature moments in the Gaussian-path convention (vacuum covariance = identity).
    pub fn gaussian_moments(&self) -> Result<GaussianState> {
        let n = self.dims.len();
        let st = strides(&self.dims);
        let d = self.matrix.nrows();
        let digits: Vec<Vec<usize>> = (0..d)
            .map(|i| (0..n).map(|k| digit(i, st[k], self.dims[k])).collect())
            .collect();
        let rho = &self.matrix;

        // <a_j>
        let mut alpha = vec![0.0; n];
        for (w, nw) in digits.iter().enumerate() {
            for j in 0..n {
                if nw[j] > 0 {
                    alpha[j] += (nw[j] as f64).sqrt() * rho[(w, w - st[j])];
                }
            }
        }
        // <a_j a_k> and <a_j^dag a_k>
        let mut aa = DMatrix::<f64>::zeros(n, n);
        let mut ada = DMatrix::<f64>::zeros(n, n);
        for (w, nw) in digits.iter().enumerate() {
            for k in 0..n {
                if nw[k] == 0 {
                    continue;
                }
                let ck = (nw[k] as f64).sqrt();
                let after_k = w - st[k];
                for j in 0..n {
                    let nj = if j == k { nw[j] - 1 } else { nw[j] };
                    if nj > 0 {
                        aa[(j, k)] += ck * (nj as f64).sqrt() * rho[(w, after_k - st[j])];
                    }
                    if nj + 1 < self.dims[j] {
                        ada[(j, k)] += ck * ((nj + 1) as f64).sqrt() * rho[(w, after_k + st[j])];
                    }
                }
            }
        }

        let mut mean = DVector::zeros(2 * n);
        for j in 0..n {
            mean[j] = 2.0 * alpha[j];
        }
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in j..n {
                let m = aa[(j, k)] - alpha[j] * alpha[k];
                let nn = ada[(j, k)] - alpha[j] * alpha[k];
                let delta = if j == k { 1.0 } else { 0.0 };
                let xx = 2.0 * m + 2.0 * nn + delta;
                let pp = -2.0 * m + 2.0 * nn + delta;
                cov[(j, k)] = xx;
                cov[(k, j)] = xx;
                cov[(n + j, n + k)] = pp;
                cov[(n + k, n + j)] = pp;
                // real states carry no x-p correlations
            }
        }
        GaussianState::new(mean, cov)
    }
}

fn check_pair(dims: &[usize], i: usize, j: usize) -> Result<()> {
    if i == j || i >= dims.len() || j >= dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "beam splitter needs two distinct modes of {}, got {i} and {j}",
            dims.len()
        )));
    }
    Ok(())
}

/// Two-mode beam splitter `U = exp(phi (a b^dag - a^dag b))`, so that
/// `U a^dag U^dag = cos(phi) a^dag + sin(phi) b^dag`. Stored as one orthogonal
/// block per total photon number `N`, indexed by the photons in mode `a`.
#[derive(Debug, Clone)]
pub(crate) struct BeamSplitterKernel {
    angle: f64,
    blocks: std::cell::RefCell<Vec<DMatrix<f64>>>,
}

impl BeamSplitterKernel {
    pub(crate) fn from_angle(angle: f64) -> Self {
        Self {
            angle,
            blocks: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub(crate) fn from_transmissivity(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Domain(format!(
                "transmissivity must lie in [0, 1], got {eta}"
            )));
        }
        Ok(Self::from_angle(eta.sqrt().acos()))
    }

    /// `<p, N-p| U |n, N-n>`.
    pub(crate) fn amplitude(&self, total: usize, out_a: usize, in_a: usize) -> f64 {
        let mut blocks = self.blocks.borrow_mut();
        while blocks.len() <= total {
            let n = blocks.len();
            blocks.push(subspace_unitary(self.angle, n));
        }
        blocks[total][(out_a, in_a)]
    }
}

fn subspace_unitary(angle: f64, total: usize) -> DMatrix<f64> {
    let dim = total + 1;
    let mut gen = DMatrix::zeros(dim, dim);
    for p in 0..dim {
        // a b^dag |p, N-p> = sqrt(p (N-p+1)) |p-1, N-p+1>
        if p > 0 {
            gen[(p - 1, p)] += ((p * (total - p + 1)) as f64).sqrt();
        }
        // a^dag b |p, N-p> = sqrt((p+1)(N-p)) |p+1, N-p-1>
        if p < total {
            gen[(p + 1, p)] -= (((p + 1) * (total - p)) as f64).sqrt();
        }
    }
    expm_antisymmetric(gen * angle)
}

/// Scaling-and-squaring Taylor exponential; the argument is antisymmetric so
/// the result is orthogonal and the squaring is well conditioned.
fn expm_antisymmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    let norm = m.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut result = DMatrix::identity(dim, dim);
    let mut term = DMatrix::identity(dim, dim);
    for k in 1..=20 {
        term = &term * &a / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn apply_pair_to_vector(
    v: &DVector<f64>,
    dims: &[usize],
    mode_i: usize,
    mode_j: usize,
    kernel: &BeamSplitterKernel,
) -> DVector<f64> {
    let st = strides(dims);
    let (si, sj) = (st[mode_i], st[mode_j]);
    let (di, dj) = (dims[mode_i], dims[mode_j]);
    let mut out = DVector::zeros(v.len());
    for (idx, amp) in v.iter().enumerate() {
        if *amp == 0.0 {
            continue;
        }
        let ni = digit(idx, si, di);
        let nj = digit(idx, sj, dj);
        let base = idx - ni * si - nj * sj;
        let total = ni + nj;
        for p in 0..=total {
            let q = total - p;
            if p >= di || q >= dj {
                continue;
            }
            out[base + p * si + q * sj] += kernel.amplitude(total, p, ni) * amp;
        }
    }
    out
}

/// Beam splitter of transmissivity `eta` on modes `i`, `j` of a density operator.
pub fn beamsplitter_fock(state: &FockOperator, mode_i: usize, mode_j: usize, transmissivity: f64) -> Result<FockOperator> {
    let kernel = BeamSplitterKernel::from_transmissivity(transmissivity)?;
    state.apply_beamsplitter(mode_i, mode_j, &kernel)
}

/// Probability beyond `cutoff` for a thermal distribution of mean `mean`.
pub fn thermal_tail(mean: f64, cutoff: usize) -> f64 {
    if mean <= 0.0 {
        return if cutoff == 0 { 1.0 } else { 0.0 };
    }
    (mean / (mean + 1.0)).powi(cutoff as i32)
}

/// Smallest cutoff whose thermal tail is below `tol`.
pub fn thermal_cutoff(mean: f64, tol: f64) -> usize {
    let mut c = 1;
    while thermal_tail(mean, c) >= tol {
        c += 1;
    }
    c
}

fn check_tail(mean: f64, cutoff: usize, tol: f64) -> Result<()> {
    let tail = thermal_tail(mean, cutoff);
    if tail >= tol {
        Err(Error::CutoffTooSmall { cutoff, tail, tol })
    } else {
        Ok(())
    }
}

fn thermal_weights(mean: f64, cutoff: usize) -> Vec<f64> {
    if mean <= 0.0 {
        let mut w = vec![0.0; cutoff];
        w[0] = 1.0;
        return w;
    }
    let ratio = mean / (mean + 1.0);
    (0..cutoff)
        .map(|n| ratio.powi(n as i32) / (mean + 1.0))
        .collect()
}

/// Two-mode squeezed vacuum `sum_n sqrt(N^n / (N+1)^(n+1)) |n, n>`.
pub fn tmsv_fock(n_s: f64, cutoff: usize) -> Result<FockKet> {
    tmsv_fock_with_tol(n_s, cutoff, DEFAULT_TAIL_TOL)
}

pub fn tmsv_fock_with_tol(n_s: f64, cutoff: usize, tol: f64) -> Result<FockKet> {
    if !(n_s.is_finite() && n_s >= 0.0) || cutoff == 0 {
        return Err(Error::InvalidParams(format!(
            "need n_s >= 0 and cutoff >= 1, got {n_s} and {cutoff}"
        )));
    }
    check_tail(n_s, cutoff, tol)?;
    let weights = thermal_weights(n_s, cutoff);
    let mut amps = DVector::zeros(cutoff * cutoff);
    for (n, w) in weights.iter().enumerate() {
        amps[n * cutoff + n] = w.sqrt();
    }
    FockKet::new(vec![cutoff, cutoff], amps)
}

/// Thermal state of mean `n_b`.
pub fn thermal_fock(n_b: f64, cutoff: usize) -> Result<FockOperator> {
    thermal_fock_with_tol(n_b, cutoff, DEFAULT_TAIL_TOL)
}

pub fn thermal_fock_with_tol(n_b: f64, cutoff: usize, tol: f64) -> Result<FockOperator> {
    if !(n_b.is_finite() && n_b >= 0.0) || cutoff == 0 {
        return Err(Error::InvalidParams(format!(
            "need n_b >= 0 and cutoff >= 1, got {n_b} and {cutoff}"
        )));
    }
    check_tail(n_b, cutoff, tol)?;
    let w = thermal_weights(n_b, cutoff);
    FockOperator::new(vec![cutoff], DMatrix::from_diagonal(&DVector::from_vec(w)))
}

/// Thermal-loss channel on `mode`: mixes it with a thermal environment of
/// mean `n_env` on a beam splitter of transmissivity `kappa` and traces the
/// environment out. The mode's dimension becomes `out_cutoff`.
pub fn thermal_loss(rho: &FockOperator, mode: usize, kappa: f64, n_env: f64, out_cutoff: usize) -> Result<FockOperator> {
    if mode >= rho.dims.len() || out_cutoff == 0 {
        return Err(Error::DimensionMismatch(format!(
            "mode {mode} / cutoff {out_cutoff} invalid for dims {:?}",
            rho.dims
        )));
    }
    let kernel = BeamSplitterKernel::from_transmissivity(kappa)?;
    let env_cut = thermal_cutoff(n_env, ENV_TAIL_TOL);
    let env_w = thermal_weights(n_env, env_cut);
    let c_in = rho.dims[mode];

    // transfer[p][p'][n][n'] for the system mode, nonzero only when n - p = n' - p'
    let idx = |p: usize, pp: usize, n: usize, nn: usize| ((p * out_cutoff + pp) * c_in + n) * c_in + nn;
    let mut transfer = vec![0.0; out_cutoff * out_cutoff * c_in * c_in];
    for (k, wk) in env_w.iter().enumerate() {
        if *wk == 0.0 {
            continue;
        }
        for n in 0..c_in {
            for nn in 0..c_in {
                let (tot, tot2) = (n + k, nn + k);
                for q in 0..=tot.min(tot2) {
                    // environment keeps q photons in both branches
                    let (p, pp) = (tot - q, tot2 - q);
                    if p >= out_cutoff || pp >= out_cutoff {
                        continue;
                    }
                    transfer[idx(p, pp, n, nn)] +=
                        wk * kernel.amplitude(tot, p, n) * kernel.amplitude(tot2, pp, nn);
                }
            }
        }
    }

    let mut out_dims = rho.dims.clone();
    out_dims[mode] = out_cutoff;
    let st_in = strides(&rho.dims);
    let st_out = strides(&out_dims);
    let d_in = total_dim(&rho.dims);
    let d_out = total_dim(&out_dims);
    let split = |i: usize| -> (usize, usize) {
        let n = digit(i, st_in[mode], c_in);
        let rest = i - n * st_in[mode];
        // re-express the remaining digits in the output strides
        let mut j = 0;
        for (m, (&s, &dim)) in st_in.iter().zip(&rho.dims).enumerate() {
            if m != mode {
                j += digit(rest, s, dim) * st_out[m];
            }
        }
        (n, j)
    };
    let parts: Vec<(usize, usize)> = (0..d_in).map(split).collect();
    let mut out = DMatrix::zeros(d_out, d_out);
    for r in 0..d_in {
        let (n, rest_r) = parts[r];
        for c in 0..d_in {
            let v = rho.matrix[(r, c)];
            if v == 0.0 {
                continue;
            }
            let (nn, rest_c) = parts[c];
            for p in 0..out_cutoff {
                // p' = p + nn - n
                let pp = p as isize + nn as isize - n as isize;
                if pp < 0 || pp as usize >= out_cutoff {
                    continue;
                }
                let pp = pp as usize;
                let t = transfer[idx(p, pp, n, nn)];
                if t != 0.0 {
                    out[(rest_r + p * st_out[mode], rest_c + pp * st_out[mode])] += t * v;
                }
            }
        }
    }
    FockOperator::new(out_dims, out)
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `<m| D(alpha) |n>` for real `alpha` on a `dim`-level basis.
fn displacement_matrix(alpha: f64, dim: usize) -> DMatrix<f64> {
    let x = alpha * alpha;
    let mut out = DMatrix::zeros(dim, dim);
    if alpha == 0.0 {
        return DMatrix::identity(dim, dim);
    }
    for m in 0..dim {
        for n in 0..dim {
            let (lo, hi) = if m >= n { (n, m) } else { (m, n) };
            let order = (hi - lo) as f64;
            let lag = generalized_laguerre(lo, order, x);
            let log_mag = 0.5 * (ln_factorial(lo) - ln_factorial(hi)) + order * alpha.abs().ln() - 0.5 * x;
            // alpha^(m-n) for m >= n, (-alpha)^(n-m) otherwise
            let sign_base = if m >= n { alpha.signum() } else { -alpha.signum() };
            let sign = if (hi - lo) % 2 == 0 { 1.0 } else { sign_base };
            out[(m, n)] = sign * log_mag.exp() * lag;
        }
    }
    out
}

fn generalized_laguerre(n: usize, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn displaced_thermal_full(alpha: f64, n_b: f64) -> (DMatrix<f64>, usize) {
    let work = thermal_cutoff(n_b, 1e-17).max(thermal_cutoff(alpha * alpha, 1e-17)) + 20;
    let d = displacement_matrix(alpha, work);
    let w = thermal_weights(n_b, work);
    let mut scaled = d.clone();
    for (j, wj) in w.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*wj);
    }
    (scaled * d.transpose(), work)
}

/// Smallest cutoff leaving less than `tol` of a displaced thermal state outside.
pub fn displaced_thermal_cutoff(alpha: f64, n_b: f64, tol: f64) -> usize {
    let (full, work) = displaced_thermal_full(alpha, n_b);
    let mut kept = 0.0;
    for c in 0..work {
        kept += full[(c, c)];
        if 1.0 - kept < tol {
            return c + 1;
        }
    }
    work
}

/// `D(alpha) rho_th(n_b) D(alpha)^dag` for real `alpha`, truncated to `cutoff`.
pub fn displaced_thermal_fock(alpha: f64, n_b: f64, cutoff: usize, tol: f64) -> Result<FockOperator> {
    if !(alpha.is_finite() && n_b.is_finite() && n_b >= 0.0) || cutoff == 0 {
        return Err(Error::InvalidParams(format!(
            "invalid displaced thermal state: alpha {alpha}, n_b {n_b}, cutoff {cutoff}"
        )));
    }
    let (full, work) = displaced_thermal_full(alpha, n_b);
    let keep = cutoff.min(work);
    let m = full.view((0, 0), (keep, keep)).into_owned();
    let tail = 1.0 - m.trace();
    if tail >= tol {
        return Err(Error::CutoffTooSmall { cutoff, tail, tol });
    }
    let mut padded = DMatrix::zeros(cutoff, cutoff);
    padded.view_mut((0, 0), (keep, keep)).copy_from(&m);
    FockOperator::new(vec![cutoff], padded)
}

/// Per-mode cutoffs `(phi1, phi2, idler)` for the entangled-transmitter states.
pub fn qi_cutoffs(p: &ChannelParams, tol: f64) -> [usize; 3] {
    let ret = thermal_cutoff(p.kappa * p.n_s + p.n_b, tol);
    let idler = thermal_cutoff(p.n_s, tol);
    [ret, ret, idler]
}

/// Per-mode cutoffs `(phi1, phi2)` for the coherent-state returns; each
/// mode gets half of `tol` so the product state's trace stays within `tol`.
pub fn coherent_cutoffs(p: &ChannelParams, tol: f64) -> [usize; 2] {
    let c = displaced_thermal_cutoff(p.received_photons().sqrt(), p.n_b, 0.5 * tol);
    [c, c]
}

/// Return-idler state `(phi1, phi2, I)` built from its circuit: TMSV on
/// signal-idler, a beam splitter sending the signal into `a phi1 + b phi2`
/// under H2, then thermal loss of transmissivity `kappa` on each return with
/// environment mean `n_b / (1 - kappa)`.
pub fn qi_hypothesis_fock(p: &ChannelParams, geom: &SceneGeometry, h: Hypothesis, cutoffs: [usize; 3], tol: f64) -> Result<FockOperator> {
    p.validate()?;
    let ov = overlap_coefficients(geom)?.require_two_mode()?;
    let [c1, c2, ci] = cutoffs;
    let mean_ret = p.kappa * p.n_s + p.n_b;
    check_tail(mean_ret, c1, tol)?;
    check_tail(mean_ret, c2, tol)?;
    check_tail(p.n_s, ci, tol)?;
    let n_env = environment_mean(p)?;

    // modes: (S, I) -> (S, phi2, I)
    let ket = tmsv_fock_with_tol(p.n_s, ci, tol)?.insert_vacuum_mode(1, ci)?;
    let ket = match h {
        Hypothesis::H1 => ket,
        Hypothesis::H2 => {
            let kernel = BeamSplitterKernel::from_angle(ov.b.atan2(ov.a));
            ket.apply_beamsplitter(0, 1, &kernel)?
        }
    };
    let rho = ket.to_density();
    let rho = thermal_loss(&rho, 0, p.kappa, n_env, c1)?;
    thermal_loss(&rho, 1, p.kappa, n_env, c2)
}

fn environment_mean(p: &ChannelParams) -> Result<f64> {
    if p.kappa < 1.0 {
        Ok(p.n_b / (1.0 - p.kappa))
    } else if p.n_b == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::InvalidParams(
            "unit transmissivity leaves no port for background noise".into(),
        ))
    }
}

/// Coherent-state returns `(phi1, phi2)`: independent displaced thermal states.
pub fn coherent_hypothesis_fock(p: &ChannelParams, geom: &SceneGeometry, h: Hypothesis, cutoffs: [usize; 2], tol: f64) -> Result<FockOperator> {
    p.validate()?;
    let ov = overlap_coefficients(geom)?.require_two_mode()?;
    let amp = p.received_photons().sqrt();
    let (a1, a2) = match h {
        Hypothesis::H1 => (amp, 0.0),
        Hypothesis::H2 => (amp * ov.a, amp * ov.b),
    };
    let m1 = displaced_thermal_fock(a1, p.n_b, cutoffs[0], tol)?;
    let m2 = displaced_thermal_fock(a2, p.n_b, cutoffs[1], tol)?;
    Ok(m1.tensor(&m2))
}

/// Eigenvalues and eigenvectors of a real symmetric matrix. The QR solver
/// can break down on heavily rank-deficient inputs; the SVD fallback then
/// recovers each eigenvalue as the Rayleigh quotient of its singular vector,
/// which is exact for positive semidefinite inputs.
pub(crate) fn symmetric_spectrum(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let finite = |e: &SymmetricEigen<f64, nalgebra::Dyn>| {
        e.eigenvalues.iter().all(|v| v.is_finite()) && e.eigenvectors.iter().all(|v| v.is_finite())
    };
    if finite(&eig) {
        return Ok((eig.eigenvalues, eig.eigenvectors));
    }
    let svd = m.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("singular value decomposition failed".into()))?;
    let values = DVector::from_iterator(
        u.ncols(),
        u.column_iter().map(|col| col.dot(&(m * col))),
    );
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition produced non-finite values".into()));
    }
    Ok((values, u))
}

/// Spectral decompositions of two density operators, for `Q_s` at many `s`.
#[derive(Debug, Clone)]
pub struct FockQs {
    eig0: Vec<f64>,
    eig1: Vec<f64>,
    overlap_sq: DMatrix<f64>,
}

impl FockQs {
    pub fn new(rho0: &FockOperator, rho1: &FockOperator) -> Result<Self> {
        if rho0.dims != rho1.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                rho0.dims, rho1.dims
            )));
        }
        rho0.check_hermitian()?;
        rho1.check_hermitian()?;
        let (e0, e1) = rayon::join(
            || symmetric_spectrum(&rho0.matrix),
            || symmetric_spectrum(&rho1.matrix),
        );
        let ((values0, vectors0), (values1, vectors1)) = (e0?, e1?);
        let overlap = vectors0.transpose() * &vectors1;
        let clip = |v: &DVector<f64>| v.iter().map(|x| if *x < EIGEN_CLIP { 0.0 } else { *x }).collect();
        Ok(Self {
            eig0: clip(&values0),
            eig1: clip(&values1),
            overlap_sq: overlap.map(|v| v * v),
        })
    }

    pub fn qs(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("s must lie in (0, 1), got {s}")));
        }
        let p0: DVector<f64> = DVector::from_iterator(self.eig0.len(), self.eig0.iter().map(|v| v.powf(s)));
        let p1: DVector<f64> = DVector::from_iterator(self.eig1.len(), self.eig1.iter().map(|v| v.powf(1.0 - s)));
        Ok(p0.dot(&(&self.overlap_sq * p1)))
    }
}

/// `Tr[rho0^s rho1^(1-s)]` by dense eigendecomposition.
pub fn qs_fock(rho0: &FockOperator, rho1: &FockOperator, s: f64) -> Result<f64> {
    FockQs::new(rho0, rho1)?.qs(s)
}

/// Minimum error probability for equal priors, `(1 - ||rho1 - rho0||_1 / 2) / 2`.
pub fn helstrom_fock(rho0: &FockOperator, rho1: &FockOperator) -> Result<f64> {
    if rho0.dims != rho1.dims {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            rho0.dims, rho1.dims
        )));
    }
    rho0.check_hermitian()?;
    rho1.check_hermitian()?;
    let diff = &rho1.matrix - &rho0.matrix;
    let trace_norm = diff.singular_values().sum();
    if !trace_norm.is_finite() {
        return Err(Error::Numerical("trace norm is not finite".into()));
    }
    Ok((0.5 * (1.0 - 0.5 * trace_norm)).clamp(0.0, 0.5))
}

/// Mean and variance of the phase-conjugate receiver's per-mode count
/// difference, computed directly from the operator `a_C^dag a_I + a_I^dag a_C`
/// with `a_C = a^dag + sqrt(2) v` on the reduced `(signal, idler)` state
/// tensored with a vacuum `v`.
pub fn pc_count_difference_fock(rho: &FockOperator, signal: usize, idler: usize) -> Result<ModeStatistic> {
    if signal >= idler {
        return Err(Error::Domain(format!(
            "expected signal mode before idler mode, got {signal} and {idler}"
        )));
    }
    let reduced = rho.partial_trace_keep(&[signal, idler])?;
    // two extra levels keep every matrix element of N^2 on the state exact
    let (ca, ci) = (reduced.dims[0] + 2, reduced.dims[1] + 2);
    let cv = 3;
    let mut embedded = DMatrix::zeros(ca * ci, ca * ci);
    let (ra, ri) = (reduced.dims[0], reduced.dims[1]);
    for r in 0..ra * ri {
        for c in 0..ra * ri {
            let (r0, r1) = (r / ri, r % ri);
            let (c0, c1) = (c / ri, c % ri);
            embedded[(r0 * ci + r1, c0 * ci + c1)] = reduced.matrix[(r, c)];
        }
    }
    let mut vac = DMatrix::zeros(cv, cv);
    vac[(0, 0)] = 1.0;
    let state = embedded.kronecker(&vac);

    let lower = |d: usize| {
        let mut m = DMatrix::zeros(d, d);
        for n in 1..d {
            m[(n - 1, n)] = (n as f64).sqrt();
        }
        m
    };
    let (ia, ii, iv) = (
        DMatrix::<f64>::identity(ca, ca),
        DMatrix::<f64>::identity(ci, ci),
        DMatrix::<f64>::identity(cv, cv),
    );
    let a = lower(ca).kronecker(&ii).kronecker(&iv);
    let i = ia.kronecker(&lower(ci)).kronecker(&iv);
    let v = ia.kronecker(&ii).kronecker(&lower(cv));
    let a_c_dag = &a + v.transpose() * 2f64.sqrt();
    let n_op = &a_c_dag * &i;
    let n_op = &n_op + n_op.transpose();

    let n_rho = &n_op * &state;
    let mean = n_rho.trace();
    let second = n_rho.component_mul(&n_op).sum();
    Ok(ModeStatistic {
        mean,
        variance: second - mean * mean,
    })
}
