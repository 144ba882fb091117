//! Phase-conjugate receiver for the entangled transmitter.
//!
//! Per mode, the `phi2` return is phase conjugated, `a_C = a_phi2^dag + sqrt(2) a_v`
//! with `a_v` in vacuum, and mixed with the stored idler on a 50-50 beam
//! splitter. Balanced detection measures
//! `N = a_+^dag a_+ - a_-^dag a_- = a_C^dag a_I + a_I^dag a_C`, and the
//! decision statistic sums `N` over the `M` modes. The `phi1` return is not
//! used.
//!
//! The moments of `N` follow from Wick factoring of the zero-mean Gaussian
//! return-idler state. With `c = <a i>`, `d = <a^dag i>`, `m_a = <a a>`,
//! `m_i = <i i>` and mean occupations `n_a`, `n_i`:
//!
//! ```text
//! <N>   = 2 Re c
//! Var N = 2 Re(2 c^2 + m_a m_i) + 2|c|^2 + 2|d|^2 + (n_a + 1)(n_i + 1) + n_a n_i
//!         - 4 (Re c)^2 + 2 n_i
//! ```
//!
//! where the final `2 n_i` is the conjugator's vacuum noise beating with the idler.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gaussian::{qi_hypothesis_state, ChannelParams, GaussianState, Hypothesis};
use crate::modes::SceneGeometry;

/// Index of the `phi2` return in the entangled-transmitter state.
pub const PHI2_MODE: usize = 1;
/// Index of the idler in the entangled-transmitter state.
pub const IDLER_MODE: usize = 2;

/// Mean and variance of the summed count-difference statistic under each hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticMoments {
    pub mean_h1: f64,
    pub mean_h2: f64,
    pub var_h1: f64,
    pub var_h2: f64,
}

impl StatisticMoments {
    /// Moments of the sum over `m` iid modes.
    pub fn scaled(&self, m: u64) -> Self {
        let m = m as f64;
        Self {
            mean_h1: m * self.mean_h1,
            mean_h2: m * self.mean_h2,
            var_h1: m * self.var_h1,
            var_h2: m * self.var_h2,
        }
    }

    /// `(mean_h2 - mean_h1) / (sigma_h1 + sigma_h2)`.
    pub fn separation(&self) -> Result<f64> {
        if !(self.var_h1 > 0.0 && self.var_h2 > 0.0) {
            return Err(Error::Domain(format!(
                "statistic variances must be positive, got {} and {}",
                self.var_h1, self.var_h2
            )));
        }
        Ok((self.mean_h2 - self.mean_h1) / (self.var_h1.sqrt() + self.var_h2.sqrt()))
    }

    /// Threshold of the equal-prior single-threshold test.
    pub fn threshold(&self) -> Result<f64> {
        self.separation()?;
        let (s1, s2) = (self.var_h1.sqrt(), self.var_h2.sqrt());
        Ok((s2 * self.mean_h1 + s1 * self.mean_h2) / (s1 + s2))
    }
}

/// Mean and variance of the per-mode count difference for a single state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeStatistic {
    pub mean: f64,
    pub variance: f64,
}

/// Per-mode moments of `N` for a zero-mean Gaussian state, acting on
/// modes `signal` (conjugated) and `idler`.
pub fn count_difference_moments(
    state: &GaussianState,
    signal: usize,
    idler: usize,
) -> Result<ModeStatistic> {
    let n = state.n_modes();
    if signal >= n || idler >= n || signal == idler {
        return Err(Error::Domain(format!(
            "modes {signal} and {idler} are not two distinct modes of a {n}-mode state"
        )));
    }
    if state.mean().iter().any(|v| *v != 0.0) {
        return Err(Error::Domain(
            "count-difference moments need a zero-mean state".into(),
        ));
    }
    let v = state.cov();
    let (xa, pa, xi, pi) = (signal, n + signal, idler, n + idler);
    let c = Complex::new(
        0.25 * (v[(xa, xi)] - v[(pa, pi)]),
        0.25 * (v[(xa, pi)] + v[(pa, xi)]),
    );
    let d = Complex::new(
        0.25 * (v[(xa, xi)] + v[(pa, pi)]),
        0.25 * (v[(xa, pi)] - v[(pa, xi)]),
    );
    let m_a = Complex::new(0.25 * (v[(xa, xa)] - v[(pa, pa)]), 0.5 * v[(xa, pa)]);
    let m_i = Complex::new(0.25 * (v[(xi, xi)] - v[(pi, pi)]), 0.5 * v[(xi, pi)]);
    let n_a = 0.25 * (v[(xa, xa)] + v[(pa, pa)]) - 0.5;
    let n_i = 0.25 * (v[(xi, xi)] + v[(pi, pi)]) - 0.5;

    let mean = 2.0 * c.re;
    let variance = 2.0 * (2.0 * c * c + m_a * m_i).re
        + 2.0 * c.norm_sqr()
        + 2.0 * d.norm_sqr()
        + (n_a + 1.0) * (n_i + 1.0)
        + n_a * n_i
        - mean * mean
        + 2.0 * n_i;
    Ok(ModeStatistic { mean, variance })
}

/// Per-mode (`M = 1`) moments of the receiver statistic under both hypotheses;
/// use [`StatisticMoments::scaled`] for `M` modes.
pub fn pc_statistic_moments(p: &ChannelParams, geom: &SceneGeometry) -> Result<StatisticMoments> {
    let h1 = qi_hypothesis_state(p, geom, Hypothesis::H1)?;
    let h2 = qi_hypothesis_state(p, geom, Hypothesis::H2)?;
    let s1 = count_difference_moments(&h1, PHI2_MODE, IDLER_MODE)?;
    let s2 = count_difference_moments(&h2, PHI2_MODE, IDLER_MODE)?;
    Ok(StatisticMoments {
        mean_h1: s1.mean,
        mean_h2: s2.mean,
        var_h1: s1.variance,
        var_h2: s2.variance,
    })
}

/// Gaussian-approximation error probability `erfc(d / sqrt 2) / 2` of the
/// threshold test described by `mom` (already scaled to the mode count).
pub fn pc_error_probability(mom: &StatisticMoments) -> Result<f64> {
    let d = mom.separation()?.abs();
    Ok(0.5 * erfc(d / std::f64::consts::SQRT_2))
}

/// Per-mode exponent `(mu2 - mu1)^2 / (2 (sigma1 + sigma2)^2)` of the threshold test.
pub fn pc_error_exponent(p: &ChannelParams, geom: &SceneGeometry) -> Result<f64> {
    let d = pc_statistic_moments(p, geom)?.separation()?;
    Ok(0.5 * d * d)
}
