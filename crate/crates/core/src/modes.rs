//! Pupil-plane spatial modes for the one-vs-two target problem.
//!
//! A single on-axis target returns the flat mode `xi1(x) = rect(x/D)/sqrt(D)`;
//! two in-phase targets at `±theta` return `xi2(x) = A cos(k theta x) rect(x/D)`.
//! The orthonormal pair `{phi1, phi2}` is obtained by Gram-Schmidt with
//! `phi1 = xi1`, so that `xi2 = a phi1 + b phi2`.
//!
//! `sinc(z)` is the unnormalized `sin(z)/z` throughout; the arguments are
//! radian phases such as `k theta D`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this residual coefficient the two return modes are treated as collinear.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// Minimum number of Simpson panels accepted by [`quadrature_overlaps`].
pub const MIN_QUADRATURE_POINTS: usize = 1000;

/// Signal wavelength, pupil width and target half-separation angle (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGeometry {
    /// Signal wavelength in metres.
    pub lambda_s: f64,
    /// Hard-aperture pupil width in metres.
    pub pupil_width: f64,
    /// Half-separation angle of the two targets in radians.
    pub theta: f64,
}

impl SceneGeometry {
    pub fn new(lambda_s: f64, pupil_width: f64, theta: f64) -> Result<Self> {
        let geom = Self {
            lambda_s,
            pupil_width,
            theta,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Geometry with `theta = fraction * lambda_s / pupil_width`.
    pub fn from_rayleigh_fraction(lambda_s: f64, pupil_width: f64, fraction: f64) -> Result<Self> {
        Self::new(lambda_s, pupil_width, fraction * lambda_s / pupil_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s.is_finite() && self.lambda_s > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "wavelength must be positive and finite, got {}",
                self.lambda_s
            )));
        }
        if !(self.pupil_width.is_finite() && self.pupil_width > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "pupil width must be positive and finite, got {}",
                self.pupil_width
            )));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "separation angle must be non-negative and finite, got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Signal wavenumber `2 pi / lambda_s`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.lambda_s
    }

    /// The diffraction angle `lambda_s / D`.
    pub fn rayleigh_angle(&self) -> f64 {
        self.lambda_s / self.pupil_width
    }

    /// Same pupil and wavelength, different separation angle.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.lambda_s, self.pupil_width, theta)
    }

    /// Phase `k theta D` accumulated across the pupil.
    pub fn phase(&self) -> f64 {
        self.wavenumber() * self.theta * self.pupil_width
    }
}

/// Gram-Schmidt coefficients of `xi2` on `{phi1, phi2}` and the amplitude of `xi2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapCoefficients {
    /// `<phi1, xi2>`; negative once `theta` exceeds `lambda_s / D`.
    pub a: f64,
    /// `<phi2, xi2>`, non-negative by construction.
    pub b: f64,
    /// Normalization amplitude of `xi2`, units m^(-1/2).
    pub norm_const: f64,
}

impl OverlapCoefficients {
    pub fn is_degenerate(&self) -> bool {
        self.b < DEGENERACY_THRESHOLD
    }

    /// Returns `self` if the two-mode description is numerically usable.
    pub fn require_two_mode(self) -> Result<Self> {
        if self.is_degenerate() {
            Err(Error::DegenerateGeometry {
                b: self.b,
                threshold: DEGENERACY_THRESHOLD,
            })
        } else {
            Ok(self)
        }
    }
}

/// `sin(z)/z`, continuous at zero.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        // 1 - z^2/3! + z^4/5! - z^6/7! + z^8/9!
        1.0 - z2 / 6.0 * (1.0 - z2 / 20.0 * (1.0 - z2 / 42.0 * (1.0 - z2 / 72.0)))
    } else {
        z.sin() / z
    }
}

/// `1 + sinc(z) - 2 sinc(z/2)^2`, the numerator of `b^2`.
///
/// It vanishes like `z^4/360`, so small phases use the series
/// `sum_{k>=2} (-1)^k (2k-2) z^(2k) / (2k+2)!` instead of the direct form.
fn residual_numerator(z: f64) -> f64 {
    if z.abs() < 1.0 {
        let z2 = z * z;
        let mut sum = 0.0;
        // term_k = z^(2k) / (2k+2)!, starting at k = 2.
        let mut term = z2 * z2 / 720.0;
        let mut k = 2usize;
        while k < 30 {
            let signed = if k % 2 == 0 { term } else { -term };
            let contribution = signed * (2 * k - 2) as f64;
            sum += contribution;
            if contribution.abs() < 1e-18 * sum.abs() {
                break;
            }
            let kf = k as f64;
            term *= z2 / ((2.0 * kf + 3.0) * (2.0 * kf + 4.0));
            k += 1;
        }
        sum
    } else {
        let half = sinc(0.5 * z);
        1.0 + sinc(z) - 2.0 * half * half
    }
}

/// Amplitude `A(k, theta, D) = sqrt((2/D) / (1 + sinc(k theta D)))` of `xi2`.
pub fn normalization_constant(geom: &SceneGeometry) -> Result<f64> {
    geom.validate()?;
    let denom = 1.0 + sinc(geom.phase());
    Ok((2.0 / geom.pupil_width / denom).sqrt())
}

/// Closed-form Gram-Schmidt coefficients.
///
/// `a = sqrt(2/(1+sinc z)) sinc(z/2)` and
/// `b = sqrt(1 - 2 sinc^2(z/2)/(1+sinc z))` with `z = k theta D`. The
/// returned value may be degenerate (`b < 1e-9`); callers needing the
/// two-mode model use [`OverlapCoefficients::require_two_mode`].
pub fn overlap_coefficients(geom: &SceneGeometry) -> Result<OverlapCoefficients> {
    let norm_const = normalization_constant(geom)?;
    let z = geom.phase();
    let denom = 1.0 + sinc(z);
    let a = (2.0 / denom).sqrt() * sinc(0.5 * z);
    let b = (residual_numerator(z).max(0.0) / denom).sqrt();
    Ok(OverlapCoefficients { a, b, norm_const })
}

/// Which pupil mode to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeFunction {
    Xi1,
    Xi2,
    Phi2,
}

/// Value of a pupil mode at transverse position `x` (metres).
pub fn mode_value(which: ModeFunction, x: f64, geom: &SceneGeometry) -> Result<f64> {
    geom.validate()?;
    let half = 0.5 * geom.pupil_width;
    let inside = x.abs() <= half;
    match which {
        ModeFunction::Xi1 => Ok(if inside {
            geom.pupil_width.sqrt().recip()
        } else {
            0.0
        }),
        ModeFunction::Xi2 => {
            let amp = normalization_constant(geom)?;
            Ok(if inside {
                amp * (geom.wavenumber() * geom.theta * x).cos()
            } else {
                0.0
            })
        }
        ModeFunction::Phi2 => {
            let ov = overlap_coefficients(geom)?.require_two_mode()?;
            if !inside {
                return Ok(0.0);
            }
            let xi2 = ov.norm_const * (geom.wavenumber() * geom.theta * x).cos();
            let xi1 = geom.pupil_width.sqrt().recip();
            Ok((xi2 - ov.a * xi1) / ov.b)
        }
    }
}

/// Composite Simpson rule over `[lo, hi]` with `panels` (rounded up to even) panels.
pub(crate) fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Overlap coefficients by numerical integration over the pupil.
///
/// Uses only the unnormalized mode shapes: `a` is the normalized inner
/// product of the flat mode with `cos(k theta x)`, and `b` is the norm of the
/// Gram-Schmidt residual. Independent of the closed forms in
/// [`overlap_coefficients`].
pub fn quadrature_overlaps(geom: &SceneGeometry, n_points: usize) -> Result<OverlapCoefficients> {
    geom.validate()?;
    if n_points < MIN_QUADRATURE_POINTS {
        return Err(Error::Domain(format!(
            "quadrature needs at least {MIN_QUADRATURE_POINTS} panels, got {n_points}"
        )));
    }
    let d = geom.pupil_width;
    let k_theta = geom.wavenumber() * geom.theta;
    let (lo, hi) = (-0.5 * d, 0.5 * d);
    let flat = d.sqrt().recip();

    let cos_sq = simpson(|x| (k_theta * x).cos().powi(2), lo, hi, n_points);
    let norm_const = cos_sq.sqrt().recip();
    let xi2 = |x: f64| norm_const * (k_theta * x).cos();

    let a = simpson(|x| flat * xi2(x), lo, hi, n_points);
    let residual = simpson(|x| (xi2(x) - a * flat).powi(2), lo, hi, n_points);
    Ok(OverlapCoefficients {
        a,
        b: residual.max(0.0).sqrt(),
        norm_const,
    })
}
