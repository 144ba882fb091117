//! Experiment orchestration: mode-count sweeps, minimum resolvable angles,
//! resolution-versus-SNR curves, the oracle validation suite and CSV output.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrimination::{pe_bound_from_exponent, BoundResult, ChernoffPair, DEFAULT_S_TOL};
use crate::error::{Error, Result};
use crate::fock::{
    coherent_cutoffs, coherent_hypothesis_fock, helstrom_fock, pc_count_difference_fock,
    qi_cutoffs, qi_hypothesis_fock, FockOperator, FockQs, DEFAULT_TAIL_TOL,
};
use crate::gaussian::{
    coherent_hypothesis_state, qi_hypothesis_state, validate_state, ChannelParams, GaussianState,
    Hypothesis, PHYSICALITY_TOL,
};
use crate::modes::SceneGeometry;
use crate::pc_receiver::{
    count_difference_moments, pc_error_probability, pc_statistic_moments, IDLER_MODE, PHI2_MODE,
};

/// Bisection bracket for the separation angle, in units of `lambda_s / D`.
pub const THETA_BRACKET: (f64, f64) = (1e-4, 2.0);
/// Maximum bisection iterations.
pub const MAX_BISECTION_ITERS: usize = 60;
/// Relative width at which a bisection stops.
pub const BISECTION_REL_TOL: f64 = 1e-4;
/// Default error-probability threshold for resolution.
pub const DEFAULT_PE_THRESHOLD: f64 = 0.03;
/// Oracle-regime limits `(n_s, n_b, kappa)` for the Fock validation suite.
pub const ORACLE_LIMITS: (f64, f64, f64) = (0.05, 0.5, 0.1);
/// Agreement required between Gaussian and Fock `Q_s`.
pub const QS_AGREEMENT_TOL: f64 = 1e-4;
/// Agreement required between Gaussian and Fock moments.
pub const MOMENT_AGREEMENT_TOL: f64 = 1e-6;
/// Slack on the Helstrom / Chernoff / Bhattacharyya ordering.
pub const ORDERING_SLACK: f64 = 1e-9;
/// `s` values at which the oracle suite compares `Q_s`.
pub const ORACLE_S_VALUES: [f64; 3] = [0.3, 0.5, 0.7];

/// Transmitter type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transmitter {
    Coherent,
    Qi,
}

impl Transmitter {
    pub fn label(self) -> &'static str {
        match self {
            Transmitter::Coherent => "coherent",
            Transmitter::Qi => "qi",
        }
    }
}

/// Which transmitters a run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmitterSelection {
    Coherent,
    Qi,
    #[default]
    Both,
}

impl TransmitterSelection {
    pub fn includes(self, t: Transmitter) -> bool {
        matches!(
            (self, t),
            (TransmitterSelection::Both, _)
                | (TransmitterSelection::Coherent, Transmitter::Coherent)
                | (TransmitterSelection::Qi, Transmitter::Qi)
        )
    }

    pub fn transmitters(self) -> Vec<Transmitter> {
        [Transmitter::Coherent, Transmitter::Qi]
            .into_iter()
            .filter(|t| self.includes(*t))
            .collect()
    }
}

/// Quantity swept by a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// Number of modes `M`.
    Modes,
    /// Received SNR `kappa n_s / n_b`, varied through `n_s`.
    Snr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    Linear,
    #[default]
    Log,
}

/// Grid description: `points` values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: GridScale,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::Config(format!(
                "a sweep needs at least 2 points, got {}",
                self.points
            )));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start < self.stop) {
            return Err(Error::Config(format!(
                "sweep range must be finite and increasing, got {} to {}",
                self.start, self.stop
            )));
        }
        if !(self.start > 0.0) {
            return Err(Error::Config(format!(
                "sweep start must be positive, got {}",
                self.start
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.points;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.scale {
                    GridScale::Linear => self.start + t * (self.stop - self.start),
                    GridScale::Log => (self.start.ln() + t * (self.stop / self.start).ln()).exp(),
                }
            })
            .collect();
        Ok(values)
    }

    /// Grid values rounded to mode counts; must remain strictly increasing.
    pub fn mode_counts(&self) -> Result<Vec<u64>> {
        let counts: Vec<u64> = self.values()?.iter().map(|v| v.round().max(1.0) as u64).collect();
        if counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "mode grid {}..{} with {} points repeats after rounding to integers",
                self.start, self.stop, self.points
            )));
        }
        Ok(counts)
    }
}

fn default_pe_threshold() -> f64 {
    DEFAULT_PE_THRESHOLD
}

fn default_s_tol() -> f64 {
    DEFAULT_S_TOL
}

/// A complete experiment description, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: SceneGeometry,
    /// `m_modes` is the mode count used by single-point and resolution runs.
    pub channel: ChannelParams,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_pe_threshold")]
    pub pe_threshold: f64,
    #[serde(default)]
    pub transmitter: TransmitterSelection,
    /// Adds the phase-conjugate receiver column to resolution curves.
    #[serde(default)]
    pub include_pc: bool,
    #[serde(default = "default_s_tol")]
    pub s_tol: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(geometry: SceneGeometry, channel: ChannelParams) -> Self {
        Self {
            geometry,
            channel,
            sweep: None,
            pe_threshold: DEFAULT_PE_THRESHOLD,
            transmitter: TransmitterSelection::Both,
            include_pc: false,
            s_tol: DEFAULT_S_TOL,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.channel.validate()?;
        if !(self.pe_threshold > 0.0 && self.pe_threshold < 0.5) {
            return Err(Error::Config(format!(
                "pe_threshold must lie in (0, 0.5), got {}",
                self.pe_threshold
            )));
        }
        if !(self.s_tol > 0.0 && self.s_tol <= 1e-3) {
            return Err(Error::Config(format!(
                "s_tol must lie in (0, 1e-3], got {}",
                self.s_tol
            )));
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        Ok(())
    }

    fn sweep_of(&self, variable: SweepVariable) -> Result<SweepSpec> {
        match self.sweep {
            Some(s) if s.variable == variable => Ok(s),
            Some(s) => Err(Error::Config(format!(
                "this run needs a {variable:?} sweep, config has {:?}",
                s.variable
            ))),
            None => Err(Error::Config(format!("this run needs a {variable:?} sweep"))),
        }
    }
}

/// Runs `f` on a dedicated pool of `jobs` threads (`None` uses the global pool).
pub fn with_jobs<T, F>(jobs: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Per-mode QCB for one transmitter.
pub fn transmitter_bound(t: Transmitter, p: &ChannelParams, geom: &SceneGeometry, s_tol: f64) -> Result<BoundResult> {
    let (h1, h2) = hypothesis_pair(t, p, geom)?;
    Ok(ChernoffPair::new(&h1, &h2)?.qcb(s_tol)?.at_modes(p.m_modes))
}

fn hypothesis_pair(t: Transmitter, p: &ChannelParams, geom: &SceneGeometry) -> Result<(GaussianState, GaussianState)> {
    Ok(match t {
        Transmitter::Coherent => (
            coherent_hypothesis_state(p, geom, Hypothesis::H1)?,
            coherent_hypothesis_state(p, geom, Hypothesis::H2)?,
        ),
        Transmitter::Qi => (
            qi_hypothesis_state(p, geom, Hypothesis::H1)?,
            qi_hypothesis_state(p, geom, Hypothesis::H2)?,
        ),
    })
}

/// Bounds for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub coherent: Option<BoundResult>,
    pub qi: Option<BoundResult>,
    /// Per-mode exponent of the phase-conjugate receiver.
    pub pc_exponent: f64,
    /// Gaussian-approximation error probability of the receiver at `m_modes`.
    pub pc_pe: f64,
}

pub fn point_bounds(cfg: &ExperimentConfig) -> Result<PointReport> {
    cfg.validate()?;
    let bound = |t: Transmitter| -> Result<Option<BoundResult>> {
        if cfg.transmitter.includes(t) {
            transmitter_bound(t, &cfg.channel, &cfg.geometry, cfg.s_tol).map(Some)
        } else {
            Ok(None)
        }
    };
    let mom = pc_statistic_moments(&cfg.channel, &cfg.geometry)?;
    let d = mom.separation()?;
    Ok(PointReport {
        coherent: bound(Transmitter::Coherent)?,
        qi: bound(Transmitter::Qi)?,
        pc_exponent: 0.5 * d * d,
        pc_pe: pc_error_probability(&mom.scaled(cfg.channel.m_modes))?,
    })
}

/// One row of a mode-count sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MSweepRow {
    pub modes: u64,
    pub pe_coherent: Option<f64>,
    pub pe_qi: Option<f64>,
    pub pe_pc: f64,
}

/// Error-probability bounds versus `M` at the configured operating point.
pub fn m_sweep(cfg: &ExperimentConfig) -> Result<Vec<MSweepRow>> {
    cfg.validate()?;
    let counts = cfg.sweep_of(SweepVariable::Modes)?.mode_counts()?;
    let report = point_bounds(cfg)?;
    let mom = pc_statistic_moments(&cfg.channel, &cfg.geometry)?;
    counts
        .into_iter()
        .map(|m| {
            Ok(MSweepRow {
                modes: m,
                pe_coherent: report.coherent.map(|b| pe_bound_from_exponent(b.exponent, m)),
                pe_qi: report.qi.map(|b| pe_bound_from_exponent(b.exponent, m)),
                pe_pc: pc_error_probability(&mom.scaled(m))?,
            })
        })
        .collect()
}

/// Outcome of a minimum-angle search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AngleResult {
    Resolved(f64),
    Unresolvable,
}

impl AngleResult {
    pub fn theta(self) -> Option<f64> {
        match self {
            AngleResult::Resolved(t) => Some(t),
            AngleResult::Unresolvable => None,
        }
    }

    pub fn is_resolved(self) -> bool {
        matches!(self, AngleResult::Resolved(_))
    }
}

/// Smallest `theta` in the bracket where `resolved(theta)` holds, assuming
/// it is monotone; `Unresolvable` if it fails at the upper end.
fn bisect_theta<F>(geom_base: &SceneGeometry, resolved: F) -> Result<AngleResult>
where
    F: Fn(&SceneGeometry) -> Result<bool>,
{
    let unit = geom_base.rayleigh_angle();
    let (mut lo, mut hi) = (THETA_BRACKET.0 * unit, THETA_BRACKET.1 * unit);
    if !resolved(&geom_base.with_theta(hi)?)? {
        return Ok(AngleResult::Unresolvable);
    }
    if resolved(&geom_base.with_theta(lo)?)? {
        return Ok(AngleResult::Resolved(lo));
    }
    for _ in 0..MAX_BISECTION_ITERS {
        if (hi - lo) <= BISECTION_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if resolved(&geom_base.with_theta(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(AngleResult::Resolved(hi))
}

/// Exponent needed for `exp(-M R) / 2 <= pe_threshold`.
pub fn required_exponent(m: u64, pe_threshold: f64) -> Result<f64> {
    if !(pe_threshold > 0.0 && pe_threshold < 0.5) {
        return Err(Error::Config(format!(
            "pe_threshold must lie in (0, 0.5), got {pe_threshold}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParams("m must be at least 1".into()));
    }
    Ok((0.5 / pe_threshold).ln() / m as f64)
}

/// Per-mode QCB exponent, or zero when the geometry is too degenerate to resolve.
fn exponent_or_zero(t: Transmitter, p: &ChannelParams, geom: &SceneGeometry, s_tol: f64) -> Result<f64> {
    match transmitter_bound(t, p, geom, s_tol) {
        Ok(b) => Ok(b.exponent),
        Err(Error::DegenerateGeometry { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Smallest separation at which the transmitter's QCB over `m` modes meets `pe_threshold`.
pub fn min_resolvable_angle(
    t: Transmitter,
    channel: &ChannelParams,
    geom_base: &SceneGeometry,
    m: u64,
    pe_threshold: f64,
) -> Result<AngleResult> {
    let needed = required_exponent(m, pe_threshold)?;
    bisect_theta(geom_base, |g| {
        Ok(exponent_or_zero(t, channel, g, DEFAULT_S_TOL)? >= needed)
    })
}

/// Smallest separation at which the phase-conjugate receiver meets `pe_threshold`.
pub fn min_resolvable_angle_pc(
    channel: &ChannelParams,
    geom_base: &SceneGeometry,
    m: u64,
    pe_threshold: f64,
) -> Result<AngleResult> {
    required_exponent(m, pe_threshold)?;
    bisect_theta(geom_base, |g| {
        let mom = pc_statistic_moments(channel, g)?.scaled(m);
        Ok(pc_error_probability(&mom)? <= pe_threshold)
    })
}

/// Per-mode QCB exponents of one transmitter across a `theta` grid, for
/// checking the monotonicity the bisection relies on.
pub fn exponent_profile(t: Transmitter, p: &ChannelParams, geom_base: &SceneGeometry, thetas: &[f64]) -> Result<Vec<f64>> {
    thetas
        .par_iter()
        .map(|&th| exponent_or_zero(t, p, &geom_base.with_theta(th)?, DEFAULT_S_TOL))
        .collect()
}

/// One SNR point of a resolution curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPoint {
    /// `kappa n_s / n_b`.
    pub snr: f64,
    pub n_s: f64,
    pub coherent: Option<AngleResult>,
    pub qi: Option<AngleResult>,
    pub pc: Option<AngleResult>,
}

/// Channel with `n_s` chosen to give the requested SNR at fixed `kappa`, `n_b`.
pub fn channel_at_snr(base: &ChannelParams, snr: f64) -> Result<ChannelParams> {
    if !(base.kappa > 0.0 && base.n_b > 0.0) {
        return Err(Error::Config(
            "an SNR sweep needs kappa > 0 and n_b > 0".into(),
        ));
    }
    ChannelParams::new(base.kappa, snr * base.n_b / base.kappa, base.n_b, base.m_modes)
}

/// Minimum resolvable angle versus SNR at `cfg.channel.m_modes` modes.
pub fn resolution_curve(cfg: &ExperimentConfig) -> Result<Vec<ResolutionPoint>> {
    cfg.validate()?;
    let snrs = cfg.sweep_of(SweepVariable::Snr)?.values()?;
    let m = cfg.channel.m_modes;
    snrs.par_iter()
        .map(|&snr| {
            let p = channel_at_snr(&cfg.channel, snr)?;
            let angle = |t: Transmitter| -> Result<Option<AngleResult>> {
                if cfg.transmitter.includes(t) {
                    min_resolvable_angle(t, &p, &cfg.geometry, m, cfg.pe_threshold).map(Some)
                } else {
                    Ok(None)
                }
            };
            let pc = if cfg.include_pc {
                Some(min_resolvable_angle_pc(&p, &cfg.geometry, m, cfg.pe_threshold)?)
            } else {
                None
            };
            Ok(ResolutionPoint {
                snr,
                n_s: p.n_s,
                coherent: angle(Transmitter::Coherent)?,
                qi: angle(Transmitter::Qi)?,
                pc,
            })
        })
        .collect()
}

/// SNR at which the transmitter's minimum resolvable angle equals `theta`,
/// found by bisection on `ln n_s`.
pub fn snr_for_angle(
    t: Transmitter,
    base: &ChannelParams,
    geom: &SceneGeometry,
    m: u64,
    pe_threshold: f64,
) -> Result<f64> {
    let needed = required_exponent(m, pe_threshold)?;
    let exponent = |ln_ns: f64| -> Result<f64> {
        let p = ChannelParams::new(base.kappa, ln_ns.exp(), base.n_b, m)?;
        exponent_or_zero(t, &p, geom, DEFAULT_S_TOL)
    };
    if !(base.kappa > 0.0 && base.n_b > 0.0) {
        return Err(Error::Config("an SNR search needs kappa > 0 and n_b > 0".into()));
    }
    let (mut lo, mut hi) = (base.n_s.ln(), base.n_s.ln());
    let mut expansions = 0;
    while exponent(hi)? < needed {
        hi += 2.0;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Numerical(format!(
                "{} transmitter cannot reach the threshold at theta = {}",
                t.label(),
                geom.theta
            )));
        }
    }
    while exponent(lo)? >= needed {
        lo -= 2.0;
        expansions += 1;
        if expansions > 80 {
            return Err(Error::Numerical("no lower bracket for the SNR search".into()));
        }
    }
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= BISECTION_REL_TOL * 1e-2 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if exponent(mid)? >= needed {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(base.kappa * (0.5 * (lo + hi)).exp() / base.n_b)
}

/// Lateral shift `10 log10(SNR_CS / SNR_QI)` at a matched minimum angle.
pub fn snr_shift_db(base: &ChannelParams, geom: &SceneGeometry, m: u64, pe_threshold: f64) -> Result<f64> {
    let (cs, qi) = rayon::join(
        || snr_for_angle(Transmitter::Coherent, base, geom, m, pe_threshold),
        || snr_for_angle(Transmitter::Qi, base, geom, m, pe_threshold),
    );
    Ok(10.0 * (cs? / qi?).log10())
}

/// SNR below which the transmitter cannot resolve any separation in the bracket.
pub fn threshold_snr(t: Transmitter, base: &ChannelParams, geom_base: &SceneGeometry, m: u64, pe_threshold: f64) -> Result<f64> {
    let widest = geom_base.with_theta(THETA_BRACKET.1 * geom_base.rayleigh_angle())?;
    snr_for_angle(t, base, &widest, m, pe_threshold)
}

/// One named diagnostic with its residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

impl Check {
    fn within(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: residual.is_finite() && residual <= tolerance,
            residual,
            tolerance,
        }
    }
}

/// Outcome of the validation suite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Physicality of a Gaussian state: residual is the shortfall of the
/// smallest symplectic eigenvalue below one.
pub fn physicality_check(name: &str, state: &GaussianState) -> Check {
    let nu = validate_state(state).min_symplectic_eigenvalue;
    let shortfall = if nu.is_nan() { f64::INFINITY } else { (1.0 - nu).max(0.0) };
    Check::within(format!("{name}: physicality"), shortfall, PHYSICALITY_TOL)
}

fn in_oracle_regime(p: &ChannelParams) -> bool {
    let (ns, nb, k) = ORACLE_LIMITS;
    p.n_s <= ns && p.n_b <= nb && p.kappa <= k
}

fn max_abs_diff(a: &GaussianState, b: &GaussianState) -> f64 {
    let dm = (a.mean() - b.mean()).amax();
    let dc = (a.cov() - b.cov()).amax();
    dm.max(dc)
}

fn pair_checks(
    label: &str,
    gauss: (&GaussianState, &GaussianState),
    fock: (&FockOperator, &FockOperator),
    checks: &mut Vec<Check>,
) -> Result<()> {
    for (h, g, f) in [("H1", gauss.0, fock.0), ("H2", gauss.1, fock.1)] {
        checks.push(physicality_check(&format!("{label} {h}"), g));
        let moments = f.gaussian_moments()?;
        checks.push(Check::within(
            format!("{label} {h}: moments"),
            max_abs_diff(&moments, g),
            MOMENT_AGREEMENT_TOL,
        ));
    }
    let pair = ChernoffPair::new(gauss.0, gauss.1)?;
    let fock_qs = FockQs::new(fock.0, fock.1)?;
    for s in ORACLE_S_VALUES {
        checks.push(Check::within(
            format!("{label}: Q_s at s={s}"),
            (pair.qs(s)? - fock_qs.qs(s)?).abs(),
            QS_AGREEMENT_TOL,
        ));
    }
    let qcb = pair.qcb(DEFAULT_S_TOL)?;
    let helstrom = helstrom_fock(fock.0, fock.1)?;
    let half_qcb = 0.5 * qcb.q_s_star;
    let half_bhat = 0.5 * pair.qs(0.5)?;
    checks.push(Check::within(
        format!("{label}: Helstrom <= QCB/2"),
        helstrom - half_qcb,
        ORDERING_SLACK,
    ));
    checks.push(Check::within(
        format!("{label}: QCB/2 <= Bhattacharyya/2"),
        half_qcb - half_bhat,
        ORDERING_SLACK,
    ));
    if pair_is_trivial(gauss.0, gauss.1) {
        let worst = ORACLE_S_VALUES
            .iter()
            .map(|&s| pair.qs(s).map(|q| (q - 1.0).abs()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        checks.push(Check::within(format!("{label}: Q_s = 1 without signal"), worst, 1e-12));
    }
    Ok(())
}

fn pair_is_trivial(a: &GaussianState, b: &GaussianState) -> bool {
    a.mean() == b.mean() && a.cov() == b.cov()
}

/// Gaussian-versus-Fock checks for one oracle-regime operating point.
pub fn validate_instance(p: &ChannelParams, geom: &SceneGeometry) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let regime = in_oracle_regime(p);
    checks.push(Check {
        name: "oracle regime".into(),
        passed: regime,
        residual: 0.0,
        tolerance: 0.0,
    });
    if !regime {
        return Ok(ValidationReport { checks });
    }

    let qi = (
        qi_hypothesis_state(p, geom, Hypothesis::H1)?,
        qi_hypothesis_state(p, geom, Hypothesis::H2)?,
    );
    let qcut = qi_cutoffs(p, DEFAULT_TAIL_TOL);
    let qi_fock = (
        qi_hypothesis_fock(p, geom, Hypothesis::H1, qcut, DEFAULT_TAIL_TOL)?,
        qi_hypothesis_fock(p, geom, Hypothesis::H2, qcut, DEFAULT_TAIL_TOL)?,
    );
    pair_checks("qi", (&qi.0, &qi.1), (&qi_fock.0, &qi_fock.1), &mut checks)?;
    for (h, g, f) in [("H1", &qi.0, &qi_fock.0), ("H2", &qi.1, &qi_fock.1)] {
        let wick = count_difference_moments(g, PHI2_MODE, IDLER_MODE)?;
        let fock = pc_count_difference_fock(f, PHI2_MODE, IDLER_MODE)?;
        checks.push(Check::within(
            format!("pc {h}: count-difference moments"),
            (wick.mean - fock.mean).abs().max((wick.variance - fock.variance).abs()),
            MOMENT_AGREEMENT_TOL,
        ));
    }
    drop(qi_fock);

    let cs = (
        coherent_hypothesis_state(p, geom, Hypothesis::H1)?,
        coherent_hypothesis_state(p, geom, Hypothesis::H2)?,
    );
    let ccut = coherent_cutoffs(p, DEFAULT_TAIL_TOL);
    let cs_fock = (
        coherent_hypothesis_fock(p, geom, Hypothesis::H1, ccut, DEFAULT_TAIL_TOL)?,
        coherent_hypothesis_fock(p, geom, Hypothesis::H2, ccut, DEFAULT_TAIL_TOL)?,
    );
    pair_checks("coherent", (&cs.0, &cs.1), (&cs_fock.0, &cs_fock.1), &mut checks)?;
    Ok(ValidationReport { checks })
}

/// Runs [`validate_instance`] at the configured operating point.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    validate_instance(&cfg.channel, &cfg.geometry)
}

/// Formats a value with 9 significant digits.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.8e}")
    }
}

/// CSV with a `#` provenance header.
pub fn write_csv<W: Write>(out: &mut W, header: &[String], columns: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

fn provenance(cfg: &ExperimentConfig, kind: &str) -> Vec<String> {
    vec![
        format!("qillum {kind}"),
        format!("config: {}", cfg.to_json()),
    ]
}

/// Table form of [`m_sweep`].
pub fn m_sweep_table(cfg: &ExperimentConfig, rows: &[MSweepRow]) -> (Vec<String>, Vec<&'static str>, Vec<Vec<f64>>) {
    let mut columns = vec!["modes"];
    if cfg.transmitter.includes(Transmitter::Coherent) {
        columns.push("pe_coherent_qcb");
    }
    if cfg.transmitter.includes(Transmitter::Qi) {
        columns.push("pe_qi_qcb");
    }
    columns.push("pe_qi_pc");
    let data = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.modes as f64];
            v.extend(r.pe_coherent);
            v.extend(r.pe_qi);
            v.push(r.pe_pc);
            v
        })
        .collect();
    (provenance(cfg, "sweep-m"), columns, data)
}

/// Table form of [`resolution_curve`]; unresolvable angles print as `inf`.
pub fn resolution_table(cfg: &ExperimentConfig, rows: &[ResolutionPoint]) -> (Vec<String>, Vec<&'static str>, Vec<Vec<f64>>) {
    let mut header = provenance(cfg, "resolution");
    header.push(format!(
        "modes: {}, pe_threshold: {}, theta in rad and in units of lambda_s/D",
        cfg.channel.m_modes, cfg.pe_threshold
    ));
    let unit = cfg.geometry.rayleigh_angle();
    let mut columns = vec!["snr", "snr_db", "n_s"];
    let mut blocks = Vec::new();
    if cfg.transmitter.includes(Transmitter::Coherent) {
        columns.extend(["theta_coherent", "theta_coherent_rayleigh"]);
        blocks.push(0);
    }
    if cfg.transmitter.includes(Transmitter::Qi) {
        columns.extend(["theta_qi", "theta_qi_rayleigh"]);
        blocks.push(1);
    }
    if cfg.include_pc {
        columns.extend(["theta_pc", "theta_pc_rayleigh"]);
        blocks.push(2);
    }
    let data = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.snr, 10.0 * r.snr.log10(), r.n_s];
            for b in &blocks {
                let angle = [r.coherent, r.qi, r.pc][*b];
                let theta = angle.and_then(AngleResult::theta).unwrap_or(f64::INFINITY);
                v.extend([theta, theta / unit]);
            }
            v
        })
        .collect();
    (header, columns, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(frac: f64) -> SceneGeometry {
        SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, frac).unwrap()
    }

    fn resolution_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(geom(0.5), ChannelParams::new(1e-3, 1.0, 1.0, 1_000_000).unwrap());
        cfg.sweep = Some(SweepSpec {
            variable: SweepVariable::Snr,
            start: 1e-6,
            stop: 1e-3,
            points: 7,
            scale: GridScale::Log,
        });
        cfg
    }

    #[test]
    fn grid_values() {
        let s = SweepSpec {
            variable: SweepVariable::Modes,
            start: 10.0,
            stop: 1000.0,
            points: 3,
            scale: GridScale::Log,
        };
        let v = s.values().unwrap();
        assert!((v[1] - 100.0).abs() < 1e-9);
        assert_eq!(s.mode_counts().unwrap(), vec![10, 100, 1000]);
        let lin = SweepSpec { scale: GridScale::Linear, ..s };
        assert_eq!(lin.values().unwrap(), vec![10.0, 505.0, 1000.0]);
        assert!(SweepSpec { points: 1, ..s }.validate().is_err());
        assert!(SweepSpec { stop: 5.0, ..s }.validate().is_err());
        let crowded = SweepSpec { start: 1.0, stop: 3.0, points: 10, ..s };
        assert!(crowded.mode_counts().is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = resolution_config();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let minimal = r#"{"geometry":{"lambda_s":1e-6,"pupil_width":0.1,"theta":1e-5},
            "channel":{"kappa":0.01,"n_s":0.01,"n_b":20,"m_modes":1000}}"#;
        let cfg = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.pe_threshold, DEFAULT_PE_THRESHOLD);
        assert_eq!(cfg.transmitter, TransmitterSelection::Both);
        let bad = minimal.replace("\"n_b\":20", "\"n_b\":-1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let unknown = minimal.replace("\"m_modes\":1000", "\"m_modes\":1000,\"extra\":1");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config(_))));
        let mut c = cfg.clone();
        c.pe_threshold = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn m_sweep_rows_are_monotone() {
        let mut cfg = ExperimentConfig::new(geom(0.5), ChannelParams::new(0.01, 0.01, 20.0, 1).unwrap());
        cfg.sweep = Some(SweepSpec {
            variable: SweepVariable::Modes,
            start: 1e4,
            stop: 1e8,
            points: 9,
            scale: GridScale::Log,
        });
        let rows = m_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 9);
        for w in rows.windows(2) {
            assert!(w[1].pe_coherent.unwrap() <= w[0].pe_coherent.unwrap());
            assert!(w[1].pe_qi.unwrap() <= w[0].pe_qi.unwrap());
            assert!(w[1].pe_pc <= w[0].pe_pc);
        }
        for r in &rows {
            for p in [r.pe_coherent.unwrap(), r.pe_qi.unwrap(), r.pe_pc] {
                assert!(p > 0.0 && p <= 0.5);
            }
            assert!(r.pe_qi.unwrap() <= r.pe_coherent.unwrap());
        }
        let mut wrong = cfg.clone();
        wrong.sweep.as_mut().unwrap().variable = SweepVariable::Snr;
        assert!(matches!(m_sweep(&wrong), Err(Error::Config(_))));
    }

    #[test]
    fn selection_controls_columns() {
        let mut cfg = ExperimentConfig::new(geom(0.5), ChannelParams::new(0.01, 0.01, 20.0, 1).unwrap());
        cfg.transmitter = TransmitterSelection::Qi;
        cfg.sweep = Some(SweepSpec {
            variable: SweepVariable::Modes,
            start: 10.0,
            stop: 100.0,
            points: 2,
            scale: GridScale::Log,
        });
        let rows = m_sweep(&cfg).unwrap();
        assert!(rows[0].pe_coherent.is_none());
        let (_, cols, data) = m_sweep_table(&cfg, &rows);
        assert_eq!(cols, vec!["modes", "pe_qi_qcb", "pe_qi_pc"]);
        assert!(data.iter().all(|r| r.len() == cols.len()));
    }

    #[test]
    fn no_signal_is_unresolvable() {
        let p = ChannelParams::new(0.0, 0.01, 1.0, 1_000_000).unwrap();
        for t in [Transmitter::Coherent, Transmitter::Qi] {
            assert_eq!(
                min_resolvable_angle(t, &p, &geom(0.5), 1_000_000, 0.03).unwrap(),
                AngleResult::Unresolvable
            );
        }
    }

    #[test]
    fn qi_resolves_no_worse_than_coherent() {
        let base = ChannelParams::new(1e-3, 1.0, 1.0, 1_000_000).unwrap();
        for snr in [3e-6, 1e-5, 1e-4] {
            let p = channel_at_snr(&base, snr).unwrap();
            let cs = min_resolvable_angle(Transmitter::Coherent, &p, &geom(0.5), p.m_modes, 0.03).unwrap();
            let qi = min_resolvable_angle(Transmitter::Qi, &p, &geom(0.5), p.m_modes, 0.03).unwrap();
            if let (Some(c), Some(q)) = (cs.theta(), qi.theta()) {
                assert!(q <= c * (1.0 + BISECTION_REL_TOL), "snr {snr}: {q} > {c}");
            }
            if cs.is_resolved() {
                assert!(qi.is_resolved());
            }
        }
    }

    #[test]
    fn resolution_threshold_is_a_matched_angle() {
        let p = ChannelParams::new(1e-3, 1.0, 1.0, 1_000_000).unwrap();
        let g = geom(0.5);
        let snr = snr_for_angle(Transmitter::Qi, &p, &g, p.m_modes, 0.03).unwrap();
        let at = channel_at_snr(&p, snr * (1.0 + 1e-3)).unwrap();
        let theta = min_resolvable_angle(Transmitter::Qi, &at, &g, p.m_modes, 0.03)
            .unwrap()
            .theta()
            .unwrap();
        assert!((theta / g.theta - 1.0).abs() < 1e-2, "{}", theta / g.theta);
    }

    #[test]
    fn exponent_monotone_below_rayleigh() {
        let p = ChannelParams::new(1e-3, 0.05, 1.0, 1).unwrap();
        let g = geom(0.5);
        let unit = g.rayleigh_angle();
        let thetas: Vec<f64> = (1..=40).map(|i| i as f64 / 40.0 * unit).collect();
        for t in [Transmitter::Coherent, Transmitter::Qi] {
            let r = exponent_profile(t, &p, &g, &thetas).unwrap();
            assert!(r.windows(2).all(|w| w[1] >= w[0]), "{t:?}");
        }
    }

    #[test]
    fn csv_format() {
        let mut buf = Vec::new();
        write_csv(
            &mut buf,
            &["run".into()],
            &["a", "b"],
            &[vec![1.0, f64::INFINITY], vec![0.123456789123, 2e-300]],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# run\na,b\n1.00000000e0,inf\n1.23456789e-1,2.00000000e-300\n"
        );
    }

    #[test]
    fn jobs_pool() {
        assert_eq!(with_jobs(Some(2), rayon::current_num_threads).unwrap(), 2);
        assert!(with_jobs(Some(0), || ()).is_err());
    }

    #[test]
    fn physicality_check_flags_sub_vacuum_state() {
        let corrupt = GaussianState::zero_mean(nalgebra::DMatrix::identity(2, 2) * 0.5).unwrap();
        assert!(!physicality_check("corrupt", &corrupt).passed);
        assert!(physicality_check("vacuum", &GaussianState::vacuum(2)).passed);
    }

    #[test]
    fn validation_passes_small_instance_and_flags_regime() {
        let p = ChannelParams::new(0.05, 0.02, 0.2, 1).unwrap();
        let report = validate_instance(&p, &geom(0.5)).unwrap();
        let failures: Vec<_> = report.failures().collect();
        assert!(report.passed(), "{failures:?}");
        let big = ChannelParams::new(0.01, 0.01, 20.0, 1).unwrap();
        assert!(!validate_instance(&big, &geom(0.5)).unwrap().passed());
    }

    #[test]
    fn validation_without_signal_checks_unit_qs() {
        let p = ChannelParams::new(0.0, 0.02, 0.2, 1).unwrap();
        let report = validate_instance(&p, &geom(0.5)).unwrap();
        assert!(report.passed());
        assert!(report.checks.iter().any(|c| c.name.contains("Q_s = 1")));
    }
}
