//! Error-probability bounds and resolution limits for one-versus-two point
//! target discrimination with coherent-state and SPDC (quantum-illumination)
//! transmitters.
//!
//! - [`modes`]: pupil modes and their Gram-Schmidt overlaps.
//! - [`gaussian`]: Gaussian states for both transmitters under both hypotheses.
//! - [`discrimination`]: quantum Chernoff and Bhattacharyya bounds.
//! - [`pc_receiver`]: the phase-conjugate structured receiver.
//! - [`fock`]: truncated Fock-space oracle for the Gaussian formulas.
//! - [`sweep`]: mode-count sweeps, resolution curves and CSV output.

pub mod discrimination;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod modes;
pub mod pc_receiver;
pub mod sweep;

pub use discrimination::{
    bhattacharyya, exponent_advantage_db, gaussian_log_qs, gaussian_qs, pe_bound,
    pe_bound_from_exponent, qcb, BoundResult, ChernoffPair,
};
pub use error::{Error, Result};
pub use gaussian::{
    coherent_hypothesis_state, qi_hypothesis_state, spdc_source_state, symplectic_eigenvalues,
    validate_state, ChannelParams, GaussianState, Hypothesis, StateDiagnostics,
};
pub use pc_receiver::{
    pc_error_exponent, pc_error_probability, pc_statistic_moments, StatisticMoments,
};
pub use fock::{helstrom_fock, qs_fock, FockKet, FockOperator};
pub use sweep::{
    m_sweep, min_resolvable_angle, resolution_curve, snr_shift_db, threshold_snr, validate,
    AngleResult, ExperimentConfig, ResolutionPoint, SweepSpec, Transmitter, ValidationReport,
};
pub use modes::{
    mode_value, normalization_constant, overlap_coefficients, quadrature_overlaps, sinc,
    ModeFunction, OverlapCoefficients, SceneGeometry,
};
