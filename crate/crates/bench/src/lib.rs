//! Fixtures shared by the criterion benches.

use qillum_core::{ChannelParams, SceneGeometry};

/// The entangled-transmitter comparison point: `kappa = 0.01`, `N_S = 0.01`,
/// `N_B = 20`, `theta = lambda / 2D`.
pub fn reference_point() -> (ChannelParams, SceneGeometry) {
    (
        ChannelParams::new(0.01, 0.01, 20.0, 1).expect("valid params"),
        SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, 0.5).expect("valid geometry"),
    )
}

/// A small-background point the Fock oracle can reach.
pub fn oracle_point() -> (ChannelParams, SceneGeometry) {
    (
        ChannelParams::new(0.05, 0.02, 0.2, 1).expect("valid params"),
        SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, 0.5).expect("valid geometry"),
    )
}
