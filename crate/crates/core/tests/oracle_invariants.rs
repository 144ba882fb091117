use qillum_core::fock::{
    beamsplitter_fock, coherent_cutoffs, coherent_hypothesis_fock, qi_cutoffs, qi_hypothesis_fock,
    thermal_fock, tmsv_fock, FockQs, DEFAULT_TAIL_TOL,
};
use qillum_core::*;

fn geom(fraction: f64) -> SceneGeometry {
    SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, fraction).unwrap()
}

fn qi_pair(p: &ChannelParams, g: &SceneGeometry) -> (FockOperator, FockOperator) {
    let cut = qi_cutoffs(p, DEFAULT_TAIL_TOL);
    (
        qi_hypothesis_fock(p, g, Hypothesis::H1, cut, DEFAULT_TAIL_TOL).unwrap(),
        qi_hypothesis_fock(p, g, Hypothesis::H2, cut, DEFAULT_TAIL_TOL).unwrap(),
    )
}

fn coherent_pair(p: &ChannelParams, g: &SceneGeometry) -> (FockOperator, FockOperator) {
    let cut = coherent_cutoffs(p, DEFAULT_TAIL_TOL);
    (
        coherent_hypothesis_fock(p, g, Hypothesis::H1, cut, DEFAULT_TAIL_TOL).unwrap(),
        coherent_hypothesis_fock(p, g, Hypothesis::H2, cut, DEFAULT_TAIL_TOL).unwrap(),
    )
}

fn assert_density(rho: &FockOperator, tail: f64) {
    assert!(rho.hermiticity_residual() <= 1e-10);
    assert!(rho.min_eigenvalue() >= -1e-10, "{}", rho.min_eigenvalue());
    let tr = rho.trace();
    assert!(tr <= 1.0 + 1e-12 && tr >= 1.0 - tail, "trace {tr}");
}

#[test]
fn built_states_are_density_operators() {
    for &(k, ns, nb, f) in &[(0.05, 0.02, 0.2, 0.5), (0.1, 0.04, 0.1, 1.2), (0.02, 0.01, 0.0, 0.3)] {
        let p = ChannelParams::new(k, ns, nb, 1).unwrap();
        let g = geom(f);
        let (q1, q2) = qi_pair(&p, &g);
        // one tail allowance for each of the three truncated modes
        assert_density(&q1, 3.0 * DEFAULT_TAIL_TOL);
        assert_density(&q2, 3.0 * DEFAULT_TAIL_TOL);
        let (c1, c2) = coherent_pair(&p, &g);
        assert_density(&c1, DEFAULT_TAIL_TOL);
        assert_density(&c2, DEFAULT_TAIL_TOL);
    }
}

#[test]
fn fock_moments_match_gaussian_builders() {
    for &(k, ns, nb, f) in &[(0.05, 0.02, 0.2, 0.5), (0.1, 0.05, 0.3, 0.8), (0.01, 0.03, 0.05, 1.6)] {
        let p = ChannelParams::new(k, ns, nb, 1).unwrap();
        let g = geom(f);
        let (q1, q2) = qi_pair(&p, &g);
        let (c1, c2) = coherent_pair(&p, &g);
        for (fock, h, coherent) in [(&q1, Hypothesis::H1, false), (&q2, Hypothesis::H2, false), (&c1, Hypothesis::H1, true), (&c2, Hypothesis::H2, true)] {
            let m = fock.gaussian_moments().unwrap();
            let gauss = if coherent {
                coherent_hypothesis_state(&p, &g, h).unwrap()
            } else {
                qi_hypothesis_state(&p, &g, h).unwrap()
            };
            assert!((m.cov() - gauss.cov()).amax() <= 1e-6);
            assert!((m.mean() - gauss.mean()).amax() <= 1e-6);
        }
    }
}

#[test]
fn qs_fock_swap_symmetry() {
    let p = ChannelParams::new(0.1, 0.03, 0.25, 1).unwrap();
    let g = geom(0.7);
    for (a, b) in [qi_pair(&p, &g), coherent_pair(&p, &g)] {
        let fwd = FockQs::new(&a, &b).unwrap();
        let rev = FockQs::new(&b, &a).unwrap();
        for s in [0.15, 0.4, 0.6, 0.85] {
            assert!((fwd.qs(s).unwrap() - rev.qs(1.0 - s).unwrap()).abs() <= 1e-8);
        }
    }
}

#[test]
fn helstrom_decreases_with_transmissivity() {
    let g = geom(0.5);
    let mut previous = (0.5f64, 0.5f64);
    for k in [0.0, 0.02, 0.04, 0.06, 0.08, 0.1] {
        let p = ChannelParams::new(k, 0.03, 0.1, 1).unwrap();
        let (q1, q2) = qi_pair(&p, &g);
        let (c1, c2) = coherent_pair(&p, &g);
        let now = (helstrom_fock(&q1, &q2).unwrap(), helstrom_fock(&c1, &c2).unwrap());
        if k == 0.0 {
            assert!((now.0 - 0.5).abs() < 1e-9 && (now.1 - 0.5).abs() < 1e-9);
        } else {
            assert!(now.0 < previous.0 && now.1 < previous.1, "kappa {k}: {now:?} vs {previous:?}");
        }
        previous = now;
    }
}

#[test]
fn helstrom_respects_chernoff_bound() {
    for &(k, ns, nb, f) in &[(0.1, 0.05, 0.05, 0.5), (0.08, 0.02, 0.3, 1.0), (0.1, 0.04, 0.0, 0.4)] {
        let p = ChannelParams::new(k, ns, nb, 1).unwrap();
        let g = geom(f);
        let (q1, q2) = qi_pair(&p, &g);
        let gaussian = qcb(
            &qi_hypothesis_state(&p, &g, Hypothesis::H1).unwrap(),
            &qi_hypothesis_state(&p, &g, Hypothesis::H2).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!(helstrom_fock(&q1, &q2).unwrap() <= pe_bound(gaussian.q_s_star, 1).unwrap() + 1e-9);
    }
}

#[test]
fn circuit_primitives_conserve_probability() {
    // signal mixed with a vacuum mode of the same cutoff: every output fits the basis
    let ket = tmsv_fock(0.05, 8).unwrap().insert_vacuum_mode(1, 8).unwrap();
    let rho = ket.to_density();
    for eta in [0.0, 0.3, 0.5, 1.0] {
        let out = beamsplitter_fock(&rho, 0, 1, eta).unwrap();
        assert!((out.trace() - rho.trace()).abs() < 1e-12);
        let mean = |r: &FockOperator, mode: usize| -> f64 {
            r.number_distribution(mode).iter().enumerate().map(|(n, p)| n as f64 * p).sum()
        };
        assert!((mean(&out, 0) - eta * mean(&rho, 0)).abs() < 1e-12);
        assert!((mean(&out, 1) - (1.0 - eta) * mean(&rho, 0)).abs() < 1e-12);
    }
    let th = thermal_fock(0.3, 20).unwrap();
    let two = th.tensor(&th);
    let mixed = beamsplitter_fock(&two, 0, 1, 0.37).unwrap();
    // equal thermal inputs are a fixed point
    assert!((mixed.matrix() - two.matrix()).amax() < 1e-6);
}
