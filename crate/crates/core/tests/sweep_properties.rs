use proptest::prelude::*;
use qillum_core::sweep::{
    channel_at_snr, min_resolvable_angle_pc, transmitter_bound, GridScale, SweepVariable,
};
use qillum_core::*;

fn geom(fraction: f64) -> SceneGeometry {
    SceneGeometry::from_rayleigh_fraction(1.55e-6, 0.1, fraction).unwrap()
}

#[test]
fn receiver_lies_between_bounds_at_large_modes() {
    let p = ChannelParams::new(0.01, 0.01, 20.0, 1).unwrap();
    let g = geom(0.5);
    let cs = transmitter_bound(Transmitter::Coherent, &p, &g, 1e-6).unwrap();
    let qi = transmitter_bound(Transmitter::Qi, &p, &g, 1e-6).unwrap();
    let pc = pc_error_exponent(&p, &g).unwrap();
    assert!(cs.exponent < pc && pc < qi.exponent);

    let mom = pc_statistic_moments(&p, &g).unwrap();
    // once M R_QI is a few units the receiver curve sits between the two bounds
    for m in [10_000_000u64, 30_000_000, 100_000_000] {
        let pe_pc = pc_error_probability(&mom.scaled(m)).unwrap();
        assert!(pe_pc < pe_bound_from_exponent(cs.exponent, m));
        assert!(pe_pc > pe_bound_from_exponent(qi.exponent, m));
    }
}

#[test]
fn qi_advantage_approaches_four_as_signal_vanishes() {
    let g = geom(0.5);
    let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&ns| {
            let p = ChannelParams::new(0.01, ns, 20.0, 1).unwrap();
            let cs = transmitter_bound(Transmitter::Coherent, &p, &g, 1e-6).unwrap();
            let qi = transmitter_bound(Transmitter::Qi, &p, &g, 1e-6).unwrap();
            qi.exponent / cs.exponent
        })
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]));
    assert!(ratios.iter().all(|r| *r < 4.0));
    assert!(ratios[2] > 3.8, "{ratios:?}");
}

#[test]
fn resolution_curves_are_monotone_and_share_a_floor() {
    let mut cfg = ExperimentConfig::new(geom(0.5), ChannelParams::new(1e-3, 0.01, 1.0, 1_000_000).unwrap());
    cfg.include_pc = true;
    cfg.sweep = Some(SweepSpec {
        variable: SweepVariable::Snr,
        start: 1e-7,
        stop: 1e2,
        points: 19,
        scale: GridScale::Log,
    });
    let rows = resolution_curve(&cfg).unwrap();
    assert_eq!(rows.len(), 19);
    let theta = |a: Option<AngleResult>| a.and_then(AngleResult::theta).unwrap_or(f64::INFINITY);
    for pick in [|r: &ResolutionPoint| r.coherent, |r: &ResolutionPoint| r.qi, |r: &ResolutionPoint| r.pc] {
        let curve: Vec<f64> = rows.iter().map(|r| theta(pick(r))).collect();
        assert!(curve[0].is_infinite());
        assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
    }
    // the QI advantage is a low-brightness property; it is not asserted once n_s exceeds one
    for r in rows.iter().filter(|r| r.n_s <= 1.0) {
        assert!(theta(r.qi) <= theta(r.coherent) * (1.0 + 1e-4), "snr {}: qi {:?} cs {:?}", r.snr, r.qi, r.coherent);
    }
    // at the highest SNR both optimal-receiver curves approach the same small-angle floor
    let last = rows.last().unwrap();
    let (c, q) = (theta(last.coherent), theta(last.qi));
    let unit = cfg.geometry.rayleigh_angle();
    assert!(c < 0.05 * unit && q < 0.05 * unit);
    assert!((c / q - 1.0).abs() < 0.05, "{c} vs {q}");
}

#[test]
fn qi_threshold_snr_is_lower() {
    let base = ChannelParams::new(1e-3, 0.01, 1.0, 1_000_000).unwrap();
    let g = geom(1.0);
    let cs = threshold_snr(Transmitter::Coherent, &base, &g, base.m_modes, 0.03).unwrap();
    let qi = threshold_snr(Transmitter::Qi, &base, &g, base.m_modes, 0.03).unwrap();
    assert!(qi < cs);
    for (t, snr) in [(Transmitter::Coherent, cs), (Transmitter::Qi, qi)] {
        let below = channel_at_snr(&base, 0.95 * snr).unwrap();
        let above = channel_at_snr(&base, 1.05 * snr).unwrap();
        assert!(!min_resolvable_angle(t, &below, &g, base.m_modes, 0.03).unwrap().is_resolved());
        assert!(min_resolvable_angle(t, &above, &g, base.m_modes, 0.03).unwrap().is_resolved());
    }
}

#[test]
fn receiver_resolution_sits_between_optimal_curves() {
    let base = ChannelParams::new(1e-3, 0.01, 1.0, 1_000_000).unwrap();
    let g = geom(0.5);
    for snr in [1e-5, 1e-4] {
        let p = channel_at_snr(&base, snr).unwrap();
        let cs = min_resolvable_angle(Transmitter::Coherent, &p, &g, p.m_modes, 0.03).unwrap();
        let qi = min_resolvable_angle(Transmitter::Qi, &p, &g, p.m_modes, 0.03).unwrap();
        let pc = min_resolvable_angle_pc(&p, &g, p.m_modes, 0.03).unwrap();
        let (c, q, r) = (cs.theta().unwrap(), qi.theta().unwrap(), pc.theta().unwrap());
        // the receiver curve uses its Gaussian-approximation error, so it may dip slightly below the QI bound curve
        assert!(r <= c && r >= 0.95 * q, "snr {snr}: qi {q}, pc {r}, cs {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pc_exponent_below_qi_bound(kappa in 1e-4f64..0.1, n_s in 1e-4f64..0.1, n_b in 1.0f64..100.0, frac in 0.05f64..1.0) {
        let p = ChannelParams::new(kappa, n_s, n_b, 1).unwrap();
        let g = geom(frac);
        let qi = transmitter_bound(Transmitter::Qi, &p, &g, 1e-6).unwrap();
        let pc = pc_error_exponent(&p, &g).unwrap();
        prop_assert!(pc <= qi.exponent * (1.0 + 1e-9));
    }

    #[test]
    fn qi_bound_dominates_coherent_bound(kappa in 1e-4f64..0.5, n_s in 1e-4f64..0.1, n_b in 0.1f64..100.0, frac in 0.05f64..2.0) {
        let p = ChannelParams::new(kappa, n_s, n_b, 1).unwrap();
        let g = geom(frac);
        let cs = transmitter_bound(Transmitter::Coherent, &p, &g, 1e-6).unwrap();
        let qi = transmitter_bound(Transmitter::Qi, &p, &g, 1e-6).unwrap();
        prop_assert!(qi.exponent >= cs.exponent);
    }

    #[test]
    fn m_sweep_probabilities_valid(n_s in 1e-3f64..0.1, n_b in 0.1f64..50.0) {
        let mut cfg = ExperimentConfig::new(geom(0.5), ChannelParams::new(0.01, n_s, n_b, 1).unwrap());
        cfg.sweep = Some(SweepSpec { variable: SweepVariable::Modes, start: 10.0, stop: 1e6, points: 6, scale: GridScale::Log });
        let rows = m_sweep(&cfg).unwrap();
        prop_assert_eq!(rows.len(), 6);
        for w in rows.windows(2) {
            prop_assert!(w[1].pe_qi.unwrap() <= w[0].pe_qi.unwrap());
            prop_assert!(w[1].pe_coherent.unwrap() <= w[0].pe_coherent.unwrap());
            prop_assert!(w[1].pe_pc <= w[0].pe_pc);
        }
        for r in &rows {
            for v in [r.pe_qi.unwrap(), r.pe_coherent.unwrap(), r.pe_pc] {
                prop_assert!(v > 0.0 && v <= 0.5);
            }
        }
    }
}
