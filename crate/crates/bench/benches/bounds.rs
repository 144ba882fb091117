use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use qillum_bench::{oracle_point, reference_point};
use qillum_core::fock::{qi_cutoffs, qi_hypothesis_fock, FockQs, DEFAULT_TAIL_TOL};
use qillum_core::sweep::transmitter_bound;
use qillum_core::{min_resolvable_angle, pc_statistic_moments, Hypothesis, Transmitter};

fn chernoff(c: &mut Criterion) {
    let (p, g) = reference_point();
    let mut group = c.benchmark_group("qcb");
    for (name, t) in [("coherent", Transmitter::Coherent), ("qi", Transmitter::Qi)] {
        group.bench_function(name, |b| b.iter(|| transmitter_bound(t, black_box(&p), &g, 1e-6).unwrap()));
    }
    group.finish();
}

fn receiver(c: &mut Criterion) {
    let (p, g) = reference_point();
    c.bench_function("pc_moments", |b| b.iter(|| pc_statistic_moments(black_box(&p), &g).unwrap()));
}

fn resolution(c: &mut Criterion) {
    let (p, g) = reference_point();
    let p = qillum_core::ChannelParams { m_modes: 1_000_000, ..p };
    c.bench_function("min_resolvable_angle_qi", |b| {
        b.iter(|| min_resolvable_angle(Transmitter::Qi, black_box(&p), &g, p.m_modes, 0.03).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let (p, g) = oracle_point();
    let cut = qi_cutoffs(&p, DEFAULT_TAIL_TOL);
    let mut group = c.benchmark_group("fock");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    group.bench_function("qi_states", |b| {
        b.iter(|| qi_hypothesis_fock(black_box(&p), &g, Hypothesis::H2, cut, DEFAULT_TAIL_TOL).unwrap())
    });
    let h1 = qi_hypothesis_fock(&p, &g, Hypothesis::H1, cut, DEFAULT_TAIL_TOL).unwrap();
    let h2 = qi_hypothesis_fock(&p, &g, Hypothesis::H2, cut, DEFAULT_TAIL_TOL).unwrap();
    group.bench_function("qs_half", |b| b.iter(|| FockQs::new(&h1, &h2).unwrap().qs(0.5).unwrap()));
    group.finish();
}

criterion_group!(benches, chernoff, receiver, resolution, oracle);
criterion_main!(benches);
