use criterion::{black_box, criterion_group, criterion_main, Criterion};
use typeii_bench::{family, initial_state};
use typeii_core::barriers::{certify, CertifyOptions};
use typeii_core::evolver::Stepper;
use typeii_core::soliton_profiles::solve_bowl_profile;
use typeii_core::EvolverConfig;

fn bowl(c: &mut Criterion) {
    c.bench_function("bowl_profile_n2", |b| {
        b.iter(|| solve_bowl_profile(black_box(2), 50.0, 1e-6).unwrap())
    });
}

fn barriers(c: &mut Criterion) {
    let fam = family().unwrap();
    let opt = CertifyOptions {
        n_space: 501,
        ..CertifyOptions::default()
    };
    let mut g = c.benchmark_group("barriers");
    g.sample_size(10);
    g.bench_function("derive_family", |b| b.iter(|| family().unwrap()));
    g.bench_function("certify_501", |b| b.iter(|| certify(&fam, &opt).unwrap()));
    g.finish();
}

fn evolve(c: &mut Criterion) {
    let fam = family().unwrap();
    let mut g = c.benchmark_group("evolver");
    for cells in [1024, 4096] {
        let state = initial_state(&fam, cells).unwrap();
        let p = &fam.params;
        g.bench_function(format!("step_{cells}"), |b| {
            b.iter(|| {
                let mut st =
                    Stepper::new(p.n, p.a, &state.profile.phi, EvolverConfig::default()).unwrap();
                st.step(&state, 1e-2).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bowl, barriers, evolve);
criterion_main!(benches);
