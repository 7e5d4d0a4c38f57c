use std::sync::OnceLock;

use typeii_core::barriers::{derive_family, eval_patched, BarrierFamily, BarrierInputs, Side};
use typeii_core::evolver::{
    margins, run, run_free, stretched_grid, CapBoundary, EvolverConfig, GridShape, Trajectory,
};
use typeii_core::initial_data::{build_hat_lambda0, smooth_corner, InitialDataConfig};
use typeii_core::pipeline::checkpoints;
use typeii_core::RescaledProfile;

fn fam() -> &'static BarrierFamily {
    static F: OnceLock<BarrierFamily> = OnceLock::new();
    F.get_or_init(|| derive_family(&BarrierInputs::default()).unwrap())
}

fn smoothed(cells: usize) -> RescaledProfile {
    let fam = fam();
    let idc = InitialDataConfig::new(&fam.params, 0.1, 1.0).unwrap();
    let grid = stretched_grid(cells, 2, &GridShape::default()).unwrap();
    let hat = build_hat_lambda0(&idc, fam, &grid).unwrap();
    smooth_corner(&hat, &idc, fam).unwrap().0
}

#[test]
fn constant_profile_follows_the_riccati_law() {
    let (n, a, y0, tau0) = (3u32, 1.5, 2.0, 5.0);
    let phi_max = (2.0 * (n as f64 - 1.0)).sqrt();
    let phi: Vec<f64> = (0..=256).map(|i| phi_max * i as f64 / 256.0).collect();
    let lam = vec![-1.0 / y0; phi.len()];
    let init = RescaledProfile::from_values(tau0, phi, &lam).unwrap();
    // O(1) dynamics: the default absolute tolerance is sized for the tiny
    // tip speeds at large tau.
    let cfg = EvolverConfig {
        cap: CapBoundary::Natural,
        monitor_sandwich: false,
        atol: 1e-8,
        ..EvolverConfig::default()
    };
    let cps = checkpoints(tau0, tau0 + 1.0, 0.25);
    let traj = run_free(&init, n, a, tau0 + 1.0, &cps, &cfg).unwrap();
    for s in &traj.snapshots {
        // lambda_tau = -a lambda^2 means y_tau = -a for y = -1/lambda.
        let want = -1.0 / (y0 - a * (s.profile.tau - tau0));
        for i in 0..s.profile.len() {
            assert!(
                (s.profile.lambda_at(i) - want).abs() <= 1e-6 * want.abs(),
                "tau = {}: {} vs {want}",
                s.profile.tau,
                s.profile.lambda_at(i)
            );
        }
    }
}

#[test]
fn zero_length_run_returns_the_initial_state() {
    let init = smoothed(512);
    let traj = run(&init, fam(), init.tau, &[], &EvolverConfig::default()).unwrap();
    assert_eq!(traj.snapshots.len(), 1);
    assert_eq!(traj.snapshots[0].profile, init);
    assert_eq!(traj.accepted, 0);
}

#[test]
fn cap_value_and_even_symmetry_are_kept() {
    let init = smoothed(512);
    let tau_end = init.tau + 0.5;
    let traj = run(
        &init,
        fam(),
        tau_end,
        &checkpoints(init.tau, tau_end, 0.1),
        &EvolverConfig::default(),
    )
    .unwrap();
    assert!(traj.accepted >= 100, "{} steps", traj.accepted);
    for s in &traj.snapshots {
        let p = &s.profile;
        assert_eq!(p.lambda_at(p.len() - 1), 0.0);
        assert!(p.is_nondecreasing());
        // Even data: the deviation starts quadratically.
        let c1 = p.dlam[1] / (p.phi[1] * p.phi[1]);
        let c2 = p.dlam[2] / (p.phi[2] * p.phi[2]);
        assert!(
            (c1 / c2 - 1.0).abs() < 1e-2,
            "tau = {}: {c1} vs {c2}",
            p.tau
        );
    }
}

#[test]
fn supersolution_data_stays_below_the_upper_barrier() {
    let fam = fam();
    let p = &fam.params;
    let phi = stretched_grid(1024, 2, &GridShape::default()).unwrap();
    let lam: Vec<f64> = phi
        .iter()
        .map(|&f| eval_patched(fam, f, p.tau0, Side::Plus).unwrap())
        .collect();
    let init = RescaledProfile::from_values(p.tau0, phi, &lam).unwrap();
    let m0 = margins(fam, &init).unwrap();
    assert!(m0.min_upper.abs() <= 1e-14);

    let cfg = EvolverConfig {
        monitor_sandwich: false,
        ..EvolverConfig::default()
    };
    let tau_end = p.tau0 + 0.5;
    let traj = run_free(
        &init,
        p.n,
        p.a,
        tau_end,
        &checkpoints(p.tau0, tau_end, 0.1),
        &cfg,
    )
    .unwrap();
    let eps = cfg.eps_grid_factor * p.A.abs();
    for s in &traj.snapshots[1..] {
        let m = margins(fam, &s.profile).unwrap();
        assert!(
            m.min_upper >= -eps,
            "tau = {}: {:e}",
            s.profile.tau,
            m.min_upper
        );
    }
}

#[test]
fn trajectory_csv_round_trip() {
    let init = smoothed(256);
    let tau_end = init.tau + 0.05;
    let traj = run(
        &init,
        fam(),
        tau_end,
        &[init.tau + 0.02],
        &EvolverConfig::default(),
    )
    .unwrap();
    let mut buf = vec![];
    traj.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.snapshots.len(), traj.snapshots.len());
    for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
        assert_eq!(a.profile, b.profile);
    }
}

#[test]
fn runs_backwards_in_time_are_rejected() {
    let init = smoothed(256);
    assert!(run(&init, fam(), init.tau - 1.0, &[], &EvolverConfig::default()).is_err());
}
