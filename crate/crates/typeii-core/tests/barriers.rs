use std::sync::OnceLock;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use typeii_core::barriers::{
    derive_family, eval_Lambda, eval_exterior, eval_interior, eval_lambda_bar, eval_patched,
    eval_psi, BarrierFamily, BarrierInputs, Side,
};

fn fam() -> &'static BarrierFamily {
    static F: OnceLock<BarrierFamily> = OnceLock::new();
    F.get_or_init(|| derive_family(&BarrierInputs::default()).unwrap())
}

#[test]
fn derived_constants() {
    let p = &fam().params;
    assert!((p.A - 1.0).abs() < 1e-14);
    assert!((p.A_plus - 1.0 / 1.1).abs() < 1e-12);
    assert!((p.A_minus - 1.0 / 0.9).abs() < 1e-12);
    assert!(p.B_plus > 0.0 && p.B_minus < 0.0);
    assert!(p.b_minus > 0.0 && p.b_plus < 0.0);
}

#[test]
fn log_cylinder_values() {
    let p = &fam().params;
    // At n = 2, phi = 1 the log term vanishes: lambda_bar = -1/c.
    let l = -1.0 / (1.0 + 2f64.ln());
    assert!((l + 0.59062).abs() < 1e-5);
    assert!((-1.5 * l * l + 0.52325).abs() < 1e-5);
    for s in [Side::Plus, Side::Minus] {
        let v = eval_lambda_bar(p, 1.0, s).unwrap();
        assert!((v + 1.0 / p.c_of(s)).abs() < 1e-14);
        let lam = eval_Lambda(p, 1.0, s).unwrap();
        assert!((lam + 1.5 * v * v).abs() < 1e-14);
        assert!(eval_lambda_bar(p, p.phi_max() * (1.0 - 1e-12), s).unwrap() > -0.05);
    }
}

#[test]
fn big_lambda_is_negative_everywhere() {
    let p = &fam().params;
    for k in 1..1000 {
        let phi = p.phi_max() * k as f64 / 1000.0;
        for s in [Side::Plus, Side::Minus] {
            let lam = eval_Lambda(p, phi, s).unwrap();
            let lb = eval_lambda_bar(p, phi, s).unwrap();
            assert!(lam < 0.0);
            let back = lam * (-2.0 * p.a * phi * phi / (2.0 * p.n as f64 - 2.0 + phi * phi));
            assert!((back - lb * lb).abs() <= 1e-14 * lb * lb);
        }
    }
}

#[test]
fn psi_solves_its_linear_ode() {
    let p = &fam().params;
    let nm1 = p.n as f64 - 1.0;
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..100 {
        let phi = rng.gen_range(1e-3..p.phi_max() - 1e-3);
        for s in [Side::Plus, Side::Minus] {
            let h = 1e-5 * phi.min(p.phi_max() - phi);
            let f = |x: f64| eval_psi(p, x, s).unwrap();
            let d1 = (f(phi - 2.0 * h) - 8.0 * f(phi - h) + 8.0 * f(phi + h) - f(phi + 2.0 * h))
                / (12.0 * h);
            let lb = eval_lambda_bar(p, phi, s).unwrap();
            let r = (2.0 * p.a * lb - 1.0) * f(phi)
                - (nm1 / phi - phi / 2.0) * d1
                - eval_Lambda(p, phi, s).unwrap();
            assert!(
                r.abs() <= 1e-8 * (1.0 + eval_Lambda(p, phi, s).unwrap().abs()),
                "phi = {phi}: {r:e}"
            );
        }
    }
}

#[test]
fn psi_near_cap_and_near_axis() {
    let p = &fam().params;
    for s in [Side::Plus, Side::Minus] {
        let phi = p.phi_max() * (1.0 - 1e-9);
        let lb = eval_lambda_bar(p, phi, s).unwrap();
        assert!((eval_psi(p, phi, s).unwrap() / (lb * lb) - 1.0 / p.a).abs() < 1e-3);

        // |psi| / (-log phi) increases to lambda_bar(0)^2 / a as phi -> 0.
        let lb0 = eval_lambda_bar(p, 0.0, s).unwrap();
        let m = lb0 * lb0 / p.a;
        let ratio = |phi: f64| eval_psi(p, phi, s).unwrap().abs() / (-phi.ln());
        for k in 0..=130 {
            let phi = 10f64.powf(-1.0 - 0.1 * k as f64);
            assert!(ratio(phi) <= m, "log bound fails at {phi:e}");
        }
        assert!(ratio(1e-14) > 0.9 * m);
    }
}

#[test]
fn limits_in_tau() {
    let fam = fam();
    let p = &fam.params;
    for s in [Side::Plus, Side::Minus] {
        let a = p.big_a_of(s);
        assert!((eval_interior(fam, 3.0, 60.0, s).unwrap() + a).abs() < 1e-20f64.max(1e-15 * a));
        let phi = 0.7;
        let lb = eval_lambda_bar(p, phi, s).unwrap();
        assert!((eval_exterior(fam, phi, 80.0, s).unwrap() - lb).abs() < 1e-15);
        assert_eq!(eval_exterior(fam, p.phi_max(), 30.0, s).unwrap(), 0.0);
        let tau = 21.0;
        let (b, e) = match s {
            Side::Plus => (p.B_plus, p.E_plus),
            Side::Minus => (p.B_minus, p.E_minus),
        };
        let z0 = eval_interior(fam, 0.0, tau, s).unwrap();
        let want = -a + (-tau).exp() * (b * tau + e);
        assert!((z0 - want).abs() < 1e-15);
    }
    assert!(
        eval_exterior(fam, 0.7, 40.0, Side::Minus).unwrap()
            < eval_exterior(fam, 0.7, 40.0, Side::Plus).unwrap()
    );
}

#[test]
fn patched_barrier_regions() {
    let fam = fam();
    let p = &fam.params;
    for tau in [p.tau0, p.tau0 + 2.5] {
        let inner = 0.9 * p.R2 * (-0.5 * tau).exp();
        for s in [Side::Plus, Side::Minus] {
            let z = inner * (0.5 * tau).exp();
            assert_eq!(
                eval_patched(fam, inner, tau, s).unwrap(),
                eval_interior(fam, z, tau, s).unwrap()
            );
            assert_eq!(eval_patched(fam, p.phi_max(), tau, s).unwrap(), 0.0);
        }
        for k in 0..2000 {
            let phi = p.phi_max() * k as f64 / 2000.0;
            assert!(
                eval_patched(fam, phi, tau, Side::Minus).unwrap()
                    < eval_patched(fam, phi, tau, Side::Plus).unwrap()
            );
        }
    }
    assert!(eval_patched(fam, 0.1, p.tau0 - 1.0, Side::Plus).is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let bad_a = BarrierInputs {
        a: -1.0,
        ..BarrierInputs::default()
    };
    assert!(derive_family(&bad_a).is_err());
    let bad_eps = BarrierInputs {
        eps_tilde: 0.0,
        ..BarrierInputs::default()
    };
    assert!(derive_family(&bad_eps).is_err());
}
