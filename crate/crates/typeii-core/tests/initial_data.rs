use std::sync::OnceLock;

use typeii_core::barriers::{derive_family, eval_patched, BarrierFamily, BarrierInputs, Side};
use typeii_core::evolver::{stretched_grid, GridShape};
use typeii_core::initial_data::{build_hat_lambda0, smooth_corner, InitialDataConfig};

fn fam() -> &'static BarrierFamily {
    static F: OnceLock<BarrierFamily> = OnceLock::new();
    F.get_or_init(|| derive_family(&BarrierInputs::default()).unwrap())
}

fn grid() -> Vec<f64> {
    stretched_grid(1024, 2, &GridShape::default()).unwrap()
}

#[test]
fn hat_datum_is_continuous_at_the_junction() {
    let fam = fam();
    let p = &fam.params;
    let idc = InitialDataConfig::new(p, 0.1, 1.0).unwrap();
    let junction = p.R1 * (-0.5 * p.tau0).exp();
    let phi = vec![
        0.0,
        0.5 * junction,
        junction * (1.0 - 1e-15),
        junction * (1.0 + 1e-15),
        1.0,
        p.phi_max(),
    ];
    let hat = build_hat_lambda0(&idc, fam, &phi).unwrap();
    assert!((hat.lambda_at(2) - hat.lambda_at(3)).abs() <= 1e-14);
}

#[test]
fn tip_value() {
    let fam = fam();
    let p = &fam.params;
    let idc = InitialDataConfig::new(p, 0.1, 1.0).unwrap();
    let hat = build_hat_lambda0(&idc, fam, &grid()).unwrap();
    let f_r1 = p.A * p.A / p.a * fam.bowl.eval(p.a * p.R1).unwrap().value;
    let want = -p.A - (-p.tau0).exp() * f_r1 + idc.c0;
    assert!((hat.lam_tip - want).abs() <= 1e-15);
}

#[test]
fn smoothed_datum_sits_between_the_barriers() {
    let fam = fam();
    let p = &fam.params;
    let idc = InitialDataConfig::new(p, 0.1, 1.0).unwrap();
    let hat = build_hat_lambda0(&idc, fam, &grid()).unwrap();
    let (sm, rep) = smooth_corner(&hat, &idc, fam).unwrap();
    assert!(rep.delta > 0.0);
    assert!(rep.sup_deviation <= rep.delta / 10.0);
    assert!(rep.slope_max <= rep.slope_bound);
    for prof in [&hat, &sm] {
        for i in 0..prof.finite_len() {
            let phi = prof.phi[i];
            if phi >= p.phi_max() {
                continue;
            }
            let l = prof.lambda_at(i);
            assert!(eval_patched(fam, phi, p.tau0, Side::Minus).unwrap() < l);
            assert!(l < eval_patched(fam, phi, p.tau0, Side::Plus).unwrap());
        }
    }
    // Only the smoothing interval is touched.
    let sh = (0.5 * p.tau0).exp();
    for i in 0..sm.len() {
        let z = sm.phi[i] * sh;
        if z < (1.0 - idc.zeta) * p.R1 || z > (1.0 + idc.zeta) * p.R1 {
            assert_eq!(sm.lambda_at(i), hat.lambda_at(i), "z = {z}");
        }
    }
}

#[test]
fn smoothing_converges_as_the_interval_shrinks() {
    let fam = fam();
    let g = grid();
    let mut devs = vec![];
    for zeta in [0.1, 0.05, 0.025] {
        let idc = InitialDataConfig::new(&fam.params, zeta, 1.0).unwrap();
        let hat = build_hat_lambda0(&idc, fam, &g).unwrap();
        let (sm, _) = smooth_corner(&hat, &idc, fam).unwrap();
        let d = (0..sm.len())
            .map(|i| (sm.lambda_at(i) - hat.lambda_at(i)).abs())
            .fold(0.0, f64::max);
        devs.push(d);
    }
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
}

#[test]
fn junction_constant_shrinks_with_tau0() {
    let mut prev = f64::INFINITY;
    for tau0 in [20.0, 25.0, 30.0] {
        let mut params = fam().params.clone();
        params.tau0 = tau0;
        let c0 = InitialDataConfig::new(&params, 0.1, 1.0).unwrap().c0.abs();
        assert!(c0 < prev, "tau0 = {tau0}: |C0| = {c0:e}");
        prev = c0;
    }
}
