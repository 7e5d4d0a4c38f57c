use std::sync::Arc;

use approx::assert_relative_eq;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use typeii_core::soliton_profiles::{bowl_c4, check_bowl_asymptotics, solve_bowl_profile, solve_q};

/// `P'' = (1 - (n-1) P'/w)(1 + P'^2)`, integrated with classical RK4 on a
/// fine uniform step from a two-term series start.
fn rk4_bowl(n: u32, w_end: f64) -> (f64, f64) {
    let nf = n as f64;
    let rhs = |w: f64, p: f64| (1.0 - (nf - 1.0) * p / w) * (1.0 + p * p);
    let w0 = 1e-3;
    let (mut w, mut y, mut p) = (
        w0,
        w0 * w0 / (2.0 * nf) + bowl_c4(n) * w0.powi(4),
        w0 / nf + 4.0 * bowl_c4(n) * w0.powi(3),
    );
    let steps = 200_000;
    let h = (w_end - w0) / steps as f64;
    for _ in 0..steps {
        let (k1y, k1p) = (p, rhs(w, p));
        let (k2y, k2p) = (p + 0.5 * h * k1p, rhs(w + 0.5 * h, p + 0.5 * h * k1p));
        let (k3y, k3p) = (p + 0.5 * h * k2p, rhs(w + 0.5 * h, p + 0.5 * h * k2p));
        let (k4y, k4p) = (p + h * k3p, rhs(w + h, p + h * k3p));
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        w += h;
    }
    (y, p)
}

#[test]
fn grim_reaper_matches_closed_form() {
    let prof = solve_bowl_profile(1, 1.3, 1e-8).unwrap();
    for w in [0.1, 0.5, 1.0, 1.2, 1.3] {
        let v = prof.eval(w).unwrap();
        assert!((v.value + w.cos().ln()).abs() < 1e-8, "w = {w}");
        assert!((v.deriv - w.tan()).abs() < 1e-7, "w = {w}");
    }
}

#[test]
fn series_coefficient_agrees_with_fine_rk4() {
    for n in [2u32, 3, 5] {
        let prof = solve_bowl_profile(n, 10.0, 1e-8).unwrap();
        let (y, p) = rk4_bowl(n, 3.0);
        let v = prof.eval(3.0).unwrap();
        assert_relative_eq!(v.value, y, max_relative = 1e-9);
        assert_relative_eq!(v.deriv, p, max_relative = 1e-9);
    }
}

#[test]
fn off_grid_residual_is_small() {
    let tol = 1e-8;
    let prof = solve_bowl_profile(2, 200.0, tol).unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let w = rng.gen_range(0.05..199.0);
        worst = worst.max(prof.residual_at(w, 1e-4 * w.max(1.0)).unwrap().abs());
    }
    assert!(worst <= 10.0 * tol, "worst residual {worst:e}");
}

#[test]
fn bowl_asymptotics_for_n2() {
    let prof = solve_bowl_profile(2, 200.0, 1e-8).unwrap();
    let asym = check_bowl_asymptotics(&prof).unwrap();
    assert!((asym.small_coeff - 1.0).abs() < 1e-3);
    assert!((asym.tail_exponent + 2.0).abs() < 0.3);
    assert!(asym.large_const.is_finite());
}

#[test]
fn asymptotics_need_a_cylindrical_tail() {
    let prof = solve_bowl_profile(1, 1.2, 1e-8).unwrap();
    assert!(check_bowl_asymptotics(&prof).is_err());
}

#[test]
fn midpoint_queries_lie_between_neighbors() {
    let prof = solve_bowl_profile(3, 50.0, 1e-8).unwrap();
    for i in (1..prof.w.len() - 1).step_by(37) {
        let mid = 0.5 * (prof.w[i] + prof.w[i + 1]);
        let v = prof.eval(mid).unwrap().value;
        assert!(v > prof.p[i] && v < prof.p[i + 1], "node {i}");
    }
}

/// Derivative weights at `x0` for the Lagrange polynomial through `xs`.
fn lagrange_d1(x0: f64, xs: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|j| {
            let denom: f64 = (0..xs.len())
                .filter(|&m| m != j)
                .map(|m| xs[j] - xs[m])
                .product();
            let num: f64 = (0..xs.len())
                .filter(|&k| k != j)
                .map(|k| {
                    (0..xs.len())
                        .filter(|&m| m != j && m != k)
                        .map(|m| x0 - xs[m])
                        .product::<f64>()
                })
                .sum();
            num / denom
        })
        .collect()
}

#[test]
fn q_ode_residual_at_random_nodes() {
    let (n, a, big_a) = (2u32, 1.0, 1.0);
    let bowl = Arc::new(solve_bowl_profile(n, 200.0, 1e-8).unwrap());
    let q = solve_q(n, a, big_a, bowl.clone(), 40.0, 1e-8).unwrap();
    let g = |z: f64| {
        let pw = bowl.eval(a * z).unwrap().deriv;
        1.0 + pw * pw
    };
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..50 {
        let i = rng.gen_range(10..q.z.len() - 10);
        let xs = &q.z[i - 2..=i + 2];
        let flux: Vec<f64> = (i - 2..=i + 2).map(|k| q.q_z[k] / g(q.z[k])).collect();
        let d = lagrange_d1(q.z[i], xs)
            .iter()
            .zip(&flux)
            .map(|(w, f)| w * f)
            .sum::<f64>();
        let r = -(n as f64 - 1.0) * q.q_z[i] / q.z[i] - d - 1.0;
        assert!(r.abs() <= 1e-7, "z = {}: residual {r:e}", q.z[i]);
    }
    assert_eq!(q.q[0], 0.0);
    assert_eq!(q.q_z[0], 0.0);
}

#[test]
fn q_small_argument_law() {
    let (n, a) = (3u32, 2.0);
    let bowl = Arc::new(solve_bowl_profile(n, 200.0, 1e-8).unwrap());
    let q = solve_q(n, a, 1.0, bowl, 20.0, 1e-8).unwrap();
    let ratio = |z: f64| 2.0 * n as f64 * (-q.eval(z).unwrap().value) / (z * z);
    assert!((ratio(1e-3) - 1.0).abs() < 1e-4);
    assert!((ratio(1e-3) - 1.0).abs() < (ratio(1e-1) - 1.0).abs());
}

#[test]
fn q_rejects_mismatched_bowl() {
    let bowl = Arc::new(solve_bowl_profile(3, 60.0, 1e-8).unwrap());
    assert!(solve_q(2, 1.0, 1.0, bowl, 10.0, 1e-8).is_err());
}
