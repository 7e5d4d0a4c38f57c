use proptest::prelude::*;
use typeii_core::frames::{
    from_rescaled, tip_frame, to_rescaled, FrameParams, PhysicalProfile, RescaledProfile,
};

fn cumulative(steps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(steps.iter().map(|s| {
            acc += s;
            acc
        }))
        .collect()
}

proptest! {
    #[test]
    fn physical_round_trip_is_identity(
        t in 0.0f64..0.999,
        a in 0.5f64..3.0,
        n in 2u32..6,
        y0 in 0.5f64..20.0,
        du in prop::collection::vec(1e-3f64..0.1, 4..40),
        ddx in prop::collection::vec(1e-3f64..1.0, 4..40),
    ) {
        let m = du.len().min(ddx.len());
        let u = cumulative(&du[..m]);
        let dx = cumulative(&ddx[..m]);
        let fp = FrameParams::new(1.0, a, n).unwrap();
        let tau = fp.tau_of(t).unwrap();
        let phys = PhysicalProfile::new(t, y0 + a * tau, dx.clone(), u.clone()).unwrap();
        let back = from_rescaled(&to_rescaled(&phys, &fp, None).unwrap(), &fp).unwrap();
        prop_assert!((back.t - t).abs() <= 1e-12);
        prop_assert!((back.x_tip - phys.x_tip).abs() <= 1e-12 * phys.x_tip.abs().max(1.0));
        for i in 0..=m {
            prop_assert!((back.dx[i] - dx[i]).abs() <= 1e-12 * dx[i].max(1.0));
            prop_assert!((back.u[i] - u[i]).abs() <= 1e-12 * u[i].max(1.0));
        }
    }
}

#[test]
fn lambda_is_minus_reciprocal_of_y() {
    let fp = FrameParams::new(1.0, 1.0, 2).unwrap();
    let phys = PhysicalProfile::new(0.0, 2.0, vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0]).unwrap();
    let r = to_rescaled(&phys, &fp, None).unwrap();
    assert_eq!(r.tau, 0.0);
    assert_eq!(r.lambda_at(0), -0.5);
    assert!((r.lambda_at(1) + 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.phi, vec![0.0, 0.5, 1.0]);
}

#[test]
fn resampling_preserves_monotone_data() {
    let fp = FrameParams::new(1.0, 1.0, 2).unwrap();
    let u: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();
    let dx: Vec<f64> = u.iter().map(|v| v * v).collect();
    let phys = PhysicalProfile::new(0.0, 3.0, dx, u).unwrap();
    let grid: Vec<f64> = (0..=33).map(|i| i as f64 / 33.0).collect();
    let r = to_rescaled(&phys, &fp, Some(&grid)).unwrap();
    assert_eq!(r.phi, grid);
    assert!(r.is_nondecreasing());
    assert!(to_rescaled(&phys, &fp, Some(&[0.0, 2.0])).is_err());
}

#[test]
fn tip_frame_of_synthetic_quadratic() {
    // y = A~ + e^-tau z^2 / 2 gives q = p~_z = z.
    let (tau, a_tilde) = (10.0f64, 1.5);
    let phi: Vec<f64> = (0..=400).map(|i| 1e-3 * i as f64).collect();
    let lam: Vec<f64> = phi
        .iter()
        .map(|p| {
            let z = p * (0.5 * tau).exp();
            -1.0 / (a_tilde + (-tau).exp() * z * z / 2.0)
        })
        .collect();
    let r = RescaledProfile::from_values(tau, phi, &lam).unwrap();
    let t = tip_frame(&r, a_tilde, 5.0).unwrap();
    for i in 1..t.z.len() - 1 {
        assert!((t.p_dev[i] - t.z[i] * t.z[i] / 2.0).abs() < 1e-6 * (1.0 + t.z[i] * t.z[i]));
        assert!((t.q[i] - t.z[i]).abs() < 1e-4);
    }
}
