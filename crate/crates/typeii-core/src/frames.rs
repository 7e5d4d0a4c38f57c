//! Coordinate bookkeeping between the physical frame `(x, u, t)`, the
//! rescaled frame `(y, phi, tau)`, the tip frame `(z, p~)` and the
//! compactified variable `lambda = -1/y`.
//!
//! Near the tip all interesting structure lives in differences of size
//! `e^-tau` on top of an O(1) level. Profiles therefore carry the tip value
//! and the per-node deviation from it separately, so that those differences
//! survive at full precision through every conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Hermite;

/// Scaling constants shared by all frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    /// Vanishing time `T`.
    #[serde(rename = "T")]
    pub t_vanish: f64,
    pub a: f64,
    pub n: u32,
}

impl FrameParams {
    pub fn new(t_vanish: f64, a: f64, n: u32) -> Result<Self> {
        if !t_vanish.is_finite() {
            return Err(Error::param("T", t_vanish, "must be finite"));
        }
        if !(a > 0.0) {
            return Err(Error::param("a", a, "need a > 0"));
        }
        if n < 1 {
            return Err(Error::InvalidDimension {
                n,
                reason: "need n >= 1",
            });
        }
        Ok(FrameParams { t_vanish, a, n })
    }

    pub fn tau_of(&self, t: f64) -> Result<f64> {
        if !(t < self.t_vanish) {
            return Err(Error::Frame(format!(
                "time t = {t} is not before the vanishing time {}",
                self.t_vanish
            )));
        }
        Ok(-(self.t_vanish - t).ln())
    }

    pub fn t_of(&self, tau: f64) -> f64 {
        self.t_vanish - (-tau).exp()
    }

    /// Rescaled cap radius `sqrt(2(n-1))`.
    pub fn phi_max(&self) -> f64 {
        (2.0 * (self.n as f64 - 1.0)).sqrt()
    }
}

/// `lambda(phi)` at one rescaled time. The value at node `i` is
/// `lam_tip + dlam[i]` with `dlam[0] = 0`. A final node at the cap with
/// `lambda = 0` is allowed (the Dirichlet boundary of the evolver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledProfile {
    pub tau: f64,
    pub phi: Vec<f64>,
    pub lam_tip: f64,
    pub dlam: Vec<f64>,
}

impl RescaledProfile {
    /// Build from plain values; deviations are formed by subtraction.
    pub fn from_values(tau: f64, phi: Vec<f64>, lambda: &[f64]) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Frame("empty profile".into()));
        }
        let lam_tip = lambda[0];
        let dlam = lambda.iter().map(|l| l - lam_tip).collect();
        Self::from_parts(tau, phi, lam_tip, dlam)
    }

    pub fn from_parts(tau: f64, phi: Vec<f64>, lam_tip: f64, mut dlam: Vec<f64>) -> Result<Self> {
        if phi.len() != dlam.len() || phi.len() < 2 {
            return Err(Error::Frame(format!(
                "need matching node and value arrays of length >= 2 (got {} and {})",
                phi.len(),
                dlam.len()
            )));
        }
        if !tau.is_finite() {
            return Err(Error::Frame("tau must be finite".into()));
        }
        if phi[0] != 0.0 {
            return Err(Error::Frame("first node must be the tip phi = 0".into()));
        }
        if phi.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Frame("phi nodes must increase strictly".into()));
        }
        dlam[0] = 0.0;
        let p = RescaledProfile {
            tau,
            phi,
            lam_tip,
            dlam,
        };
        let last = p.len() - 1;
        for i in 0..p.len() {
            let l = p.lambda_at(i);
            let at_cap = i == last && l == 0.0;
            if !(l < 0.0) && !at_cap {
                return Err(Error::Frame(format!(
                    "lambda = {l} at phi = {} is not negative",
                    p.phi[i]
                )));
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn lambda_at(&self, i: usize) -> f64 {
        self.lam_tip + self.dlam[i]
    }

    pub fn lambda(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.lambda_at(i)).collect()
    }

    /// Number of nodes with `lambda < 0` (the cap node is excluded).
    pub fn finite_len(&self) -> usize {
        let last = self.len() - 1;
        if self.lambda_at(last) < 0.0 {
            self.len()
        } else {
            last
        }
    }

    /// `y_i - y_0` computed from the deviation, exact up to rounding of
    /// the deviation itself.
    pub fn y_dev(&self, i: usize) -> f64 {
        self.dlam[i] / (self.lambda_at(i) * self.lam_tip)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.dlam.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Rotationally symmetric graph `r = u(x)` at physical time `t`. Node `i`
/// sits at `x_tip + dx[i]` with `dx[0] = 0` and `u[0] = 0`. `x_max` records
/// the truncation of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalProfile {
    pub t: f64,
    pub x_tip: f64,
    pub dx: Vec<f64>,
    pub u: Vec<f64>,
}

impl PhysicalProfile {
    pub fn new(t: f64, x_tip: f64, dx: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if dx.len() != u.len() || dx.len() < 3 {
            return Err(Error::Frame("need >= 3 matching x and u samples".into()));
        }
        if dx[0] != 0.0 || u[0] != 0.0 {
            return Err(Error::Frame("first node must be the tip with u = 0".into()));
        }
        if dx.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Frame("x nodes must increase strictly".into()));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Frame("u must increase strictly".into()));
        }
        Ok(PhysicalProfile { t, x_tip, dx, u })
    }

    /// Build from absolute node positions.
    pub fn from_nodes(t: f64, x: &[f64], u: Vec<f64>) -> Result<Self> {
        let x0 = *x
            .first()
            .ok_or_else(|| Error::Frame("empty profile".into()))?;
        Self::new(t, x0, x.iter().map(|v| v - x0).collect(), u)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        self.dx.iter().map(|d| self.x_tip + d).collect()
    }

    pub fn x_max(&self) -> f64 {
        self.x_tip + self.dx.last().unwrap()
    }

    /// Discrete second differences of `u(x)` are negative at every interior
    /// node.
    pub fn is_concave(&self) -> bool {
        (1..self.len() - 1).all(|i| {
            let (h0, h1) = (self.dx[i] - self.dx[i - 1], self.dx[i + 1] - self.dx[i]);
            (self.u[i + 1] - self.u[i]) / h1 < (self.u[i] - self.u[i - 1]) / h0
        })
    }
}

/// Convert a rescaled profile to the physical frame. The cap node, if
/// present, is dropped since it sits at `y = infinity`.
pub fn from_rescaled(r: &RescaledProfile, fp: &FrameParams) -> Result<PhysicalProfile> {
    if !r.tau.is_finite() {
        return Err(Error::Frame("tau must be finite".into()));
    }
    let m = r.finite_len();
    if let Some(i) = (0..m).find(|&i| !(r.lambda_at(i) < 0.0)) {
        return Err(Error::Frame(format!("lambda >= 0 at phi = {}", r.phi[i])));
    }
    let s = (-0.5 * r.tau).exp();
    let y0 = -1.0 / r.lam_tip;
    let x_tip = y0 + fp.a * r.tau;
    let dx: Vec<f64> = (0..m).map(|i| r.y_dev(i)).collect();
    let u: Vec<f64> = r.phi[..m].iter().map(|p| p * s).collect();
    PhysicalProfile::new(fp.t_of(r.tau), x_tip, dx, u).map_err(|e| match e {
        Error::Frame(msg) => Error::Frame(format!("non-invertible profile: {msg}")),
        other => other,
    })
}

/// Convert a physical profile to the rescaled frame, optionally resampling
/// onto `grid` (which must start at 0 and stay inside the sampled range)
/// with monotone cubic interpolation of the deviation.
pub fn to_rescaled(
    p: &PhysicalProfile,
    fp: &FrameParams,
    grid: Option<&[f64]>,
) -> Result<RescaledProfile> {
    let tau = fp.tau_of(p.t)?;
    if p.dx.windows(2).any(|w| !(w[1] > w[0])) || p.u.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Frame(
            "non-invertible profile: monotonicity violated".into(),
        ));
    }
    let s = (0.5 * tau).exp();
    let y0 = p.x_tip - fp.a * tau;
    let ys: Vec<f64> = p.dx.iter().map(|d| y0 + d).collect();
    if let Some(i) = ys.iter().position(|&y| !(y > 0.0)) {
        return Err(Error::Frame(format!(
            "y = {} <= 0 at node {i}; lambda undefined (check the frame translation)",
            ys[i]
        )));
    }
    let phi: Vec<f64> = p.u.iter().map(|u| u * s).collect();
    let lam_tip = -1.0 / y0;
    let dlam: Vec<f64> = p.dx.iter().zip(&ys).map(|(d, y)| d / (y * y0)).collect();
    match grid {
        None => RescaledProfile::from_parts(tau, phi, lam_tip, dlam),
        Some(g) => {
            let hi = *phi.last().unwrap();
            if g.first() != Some(&0.0) || g.iter().any(|&v| v > hi) {
                return Err(Error::Frame(format!(
                    "resampling grid must start at 0 and end by {hi}"
                )));
            }
            let interp = pchip(phi, dlam);
            let out = g.iter().map(|&v| interp.eval(v).0).collect();
            RescaledProfile::from_parts(tau, g.to_vec(), lam_tip, out)
        }
    }
}

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes.
fn pchip(x: Vec<f64>, f: Vec<f64>) -> Hermite {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (f[i + 1] - f[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    Hermite::new(x, f, d)
}

/// Tip-frame view `y = A~ + e^-tau p~(z)` of a rescaled profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipFrame {
    pub tau: f64,
    pub z: Vec<f64>,
    pub p_tilde: Vec<f64>,
    /// `p~(z) - p~(0)` at full precision.
    pub p_dev: Vec<f64>,
    /// `q = p~_z` by centered differences; `q(0) = 0` by symmetry.
    pub q: Vec<f64>,
}

/// Extract the tip frame on nodes with `z <= z_max`.
pub fn tip_frame(r: &RescaledProfile, a_tilde: f64, z_max: f64) -> Result<TipFrame> {
    let et = r.tau.exp();
    let sh = (0.5 * r.tau).exp();
    let m = (0..r.finite_len())
        .take_while(|&i| r.phi[i] * sh <= z_max)
        .count();
    if m < 3 {
        return Err(Error::Frame(format!(
            "only {m} nodes with z <= {z_max} at tau = {}; tau too small or grid too coarse",
            r.tau
        )));
    }
    let z: Vec<f64> = r.phi[..m].iter().map(|p| p * sh).collect();
    let p0 = et * (-1.0 / r.lam_tip - a_tilde);
    let p_dev: Vec<f64> = (0..m).map(|i| et * r.y_dev(i)).collect();
    let p_tilde = p_dev.iter().map(|d| p0 + d).collect();
    let mut q = vec![0.0; m];
    for i in 1..m {
        let (lo, hi) = if i + 1 < m {
            (i - 1, i + 1)
        } else {
            (i - 2, i)
        };
        let w = crate::numerics::fd_weights(z[i], &z[lo..=hi], 1);
        q[i] = w.iter().zip(&p_dev[lo..=hi]).map(|(w, v)| w * v).sum();
    }
    Ok(TipFrame {
        tau: r.tau,
        z,
        p_tilde,
        p_dev,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> FrameParams {
        FrameParams::new(1.0, 1.0, 2).unwrap()
    }

    #[test]
    fn identity_scaling_at_tau_zero() {
        let p = PhysicalProfile::from_nodes(0.0, &[2.0, 3.0, 5.0], vec![0.0, 1.0, 1.2]).unwrap();
        let r = to_rescaled(&p, &fp(), None).unwrap();
        assert_eq!(r.tau, 0.0);
        assert_eq!(r.phi, vec![0.0, 1.0, 1.2]);
        assert_eq!(r.lam_tip, -0.5);
    }

    #[test]
    fn nonpositive_y_rejected() {
        let p = PhysicalProfile::from_nodes(0.0, &[-1.0, 3.0, 5.0], vec![0.0, 1.0, 1.2]).unwrap();
        assert!(to_rescaled(&p, &fp(), None).is_err());
    }

    #[test]
    fn nonnegative_lambda_rejected() {
        assert!(
            RescaledProfile::from_values(0.0, vec![0.0, 0.5, 1.0], &[-1.0, 0.1, -0.2]).is_err()
        );
    }

    #[test]
    fn round_trip_with_cap_node() {
        let phi = vec![0.0, 0.3, 0.9, 2f64.sqrt()];
        let r = RescaledProfile::from_values(3.0, phi, &[-1.0, -0.9, -0.5, 0.0]).unwrap();
        let p = from_rescaled(&r, &fp()).unwrap();
        assert_eq!(p.len(), 3);
        let back = to_rescaled(&p, &fp(), None).unwrap();
        for i in 0..3 {
            assert!((back.lambda_at(i) - r.lambda_at(i)).abs() < 1e-14);
            assert!((back.phi[i] - r.phi[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_y_gives_zero_tip_frame() {
        let phi: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let r = RescaledProfile::from_values(4.0, phi, &[-0.5; 10]).unwrap();
        let t = tip_frame(&r, 2.0, 100.0).unwrap();
        assert!(t.p_tilde.iter().all(|&v| v == 0.0));
        assert!(t.q.iter().all(|&v| v == 0.0));
    }
}
