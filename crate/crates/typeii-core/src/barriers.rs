//! Interior and exterior sub/supersolutions, their constants, patching and
//! numerical certification.
//!
//! Interior (tip) barriers in `z = phi e^{tau/2}`:
//! `lambda_int = -A + e^-tau F(z) + e^-tau (B tau + E) + tau e^-2tau D Q(z)`
//! with `F = (A^2/a) P(a z)`. Exterior barriers in `phi`:
//! `lambda_ext = lambda_bar + b e^-tau psi(phi)` where `lambda_bar` is the
//! log-cylinder `-1/(c - a log(2n-2-phi^2))`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soliton_profiles::{solve_bowl_profile, solve_q, QProfile, SolitonProfile};

/// Which member of a barrier pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

/// Every constant of the barrier construction.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub n: u32,
    pub a: f64,
    pub c: f64,
    pub eps_tilde: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub A: f64,
    pub A_plus: f64,
    pub A_minus: f64,
    pub B_plus: f64,
    pub B_minus: f64,
    pub D_plus: f64,
    pub D_minus: f64,
    pub E_plus: f64,
    pub E_minus: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    pub R1: f64,
    pub R2: f64,
    pub tau0: f64,
    pub psi_C1: f64,
    pub d: f64,
    /// Sup over `|z| <= R1` of the three bounded interior quantities.
    pub c_bar: f64,
    /// Bound on the curvature ratio of the exterior log piece.
    pub ratio_bound: f64,
    /// Safety factor applied to the lower bounds on `|D|`.
    pub kappa: f64,
    /// Patch crossing location (in `z`) enforced at `tau0`.
    pub z_cross: f64,
}

impl BarrierParams {
    /// Tip level in the `y` frame; `y = -1/lambda` with `lambda(0) ~ -A`.
    pub fn a_tilde(&self) -> f64 {
        1.0 / self.A
    }

    pub fn phi_max(&self) -> f64 {
        (2.0 * (self.n as f64 - 1.0)).sqrt()
    }

    pub fn log_cap(&self) -> f64 {
        (2.0 * self.n as f64 - 2.0).ln()
    }

    pub fn c_of(&self, s: Side) -> f64 {
        match s {
            Side::Plus => self.c_plus,
            Side::Minus => self.c_minus,
        }
    }

    pub fn big_a_of(&self, s: Side) -> f64 {
        match s {
            Side::Plus => self.A_plus,
            Side::Minus => self.A_minus,
        }
    }

    fn bde(&self, s: Side) -> (f64, f64, f64) {
        match s {
            Side::Plus => (self.B_plus, self.D_plus, self.E_plus),
            Side::Minus => (self.B_minus, self.D_minus, self.E_minus),
        }
    }

    pub fn b_of(&self, s: Side) -> f64 {
        match s {
            Side::Plus => self.b_plus,
            Side::Minus => self.b_minus,
        }
    }

    /// Check the coupling relations and sign conditions.
    pub fn validate(&self) -> Result<()> {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
        let bad = |what: String| Err(Error::Infeasible(what));
        if self.n < 2 {
            return Err(Error::InvalidDimension {
                n: self.n,
                reason: "barriers need n >= 2",
            });
        }
        let l = self.a * self.log_cap();
        if !(self.a > 0.0) {
            return bad(format!("a = {} must be positive", self.a));
        }
        if !(self.c_minus > l && self.c_minus < self.c && self.c < self.c_plus) {
            return bad("need a log(2n-2) < c_minus < c < c_plus".into());
        }
        for (name, v, want) in [
            ("A", self.A, 1.0 / (self.c - l)),
            ("A_plus", self.A_plus, 1.0 / (self.c_plus - l)),
            ("A_minus", self.A_minus, 1.0 / (self.c_minus - l)),
            (
                "B_plus",
                self.B_plus,
                -self.b_plus / (2.0 * self.a) * self.A_plus.powi(2),
            ),
            (
                "B_minus",
                self.B_minus,
                -self.b_minus / (2.0 * self.a) * self.A_minus.powi(2),
            ),
            (
                "d",
                self.d,
                1.0 / self.a
                    + self.psi_C1 * (2.0 * self.n as f64 - 2.0)
                    + self.log_cap() / (2.0 * self.a),
            ),
        ] {
            if !close(v, want) {
                return bad(format!(
                    "{name} = {v} violates its coupling relation (expected {want})"
                ));
            }
        }
        if !(self.b_plus < 0.0 && self.b_minus > 0.0) {
            return bad("need b_plus < 0 < b_minus".into());
        }
        let dp = (1.0 + 2.0 * self.a * self.A_plus + 4.0 * self.c_bar) * self.B_plus.abs();
        let dm = (1.0 + 2.0 * self.a * self.A_minus + 4.0 * self.c_bar) * self.B_minus.abs();
        if !(self.D_plus > dp && self.D_minus < -dm) {
            return bad(format!(
                "D bounds violated: D_plus = {} (need > {dp}), D_minus = {} (need < {})",
                self.D_plus, self.D_minus, -dm
            ));
        }
        if !(self.R2 > 0.0 && self.R2 < self.R1) {
            return bad("need 0 < R2 < R1".into());
        }
        if !(self.psi_C1 > 0.0 && self.d > 0.0) {
            return bad("need psi_C1 > 0 and d > 0".into());
        }
        Ok(())
    }
}

/// Function value with the derivatives the residual operators need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub value: f64,
    pub d_tau: f64,
    pub d_x: f64,
    pub d_xx: f64,
}

/// `T_z[lambda]` from pointwise derivatives in the tip variable. At `z = 0`
/// the symmetric limit `lambda_z / z -> lambda_zz` is used.
pub fn residual_tz(n: u32, a: f64, z: f64, tau: f64, l: Derivs) -> f64 {
    let et = tau.exp();
    let radial = if z == 0.0 { l.d_xx } else { l.d_x / z };
    let l4 = l.value.powi(4);
    l.d_tau
        - et * (l.d_xx - 2.0 * l.d_x * l.d_x / l.value) / (1.0 + et * et * l.d_x * l.d_x / l4)
        - et * (n as f64 - 1.0) * radial
        + z * l.d_x
        + a * l.value * l.value
}

/// `F_phi[lambda]` from pointwise derivatives in `phi` (`phi > 0`).
pub fn residual_fphi(n: u32, a: f64, phi: f64, tau: f64, l: Derivs) -> f64 {
    let et = tau.exp();
    let l4 = l.value.powi(4);
    l.d_tau
        - (l.d_xx - 2.0 * l.d_x * l.d_x / l.value) / (1.0 + et * l.d_x * l.d_x / l4)
        - ((n as f64 - 1.0) / phi - phi / 2.0) * l.d_x
        + a * l.value * l.value
}

/// Derivatives of an arbitrary smooth function by centered differences
/// (fourth order in space, second order in time).
pub fn fd_derivs(f: impl Fn(f64, f64) -> f64, x: f64, tau: f64, h: f64, ht: f64) -> Derivs {
    let v = f(x, tau);
    let (m2, m1, p1, p2) = (
        f(x - 2.0 * h, tau),
        f(x - h, tau),
        f(x + h, tau),
        f(x + 2.0 * h, tau),
    );
    Derivs {
        value: v,
        d_tau: (f(x, tau + ht) - f(x, tau - ht)) / (2.0 * ht),
        d_x: (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h),
        d_xx: (-m2 + 16.0 * m1 - 30.0 * v + 16.0 * p1 - p2) / (12.0 * h * h),
    }
}

fn check_phi(p: &BarrierParams, phi: f64) -> Result<f64> {
    let phi = phi.abs();
    if !(phi < p.phi_max()) {
        return Err(Error::OutOfDomain {
            at: phi,
            lo: 0.0,
            hi: p.phi_max(),
        });
    }
    Ok(phi)
}

/// `(lambda_bar, lambda_bar', lambda_bar'')` in `phi >= 0`.
fn lambda_bar_derivs(p: &BarrierParams, phi: f64, s: Side) -> (f64, f64, f64) {
    let nn = 2.0 * p.n as f64 - 2.0;
    let sg = nn - phi * phi;
    let l = p.c_of(s) - p.a * sg.ln();
    let lp = 2.0 * p.a * phi / sg;
    let lpp = 2.0 * p.a * (nn + phi * phi) / (sg * sg);
    (
        -1.0 / l,
        lp / (l * l),
        lpp / (l * l) - 2.0 * lp * lp / (l * l * l),
    )
}

/// The log-cylinder `-1/(c^sign - a log(2n-2-phi^2))`.
pub fn eval_lambda_bar(p: &BarrierParams, phi: f64, s: Side) -> Result<f64> {
    let phi = check_phi(p, phi)?;
    Ok(lambda_bar_derivs(p, phi, s).0)
}

/// `(psi, psi', psi'')` for `0 < phi < phi_max`.
fn psi_derivs(p: &BarrierParams, phi: f64, s: Side) -> (f64, f64, f64) {
    let nn = 2.0 * p.n as f64 - 2.0;
    let a = p.a;
    let c1 = p.psi_C1;
    let sg = nn - phi * phi;
    let k = 1.0 / (2.0 * a * (p.n as f64 - 1.0));
    let lg = (phi * phi).ln() - sg.ln();
    let g = 1.0 / a + c1 * sg + sg * k / 2.0 * lg;
    let gp = -2.0 * c1 * phi - phi * k * lg + sg * k / phi + phi * k;
    let gpp = -2.0 * c1
        - k * lg
        - k * phi * (2.0 / phi + 2.0 * phi / sg)
        - k * (nn + phi * phi) / (phi * phi)
        + k;
    let (lb, lbp, lbpp) = lambda_bar_derivs(p, phi, s);
    let (l2, l2p, l2pp) = (lb * lb, 2.0 * lb * lbp, 2.0 * lbp * lbp + 2.0 * lb * lbpp);
    (
        l2 * g,
        l2p * g + l2 * gp,
        l2pp * g + 2.0 * l2p * gp + l2 * gpp,
    )
}

/// Explicit solution of the linear exterior correction ODE.
pub fn eval_psi(p: &BarrierParams, phi: f64, s: Side) -> Result<f64> {
    let phi = check_phi(p, phi)?;
    if phi == 0.0 {
        return Err(Error::OutOfDomain {
            at: 0.0,
            lo: f64::MIN_POSITIVE,
            hi: p.phi_max(),
        });
    }
    Ok(psi_derivs(p, phi, s).0)
}

/// The forcing `Lambda = -((2n-2+phi^2)/(2 a phi^2)) lambda_bar^2 < 0`.
#[allow(non_snake_case)]
pub fn eval_Lambda(p: &BarrierParams, phi: f64, s: Side) -> Result<f64> {
    let phi = check_phi(p, phi)?;
    if phi == 0.0 {
        return Err(Error::OutOfDomain {
            at: 0.0,
            lo: f64::MIN_POSITIVE,
            hi: p.phi_max(),
        });
    }
    let lb = lambda_bar_derivs(p, phi, s).0;
    Ok(-((2.0 * p.n as f64 - 2.0 + phi * phi) / (2.0 * p.a * phi * phi)) * lb * lb)
}

/// Inputs of the constant selection with their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierInputs {
    pub n: u32,
    pub a: f64,
    pub c: f64,
    pub eps_tilde: f64,
    pub r1: f64,
    pub tau0_hint: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    pub psi_c1: f64,
    pub kappa: f64,
    /// `R2 / R1`.
    pub r2_ratio: f64,
    /// Residual margin required by certification.
    pub margin: f64,
}

impl Default for BarrierInputs {
    fn default() -> Self {
        BarrierInputs {
            n: 2,
            a: 1.0,
            c: 1.0 + 2f64.ln(),
            eps_tilde: 0.1,
            r1: 40.0,
            tau0_hint: 20.0,
            b_plus: -3.0,
            b_minus: 0.5,
            psi_c1: 1.0,
            kappa: 1.5,
            r2_ratio: 0.1,
            margin: 1e-6,
        }
    }
}

/// Barrier constants together with the profiles they are built from.
#[derive(Debug, Clone)]
pub struct BarrierFamily {
    pub params: BarrierParams,
    pub bowl: Arc<SolitonProfile>,
    /// `Q` depends on `F` only through `F_z / A^2 = P_w(a z)`, so both
    /// signs share one tabulation.
    pub q: Arc<QProfile>,
}

const PROFILE_TOL: f64 = 1e-8;

fn bowl_for(n: u32, a: f64, r1: f64) -> Result<SolitonProfile> {
    let w_max = (1.25 * a * r1).max(200.0).ceil();
    solve_bowl_profile(n, w_max, PROFILE_TOL)
}

impl BarrierFamily {
    /// Rebuild the profiles for a given constant set.
    pub fn from_params(params: BarrierParams) -> Result<Self> {
        params.validate()?;
        let bowl = Arc::new(bowl_for(params.n, params.a, params.R1)?);
        let q = Arc::new(solve_q(
            params.n,
            params.a,
            params.A,
            bowl.clone(),
            1.2 * params.R1,
            PROFILE_TOL,
        )?);
        Ok(BarrierFamily { params, bowl, q })
    }

    /// `(F, F_z, F_zz)` for one sign.
    pub fn f_derivs(&self, z: f64, s: Side) -> Result<(f64, f64, f64)> {
        let p = &self.params;
        let aa = p.big_a_of(s);
        let (pv, pw, pww) = self.bowl.eval2(p.a * z.abs())?;
        let sg = z.signum();
        Ok((aa * aa / p.a * pv, sg * aa * aa * pw, aa * aa * p.a * pww))
    }

    /// Interior barrier and its derivatives in `(tau, z)`.
    pub fn interior_derivs(&self, z: f64, tau: f64, s: Side) -> Result<Derivs> {
        let p = &self.params;
        if z.abs() > 1.2 * p.R1 {
            return Err(Error::OutOfDomain {
                at: z,
                lo: -1.2 * p.R1,
                hi: 1.2 * p.R1,
            });
        }
        let aa = p.big_a_of(s);
        let (b, d, e) = p.bde(s);
        let (f, fz, fzz) = self.f_derivs(z, s)?;
        let (q, qz, qzz) = self.q.eval2(z)?;
        let qz = z.signum() * qz;
        let et = (-tau).exp();
        let e2 = et * et;
        Ok(Derivs {
            value: -aa + et * f + et * (b * tau + e) + tau * e2 * d * q,
            d_tau: -et * f + et * (b - b * tau - e) + (1.0 - 2.0 * tau) * e2 * d * q,
            d_x: et * fz + tau * e2 * d * qz,
            d_xx: et * fzz + tau * e2 * d * qzz,
        })
    }

    pub fn exterior_derivs(&self, phi: f64, tau: f64, s: Side) -> Result<Derivs> {
        let p = &self.params;
        let phi = check_phi(p, phi)?;
        let (lb, lbp, lbpp) = lambda_bar_derivs(p, phi, s);
        let (psi, psip, psipp) = psi_derivs(p, phi, s);
        let be = p.b_of(s) * (-tau).exp();
        Ok(Derivs {
            value: lb + be * psi,
            d_tau: -be * psi,
            d_x: lbp + be * psip,
            d_xx: lbpp + be * psipp,
        })
    }

    pub fn interior_residual(&self, z: f64, tau: f64, s: Side) -> Result<f64> {
        let l = self.interior_derivs(z, tau, s)?;
        Ok(residual_tz(self.params.n, self.params.a, z.abs(), tau, l))
    }

    pub fn exterior_residual(&self, phi: f64, tau: f64, s: Side) -> Result<f64> {
        let l = self.exterior_derivs(phi, tau, s)?;
        Ok(residual_fphi(
            self.params.n,
            self.params.a,
            phi.abs(),
            tau,
            l,
        ))
    }

    /// Patched barrier value; 0 at the cap.
    pub fn patched(&self, phi: f64, tau: f64, s: Side) -> Result<f64> {
        eval_patched(self, phi, tau, s)
    }
}

pub fn eval_interior(fam: &BarrierFamily, z: f64, tau: f64, s: Side) -> Result<f64> {
    if z.abs() > fam.params.R1 * (1.0 + 1e-12) {
        return Err(Error::OutOfDomain {
            at: z,
            lo: -fam.params.R1,
            hi: fam.params.R1,
        });
    }
    Ok(fam.interior_derivs(z, tau, s)?.value)
}

pub fn eval_exterior(fam: &BarrierFamily, phi: f64, tau: f64, s: Side) -> Result<f64> {
    let p = &fam.params;
    let phi = phi.abs();
    let lo = p.R2 * (-0.5 * tau).exp();
    if phi < lo * (1.0 - 1e-12) || phi > p.phi_max() {
        return Err(Error::OutOfDomain {
            at: phi,
            lo,
            hi: p.phi_max(),
        });
    }
    if phi == p.phi_max() {
        return Ok(0.0);
    }
    Ok(fam.exterior_derivs(phi, tau, s)?.value)
}

/// `inf` (plus) or `sup` (minus) patch of the two pieces.
pub fn eval_patched(fam: &BarrierFamily, phi: f64, tau: f64, s: Side) -> Result<f64> {
    let p = &fam.params;
    if tau < p.tau0 {
        return Err(Error::param(
            "tau",
            tau,
            format!("patched barriers start at tau0 = {}", p.tau0),
        ));
    }
    let phi = phi.abs();
    if phi > p.phi_max() {
        return Err(Error::OutOfDomain {
            at: phi,
            lo: 0.0,
            hi: p.phi_max(),
        });
    }
    let z = phi * (0.5 * tau).exp();
    if z <= p.R2 {
        return eval_interior(fam, z, tau, s);
    }
    if z > p.R1 {
        return eval_exterior(fam, phi, tau, s);
    }
    let i = eval_interior(fam, z, tau, s)?;
    let e = eval_exterior(fam, phi, tau, s)?;
    Ok(match s {
        Side::Plus => i.min(e),
        Side::Minus => i.max(e),
    })
}

/// Sign-oriented patch difference: `lambda+_int - lambda+_ext` or
/// `lambda-_ext - lambda-_int`, scaled by `e^tau`.
fn patch_difference(fam: &BarrierFamily, z: f64, tau: f64, s: Side) -> Result<f64> {
    let phi = z * (-0.5 * tau).exp();
    let i = fam.interior_derivs(z, tau, s)?.value;
    let e = fam.exterior_derivs(phi, tau, s)?.value;
    Ok(tau.exp()
        * match s {
            Side::Plus => i - e,
            Side::Minus => e - i,
        })
}

/// Sign changes of a sampled function; exact zeros do not count twice.
fn sign_changes(v: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &x in v {
        if x == 0.0 {
            continue;
        }
        if last != 0.0 && x.signum() != last.signum() {
            count += 1;
        }
        last = x;
    }
    count
}

/// Crossing of the patch difference in `(R2, R1)` by bisection.
pub fn patch_crossing(fam: &BarrierFamily, tau: f64, s: Side) -> Result<f64> {
    let p = &fam.params;
    let (mut lo, mut hi) = (p.R2, p.R1);
    let (flo, fhi) = (
        patch_difference(fam, lo, tau, s)?,
        patch_difference(fam, hi, tau, s)?,
    );
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::Infeasible(format!(
            "{} patch difference does not go from negative to positive on (R2, R1) at tau = {tau}: {flo:e} .. {fhi:e}",
            s.label()
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if patch_difference(fam, mid, tau, s)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sup over `|z| <= R1` of `|F|`, `|z F_z|` and the curvature term of the
/// interior expansion, for both signs.
pub fn compute_c_bar(bowl: &SolitonProfile, a: f64, big_as: [f64; 2], r1: f64) -> Result<f64> {
    let mut c = 0.0f64;
    let m = 20000;
    for &aa in &big_as {
        for k in 0..=m {
            let z = r1 * k as f64 / m as f64;
            let (pv, pw, pww) = bowl.eval2(a * z)?;
            let (f, fz, fzz) = (aa * aa / a * pv, aa * aa * pw, aa * aa * a * pww);
            let r = (aa.powi(-5) * fz * fz * fzz / (1.0 + fz * fz / aa.powi(4)).powi(2)).abs();
            c = c.max(f.abs()).max((z * fz).abs()).max(r);
        }
    }
    Ok(c)
}

/// Select every constant, tune `E` and `tau0`, and certify the result.
pub fn derive_constants(inp: &BarrierInputs) -> Result<BarrierParams> {
    Ok(derive_family(inp)?.params)
}

pub fn derive_family(inp: &BarrierInputs) -> Result<BarrierFamily> {
    let (n, a, c) = (inp.n, inp.a, inp.c);
    if n < 2 {
        return Err(Error::InvalidDimension {
            n,
            reason: "barriers need n >= 2",
        });
    }
    if !(a > 0.0) {
        return Err(Error::param("a", a, "need a > 0"));
    }
    if !(inp.eps_tilde > 0.0) {
        return Err(Error::param(
            "eps_tilde",
            inp.eps_tilde,
            "need eps_tilde > 0",
        ));
    }
    let l = a * (2.0 * n as f64 - 2.0).ln();
    if !(c > l + inp.eps_tilde) {
        return Err(Error::Infeasible(format!(
            "c = {c} must exceed a log(2n-2) + eps_tilde = {}",
            l + inp.eps_tilde
        )));
    }
    if !(inp.r1 > 0.0) {
        return Err(Error::param("R1", inp.r1, "need R1 > 0"));
    }
    if !(inp.b_plus < 0.0) || !(inp.b_minus > 0.0) {
        return Err(Error::Infeasible("need b_plus < 0 < b_minus".into()));
    }
    let nm1 = n as f64 - 1.0;
    let ratio_bound = 2.0 * nm1 * nm1 / (a * a * inp.r1 * inp.r1);
    let c_bar_ratio = ratio_bound * inp.r1.powi(3);
    if !(100.0 * c_bar_ratio * inp.r1.powi(-4) < a) {
        return Err(Error::Infeasible(format!(
            "R1 = {} too small for the ratio bound (100 C R1^-4 = {} >= a)",
            inp.r1,
            100.0 * c_bar_ratio * inp.r1.powi(-4)
        )));
    }
    let (c_plus, c_minus) = (c + inp.eps_tilde, c - inp.eps_tilde);
    let big_a = 1.0 / (c - l);
    let (a_plus, a_minus) = (1.0 / (c_plus - l), 1.0 / (c_minus - l));
    let b_plus_cap = -inp.b_plus / (2.0 * a) * a_plus * a_plus;
    let b_minus_cap = -inp.b_minus / (2.0 * a) * a_minus * a_minus;
    let bowl = Arc::new(bowl_for(n, a, inp.r1)?);
    let c_bar = compute_c_bar(&bowl, a, [a_plus, a_minus], inp.r1)?;
    let d_plus = inp.kappa * (1.0 + 2.0 * a * a_plus + 4.0 * c_bar) * b_plus_cap.abs();
    let d_minus = -inp.kappa * (1.0 + 2.0 * a * a_minus + 4.0 * c_bar) * b_minus_cap.abs();
    let r2 = inp.r2_ratio * inp.r1;
    let q = Arc::new(solve_q(
        n,
        a,
        big_a,
        bowl.clone(),
        1.2 * inp.r1,
        PROFILE_TOL,
    )?);
    let params = BarrierParams {
        n,
        a,
        c,
        eps_tilde: inp.eps_tilde,
        c_plus,
        c_minus,
        A: big_a,
        A_plus: a_plus,
        A_minus: a_minus,
        B_plus: b_plus_cap,
        B_minus: b_minus_cap,
        D_plus: d_plus,
        D_minus: d_minus,
        E_plus: 0.0,
        E_minus: 0.0,
        b_plus: inp.b_plus,
        b_minus: inp.b_minus,
        R1: inp.r1,
        R2: r2,
        tau0: inp.tau0_hint,
        psi_C1: inp.psi_c1,
        d: 1.0 / a + inp.psi_c1 * (2.0 * n as f64 - 2.0) + (2.0 * n as f64 - 2.0).ln() / (2.0 * a),
        c_bar,
        ratio_bound,
        kappa: inp.kappa,
        z_cross: 0.5 * (r2 + inp.r1),
    };
    params.validate()?;
    let mut fam = BarrierFamily { params, bowl, q };
    let mut last_err = None;
    for k in 0..=20 {
        let tau0 = inp.tau0_hint + k as f64;
        fam.params.tau0 = tau0;
        tune_e(&mut fam)?;
        let report = certify(
            &fam,
            &CertifyOptions {
                margin: inp.margin,
                ..Default::default()
            },
        )?;
        if report.all_pass() {
            return Ok(fam);
        }
        last_err = Some(report.first_failure());
    }
    Err(Error::Infeasible(format!(
        "no tau0 in [{}, {}] passes certification; last failure: {}",
        inp.tau0_hint,
        inp.tau0_hint + 20.0,
        last_err.flatten().unwrap_or_default()
    )))
}

/// Place the patch crossings at `z_cross` at `tau0`. The interior barrier
/// is affine in `E` with slope `e^-tau`, so this is a closed form.
fn tune_e(fam: &mut BarrierFamily) -> Result<()> {
    let tau0 = fam.params.tau0;
    let z = fam.params.z_cross;
    fam.params.E_plus = 0.0;
    fam.params.E_minus = 0.0;
    let dp = patch_difference(fam, z, tau0, Side::Plus)?;
    let dm = patch_difference(fam, z, tau0, Side::Minus)?;
    fam.params.E_plus = -dp;
    fam.params.E_minus = dm;
    for s in [Side::Plus, Side::Minus] {
        let zc = patch_crossing(fam, tau0, s)?;
        let (lo, hi) = (fam.params.R2, fam.params.R1);
        let q = 0.25 * (hi - lo);
        if !(zc > lo + q && zc < hi - q) {
            return Err(Error::Infeasible(format!(
                "{} crossing at z = {zc} outside the middle half of (R2, R1)",
                s.label()
            )));
        }
    }
    Ok(())
}

/// Grid sizes and margin for certification sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub n_space: usize,
    pub taus: Vec<f64>,
    pub margin: f64,
    /// Corner neighborhood radius excluded from patched-barrier checks.
    pub corner_radius: f64,
    /// Distance from the cap at which exterior grids stop.
    pub cap_clip: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            n_space: 2001,
            taus: vec![],
            margin: 1e-6,
            corner_radius: 1e-3,
            cap_clip: 1e-4,
        }
    }
}

/// One row of a certification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertRow {
    pub region: String,
    pub tau: f64,
    pub coordinate: f64,
    pub residual: f64,
    pub pass: bool,
}

/// Worst case per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: String,
    pub points: usize,
    pub failures: usize,
    /// Smallest signed margin (positive is good).
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub taus: Vec<f64>,
    pub rows: Vec<CertRow>,
    pub summary: Vec<RegionSummary>,
}

impl CertificationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    fn first_failure(&self) -> Option<String> {
        self.rows.iter().find(|r| !r.pass).map(|r| {
            format!(
                "{} at tau = {}, coordinate {}: {:e}",
                r.region, r.tau, r.coordinate, r.residual
            )
        })
    }

    pub fn region(&self, name: &str) -> Option<&RegionSummary> {
        self.summary.iter().find(|s| s.region == name)
    }

    /// Columns: region, tau, coordinate, residual, pass.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["region", "tau", "coordinate", "residual", "pass"])?;
        for r in &self.rows {
            wr.write_record([
                r.region.clone(),
                format!("{:.16e}", r.tau),
                format!("{:.16e}", r.coordinate),
                format!("{:.16e}", r.residual),
                r.pass.to_string(),
            ])?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })
    }
}

/// Exterior sample points: geometric near the tip scale and near the cap,
/// uniform in between.
fn exterior_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let k = m / 3;
    let mid_lo = (10.0 * lo).min(0.1);
    let span = hi - lo;
    let mut g: Vec<f64> = (0..k)
        .map(|i| lo * (mid_lo / lo).powf(i as f64 / k as f64))
        .collect();
    g.extend((0..k).map(|i| mid_lo + (hi - mid_lo) * i as f64 / k as f64));
    let rest = m - 2 * k;
    let d_hi = (0.1f64).min(0.5 * span);
    g.extend((0..rest).map(|i| {
        let t = i as f64 / (rest - 1) as f64;
        hi - d_hi * (1e-3f64).powf(t)
    }));
    g.push(hi);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Residual-sign, ordering, crossing and corner-slope sweeps.
pub fn certify(fam: &BarrierFamily, opt: &CertifyOptions) -> Result<CertificationReport> {
    let p = &fam.params;
    let taus: Vec<f64> = if opt.taus.is_empty() {
        (0..6).map(|k| p.tau0 + k as f64).collect()
    } else {
        opt.taus.clone()
    };
    let mut rows = Vec::new();
    let m = opt.n_space.max(3);
    let cap = p.phi_max() - opt.cap_clip;
    let push = |rows: &mut Vec<CertRow>, region: &str, tau: f64, x: f64, r: f64, margin: f64| {
        rows.push(CertRow {
            region: region.to_string(),
            tau,
            coordinate: x,
            residual: r,
            pass: r.is_finite() && margin >= opt.margin,
        });
    };
    for &tau in &taus {
        let et = tau.exp();
        let sh = (-0.5 * tau).exp();
        for k in 0..m {
            let z = p.R1 * k as f64 / (m - 1) as f64;
            let rp = et * fam.interior_residual(z, tau, Side::Plus)?;
            let rm = et * fam.interior_residual(z, tau, Side::Minus)?;
            push(&mut rows, "interior_plus", tau, z, rp, rp);
            push(&mut rows, "interior_minus", tau, z, rm, -rm);
            let (ip, im) = (
                fam.interior_derivs(z, tau, Side::Plus)?.value,
                fam.interior_derivs(z, tau, Side::Minus)?.value,
            );
            push(
                &mut rows,
                "order_interior",
                tau,
                z,
                et * (ip - im),
                et * (ip - im),
            );
        }
        let lo = p.R2 * sh;
        for phi in exterior_grid(lo, cap, m) {
            let rp = et * fam.exterior_residual(phi, tau, Side::Plus)?;
            let rm = et * fam.exterior_residual(phi, tau, Side::Minus)?;
            push(&mut rows, "exterior_plus", tau, phi, rp, rp);
            push(&mut rows, "exterior_minus", tau, phi, rm, -rm);
            let (ep, em) = (
                fam.exterior_derivs(phi, tau, Side::Plus)?.value,
                fam.exterior_derivs(phi, tau, Side::Minus)?.value,
            );
            push(
                &mut rows,
                "order_exterior",
                tau,
                phi,
                et * (ep - em),
                et * (ep - em),
            );
            let z = phi / sh;
            if z <= p.R1 {
                let ip = fam.interior_derivs(z, tau, Side::Plus)?.value;
                let im = fam.interior_derivs(z, tau, Side::Minus)?.value;
                push(
                    &mut rows,
                    "order_cross",
                    tau,
                    phi,
                    et * (ip - em),
                    et * (ip - em),
                );
                push(
                    &mut rows,
                    "order_cross",
                    tau,
                    phi,
                    et * (ep - im),
                    et * (ep - im),
                );
            }
        }
        // Global ordering of the patched barriers.
        let mut g: Vec<f64> = (0..m)
            .map(|k| p.R1 * sh * 1.5 * k as f64 / (m - 1) as f64)
            .collect();
        g.extend(exterior_grid(1.5 * p.R1 * sh, cap, m));
        for phi in g {
            let d = et
                * (eval_patched(fam, phi, tau, Side::Plus)?
                    - eval_patched(fam, phi, tau, Side::Minus)?);
            push(&mut rows, "order_global", tau, phi, d, d);
        }
        // Unique negative-to-positive crossing and corner slopes.
        for s in [Side::Plus, Side::Minus] {
            let zs: Vec<f64> = (1..m - 1)
                .map(|k| p.R2 + (p.R1 - p.R2) * k as f64 / (m - 1) as f64)
                .collect();
            let diffs = zs
                .iter()
                .map(|&z| patch_difference(fam, z, tau, s))
                .collect::<Result<Vec<_>>>()?;
            let changes = sign_changes(&diffs);
            let ok = changes == 1 && diffs[0] < 0.0 && *diffs.last().unwrap() > 0.0;
            let region = format!("crossing_{}", s.label());
            push(
                &mut rows,
                &region,
                tau,
                changes as f64,
                changes as f64,
                if ok { 1.0 } else { -1.0 },
            );
            if ok {
                let zc = patch_crossing(fam, tau, s)?;
                let di = fam.interior_derivs(zc, tau, s)?.d_x;
                let de = fam.exterior_derivs(zc * sh, tau, s)?.d_x * sh;
                let jump = et
                    * match s {
                        Side::Plus => di - de,
                        Side::Minus => de - di,
                    };
                push(
                    &mut rows,
                    &format!("corner_{}", s.label()),
                    tau,
                    zc,
                    jump,
                    jump,
                );
            }
        }
    }
    let mut summary: Vec<RegionSummary> = Vec::new();
    for r in &rows {
        let signed = match r.region.as_str() {
            "interior_minus" | "exterior_minus" => -r.residual,
            "crossing_plus" | "crossing_minus" => {
                if r.pass {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => r.residual,
        };
        match summary.iter_mut().find(|s| s.region == r.region) {
            Some(s) => {
                s.points += 1;
                s.failures += usize::from(!r.pass);
                s.worst_margin = s.worst_margin.min(signed);
            }
            None => summary.push(RegionSummary {
                region: r.region.clone(),
                points: 1,
                failures: usize::from(!r.pass),
                worst_margin: signed,
            }),
        }
    }
    Ok(CertificationReport {
        taus,
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BarrierParams {
        let n = 2;
        let a = 1.0;
        let c = 1.0 + 2f64.ln();
        let l = 2f64.ln();
        let (cp, cm) = (c + 0.1, c - 0.1);
        let (ap, am) = (1.0 / (cp - l), 1.0 / (cm - l));
        BarrierParams {
            n,
            a,
            c,
            eps_tilde: 0.1,
            c_plus: cp,
            c_minus: cm,
            A: 1.0,
            A_plus: ap,
            A_minus: am,
            B_plus: 1.5 * ap * ap,
            B_minus: -0.25 * am * am,
            D_plus: 1e4,
            D_minus: -1e4,
            E_plus: 0.0,
            E_minus: 0.0,
            b_plus: -3.0,
            b_minus: 0.5,
            R1: 40.0,
            R2: 4.0,
            tau0: 20.0,
            psi_C1: 1.0,
            d: 1.0 + 2.0 + 0.5 * l,
            c_bar: 100.0,
            ratio_bound: 1.25e-3,
            kappa: 1.5,
            z_cross: 22.0,
        }
    }

    #[test]
    fn hand_built_params_validate() {
        params().validate().unwrap();
    }

    #[test]
    fn lambda_bar_values() {
        let p = params();
        let mut q = p.clone();
        q.c_minus = 1.0 + 2f64.ln();
        assert!((eval_lambda_bar(&q, 0.0, Side::Minus).unwrap() + 1.0).abs() < 1e-15);
        let mut r = p.clone();
        r.c_plus = 1.0 + 2f64.ln();
        let v = eval_lambda_bar(&r, 1.0, Side::Plus).unwrap();
        assert!((v + 1.0 / (1.0 + 2f64.ln())).abs() < 1e-15);
        let near = eval_lambda_bar(&p, p.phi_max() * (1.0 - 1e-15), Side::Plus).unwrap();
        assert!(near < 0.0 && near > -0.05);
        assert!(eval_lambda_bar(&p, 1.5, Side::Plus).is_err());
    }

    #[test]
    fn big_lambda_identity() {
        let p = params();
        for &phi in &[0.01, 0.5, 1.0, 1.3] {
            let big = eval_Lambda(&p, phi, Side::Plus).unwrap();
            let lb = eval_lambda_bar(&p, phi, Side::Plus).unwrap();
            let back = big * (-2.0 * p.a * phi * phi / (2.0 + phi * phi));
            assert!(big < 0.0);
            assert!((back - lb * lb).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_has_positive_tz_residual() {
        let l = Derivs {
            value: -1.25,
            d_tau: 0.0,
            d_x: 0.0,
            d_xx: 0.0,
        };
        assert!((residual_tz(2, 1.0, 0.7, 3.0, l) - 1.5625).abs() < 1e-15);
    }

    #[test]
    fn psi_at_zero_is_rejected() {
        assert!(eval_psi(&params(), 0.0, Side::Plus).is_err());
    }

    #[test]
    fn sign_changes_skip_zeros() {
        assert_eq!(sign_changes(&[-1.0, 0.0, 1.0, 2.0]), 1);
        assert_eq!(sign_changes(&[-1.0, 1.0, -1.0]), 2);
    }
}
