//! Bowl-soliton profile `P` and the auxiliary barrier profile `Q`.
//!
//! `P` solves `P_ww/(1+P_w^2) + (n-1) P_w / w = 1`, `P(0) = P_w(0) = 0`.
//! Near the regular singular point the series
//! `P = w^2/(2n) + c4 w^4 + O(w^6)` with `c4 = 1/(4 n^3 (n+2))` starts the
//! integration. Second derivatives never come from differencing: the ODE
//! gives `P_ww = (1 - (n-1) P_w / w)(1 + P_w^2)` exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dopri5, fd_weights, fit_line, stencil, Hermite, LineFit};

/// Default residual tolerance for profile tabulation.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default hand-off radius from the series to the integrator.
pub const DEFAULT_SERIES_RADIUS: f64 = 1e-3;
const GEOMETRIC_NODES: usize = 2000;
const UNIFORM_SPACING: f64 = 0.005;
// Finer spacing where the higher derivatives are still large.
const FINE_SPACING: f64 = 0.001;
const FINE_END: f64 = 4.0;

/// `w^4` coefficient of the small-argument series of `P`.
pub fn bowl_c4(n: u32) -> f64 {
    let n = n as f64;
    1.0 / (4.0 * n.powi(3) * (n + 2.0))
}

/// `z^4` coefficient of the small-argument series of `Q`.
pub fn q_c4(n: u32, a: f64) -> f64 {
    let n = n as f64;
    -3.0 * a * a / (4.0 * n.powi(3) * (n + 2.0))
}

fn bowl_pww(n: u32, w: f64, pw: f64) -> f64 {
    if w == 0.0 {
        1.0 / n as f64
    } else {
        (1.0 - (n as f64 - 1.0) * pw / w) * (1.0 + pw * pw)
    }
}

/// Value and first derivative of a tabulated profile at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileValue {
    pub value: f64,
    pub deriv: f64,
}

/// Node grid dense near zero (geometric up to 1) and piecewise uniform beyond.
fn profile_grid(r0: f64, x_max: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    let top = x_max.min(1.0);
    if r0 < top {
        let ratio = (top / r0).powf(1.0 / GEOMETRIC_NODES as f64);
        let mut x = r0;
        while x < top * (1.0 - 1e-12) {
            g.push(x);
            x *= ratio;
        }
    }
    g.push(top);
    for &(lo, hi, step) in &[
        (1.0, FINE_END, FINE_SPACING),
        (FINE_END, f64::INFINITY, UNIFORM_SPACING),
    ] {
        let hi = x_max.min(hi);
        if hi <= lo {
            break;
        }
        let m = ((hi - lo) / step).ceil() as usize;
        let h = (hi - lo) / m as f64;
        g.extend((1..=m).map(|i| if i == m { hi } else { lo + i as f64 * h }));
    }
    g
}

/// Derivative of tabulated data at node `i` by 5-point Fornberg weights.
fn nodal_derivative(x: &[f64], f: &[f64], i: usize) -> f64 {
    let s = stencil(i, 5, x.len());
    let w = fd_weights(x[i], &x[s.clone()], 1);
    w.iter().zip(&f[s]).map(|(w, v)| w * v).sum()
}

/// Tabulated bowl profile for one dimension `n`.
#[derive(Debug, Clone)]
pub struct SolitonProfile {
    pub n: u32,
    pub w: Vec<f64>,
    pub p: Vec<f64>,
    pub p_w: Vec<f64>,
    pub series_radius: f64,
    /// Largest ODE residual measured on the nodes at construction.
    pub residual_max: f64,
    value: Hermite,
    slope: Hermite,
}

impl SolitonProfile {
    fn assemble(n: u32, w: Vec<f64>, p: Vec<f64>, p_w: Vec<f64>, series_radius: f64) -> Self {
        let pww: Vec<f64> = w
            .iter()
            .zip(&p_w)
            .map(|(&w, &d)| bowl_pww(n, w, d))
            .collect();
        let value = Hermite::new(w.clone(), p.clone(), p_w.clone());
        let slope = Hermite::new(w.clone(), p_w.clone(), pww);
        let mut prof = SolitonProfile {
            n,
            w,
            p,
            p_w,
            series_radius,
            residual_max: 0.0,
            value,
            slope,
        };
        prof.residual_max = prof.node_residuals().into_iter().fold(0.0, f64::max);
        prof
    }

    pub fn w_max(&self) -> f64 {
        *self.w.last().unwrap()
    }

    /// Interpolated `(P, P_w)`; the derivative is interpolated from the
    /// stored `P_w` with the ODE-given `P_ww` as slope data.
    pub fn eval(&self, w: f64) -> Result<ProfileValue> {
        if !(0.0..=self.w_max()).contains(&w) {
            return Err(Error::OutOfDomain {
                at: w,
                lo: 0.0,
                hi: self.w_max(),
            });
        }
        let (value, _) = self.value.eval(w);
        let (deriv, _) = self.slope.eval(w);
        Ok(ProfileValue { value, deriv })
    }

    /// `(P, P_w, P_ww)` at `|w|`, with `P_ww` from the ODE identity.
    pub fn eval2(&self, w: f64) -> Result<(f64, f64, f64)> {
        let w = w.abs();
        let v = self.eval(w)?;
        Ok((v.value, v.deriv, bowl_pww(self.n, w, v.deriv)))
    }

    /// Residual `P_ww/(1+P_w^2) + (n-1)P_w/w - 1` at every node `w > 0`,
    /// with `P_ww` from a 5-point difference of the stored `P_w`.
    pub fn node_residuals(&self) -> Vec<f64> {
        let nm1 = self.n as f64 - 1.0;
        (1..self.w.len())
            .map(|i| {
                let pww = nodal_derivative(&self.w, &self.p_w, i);
                let pw = self.p_w[i];
                pww / (1.0 + pw * pw) + nm1 * pw / self.w[i] - 1.0
            })
            .collect()
    }

    /// Residual at an arbitrary point from the interpolant, differencing
    /// the interpolated derivative with step `h`.
    pub fn residual_at(&self, w: f64, h: f64) -> Result<f64> {
        let lo = (w - h).max(0.0);
        let hi = (w + h).min(self.w_max());
        let pww = (self.eval(hi)?.deriv - self.eval(lo)?.deriv) / (hi - lo);
        let pw = self.eval(w)?.deriv;
        Ok(pww / (1.0 + pw * pw) + (self.n as f64 - 1.0) * pw / w - 1.0)
    }

    /// Write `w, P, P_w` with 17 significant digits.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        writeln!(
            out,
            "# bowl profile n={} series_radius={:e} (w, P, P_w dimensionless)",
            self.n, self.series_radius
        )
        .map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["w", "P", "P_w"])?;
        for i in 0..self.w.len() {
            wr.write_record([
                format!("{:.16e}", self.w[i]),
                format!("{:.16e}", self.p[i]),
                format!("{:.16e}", self.p_w[i]),
            ])?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut input = input;
        let mut first = String::new();
        input.read_line(&mut first).map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        let field = |key: &str| -> Option<String> {
            first
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key).map(str::to_string))
        };
        let n: u32 = field("n=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config("profile csv lacks `n=` header".into()))?;
        let series_radius: f64 = field("series_radius=")
            .and_then(|s| s.parse().ok())
            .unwrap_or(DEFAULT_SERIES_RADIUS);
        let mut rd = csv::Reader::from_reader(input);
        let (mut w, mut p, mut p_w) = (vec![], vec![], vec![]);
        for rec in rd.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad number in profile row {rec:?}")))
            };
            w.push(num(0)?);
            p.push(num(1)?);
            p_w.push(num(2)?);
        }
        if w.len() < 2 {
            return Err(Error::Config("profile csv has fewer than two rows".into()));
        }
        Ok(Self::assemble(n, w, p, p_w, series_radius))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, |f| self.write_csv(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Solve the bowl profile ODE on `[0, w_max]`.
pub fn solve_bowl_profile(n: u32, w_max: f64, tol: f64) -> Result<SolitonProfile> {
    solve_bowl_profile_with(n, w_max, tol, DEFAULT_SERIES_RADIUS)
}

pub fn solve_bowl_profile_with(
    n: u32,
    w_max: f64,
    tol: f64,
    series_radius: f64,
) -> Result<SolitonProfile> {
    if n < 1 {
        return Err(Error::InvalidDimension {
            n,
            reason: "need n >= 1",
        });
    }
    if !(w_max >= 1.0) || !w_max.is_finite() {
        return Err(Error::param("w_max", w_max, "need w_max >= 1"));
    }
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(Error::param("tol", tol, "need tol in (0, 1e-3]"));
    }
    if !(series_radius > 0.0 && series_radius <= 1e-2) {
        return Err(Error::param(
            "series_radius",
            series_radius,
            "need 0 < w0 <= 1e-2",
        ));
    }
    if n == 1 && w_max >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Integrator {
            at: std::f64::consts::FRAC_PI_2,
            reason: "the n = 1 profile blows up at w = pi/2; reduce w_max".into(),
        });
    }
    let nf = n as f64;
    let c4 = bowl_c4(n);
    let w0 = series_radius;
    let grid = profile_grid(w0, w_max);
    let y0 = [
        w0 * w0 / (2.0 * nf) + c4 * w0.powi(4),
        w0 / nf + 4.0 * c4 * w0.powi(3),
    ];
    let rtol = (tol * 1e-4).clamp(1e-13, 1e-9);
    let rhs = |w: f64, y: &[f64; 2]| [y[1], bowl_pww(n, w, y[1])];
    let states = dopri5(rhs, w0, y0, &grid[1..], rtol, rtol * 1e-2)?;
    let mut p = vec![0.0];
    let mut p_w = vec![0.0];
    for s in &states {
        p.push(s[0]);
        p_w.push(s[1]);
    }
    let prof = SolitonProfile::assemble(n, grid, p, p_w, w0);
    if prof.residual_max > tol {
        return Err(Error::Integrator {
            at: w_max,
            reason: format!(
                "node residual {:e} exceeds tol {:e}",
                prof.residual_max, tol
            ),
        });
    }
    Ok(prof)
}

/// Fitted asymptotics of a bowl profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowlAsymptotics {
    pub small_coeff: f64,
    pub large_const: f64,
    pub tail_exponent: f64,
    pub tail_fit: LineFit,
}

/// Estimate the small-argument coefficient of `w^2/(2n)`, the constant in
/// `P - w^2/(2(n-1)) + log w -> const`, and the decay exponent of the
/// remainder.
pub fn check_bowl_asymptotics(profile: &SolitonProfile) -> Result<BowlAsymptotics> {
    let n = profile.n;
    if n < 2 {
        return Err(Error::InvalidDimension {
            n,
            reason: "the cylindrical tail w^2/(2(n-1)) needs n >= 2",
        });
    }
    if profile.w_max() < 50.0 {
        return Err(Error::DomainTooShort {
            need: 50.0,
            have: profile.w_max(),
        });
    }
    let nf = n as f64;
    let w0 = profile.series_radius;
    let (mut xs, mut ys) = (vec![], vec![]);
    for (i, &w) in profile.w.iter().enumerate() {
        if w >= w0 && w <= 10.0 * w0 {
            xs.push(w * w);
            ys.push(2.0 * nf * profile.p[i] / (w * w));
        }
    }
    let small = fit_line(&xs, &ys)?;

    // The tail is read off g'(w) = P_w - w/(n-1) + 1/w, whose log-log slope
    // is the remainder exponent minus one; this avoids needing the
    // constant before fitting.
    let w_hi = profile.w_max().min(200.0);
    let (mut lx, mut ly) = (vec![], vec![]);
    for (i, &w) in profile.w.iter().enumerate() {
        if (20.0..=w_hi).contains(&w) {
            let gp = profile.p_w[i] - w / (nf - 1.0) + 1.0 / w;
            if gp != 0.0 {
                lx.push(w.ln());
                ly.push(gp.abs().ln());
            }
        }
    }
    if lx.len() < 8 {
        return Err(Error::Fit("fewer than 8 tail samples".into()));
    }
    let tail = fit_line(&lx, &ly)?;
    let p_exp = tail.slope + 1.0;
    let g = |w: f64, pv: f64| pv - w * w / (2.0 * (nf - 1.0)) + w.ln();
    let v = profile.eval(w_hi)?;
    let gp_end = v.deriv - w_hi / (nf - 1.0) + 1.0 / w_hi;
    let large_const = g(w_hi, v.value) - w_hi * gp_end / p_exp;
    Ok(BowlAsymptotics {
        small_coeff: small.intercept,
        large_const,
        tail_exponent: p_exp,
        tail_fit: tail,
    })
}

/// Tabulated solution of the barrier ODE
/// `-(n-1) Q_z / z - (Q_z / g)' = 1`, `g = 1 + F_z^2 / A^4 = 1 + P_w(a z)^2`.
#[derive(Debug, Clone)]
pub struct QProfile {
    pub n: u32,
    pub a: f64,
    pub big_a: f64,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub q_z: Vec<f64>,
    pub residual_max: f64,
    /// `W = Q_z / g` and its exact derivative from the ODE.
    w_interp: Hermite,
    value: Hermite,
    bowl: std::sync::Arc<SolitonProfile>,
}

impl QProfile {
    pub fn z_max(&self) -> f64 {
        *self.z.last().unwrap()
    }

    fn g_and_slope(&self, z: f64) -> (f64, f64) {
        let (_, pw, pww) = self
            .bowl
            .eval2(self.a * z)
            .expect("covered by construction");
        (1.0 + pw * pw, 2.0 * self.a * pw * pww)
    }

    pub fn eval(&self, z: f64) -> Result<ProfileValue> {
        let (q, qz, _) = self.eval2(z)?;
        Ok(ProfileValue {
            value: q,
            deriv: qz,
        })
    }

    /// `(Q, Q_z, Q_zz)` at `|z|`; `Q_zz = g' W + g W'` with `W' ` from the ODE.
    pub fn eval2(&self, z: f64) -> Result<(f64, f64, f64)> {
        let z = z.abs();
        if z > self.z_max() {
            return Err(Error::OutOfDomain {
                at: z,
                lo: 0.0,
                hi: self.z_max(),
            });
        }
        let (q, _) = self.value.eval(z);
        let (w, _) = self.w_interp.eval(z);
        let (g, gp) = self.g_and_slope(z);
        let nm1 = self.n as f64 - 1.0;
        let wp = if z == 0.0 {
            -1.0 / self.n as f64
        } else {
            -1.0 - nm1 * g * w / z
        };
        Ok((q, g * w, gp * w + g * wp))
    }

    /// Node residuals of the Q ODE with `(Q_z/g)'` by 5-point differences.
    pub fn node_residuals(&self) -> Vec<f64> {
        let nm1 = self.n as f64 - 1.0;
        let wv: Vec<f64> = self
            .z
            .iter()
            .zip(&self.q_z)
            .map(|(&z, &qz)| qz / self.g_and_slope(z).0)
            .collect();
        (1..self.z.len())
            .map(|i| {
                let wp = nodal_derivative(&self.z, &wv, i);
                -nm1 * self.q_z[i] / self.z[i] - wp - 1.0
            })
            .collect()
    }
}

/// Solve the Q ODE on `[0, z_max]` using the bowl profile for `g`.
pub fn solve_q(
    n: u32,
    a: f64,
    big_a: f64,
    bowl: std::sync::Arc<SolitonProfile>,
    z_max: f64,
    tol: f64,
) -> Result<QProfile> {
    if n < 2 {
        return Err(Error::InvalidDimension {
            n,
            reason: "the barrier ODE needs n >= 2",
        });
    }
    if bowl.n != n {
        return Err(Error::Config(format!(
            "bowl profile has n = {}, Q requested for n = {n}",
            bowl.n
        )));
    }
    if !(a > 0.0) {
        return Err(Error::param("a", a, "need a > 0"));
    }
    if !(big_a > 0.0) {
        return Err(Error::param("A", big_a, "need A > 0"));
    }
    if !(z_max > 0.0) {
        return Err(Error::param("z_max", z_max, "need z_max > 0"));
    }
    if bowl.w_max() < a * z_max {
        return Err(Error::DomainTooShort {
            need: a * z_max,
            have: bowl.w_max(),
        });
    }
    let nf = n as f64;
    let nm1 = nf - 1.0;
    let z0 = DEFAULT_SERIES_RADIUS.min(z_max / 10.0);
    let w3 = nm1 * a * a / (nf.powi(3) * (nf + 2.0));
    let q4 = q_c4(n, a);
    let grid = profile_grid(z0, z_max);
    let gfun = |z: f64| {
        let pw = bowl.eval(a * z).map(|v| v.deriv).unwrap_or(f64::NAN);
        1.0 + pw * pw
    };
    // State (Q, W) with Q' = g W and W' = -1 - (n-1) g W / z. The
    // integrating factor exp(a^2 z^2 / (2(n-1))) is never formed.
    let rhs = |z: f64, y: &[f64; 2]| {
        let g = gfun(z);
        [g * y[1], -1.0 - nm1 * g * y[1] / z]
    };
    let y0 = [
        -z0 * z0 / (2.0 * nf) + q4 * z0.powi(4),
        -z0 / nf + w3 * z0.powi(3),
    ];
    let rtol = (tol * 1e-4).clamp(1e-13, 1e-9);
    let states = dopri5(rhs, z0, y0, &grid[1..], rtol, rtol * 1e-2)?;
    let mut q = vec![0.0];
    let mut wv = vec![0.0];
    for s in &states {
        q.push(s[0]);
        wv.push(s[1]);
    }
    let gs: Vec<f64> = grid.iter().map(|&z| gfun(z)).collect();
    let q_z: Vec<f64> = wv.iter().zip(&gs).map(|(w, g)| w * g).collect();
    let wp: Vec<f64> = grid
        .iter()
        .zip(wv.iter().zip(&gs))
        .map(|(&z, (&w, &g))| {
            if z == 0.0 {
                -1.0 / nf
            } else {
                -1.0 - nm1 * g * w / z
            }
        })
        .collect();
    let mut prof = QProfile {
        n,
        a,
        big_a,
        value: Hermite::new(grid.clone(), q.clone(), q_z.clone()),
        w_interp: Hermite::new(grid.clone(), wv, wp),
        z: grid,
        q,
        q_z,
        residual_max: 0.0,
        bowl,
    };
    prof.residual_max = prof
        .node_residuals()
        .into_iter()
        .fold(0.0, |m, r| m.max(r.abs()));
    if prof.residual_max > tol {
        return Err(Error::Integrator {
            at: z_max,
            reason: format!("Q residual {:e} exceeds tol {:e}", prof.residual_max, tol),
        });
    }
    Ok(prof)
}
