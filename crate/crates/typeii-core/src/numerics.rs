//! Small numerical kernels shared by the modules: an adaptive
//! Dormand-Prince integrator, Hermite interpolation, finite-difference
//! weights, tridiagonal solves and least squares.

use crate::error::{Error, Result};

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrate `y' = f(x, y)` from `(x0, y0)` and return the state at each
/// point of `x_out` (increasing, all `>= x0`). Steps are clamped so that
/// every output point is hit exactly.
pub(crate) fn dopri5<const N: usize, F>(
    f: F,
    x0: f64,
    y0: [f64; N],
    x_out: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    const MAX_STEPS: usize = 50_000_000;
    let mut x = x0;
    let mut y = y0;
    let mut k1 = f(x, &y);
    let mut out = Vec::with_capacity(x_out.len());
    let span = x_out.last().copied().unwrap_or(x0) - x0;
    let mut h = (1e-3 * span.abs()).max(1e-12);
    let mut steps = 0usize;

    for &target in x_out {
        if target < x {
            return Err(Error::Integrator {
                at: x,
                reason: format!("output point {target} lies behind the integrator"),
            });
        }
        while x < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integrator {
                    at: x,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = x + h >= target;
            let hh = if last { target - x } else { h };
            let k2 = f(x + C2 * hh, &axpy(&y, &[(A21, &k1)], hh));
            let k3 = f(x + C3 * hh, &axpy(&y, &[(A31, &k1), (A32, &k2)], hh));
            let k4 = f(
                x + C4 * hh,
                &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], hh),
            );
            let k5 = f(
                x + C5 * hh,
                &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], hh),
            );
            let k6 = f(
                x + hh,
                &axpy(
                    &y,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                    hh,
                ),
            );
            let y_new = axpy(
                &y,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
                hh,
            );
            let k7 = f(x + hh, &y_new);
            let mut err = 0.0;
            for i in 0..N {
                let e = hh
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / N as f64).sqrt();
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h = hh * 0.1;
                if h < 1e-14 * x.abs().max(1.0) {
                    return Err(Error::Integrator {
                        at: x,
                        reason: "non-finite state".into(),
                    });
                }
                continue;
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                x = if last { target } else { x + hh };
                y = y_new;
                k1 = k7;
                if !last || fac < 1.0 {
                    h = hh * fac;
                }
            } else {
                h = hh * fac;
                if h < 1e-14 * x.abs().max(1.0) {
                    return Err(Error::Integrator {
                        at: x,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Cubic Hermite interpolant on a strictly increasing grid with a
/// Fritsch-Carlson safeguard on the node slopes.
#[derive(Debug, Clone)]
pub(crate) struct Hermite {
    x: Vec<f64>,
    f: Vec<f64>,
    d: Vec<f64>,
}

impl Hermite {
    pub(crate) fn new(x: Vec<f64>, f: Vec<f64>, mut d: Vec<f64>) -> Self {
        debug_assert!(x.len() == f.len() && f.len() == d.len() && x.len() >= 2);
        for i in 0..x.len() - 1 {
            let delta = (f[i + 1] - f[i]) / (x[i + 1] - x[i]);
            if delta == 0.0 {
                continue;
            }
            let a = d[i] / delta;
            let b = d[i + 1] / delta;
            if a < 0.0 {
                d[i] = 0.0;
            }
            if b < 0.0 {
                d[i + 1] = 0.0;
            }
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                d[i] = t * a * delta;
                d[i + 1] = t * b * delta;
            }
        }
        Hermite { x, f, d }
    }

    /// Value and derivative at `t`; callers keep `t` inside the node range.
    pub(crate) fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.x.len();
        let i = self.x.partition_point(|&xi| xi <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let (f0, f1, d0, d1) = (self.f[i], self.f[i + 1], self.d[i], self.d[i + 1]);
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * f0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * f1
            + (s3 - s2) * h * d1;
        let dv = (6.0 * s2 - 6.0 * s) / h * f0
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (-6.0 * s2 + 6.0 * s) / h * f1
            + (3.0 * s2 - 2.0 * s) * d1;
        (v, dv)
    }
}

/// Fornberg weights for the `m`-th derivative at `x0` from the stencil `xs`.
pub(crate) fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Indices of a `width`-point stencil around node `i` clipped to `0..len`.
pub(crate) fn stencil(i: usize, width: usize, len: usize) -> std::ops::Range<usize> {
    let half = width / 2;
    let start = i.saturating_sub(half).min(len.saturating_sub(width));
    start..(start + width).min(len)
}

/// Solve a tridiagonal system in place (Thomas algorithm). `sub[i]` couples
/// row i to i-1, `sup[i]` couples row i to i+1.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        cp[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * cp[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= cp[i + 1] * rhs[i + 1];
    }
}

/// Least squares `A c ~ b` for a tall matrix given by columns, solved by
/// Householder QR. Returns coefficients and the residual rms.
pub(crate) fn least_squares(cols: &[Vec<f64>], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let k = cols.len();
    let m = b.len();
    if m < k || k == 0 {
        return Err(Error::Fit(format!("{m} samples for {k} unknowns")));
    }
    // column scaling keeps the QR well balanced
    let scale: Vec<f64> = cols
        .iter()
        .map(|c| {
            c.iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut a: Vec<Vec<f64>> = cols
        .iter()
        .zip(&scale)
        .map(|(c, s)| c.iter().map(|v| v / s).collect())
        .collect();
    let mut r = b.to_vec();
    for j in 0..k {
        let norm: f64 = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Fit("rank deficient design".into()));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vn: f64 = v.iter().map(|x| x * x).sum();
        if vn > 0.0 {
            for col in a.iter_mut().skip(j) {
                let dot: f64 = v.iter().zip(&col[j..]).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vn;
                for (ci, vi) in col[j..].iter_mut().zip(&v) {
                    *ci -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&r[j..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vn;
            for (ri, vi) in r[j..].iter_mut().zip(&v) {
                *ri -= f * vi;
            }
        }
    }
    let mut c = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = r[j];
        for l in j + 1..k {
            s -= a[l][j] * c[l];
        }
        let piv = a[j][j];
        if piv.abs() < 1e-14 {
            return Err(Error::Fit("ill-conditioned design".into()));
        }
        c[j] = s / piv;
    }
    let rms = (r[k..].iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
    for (cj, s) in c.iter_mut().zip(&scale) {
        *cj /= s;
    }
    Ok((c, rms))
}

/// Straight-line fit `y ~ intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
    pub points: usize,
}

pub(crate) fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let (c, rms) = least_squares(&[vec![1.0; x.len()], x.to_vec()], y)?;
    Ok(LineFit {
        slope: c[1],
        intercept: c[0],
        rms,
        points: x.len(),
    })
}
