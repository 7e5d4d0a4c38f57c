//! Curvature quantities and asymptotic rate fits on evolved trajectories.
//!
//! Curvatures use whichever graph description is better conditioned at a
//! node: `u(x)` where `|u_x| <= 1`, the inverse graph `x(u)` elsewhere.
//! Near the tip `u_x` is unbounded but `x(u)` is smooth and even, so the
//! tip values come from `x = c2 u^2 + c4 u^4` through the first two nodes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::barriers::BarrierFamily;
use crate::error::{Error, Result};
use crate::evolver::{margins, Margins, Trajectory};
use crate::frames::{from_rescaled, tip_frame, FrameParams, PhysicalProfile, RescaledProfile};
use crate::numerics::{fd_weights, fit_line, LineFit};
use crate::soliton_profiles::SolitonProfile;

/// Fewest samples any fit accepts.
pub const MIN_FIT_POINTS: usize = 8;

/// Principal curvatures per node: `kappa_rot` (multiplicity `n-1`),
/// `kappa_graph`, and their ratio `R = kappa_graph / kappa_rot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curvatures {
    pub kappa_rot: Vec<f64>,
    pub kappa_graph: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl Curvatures {
    pub fn mean_curvature(&self, n: u32, i: usize) -> f64 {
        (n as f64 - 1.0) * self.kappa_rot[i] + self.kappa_graph[i]
    }
}

fn three_point(xs: &[f64], fs: &[f64], i: usize) -> (f64, f64) {
    let m = xs.len();
    let lo = if i == 0 {
        0
    } else if i + 1 >= m {
        m - 3
    } else {
        i - 1
    };
    let w1 = fd_weights(xs[i], &xs[lo..lo + 3], 1);
    let w2 = fd_weights(xs[i], &xs[lo..lo + 3], 2);
    let d1 = w1.iter().zip(&fs[lo..lo + 3]).map(|(w, f)| w * f).sum();
    let d2 = w2.iter().zip(&fs[lo..lo + 3]).map(|(w, f)| w * f).sum();
    (d1, d2)
}

/// Curvatures of the graph `r = u(x)` from samples. `x` may be offsets
/// from any origin. If `u[0] = 0` the first node is treated as the tip.
pub fn curvatures_from_samples(x: &[f64], u: &[f64]) -> Result<Curvatures> {
    let m = x.len();
    if m != u.len() || m < 3 {
        return Err(Error::Frame("need >= 3 matching samples".into()));
    }
    let has_tip = u[0] == 0.0;
    if has_tip && m < 4 {
        return Err(Error::Frame("need >= 4 samples with a tip".into()));
    }
    let start = usize::from(has_tip);
    if let Some(i) = (start..m).find(|&i| !(u[i] > 0.0)) {
        return Err(Error::Frame(format!(
            "u = {} at node {i} away from the tip",
            u[i]
        )));
    }
    let mut kr = vec![0.0; m];
    let mut kg = vec![0.0; m];
    let mut ratio = vec![0.0; m];
    for i in start..m {
        let (ux, uxx) = three_point(x, u, i);
        if ux.abs() <= 1.0 {
            let g = 1.0 + ux * ux;
            kr[i] = 1.0 / (u[i] * g.sqrt());
            kg[i] = -uxx / g.powf(1.5);
            ratio[i] = -u[i] * uxx / g;
        } else {
            let (xu, xuu) = three_point(u, x, i);
            let g = 1.0 + xu * xu;
            kr[i] = xu.abs() / (u[i] * g.sqrt());
            kg[i] = xuu * xu.signum() / g.powf(1.5);
            ratio[i] = u[i] * xuu / (xu * g);
        }
    }
    if has_tip {
        let (u1, u2) = (u[1] * u[1], u[2] * u[2]);
        let (x1, x2) = (x[1] - x[0], x[2] - x[0]);
        let det = u1 * u2 * u2 - u2 * u1 * u1;
        let c2 = (x1 * u2 * u2 - x2 * u1 * u1) / det;
        kg[0] = 2.0 * c2.abs();
        let extrap = |v: &[f64]| v[1] - (v[2] - v[1]) * u1 / (u2 - u1);
        kr[0] = extrap(&kr);
        ratio[0] = extrap(&ratio);
    }
    Ok(Curvatures {
        kappa_rot: kr,
        kappa_graph: kg,
        ratio,
    })
}

pub fn principal_curvatures(p: &PhysicalProfile) -> Result<Curvatures> {
    curvatures_from_samples(&p.dx, &p.u)
}

/// Maximum of the curvature ratio and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioMax {
    pub max: f64,
    pub node: usize,
    /// Distance from the tip in `x`.
    pub x_offset: f64,
}

pub fn ratio_r(p: &PhysicalProfile) -> Result<(Vec<f64>, RatioMax)> {
    let c = principal_curvatures(p)?;
    let (node, &max) = c
        .ratio
        .iter()
        .enumerate()
        .fold(
            (0, &f64::NEG_INFINITY),
            |b, (i, v)| if *v > *b.1 { (i, v) } else { b },
        );
    Ok((
        c.ratio,
        RatioMax {
            max,
            node,
            x_offset: p.dx[node],
        },
    ))
}

/// Fit of `log H_tip` against `log(T - t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipRateFit {
    pub slope: f64,
    pub prefactor: f64,
    pub fit: LineFit,
    pub tau_window: (f64, f64),
}

/// Least-squares rate fit from `(tau, H_tip)` samples, excluding the first
/// 20% of the tau span.
pub fn tip_rate_fit_series(taus: &[f64], h_tip: &[f64]) -> Result<TipRateFit> {
    if taus.len() != h_tip.len() || taus.is_empty() {
        return Err(Error::Fit("empty or mismatched series".into()));
    }
    let (t0, t1) = (taus[0], *taus.last().unwrap());
    let cut = t0 + 0.2 * (t1 - t0);
    let (mut xs, mut ys) = (vec![], vec![]);
    for (&t, &h) in taus.iter().zip(h_tip) {
        if t >= cut && h > 0.0 {
            xs.push(-t);
            ys.push(h.ln());
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} samples in the fit window, need {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let span = (xs[0] - xs[xs.len() - 1]).abs() / std::f64::consts::LN_10;
    if span < 1.5 {
        return Err(Error::Fit(format!(
            "fit window covers {span:.2} decades of T - t, need 1.5"
        )));
    }
    let fit = fit_line(&xs, &ys)?;
    Ok(TipRateFit {
        slope: fit.slope,
        prefactor: fit.intercept.exp(),
        fit,
        tau_window: (cut, t1),
    })
}

/// Tip mean curvature `(n-1) kappa_rot + kappa_graph` of one profile.
pub fn tip_mean_curvature(p: &PhysicalProfile, n: u32) -> Result<f64> {
    Ok(principal_curvatures(p)?.mean_curvature(n, 0))
}

pub fn tip_rate_fit(traj: &Trajectory, fp: &FrameParams) -> Result<TipRateFit> {
    let mut taus = vec![];
    let mut h = vec![];
    for s in &traj.snapshots {
        let p = from_rescaled(&s.profile, fp)?;
        taus.push(s.profile.tau);
        h.push(tip_mean_curvature(&p, fp.n)?);
    }
    tip_rate_fit_series(&taus, &h)
}

/// Fit of `log(2(n-1) - phi^2)` against `y = -1/lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFit {
    pub slope: f64,
    pub fit: LineFit,
    pub gap_window: (f64, f64),
}

pub fn cylinder_decay_fit(state: &RescaledProfile, fp: &FrameParams) -> Result<CylinderFit> {
    let window = (1e-6, 0.5);
    let nn = 2.0 * (fp.n as f64 - 1.0);
    let (mut xs, mut ys) = (vec![], vec![]);
    for i in 0..state.finite_len() {
        let s = nn - state.phi[i] * state.phi[i];
        if s >= window.0 && s <= window.1 {
            xs.push(-1.0 / state.lambda_at(i));
            ys.push(s.ln());
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} nodes with 2(n-1) - phi^2 in [1e-6, 0.5], need {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let fit = fit_line(&xs, &ys)?;
    Ok(CylinderFit {
        slope: fit.slope,
        fit,
        gap_window: window,
    })
}

/// `sup_{z <= z_cap} |a (p~(z) - p~(0)) - P(a z)|` at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipError {
    pub tau: f64,
    pub error: f64,
    pub z_at: f64,
    pub nodes: usize,
}

pub fn tip_profile_error(
    r: &RescaledProfile,
    a: f64,
    a_tilde: f64,
    bowl: &SolitonProfile,
    z_cap: f64,
) -> Result<TipError> {
    let t = tip_frame(r, a_tilde, z_cap)?;
    if t.z.len() < MIN_FIT_POINTS {
        return Err(Error::Frame(format!(
            "{} nodes with z <= {z_cap} at tau = {}; tip region under-resolved",
            t.z.len(),
            r.tau
        )));
    }
    let mut out = TipError {
        tau: r.tau,
        error: 0.0,
        z_at: 0.0,
        nodes: t.z.len(),
    };
    for (z, pd) in t.z.iter().zip(&t.p_dev) {
        let e = (a * pd - bowl.eval(a * z)?.value).abs();
        if e > out.error {
            out.error = e;
            out.z_at = *z;
        }
    }
    Ok(out)
}

pub fn tip_profile_convergence(
    traj: &Trajectory,
    fam: &BarrierFamily,
    z_cap: f64,
) -> Result<Vec<TipError>> {
    let p = &fam.params;
    traj.snapshots
        .iter()
        .map(|s| tip_profile_error(&s.profile, p.a, p.a_tilde(), &fam.bowl, z_cap))
        .collect()
}

/// True if the series never increases after the first `frac` of its span.
pub fn nonincreasing_after(series: &[TipError], frac: f64) -> bool {
    if series.len() < 2 {
        return true;
    }
    let (t0, t1) = (series[0].tau, series[series.len() - 1].tau);
    let cut = t0 + frac * (t1 - t0);
    series
        .windows(2)
        .filter(|w| w[0].tau >= cut)
        .all(|w| w[1].error <= w[0].error)
}

/// Like [`nonincreasing_after`] but blind to changes below the numerical
/// resolution: after the cut, `e_j <= e_i + floor_i + floor_j` for every
/// `j > i`. `floor` is a per-snapshot error estimate, typically
/// [`richardson_floor`] against a run on the bisected grid.
pub fn nonincreasing_within(series: &[TipError], floor: &[f64], frac: f64) -> Result<bool> {
    if floor.len() != series.len() {
        return Err(Error::Fit("floor and series lengths differ".into()));
    }
    if series.len() < 2 {
        return Ok(true);
    }
    let (t0, t1) = (series[0].tau, series[series.len() - 1].tau);
    let cut = t0 + frac * (t1 - t0);
    let idx: Vec<usize> = (0..series.len())
        .filter(|&k| series[k].tau >= cut)
        .collect();
    Ok(idx.iter().enumerate().all(|(p, &i)| {
        idx[p + 1..]
            .iter()
            .all(|&j| series[j].error <= series[i].error + floor[i] + floor[j])
    }))
}

/// Error estimate of a second-order quantity from runs on nested grids:
/// `|e_N - e_2N| * 4/3` per matching snapshot.
pub fn richardson_floor(coarse: &[TipError], fine: &[TipError]) -> Result<Vec<f64>> {
    if coarse.len() != fine.len() {
        return Err(Error::Fit("series of different lengths".into()));
    }
    coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| {
            if (c.tau - f.tau).abs() > 1e-9 {
                return Err(Error::Fit(format!(
                    "snapshot times differ: {} vs {}",
                    c.tau, f.tau
                )));
            }
            Ok((c.error - f.error).abs() * 4.0 / 3.0)
        })
        .collect()
}

/// Linear bounds `c_minus z <= q(z) <= c_plus z` on `0 < z <= z_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBounds {
    pub tau: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub z_hi: f64,
    /// `q/z` at the outermost node of the window.
    pub edge_ratio: f64,
    /// `a/(n-1)`.
    pub edge_expected: f64,
}

pub fn q_linear_bounds(r: &RescaledProfile, fam: &BarrierFamily, z_hi: f64) -> Result<QBounds> {
    let p = &fam.params;
    let t = tip_frame(r, p.a_tilde(), z_hi)?;
    let ratios: Vec<f64> = t.z.iter().zip(&t.q).skip(1).map(|(z, q)| q / z).collect();
    if ratios.len() < MIN_FIT_POINTS {
        return Err(Error::Fit("too few nodes for q bounds".into()));
    }
    Ok(QBounds {
        tau: r.tau,
        c_minus: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        c_plus: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        z_hi: *t.z.last().unwrap(),
        edge_ratio: *ratios.last().unwrap(),
        edge_expected: p.a / (p.n as f64 - 1.0),
    })
}

pub fn sandwich_margins(state: &RescaledProfile, fam: &BarrierFamily) -> Result<Margins> {
    margins(fam, state)
}

/// Curvature ratio and curvature extremum of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub tau: f64,
    pub max: f64,
    pub node: usize,
    pub x_offset: f64,
    /// Node of `max(kappa_rot, kappa_graph)` over the profile.
    pub kappa_node: usize,
    pub h_tip: f64,
}

pub fn ratio_sample(r: &RescaledProfile, fp: &FrameParams) -> Result<RatioSample> {
    let p = from_rescaled(r, fp)?;
    let c = principal_curvatures(&p)?;
    let (node, max) = argmax(&c.ratio);
    let kmax: Vec<f64> = c
        .kappa_rot
        .iter()
        .zip(&c.kappa_graph)
        .map(|(a, b)| a.max(*b))
        .collect();
    let (kappa_node, _) = argmax(&kmax);
    Ok(RatioSample {
        tau: r.tau,
        max,
        node,
        x_offset: p.dx[node],
        kappa_node,
        h_tip: c.mean_curvature(fp.n, 0),
    })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |b, (i, &x)| if x > b.1 { (i, x) } else { b },
    )
}

/// Every diagnostic of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub tip_rate_slope: f64,
    pub tip_rate_prefactor: f64,
    pub tip_rate: TipRateFit,
    pub cyl_decay_slope: f64,
    pub cyl_decay: CylinderFit,
    pub z_cap: f64,
    pub tip_profile_error: Vec<TipError>,
    pub tip_error_nonincreasing: bool,
    pub ratio_max_series: Vec<RatioSample>,
    pub q_linear_bounds: QBounds,
    pub sandwich: Vec<Margins>,
}

/// Run every diagnostic on a trajectory.
pub fn report(
    traj: &Trajectory,
    fam: &BarrierFamily,
    t_vanish: f64,
    z_cap: f64,
) -> Result<DiagnosticsReport> {
    let p = &fam.params;
    let fp = FrameParams::new(t_vanish, p.a, p.n)?;
    let last = &traj
        .snapshots
        .last()
        .ok_or_else(|| Error::Fit("empty trajectory".into()))?
        .profile;
    let tip_rate = tip_rate_fit(traj, &fp)?;
    let cyl = cylinder_decay_fit(last, &fp)?;
    let errs = tip_profile_convergence(traj, fam, z_cap)?;
    let ratios = traj
        .snapshots
        .iter()
        .map(|s| ratio_sample(&s.profile, &fp))
        .collect::<Result<Vec<_>>>()?;
    let sandwich = traj
        .snapshots
        .iter()
        .map(|s| margins(fam, &s.profile))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        tip_rate_slope: tip_rate.slope,
        tip_rate_prefactor: tip_rate.prefactor,
        tip_rate,
        cyl_decay_slope: cyl.slope,
        cyl_decay: cyl,
        z_cap,
        tip_error_nonincreasing: nonincreasing_after(&errs, 0.2),
        tip_profile_error: errs,
        ratio_max_series: ratios,
        q_linear_bounds: q_linear_bounds(last, fam, p.R1)?,
        sandwich,
    })
}

/// Per-snapshot tip curve `z, a (p~ - p~(0)), P(a z)`.
pub fn write_tip_curves(
    traj: &Trajectory,
    fam: &BarrierFamily,
    z_cap: f64,
    out: impl Write,
) -> Result<()> {
    let p = &fam.params;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["tau", "z", "a_p_dev", "P_az", "abs_error"])?;
    for s in &traj.snapshots {
        let t = tip_frame(&s.profile, p.a_tilde(), z_cap)?;
        for (z, pd) in t.z.iter().zip(&t.p_dev) {
            let b = fam.bowl.eval(p.a * z)?.value;
            wr.write_record([
                format!("{:.16e}", t.tau),
                format!("{:.16e}", z),
                format!("{:.16e}", p.a * pd),
                format!("{:.16e}", b),
                format!("{:.16e}", (p.a * pd - b).abs()),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Per-snapshot cylinder curve `y, log(2(n-1) - phi^2)`.
pub fn write_cylinder_curves(traj: &Trajectory, n: u32, out: impl Write) -> Result<()> {
    let nn = 2.0 * (n as f64 - 1.0);
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["tau", "y", "log_gap"])?;
    for s in &traj.snapshots {
        let r = &s.profile;
        for i in 0..r.finite_len() {
            let gap = nn - r.phi[i] * r.phi[i];
            if gap > 0.0 && gap <= 0.5 {
                wr.write_record([
                    format!("{:.16e}", r.tau),
                    format!("{:.16e}", -1.0 / r.lambda_at(i)),
                    format!("{:.16e}", gap.ln()),
                ])?;
            }
        }
    }
    wr.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}
