//! Initial hypersurface: a scaled bowl cap for `|z| <= R1` glued to the
//! log-cylinder `lambda_bar` outside, with the corner at `z = R1` smoothed
//! by a C^2 blend and every admissibility bound verified afterwards.

use serde::{Deserialize, Serialize};

use crate::barriers::{eval_patched, BarrierFamily, BarrierParams, Side};
use crate::error::{Error, Result};
use crate::frames::{from_rescaled, FrameParams, RescaledProfile};
use crate::numerics::least_squares;

/// Construction constants of the initial datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDataConfig {
    pub params: BarrierParams,
    /// Vanishing time; `tau0 = -log(T - t0)`.
    #[serde(rename = "T")]
    pub t_vanish: f64,
    pub t0: f64,
    /// Half-width of the smoothing interval as a fraction of `R1`.
    pub zeta: f64,
    /// Junction constant making the two pieces meet at `z = R1`.
    #[serde(rename = "C0")]
    pub c0: f64,
}

impl InitialDataConfig {
    pub fn new(params: &BarrierParams, zeta: f64, t_vanish: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::param("zeta", zeta, "need 0 < zeta < 1"));
        }
        let tau0 = params.tau0;
        let nn = 2.0 * params.n as f64 - 2.0;
        let s_r = nn - params.R1 * params.R1 * (-tau0).exp();
        let s_out = nn - (params.R1 * (1.0 + zeta)).powi(2) * (-tau0).exp();
        if !(s_r > 0.0 && s_out > 0.0) {
            return Err(Error::InitialData(format!(
                "tau0 = {tau0} too small: the junction R1 e^(-tau0/2) lies beyond the cap"
            )));
        }
        Ok(InitialDataConfig {
            params: params.clone(),
            t_vanish,
            t0: t_vanish - (-tau0).exp(),
            zeta,
            c0: params.A - 1.0 / (params.c - params.a * s_r.ln()),
        })
    }

    pub fn tau0(&self) -> f64 {
        self.params.tau0
    }

    pub fn frame(&self) -> Result<FrameParams> {
        FrameParams::new(self.t_vanish, self.params.a, self.params.n)
    }
}

/// Analytic pieces of the datum at `tau0`.
struct Pieces<'a> {
    fam: &'a BarrierFamily,
    cfg: &'a InitialDataConfig,
    e: f64,
    sh: f64,
    /// Tip value `-A - e^-tau0 F(R1) + C0`.
    tip: f64,
}

impl<'a> Pieces<'a> {
    fn new(fam: &'a BarrierFamily, cfg: &'a InitialDataConfig) -> Result<Self> {
        let p = &cfg.params;
        let e = (-p.tau0).exp();
        let fr = fam.bowl.eval(p.a * p.R1)?.value * p.A * p.A / p.a;
        Ok(Pieces {
            fam,
            cfg,
            e,
            sh: (-0.5 * p.tau0).exp(),
            tip: -p.A - e * fr + cfg.c0,
        })
    }

    /// Bowl piece as (deviation from the tip value, d/dz).
    fn inner(&self, z: f64) -> Result<(f64, f64)> {
        let p = &self.cfg.params;
        let v = self.fam.bowl.eval(p.a * z)?;
        let k = p.A * p.A;
        Ok((self.e * k / p.a * v.value, self.e * k * v.deriv))
    }

    /// Log-cylinder piece as (value, d/dz).
    fn outer(&self, z: f64) -> (f64, f64) {
        let p = &self.cfg.params;
        let phi = z * self.sh;
        let sg = 2.0 * p.n as f64 - 2.0 - phi * phi;
        let l = p.c - p.a * sg.ln();
        (-1.0 / l, 2.0 * p.a * phi / sg / (l * l) * self.sh)
    }

    /// Unsmoothed datum as (deviation, one-sided d/dz from the left).
    fn hat(&self, z: f64) -> Result<(f64, f64)> {
        if z <= self.cfg.params.R1 {
            self.inner(z)
        } else {
            let (v, dz) = self.outer(z);
            Ok((v - self.tip, dz))
        }
    }

    /// Smoothed datum as (deviation, d/dz).
    fn smooth(&self, z: f64) -> Result<(f64, f64)> {
        let r1 = self.cfg.params.R1;
        let zeta = self.cfg.zeta;
        let (lo, hi) = ((1.0 - zeta) * r1, (1.0 + zeta) * r1);
        if z <= lo || z >= hi {
            return self.hat(z);
        }
        let s = (z - lo) / (hi - lo);
        let w = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let dw = -30.0 * s * s * (1.0 - s) * (1.0 - s) / (hi - lo);
        let (di, dzi) = self.inner(z)?;
        let (vo, dzo) = self.outer(z);
        let dout = vo - self.tip;
        Ok((
            w * di + (1.0 - w) * dout,
            dw * (di - dout) + w * dzi + (1.0 - w) * dzo,
        ))
    }
}

fn assemble(
    phi: &[f64],
    cfg: &InitialDataConfig,
    tip: f64,
    mut dev: impl FnMut(f64) -> Result<f64>,
) -> Result<RescaledProfile> {
    let p = &cfg.params;
    let pm = p.phi_max();
    let sh = (0.5 * p.tau0).exp();
    let mut d = Vec::with_capacity(phi.len());
    for &f in phi {
        if f >= pm {
            d.push(-tip);
        } else {
            d.push(dev(f * sh)?);
        }
    }
    RescaledProfile::from_parts(p.tau0, phi.to_vec(), tip, d)
}

fn check_grid(phi: &[f64], p: &BarrierParams) -> Result<()> {
    if phi.len() < 5 || phi[0] != 0.0 || phi.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InitialData(
            "grid must start at 0 and increase strictly".into(),
        ));
    }
    if *phi.last().unwrap() > p.phi_max() {
        return Err(Error::InitialData("grid extends past the cap".into()));
    }
    Ok(())
}

/// The unsmoothed datum `lambda_hat_0` sampled on `phi`.
pub fn build_hat_lambda0(
    cfg: &InitialDataConfig,
    fam: &BarrierFamily,
    phi: &[f64],
) -> Result<RescaledProfile> {
    check_grid(phi, &cfg.params)?;
    let pc = Pieces::new(fam, cfg)?;
    let prof = assemble(phi, cfg, pc.tip, |z| Ok(pc.hat(z)?.0))?;
    if !prof.dlam.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InitialData(format!(
            "datum is not strictly increasing at tau0 = {}",
            cfg.tau0()
        )));
    }
    Ok(prof)
}

/// Bounds measured while smoothing the corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    /// `inf` over the smoothing interval of the distance from the
    /// unsmoothed datum to the nearer barrier.
    pub delta: f64,
    pub sup_deviation: f64,
    pub slope_max: f64,
    pub slope_bound: f64,
    /// Smallest barrier distances of the smoothed datum on the interval.
    pub interval_min_upper: f64,
    pub interval_min_lower: f64,
    /// Smallest barrier distances over all non-cap nodes.
    pub min_upper: f64,
    pub min_lower: f64,
}

const INTERVAL_SAMPLES: usize = 4001;

/// Replace the corner at `z = R1` by the C^2 blend on
/// `[(1-zeta) R1, (1+zeta) R1]` and verify the smoothing bounds.
pub fn smooth_corner(
    profile: &RescaledProfile,
    cfg: &InitialDataConfig,
    fam: &BarrierFamily,
) -> Result<(RescaledProfile, SmoothingReport)> {
    let p = &cfg.params;
    check_grid(&profile.phi, p)?;
    if profile.tau != p.tau0 {
        return Err(Error::InitialData("profile is not at tau0".into()));
    }
    let pc = Pieces::new(fam, cfg)?;
    let (lo, hi) = ((1.0 - cfg.zeta) * p.R1, (1.0 + cfg.zeta) * p.R1);
    let sh = pc.sh;
    let tau0 = p.tau0;
    let mut rep = SmoothingReport {
        delta: f64::INFINITY,
        sup_deviation: 0.0,
        slope_max: 0.0,
        slope_bound: 0.0,
        interval_min_upper: f64::INFINITY,
        interval_min_lower: f64::INFINITY,
        min_upper: f64::INFINITY,
        min_lower: f64::INFINITY,
    };
    let mut samples = Vec::with_capacity(INTERVAL_SAMPLES);
    for k in 0..INTERVAL_SAMPLES {
        let z = lo + (hi - lo) * k as f64 / (INTERVAL_SAMPLES - 1) as f64;
        let phi = z * sh;
        let up = eval_patched(fam, phi, tau0, Side::Plus)? - pc.tip;
        let dn = eval_patched(fam, phi, tau0, Side::Minus)? - pc.tip;
        let (h, _) = pc.hat(z)?;
        let (s, sz) = pc.smooth(z)?;
        rep.delta = rep.delta.min((up - h).min(h - dn));
        rep.sup_deviation = rep.sup_deviation.max((s - h).abs());
        rep.slope_max = rep.slope_max.max(sz.abs());
        samples.push((up, dn, s));
    }
    // One-sided slopes of the unsmoothed datum on the interval.
    for k in 0..INTERVAL_SAMPLES {
        let z = lo + (hi - lo) * k as f64 / (INTERVAL_SAMPLES - 1) as f64;
        let left = if z <= p.R1 {
            pc.inner(z)?.1
        } else {
            pc.outer(z).1
        };
        rep.slope_bound = rep.slope_bound.max(left.abs());
    }
    rep.slope_bound = rep
        .slope_bound
        .max(pc.inner(p.R1)?.1.abs())
        .max(pc.outer(p.R1).1.abs());
    for (up, dn, s) in samples {
        rep.interval_min_upper = rep.interval_min_upper.min(up - s);
        rep.interval_min_lower = rep.interval_min_lower.min(s - dn);
    }
    if !(rep.delta > 0.0) {
        return Err(Error::InitialData(format!(
            "barrier margin delta = {:e} <= 0 on the smoothing interval",
            rep.delta
        )));
    }
    if rep.sup_deviation > rep.delta / 10.0 {
        return Err(Error::InitialData(format!(
            "smoothing moves the datum by {:e} > delta/10 = {:e}; reduce zeta",
            rep.sup_deviation,
            rep.delta / 10.0
        )));
    }
    if rep.slope_max > rep.slope_bound {
        return Err(Error::InitialData(format!(
            "smoothing violates the slope bound: {:e} > {:e}",
            rep.slope_max, rep.slope_bound
        )));
    }
    let out = assemble(&profile.phi, cfg, pc.tip, |z| Ok(pc.smooth(z)?.0))?;
    if !out.dlam.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InitialData(
            "smoothed datum is not strictly increasing".into(),
        ));
    }
    for i in 0..out.finite_len() {
        let phi = out.phi[i];
        let l = out.lambda_at(i);
        rep.min_upper = rep
            .min_upper
            .min(eval_patched(fam, phi, tau0, Side::Plus)? - l);
        rep.min_lower = rep
            .min_lower
            .min(l - eval_patched(fam, phi, tau0, Side::Minus)?);
    }
    if !(rep.min_upper > 0.0 && rep.min_lower > 0.0) {
        return Err(Error::InitialData(format!(
            "smoothed datum not strictly between the barriers (margins {:e}, {:e})",
            rep.min_upper, rep.min_lower
        )));
    }
    Ok((out, rep))
}

/// Shape checks of a datum in the physical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub tip_ok: bool,
    pub monotone_ok: bool,
    pub concave_ok: bool,
    pub ratio_max: f64,
    /// Tip-frame coordinate `z` of the ratio maximum.
    pub ratio_argmax_z: f64,
    /// Ratio maximum over `z >= (1 + zeta) R1` (the log-cylinder piece).
    pub ratio_max_exterior: f64,
    pub ratio_bound: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub expansion_defect: f64,
    pub fit_nodes: usize,
    pub fit_rms: f64,
    /// The near-tip requirement with `C = max(1, ratio_bound)` after
    /// normalizing the expansion to `alpha = 1`.
    pub open_condition_ok: bool,
}

impl AdmissibilityReport {
    /// All shape conditions hold and the ratio stays below
    /// `max(1, ratio_bound)` up to `tol`.
    pub fn accepted(&self, tol: f64) -> bool {
        self.tip_ok
            && self.monotone_ok
            && self.concave_ok
            && self.ratio_max <= self.ratio_bound.max(1.0) + tol
    }
}

/// Options of the near-tip expansion fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipFitWindow {
    /// Fraction of `sqrt(2(n-1)(T-t))` bounding `u`.
    pub u_frac: f64,
    /// Upper bound on the tip-frame coordinate `z`, keeping the fit inside
    /// the range where the half-integer expansion converges.
    pub z_max: f64,
    /// Lower bound on `z` for the ratio exterior window, as a multiple of R1.
    pub exterior_from: f64,
}

impl Default for TipFitWindow {
    fn default() -> Self {
        TipFitWindow {
            u_frac: 0.1,
            z_max: 1.0,
            exterior_from: 1.1,
        }
    }
}

/// Fit `u = alpha x^1/2 + beta x^3/2 + gamma x^5/2` near the tip.
pub fn tip_expansion(
    dx: &[f64],
    u: &[f64],
    limit: impl Fn(usize) -> bool,
) -> Result<(f64, f64, f64, usize, f64)> {
    let idx: Vec<usize> = (1..dx.len()).take_while(|&i| limit(i)).collect();
    if idx.len() < 8 {
        return Err(Error::Fit(format!(
            "{} near-tip nodes for the expansion fit, need 8",
            idx.len()
        )));
    }
    let s: Vec<f64> = idx.iter().map(|&i| dx[i].sqrt()).collect();
    let cols = vec![
        s.clone(),
        s.iter().map(|v| v.powi(3)).collect(),
        s.iter().map(|v| v.powi(5)).collect(),
    ];
    let b: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
    let (c, rms) = least_squares(&cols, &b)?;
    Ok((c[0], c[1], c[2], idx.len(), rms))
}

/// Check the requirement `C >= 1` and
/// `(3 + 56 g + C (9 + 40 g))/16 >= 6 g + 3/4 > 0` for normalized `g`.
pub fn open_condition(c: f64, gamma_normalized: f64) -> bool {
    let g = gamma_normalized;
    c >= 1.0
        && (3.0 + 56.0 * g + c * (9.0 + 40.0 * g)) / 16.0 >= 6.0 * g + 0.75
        && 6.0 * g + 0.75 > 0.0
}

pub fn admissibility(
    profile: &RescaledProfile,
    fp: &FrameParams,
    params: &BarrierParams,
    window: &TipFitWindow,
) -> Result<AdmissibilityReport> {
    let m = profile.finite_len();
    let monotone_ok = profile.dlam[..m].windows(2).all(|w| w[1] > w[0]);
    if !monotone_ok {
        return Err(Error::InitialData(
            "profile is not strictly increasing; no graph over x".into(),
        ));
    }
    let phys = from_rescaled(profile, fp)?;
    let tip_ok = phys.u[0] == 0.0;
    let concave_ok = phys.is_concave();
    let curv = crate::diagnostics::principal_curvatures(&phys)?;
    let e_half = (0.5 * profile.tau).exp();
    let z_of = |i: usize| profile.phi[i] * e_half;
    let (mut ratio_max, mut arg) = (f64::NEG_INFINITY, 0);
    let mut ext = f64::NEG_INFINITY;
    for (i, &r) in curv.ratio.iter().enumerate() {
        if r > ratio_max {
            ratio_max = r;
            arg = i;
        }
        if z_of(i) >= window.exterior_from * params.R1 {
            ext = ext.max(r);
        }
    }
    let u_cap = window.u_frac * (2.0 * (fp.n as f64 - 1.0) * (-profile.tau).exp()).sqrt();
    let (alpha, beta, gamma, fit_nodes, fit_rms) = tip_expansion(&phys.dx, &phys.u, |i| {
        phys.u[i] <= u_cap && z_of(i) <= window.z_max
    })?;
    let c = params.ratio_bound.max(1.0);
    Ok(AdmissibilityReport {
        tip_ok,
        monotone_ok,
        concave_ok,
        ratio_max,
        ratio_argmax_z: z_of(arg),
        ratio_max_exterior: ext,
        ratio_bound: params.ratio_bound,
        alpha,
        beta,
        gamma,
        expansion_defect: (1.0 + 2.0 * alpha * beta).abs(),
        fit_nodes,
        fit_rms,
        open_condition_ok: open_condition(c, gamma * alpha.powi(3)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_expansion_has_zero_defect() {
        let dx: Vec<f64> = (0..40).map(|i| (i as f64 * 0.002).powi(2)).collect();
        let u: Vec<f64> = dx.iter().map(|x| x.sqrt() - 0.5 * x.powf(1.5)).collect();
        let (a, b, g, k, _) = tip_expansion(&dx, &u, |_| true).unwrap();
        assert_eq!(k, 39);
        assert!((a - 1.0).abs() < 1e-9);
        assert!((1.0 + 2.0 * a * b).abs() < 1e-6);
        assert!(g.abs() < 1e-2);
    }

    #[test]
    fn open_condition_examples() {
        assert!(open_condition(1.0, 0.0));
        assert!(!open_condition(0.5, 0.0));
        assert!(!open_condition(1.0, -0.2));
    }
}
