//! Method-of-lines evolution of `lambda(phi, tau)` on `[0, sqrt(2(n-1))]`.
//!
//! Semi-discretization: second-order three-point differences on a fixed
//! stretched grid. Node 0 uses the symmetric limit
//! `((n-1)/phi) lambda_phi -> (n-1) lambda_phiphi`, so there
//! `lambda_tau = 2n (lambda_1 - lambda_0)/phi_1^2 - a lambda_0^2`.
//!
//! Time integration: linearly implicit Euler with the exact tridiagonal
//! Jacobian and the explicit `e^tau` dependence (Rosenbrock form), combined
//! with one step / two half steps Richardson extrapolation. The difference
//! of the two solutions drives step control.
//!
//! The state is kept as the tip value plus per-node deviations so that
//! differences of size `e^-tau` near the tip keep full precision.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::barriers::{eval_patched, BarrierFamily, Side};
use crate::error::{Error, Result};
use crate::frames::RescaledProfile;
use crate::numerics::{fd_weights, solve_tridiagonal};

/// Shape of the stretched grid density
/// `rho = 1/(h0 + g phi) + 1/(hc + gc (phi_max - phi)) + 1/hmid`.
/// Nodes sit at equal increments of the normalized cumulative density, so
/// doubling the cell count bisects every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridShape {
    pub h0: f64,
    pub g: f64,
    pub hc: f64,
    pub gc: f64,
    pub hmid: f64,
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape {
            h0: 1e-9,
            g: 0.01,
            hc: 1e-8,
            gc: 0.01,
            hmid: 2e-3,
        }
    }
}

/// `cells + 1` nodes on `[0, phi_max]` with exact end points.
pub fn stretched_grid(cells: usize, n: u32, shape: &GridShape) -> Result<Vec<f64>> {
    if cells < 4 {
        return Err(Error::param("grid", cells as f64, "need at least 4 cells"));
    }
    if n < 2 {
        return Err(Error::InvalidDimension {
            n,
            reason: "the compactified domain needs n >= 2",
        });
    }
    let GridShape {
        h0,
        g,
        hc,
        gc,
        hmid,
    } = *shape;
    if !(h0 > 0.0 && g > 0.0 && hc > 0.0 && gc > 0.0 && hmid > 0.0) {
        return Err(Error::Config(
            "grid shape constants must be positive".into(),
        ));
    }
    let pm = (2.0 * (n as f64 - 1.0)).sqrt();
    let cum = |x: f64| {
        ((h0 + g * x) / h0).ln() / g + ((hc + gc * pm) / (hc + gc * (pm - x))).ln() / gc + x / hmid
    };
    let total = cum(pm);
    let mut nodes = Vec::with_capacity(cells + 1);
    nodes.push(0.0);
    for k in 1..cells {
        let target = total * k as f64 / cells as f64;
        let (mut lo, mut hi) = (0.0, pm);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cum(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        nodes.push(0.5 * (lo + hi));
    }
    nodes.push(pm);
    Ok(nodes)
}

/// Boundary treatment at `phi_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapBoundary {
    /// `lambda = 0` at the cap.
    ZeroDirichlet,
    /// Even reflection about the cap (`lambda_phi = 0`); useful for
    /// spatially constant test data.
    Natural,
}

/// Integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolverConfig {
    /// Relative tolerance on the shape `lambda - lambda(0)` measured in
    /// units of `e^-tau + |lambda - lambda(0)|`.
    pub tol: f64,
    /// Absolute tolerance on `lambda`, loosened by `1e-6/S` in the cap layer
    /// `S = 2(n-1) - phi^2 < 1e-6`.
    pub atol: f64,
    pub dtau_init: f64,
    pub dtau_max: f64,
    /// Sandwich violation tolerance as a fraction of `A`.
    pub eps_grid_factor: f64,
    pub cap: CapBoundary,
    /// Minimum node count in `|phi| <= R1 e^{-tau/2}` up to `tau_end`.
    pub min_tip_nodes: usize,
    /// Evaluate the barriers after every accepted step.
    pub monitor_sandwich: bool,
    pub max_steps: usize,
}

impl Default for EvolverConfig {
    fn default() -> Self {
        EvolverConfig {
            tol: 1e-6,
            atol: 1e-10,
            dtau_init: 1e-4,
            dtau_max: 0.05,
            eps_grid_factor: 1e-3,
            cap: CapBoundary::ZeroDirichlet,
            min_tip_nodes: 32,
            monitor_sandwich: true,
            max_steps: 5_000_000,
        }
    }
}

/// Evolver state: a rescaled profile on a fixed grid plus the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub profile: RescaledProfile,
    pub dt_last: f64,
}

impl FlowState {
    pub fn new(profile: RescaledProfile) -> Self {
        FlowState {
            profile,
            dt_last: 0.0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.profile.tau
    }
}

/// Sandwich margins at one instant: `min(lambda+ - lambda)` and
/// `min(lambda - lambda-)` over the grid (cap node excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub tau: f64,
    pub min_upper: f64,
    pub min_lower: f64,
    pub phi_upper: f64,
    pub phi_lower: f64,
}

/// Notable integrator events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Rejected { tau: f64, dtau: f64, error: f64 },
    InvariantRetry { tau: f64, dtau: f64, what: String },
}

/// Snapshots at the requested checkpoints plus diagnostics of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<FlowState>,
    pub events: Vec<Event>,
    pub margins: Vec<Margins>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    /// Long-format CSV: `tau, phi, lambda, dlambda` per snapshot node.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["tau", "phi", "lambda", "dlambda"])?;
        for s in &self.snapshots {
            let p = &s.profile;
            for i in 0..p.len() {
                wr.write_record([
                    format!("{:.16e}", p.tau),
                    format!("{:.16e}", p.phi[i]),
                    format!("{:.16e}", p.lambda_at(i)),
                    format!("{:.16e}", p.dlam[i]),
                ])?;
            }
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })
    }

    /// Inverse of [`Trajectory::write_csv`]; the logs are not stored there.
    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut snapshots: Vec<FlowState> = Vec::new();
        let mut cur: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;
        let finish = |c: (f64, Vec<f64>, f64, Vec<f64>)| -> Result<FlowState> {
            Ok(FlowState::new(RescaledProfile::from_parts(
                c.0, c.1, c.2, c.3,
            )?))
        };
        for rec in rd.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad number in trajectory row {rec:?}")))
            };
            let (tau, phi, lam, d) = (num(0)?, num(1)?, num(2)?, num(3)?);
            match &mut cur {
                Some(c) if c.0 == tau => {
                    c.1.push(phi);
                    c.3.push(d);
                }
                _ => {
                    if let Some(c) = cur.take() {
                        snapshots.push(finish(c)?);
                    }
                    cur = Some((tau, vec![phi], lam, vec![d]));
                }
            }
        }
        if let Some(c) = cur.take() {
            snapshots.push(finish(c)?);
        }
        if snapshots.is_empty() {
            return Err(Error::Config("trajectory csv holds no snapshots".into()));
        }
        Ok(Trajectory {
            snapshots,
            events: vec![],
            margins: vec![],
            accepted: 0,
            rejected: 0,
        })
    }
}

/// Spatial operator with precomputed stencil geometry.
struct Operator {
    n: f64,
    a: f64,
    cap: CapBoundary,
    phi: Vec<f64>,
    hm: Vec<f64>,
    hp: Vec<f64>,
    den: Vec<f64>,
    v: Vec<f64>,
    s_cap: Vec<f64>,
    log_form: Vec<Option<LogStencil>>,
}

/// Per-node pieces shared by the right-hand side and its derivatives.
struct Local {
    lp: f64,
    lpp: f64,
    l: f64,
}

/// Gap below which spatial derivatives are taken in log-cylinder variables.
const LOG_FORM_GAP: f64 = 0.2;

/// Near the cap the profile is close to `y = c - a log S` with
/// `y = -1/lambda`, `S = 2(n-1) - phi^2`, which no polynomial in `phi`
/// resolves on the last cells. Differencing `y` in `L = log S` is exact for
/// that profile; the last interior node uses a backward difference so it
/// never reads the cap value.
#[derive(Clone, Copy)]
struct LogStencil {
    /// Weights of `y_L` and `y_LL` on nodes `i-1, i, i+1`.
    d1: [f64; 3],
    d2: [f64; 3],
    l_phi: f64,
    l_phiphi: f64,
}

impl Operator {
    fn new(n: u32, a: f64, phi: &[f64], cap: CapBoundary) -> Self {
        let m = phi.len();
        let (mut hm, mut hp, mut den, mut v) =
            (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let nf = n as f64;
        for i in 1..m - 1 {
            hm[i] = phi[i] - phi[i - 1];
            hp[i] = phi[i + 1] - phi[i];
            den[i] = hm[i] * hp[i] * (hm[i] + hp[i]);
            v[i] = (nf - 1.0) / phi[i] - phi[i] / 2.0;
        }
        let s_cap: Vec<f64> = phi
            .iter()
            .map(|p| (2.0 * nf - 2.0 - p * p).max(0.0))
            .collect();
        let mut log_form = vec![None; m];
        if cap == CapBoundary::ZeroDirichlet && m >= 4 {
            for i in 1..m - 1 {
                let s = s_cap[i];
                if !(s < LOG_FORM_GAP && s > 0.0) {
                    continue;
                }
                let l = |j: usize| s_cap[j].ln();
                let (d1, d2) = if i + 1 < m - 1 {
                    let xs = [l(i - 1), l(i), l(i + 1)];
                    let w1 = fd_weights(xs[1], &xs, 1);
                    let w2 = fd_weights(xs[1], &xs, 2);
                    ([w1[0], w1[1], w1[2]], [w2[0], w2[1], w2[2]])
                } else {
                    let h = l(i) - l(i - 1);
                    ([-1.0 / h, 1.0 / h, 0.0], [0.0; 3])
                };
                let p = phi[i];
                log_form[i] = Some(LogStencil {
                    d1,
                    d2,
                    l_phi: -2.0 * p / s,
                    l_phiphi: -2.0 / s - 4.0 * p * p / (s * s),
                });
            }
        }
        Operator {
            n: nf,
            a,
            cap,
            phi: phi.to_vec(),
            hm,
            hp,
            den,
            v,
            s_cap,
            log_form,
        }
    }

    fn len(&self) -> usize {
        self.phi.len()
    }

    #[inline]
    fn local(&self, i: usize, lam0: f64, d: &[f64]) -> Local {
        if let Some(ls) = &self.log_form[i] {
            return self.local_log(ls, i, lam0, d).0;
        }
        let (hm, hp, den) = (self.hm[i], self.hp[i], self.den[i]);
        let dp = d[i + 1] - d[i];
        let dm = d[i] - d[i - 1];
        Local {
            lp: (hm * hm * dp + hp * hp * dm) / den,
            lpp: 2.0 * (hm * dp - hp * dm) / den,
            l: lam0 + d[i],
        }
    }

    /// Log-form derivatives and their partials with respect to
    /// `lambda_{i-1}, lambda_i, lambda_{i+1}`.
    fn local_log(
        &self,
        ls: &LogStencil,
        i: usize,
        lam0: f64,
        d: &[f64],
    ) -> (Local, [f64; 3], [f64; 3]) {
        let lam = [lam0 + d[i - 1], lam0 + d[i], lam0 + d[i + 1]];
        let mut y = [0.0; 3];
        let mut dy = [0.0; 3];
        for k in 0..3 {
            if lam[k] != 0.0 {
                y[k] = -1.0 / lam[k];
                dy[k] = y[k] * y[k];
            }
        }
        let y_l: f64 = (0..3).map(|k| ls.d1[k] * y[k]).sum();
        let y_ll: f64 = (0..3).map(|k| ls.d2[k] * y[k]).sum();
        let y_p = y_l * ls.l_phi;
        let y_pp = y_ll * ls.l_phi * ls.l_phi + y_l * ls.l_phiphi;
        let l = lam[1];
        let (l2, l3) = (l * l, l * l * l);
        let lp = y_p * l2;
        let lpp = y_pp * l2 + 2.0 * y_p * y_p * l3;
        let mut glp = [0.0; 3];
        let mut glpp = [0.0; 3];
        for k in 0..3 {
            let dyp = ls.d1[k] * ls.l_phi * dy[k];
            let dypp = (ls.d2[k] * ls.l_phi * ls.l_phi + ls.d1[k] * ls.l_phiphi) * dy[k];
            glp[k] = l2 * dyp;
            glpp[k] = l2 * dypp + 4.0 * y_p * l3 * dyp;
        }
        glp[1] += 2.0 * l * y_p;
        glpp[1] += 2.0 * l * y_pp + 6.0 * y_p * y_p * l2;
        (Local { lp, lpp, l }, glp, glpp)
    }

    /// Derivatives at node `i` with their stencil partials.
    #[inline]
    fn local_grad(&self, i: usize, lam0: f64, d: &[f64]) -> (Local, [f64; 3], [f64; 3]) {
        if let Some(ls) = &self.log_form[i] {
            return self.local_log(ls, i, lam0, d);
        }
        let (hm, hp, den) = (self.hm[i], self.hp[i], self.den[i]);
        (
            self.local(i, lam0, d),
            [-hp * hp / den, (hp * hp - hm * hm) / den, hm * hm / den],
            [2.0 * hp / den, -2.0 * (hm + hp) / den, 2.0 * hm / den],
        )
    }

    /// `-a lambda_i^2` arranged so that the common part is identical at
    /// every node.
    #[inline]
    fn reaction(&self, lam0: f64, di: f64) -> f64 {
        -self.a * (lam0 * lam0 + di * (2.0 * lam0 + di))
    }

    /// `lambda_tau` and `partial_tau` of the explicit time dependence.
    fn rhs(&self, tau: f64, lam0: f64, d: &[f64], f: &mut [f64], ft: &mut [f64]) {
        let m = self.len();
        let e = tau.exp();
        let p1 = self.phi[1];
        f[0] = 2.0 * self.n * (d[1] - d[0]) / (p1 * p1) + self.reaction(lam0, d[0]);
        ft[0] = 0.0;
        for i in 1..m - 1 {
            let Local { lp, lpp, l } = self.local(i, lam0, d);
            let x = lp * lp / (l * l * l * l);
            let dn = 1.0 + e * x;
            let nu = lpp - 2.0 * lp * lp / l;
            f[i] = nu / dn + self.v[i] * lp + self.reaction(lam0, d[i]);
            ft[i] = -nu * e * x / (dn * dn);
        }
        let last = m - 1;
        ft[last] = 0.0;
        f[last] = match self.cap {
            CapBoundary::ZeroDirichlet => 0.0,
            CapBoundary::Natural => {
                let h = self.phi[last] - self.phi[last - 1];
                2.0 * (d[last - 1] - d[last]) / (h * h) + self.reaction(lam0, d[last])
            }
        };
    }

    /// Tridiagonal Jacobian of the semi-discrete right-hand side.
    fn jacobian(
        &self,
        tau: f64,
        lam0: f64,
        d: &[f64],
        sub: &mut [f64],
        diag: &mut [f64],
        sup: &mut [f64],
    ) {
        let m = self.len();
        let e = tau.exp();
        let a = self.a;
        let p1 = self.phi[1];
        diag[0] = -2.0 * self.n / (p1 * p1) - 2.0 * a * lam0;
        sup[0] = 2.0 * self.n / (p1 * p1);
        sub[0] = 0.0;
        for i in 1..m - 1 {
            let (Local { lp, lpp, l }, gp, gq) = self.local_grad(i, lam0, d);
            let l2 = l * l;
            let l4 = l2 * l2;
            let dn = 1.0 + e * lp * lp / l4;
            let nu = lpp - 2.0 * lp * lp / l;
            let f_pp = 1.0 / dn;
            let f_p = (-4.0 * lp / l) / dn - nu * (2.0 * e * lp / l4) / (dn * dn) + self.v[i];
            let f_l = (2.0 * lp * lp / l2) / dn + nu * (4.0 * e * lp * lp / (l4 * l)) / (dn * dn)
                - 2.0 * a * l;
            diag[i] = f_pp * gq[1] + f_p * gp[1] + f_l;
            sub[i] = f_pp * gq[0] + f_p * gp[0];
            sup[i] = f_pp * gq[2] + f_p * gp[2];
        }
        let last = m - 1;
        sup[last] = 0.0;
        match self.cap {
            CapBoundary::ZeroDirichlet => {
                sub[last] = 0.0;
                diag[last] = 0.0;
            }
            CapBoundary::Natural => {
                let h = self.phi[last] - self.phi[last - 1];
                sub[last] = 2.0 / (h * h);
                diag[last] = -2.0 / (h * h) - 2.0 * a * (lam0 + d[last]);
            }
        }
    }
}

/// Work buffers for one step.
struct Workspace {
    f: Vec<f64>,
    ft: Vec<f64>,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    msub: Vec<f64>,
    mdiag: Vec<f64>,
    msup: Vec<f64>,
    d_mid: Vec<f64>,
    inc1: Vec<f64>,
    inc_a: Vec<f64>,
    inc_b: Vec<f64>,
}

impl Workspace {
    fn new(m: usize) -> Self {
        let z = || vec![0.0; m];
        Workspace {
            f: z(),
            ft: z(),
            sub: z(),
            diag: z(),
            sup: z(),
            msub: z(),
            mdiag: z(),
            msup: z(),
            d_mid: z(),
            inc1: z(),
            inc_a: z(),
            inc_b: z(),
        }
    }
}

fn apply(lam0: f64, d: &[f64], inc: &[f64], out_d: &mut [f64]) -> f64 {
    let new0 = lam0 + inc[0];
    for i in 0..d.len() {
        out_d[i] = d[i] + (inc[i] - inc[0]);
    }
    out_d[0] = 0.0;
    new0
}

/// One linearly implicit Euler increment with a frozen Jacobian.
fn lie_increment(
    op: &Operator,
    ws: &mut Workspace,
    tau: f64,
    lam0: f64,
    d: &[f64],
    h: f64,
    which: u8,
) {
    let m = op.len();
    op.rhs(tau, lam0, d, &mut ws.f, &mut ws.ft);
    for i in 0..m {
        ws.msub[i] = -h * ws.sub[i];
        ws.msup[i] = -h * ws.sup[i];
        ws.mdiag[i] = 1.0 - h * ws.diag[i];
    }
    let out = match which {
        0 => &mut ws.inc1,
        1 => &mut ws.inc_a,
        _ => &mut ws.inc_b,
    };
    for ((o, f), ft) in out.iter_mut().zip(&ws.f).zip(&ws.ft).take(m) {
        *o = h * (f + h * ft);
    }
    if op.cap == CapBoundary::ZeroDirichlet {
        out[m - 1] = 0.0;
        ws.msub[m - 1] = 0.0;
        ws.mdiag[m - 1] = 1.0;
    }
    solve_tridiagonal(&ws.msub, &ws.mdiag, &ws.msup, out);
}

struct Proposal {
    lam0: f64,
    d: Vec<f64>,
    err: f64,
    worst: usize,
}

/// Richardson-extrapolated step and its weighted error.
fn attempt(
    op: &Operator,
    ws: &mut Workspace,
    cfg: &EvolverConfig,
    tau: f64,
    lam0: f64,
    d: &[f64],
    h: f64,
) -> Proposal {
    let m = op.len();
    op.jacobian(tau, lam0, d, &mut ws.sub, &mut ws.diag, &mut ws.sup);
    lie_increment(op, ws, tau, lam0, d, h, 0);
    lie_increment(op, ws, tau, lam0, d, 0.5 * h, 1);
    let mut d_mid = std::mem::take(&mut ws.d_mid);
    let lam_mid = apply(lam0, d, &ws.inc_a, &mut d_mid);
    if op.cap == CapBoundary::ZeroDirichlet {
        d_mid[m - 1] = -lam_mid;
    }
    lie_increment(op, ws, tau + 0.5 * h, lam_mid, &d_mid, 0.5 * h, 2);
    ws.d_mid = d_mid;
    // Two-half-step increment, extrapolated increment and error vector.
    let e_tau = (-tau).exp();
    let mut total = vec![0.0; m];
    let mut err = 0.0f64;
    let mut worst = 0;
    let two0 = ws.inc_a[0] + ws.inc_b[0];
    let err0 = two0 - ws.inc1[0];
    for i in 0..m {
        let two = ws.inc_a[i] + ws.inc_b[i];
        let ei = two - ws.inc1[i];
        total[i] = two + ei;
        let shape = (ei - err0).abs() / (cfg.tol * (e_tau + d[i].abs()) + 4e-16);
        let loosen = (1e-6 / op.s_cap[i].max(1e-300)).max(1.0);
        let abs = ei.abs() / (cfg.atol * loosen);
        let e = shape.max(abs);
        if e > err {
            err = e;
            worst = i;
        }
    }
    let mut nd = vec![0.0; m];
    let lam_new = apply(lam0, d, &total, &mut nd);
    if op.cap == CapBoundary::ZeroDirichlet {
        nd[m - 1] = -lam_new;
    }
    Proposal {
        lam0: lam_new,
        d: nd,
        err,
        worst,
    }
}

fn invariant_problem(op: &Operator, lam0: f64, d: &[f64]) -> Option<String> {
    let m = d.len();
    let interior = if op.cap == CapBoundary::ZeroDirichlet {
        m - 1
    } else {
        m
    };
    for (di, phi) in d.iter().zip(&op.phi).take(interior) {
        if !(lam0 + di < 0.0) {
            return Some(format!("lambda >= 0 at phi = {phi}"));
        }
    }
    // Flat stretches drift apart at the rounding level of the increments.
    let slack = 2.0 * f64::EPSILON * lam0.abs();
    for i in 1..m {
        if d[i] < d[i - 1] - slack {
            return Some(format!("monotonicity lost at phi = {}", op.phi[i]));
        }
    }
    None
}

/// Sandwich margins of a profile against the patched barriers.
pub fn margins(fam: &BarrierFamily, p: &RescaledProfile) -> Result<Margins> {
    let mut out = Margins {
        tau: p.tau,
        min_upper: f64::INFINITY,
        min_lower: f64::INFINITY,
        phi_upper: 0.0,
        phi_lower: 0.0,
    };
    for i in 0..p.finite_len() {
        let phi = p.phi[i];
        if phi >= fam.params.phi_max() {
            continue;
        }
        let l = p.lambda_at(i);
        let up = eval_patched(fam, phi, p.tau, Side::Plus)? - l;
        let lo = l - eval_patched(fam, phi, p.tau, Side::Minus)?;
        if up < out.min_upper {
            out.min_upper = up;
            out.phi_upper = phi;
        }
        if lo < out.min_lower {
            out.min_lower = lo;
            out.phi_lower = phi;
        }
    }
    Ok(out)
}

/// Nodes inside the tip region `|phi| <= R1 e^{-tau/2}`.
pub fn tip_node_count(phi: &[f64], r1: f64, tau: f64) -> usize {
    let lim = r1 * (-0.5 * tau).exp();
    phi.iter().take_while(|&&p| p <= lim).count()
}

/// Adaptive stepper bound to one grid.
pub struct Stepper {
    op: Operator,
    ws: Workspace,
    pub cfg: EvolverConfig,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub events: Vec<Event>,
    last_worst: usize,
}

impl Stepper {
    pub fn new(n: u32, a: f64, phi: &[f64], cfg: EvolverConfig) -> Result<Self> {
        if phi.len() < 5 {
            return Err(Error::Config("need at least 5 grid nodes".into()));
        }
        if !(cfg.tol > 0.0 && cfg.atol > 0.0 && cfg.dtau_init > 0.0 && cfg.dtau_max > 0.0) {
            return Err(Error::Config(
                "tolerances and step bounds must be positive".into(),
            ));
        }
        let h = cfg.dtau_init;
        Ok(Stepper {
            op: Operator::new(n, a, phi, cfg.cap),
            ws: Workspace::new(phi.len()),
            cfg,
            h,
            accepted: 0,
            rejected: 0,
            events: vec![],
            last_worst: 0,
        })
    }

    /// Advance by one accepted step of size at most `dtau_max`.
    pub fn step(&mut self, state: &FlowState, dtau_max: f64) -> Result<FlowState> {
        let p = &state.profile;
        if p.phi != self.op.phi {
            return Err(Error::Config(
                "state grid differs from the stepper grid".into(),
            ));
        }
        let tau = p.tau;
        let mut h = self.h.min(dtau_max).min(self.cfg.dtau_max);
        let h_min = 1e-14 * tau.abs().max(1.0);
        loop {
            if !(h > h_min) {
                let worst = self.last_worst.min(p.len() - 1);
                return Err(Error::StepUnderflow {
                    tau,
                    phi: p.phi[worst],
                    dtau: h,
                });
            }
            let prop = attempt(
                &self.op,
                &mut self.ws,
                &self.cfg,
                tau,
                p.lam_tip,
                &p.dlam,
                h,
            );
            self.last_worst = prop.worst;
            let fac = (0.9 / prop.err.max(1e-10).sqrt()).clamp(0.2, 2.0);
            if !(prop.err <= 1.0) {
                self.rejected += 1;
                self.events.push(Event::Rejected {
                    tau,
                    dtau: h,
                    error: prop.err,
                });
                h *= fac;
                continue;
            }
            if let Some(what) = invariant_problem(&self.op, prop.lam0, &prop.d) {
                self.events.push(Event::InvariantRetry {
                    tau,
                    dtau: h,
                    what: what.clone(),
                });
                h *= 0.5;
                if !(h > h_min) {
                    return Err(Error::Invariant { tau, what });
                }
                continue;
            }
            self.accepted += 1;
            self.h = h * fac;
            let profile = RescaledProfile {
                tau: tau + h,
                phi: p.phi.clone(),
                lam_tip: prop.lam0,
                dlam: prop.d,
            };
            return Ok(FlowState {
                profile,
                dt_last: h,
            });
        }
    }
}

/// Take one adaptive step of at most `dtau_max`.
pub fn step(
    state: &FlowState,
    n: u32,
    a: f64,
    dtau_max: f64,
    cfg: &EvolverConfig,
) -> Result<FlowState> {
    let mut s = Stepper::new(n, a, &state.profile.phi, cfg.clone())?;
    if state.dt_last > 0.0 {
        s.h = state.dt_last;
    }
    s.step(state, dtau_max)
}

/// Evolve from `initial` to `tau_end`, recording snapshots at each
/// checkpoint and monitoring the barrier sandwich after every step.
pub fn run(
    initial: &RescaledProfile,
    fam: &BarrierFamily,
    tau_end: f64,
    checkpoints: &[f64],
    cfg: &EvolverConfig,
) -> Result<Trajectory> {
    let p = &fam.params;
    if (initial.phi.last().unwrap() - p.phi_max()).abs() > 1e-12 {
        return Err(Error::Config(
            "grid must end at the cap sqrt(2(n-1))".into(),
        ));
    }
    let tip = tip_node_count(&initial.phi, p.R1, tau_end);
    if tip < cfg.min_tip_nodes {
        return Err(Error::TipGuard {
            tau: tau_end,
            nodes: tip,
            need: cfg.min_tip_nodes,
        });
    }
    let monitor = if cfg.monitor_sandwich {
        Some(fam)
    } else {
        None
    };
    run_inner(initial, p.n, p.a, monitor, tau_end, checkpoints, cfg)
}

/// Evolve without barriers (no sandwich monitor, no tip guard).
pub fn run_free(
    initial: &RescaledProfile,
    n: u32,
    a: f64,
    tau_end: f64,
    checkpoints: &[f64],
    cfg: &EvolverConfig,
) -> Result<Trajectory> {
    run_inner(initial, n, a, None, tau_end, checkpoints, cfg)
}

fn run_inner(
    initial: &RescaledProfile,
    n: u32,
    a: f64,
    fam: Option<&BarrierFamily>,
    tau_end: f64,
    checkpoints: &[f64],
    cfg: &EvolverConfig,
) -> Result<Trajectory> {
    let tau0 = initial.tau;
    if !(tau_end >= tau0) {
        return Err(Error::param(
            "tau_end",
            tau_end,
            format!("must be >= the initial tau {tau0}"),
        ));
    }
    let eps = fam.map_or(0.0, |f| cfg.eps_grid_factor * f.params.A.abs());
    let mut margin_log = Vec::new();
    let check = |m: &Margins| -> Result<()> {
        if m.min_upper < -eps {
            return Err(Error::Sandwich {
                tau: m.tau,
                side: "upper",
                margin: m.min_upper,
                eps,
            });
        }
        if m.min_lower < -eps {
            return Err(Error::Sandwich {
                tau: m.tau,
                side: "lower",
                margin: m.min_lower,
                eps,
            });
        }
        Ok(())
    };
    if let Some(f) = fam {
        let m0 = margins(f, initial)?;
        check(&m0)?;
        margin_log.push(m0);
    }
    let mut cps: Vec<f64> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t > tau0 && t <= tau_end)
        .collect();
    cps.sort_by(f64::total_cmp);
    cps.dedup();
    if cps.last().is_none_or(|&t| t < tau_end) && tau_end > tau0 {
        cps.push(tau_end);
    }
    let mut stepper = Stepper::new(n, a, &initial.phi, cfg.clone())?;
    let mut state = FlowState::new(initial.clone());
    let mut snapshots = vec![state.clone()];
    let mut next = 0;
    while next < cps.len() {
        if stepper.accepted + stepper.rejected > cfg.max_steps {
            return Err(Error::StepUnderflow {
                tau: state.tau(),
                phi: f64::NAN,
                dtau: stepper.h,
            });
        }
        let target = cps[next];
        let remaining = target - state.tau();
        let mut new = stepper.step(&state, remaining)?;
        if (target - new.tau()).abs() <= 1e-12 * target.abs().max(1.0) {
            new.profile.tau = target;
        }
        if let Some(f) = fam {
            let m = margins(f, &new.profile)?;
            check(&m)?;
            margin_log.push(m);
        }
        state = new;
        if state.tau() >= target {
            snapshots.push(state.clone());
            next += 1;
        }
    }
    Ok(Trajectory {
        snapshots,
        events: stepper.events,
        margins: margin_log,
        accepted: stepper.accepted,
        rejected: stepper.rejected,
    })
}
