//! Stage orchestration and persistence: every stage reads its inputs from
//! disk, writes its outputs atomically and records a manifest with the
//! resolved configuration and content hashes of the inputs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barriers::{
    certify, derive_family, BarrierFamily, BarrierInputs, BarrierParams, CertifyOptions,
};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::evolver::{run, stretched_grid, EvolverConfig, FlowState, GridShape, Trajectory};
use crate::frames::RescaledProfile;
use crate::initial_data::{
    admissibility, build_hat_lambda0, smooth_corner, InitialDataConfig, TipFitWindow,
};
use crate::soliton_profiles::{check_bowl_asymptotics, solve_bowl_profile};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Write `path` through a sibling temporary file and a rename, so readers
/// never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let res = fill(&mut w).and_then(|_| w.flush().map_err(|e| io_err(&tmp, e)));
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_atomic(path, |f| {
        serde_json::to_writer_pretty(&mut *f, v)?;
        f.write_all(b"\n").map_err(|e| io_err(path, e))
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveSoliton,
    DeriveBarriers,
    CertifyBarriers,
    InitData,
    Evolve,
    Report,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveSoliton => "solve-soliton",
            Mode::DeriveBarriers => "derive-barriers",
            Mode::CertifyBarriers => "certify-barriers",
            Mode::InitData => "init-data",
            Mode::Evolve => "evolve",
            Mode::Report => "report",
        }
    }
}

/// Full configuration of one run. Unset optional fields are resolved
/// before the stage runs and the manifest records the resolved values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Output directory.
    pub out: PathBuf,
    pub n: u32,
    pub a: f64,
    /// Log-cylinder center; defaults to `1 + a log(2(n-1))`, which gives `A = 1`.
    pub c: Option<f64>,
    pub eps_tilde: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    /// `R2 / R1`.
    pub r2_ratio: f64,
    /// Starting value of the `tau0` search.
    pub tau0: f64,
    /// Final time; defaults to `tau0 + tau_span`.
    pub tau_end: Option<f64>,
    pub tau_span: f64,
    pub zeta: f64,
    /// Cell count of the stretched grid (nodes = cells + 1).
    pub grid: usize,
    pub grid_shape: GridShape,
    pub tol: f64,
    pub atol: f64,
    pub dtau_max: f64,
    pub checkpoint_every: f64,
    pub profile_tol: f64,
    pub soliton_w_max: f64,
    pub cert_points: usize,
    pub cert_taus: usize,
    pub cert_margin: f64,
    pub z_cap: f64,
    #[serde(rename = "T")]
    pub t_vanish: f64,
    /// Reserved: every run is deterministic.
    pub seedless: bool,
    pub params_path: Option<PathBuf>,
    pub initial_path: Option<PathBuf>,
    pub trajectory_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::SolveSoliton,
            out: PathBuf::from("out"),
            n: 2,
            a: 1.0,
            c: None,
            eps_tilde: 0.1,
            r1: 40.0,
            r2_ratio: 0.1,
            tau0: 20.0,
            tau_end: None,
            tau_span: 3.0,
            zeta: 0.1,
            grid: 4096,
            grid_shape: GridShape::default(),
            tol: 1e-6,
            atol: 1e-10,
            dtau_max: 0.05,
            checkpoint_every: 0.1,
            profile_tol: 1e-8,
            soliton_w_max: 200.0,
            cert_points: 2001,
            cert_taus: 6,
            cert_margin: 1e-6,
            z_cap: 5.0,
            t_vanish: 1.0,
            seedless: false,
            params_path: None,
            initial_path: None,
            trajectory_path: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| io_err(path, e))?;
        Self::from_json(&s)
    }

    /// Fill defaults that depend on other fields and validate ranges.
    pub fn resolve(mut self) -> Result<Self> {
        if self.n < 1 {
            return Err(Error::InvalidDimension {
                n: self.n,
                reason: "need n >= 1",
            });
        }
        let pos = [
            ("a", self.a),
            ("eps_tilde", self.eps_tilde),
            ("R1", self.r1),
            ("r2_ratio", self.r2_ratio),
            ("tau_span", self.tau_span),
            ("zeta", self.zeta),
            ("tol", self.tol),
            ("atol", self.atol),
            ("dtau_max", self.dtau_max),
            ("checkpoint_every", self.checkpoint_every),
            ("profile_tol", self.profile_tol),
            ("soliton_w_max", self.soliton_w_max),
            ("cert_margin", self.cert_margin),
            ("z_cap", self.z_cap),
            ("T", self.t_vanish),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.r2_ratio >= 1.0 || self.zeta >= 1.0 {
            return Err(Error::Config("r2_ratio and zeta must be below 1".into()));
        }
        if self.cert_taus < 1 || self.cert_points < 3 {
            return Err(Error::Config(
                "cert_taus >= 1 and cert_points >= 3 required".into(),
            ));
        }
        if self.c.is_none() && self.n >= 2 {
            self.c = Some(1.0 + self.a * (2.0 * (self.n as f64 - 1.0)).ln());
        }
        Ok(self)
    }

    fn path_or(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(default))
    }

    pub fn params_file(&self) -> PathBuf {
        self.path_or(&self.params_path, "barrier_params.json")
    }

    pub fn initial_file(&self) -> PathBuf {
        self.path_or(&self.initial_path, "initial_data.csv")
    }

    pub fn trajectory_file(&self) -> PathBuf {
        self.path_or(&self.trajectory_path, "trajectory.csv")
    }

    pub fn barrier_inputs(&self) -> BarrierInputs {
        BarrierInputs {
            n: self.n,
            a: self.a,
            c: self.c.unwrap_or(f64::NAN),
            eps_tilde: self.eps_tilde,
            r1: self.r1,
            tau0_hint: self.tau0,
            r2_ratio: self.r2_ratio,
            margin: self.cert_margin,
            ..BarrierInputs::default()
        }
    }

    pub fn evolver_config(&self) -> EvolverConfig {
        EvolverConfig {
            tol: self.tol,
            atol: self.atol,
            dtau_max: self.dtau_max,
            ..EvolverConfig::default()
        }
    }
}

/// Hash of one input artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one stage execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
    /// SHA-256 over the resolved config and the input hashes.
    pub content_hash: String,
    pub outputs: Vec<String>,
    pub crate_version: String,
    pub unix_time: u64,
}

struct Stage {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Stage {
    fn new() -> Self {
        Stage {
            inputs: vec![],
            outputs: vec![],
        }
    }

    fn input(&mut self, p: PathBuf) -> Result<PathBuf> {
        if !p.exists() {
            return Err(Error::Config(format!(
                "missing input artifact {}; run the producing stage first",
                p.display()
            )));
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }
}

fn load_family(stage: &mut Stage, cfg: &RunConfig) -> Result<BarrierFamily> {
    let params: BarrierParams = read_json(&stage.input(cfg.params_file())?)?;
    BarrierFamily::from_params(params)
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Trajectory::read_csv(std::io::BufReader::new(f))
}

fn write_profile(path: &Path, p: &RescaledProfile) -> Result<()> {
    let t = Trajectory {
        snapshots: vec![FlowState::new(p.clone())],
        events: vec![],
        margins: vec![],
        accepted: 0,
        rejected: 0,
    };
    write_atomic(path, |f| t.write_csv(f))
}

/// Checkpoints `tau0 + k dt` strictly inside `(tau0, tau_end)`.
pub fn checkpoints(tau0: f64, tau_end: f64, dt: f64) -> Vec<f64> {
    let k = ((tau_end - tau0) / dt).ceil() as usize;
    (1..k)
        .map(|i| tau0 + i as f64 * dt)
        .filter(|&t| t < tau_end - 1e-9 * dt)
        .collect()
}

/// Evenly spaced certification times on `[tau0, tau0 + span]`.
pub fn cert_times(tau0: f64, span: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![tau0];
    }
    (0..count)
        .map(|i| tau0 + span * i as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Serialize)]
struct SolitonSummary {
    n: u32,
    w_max: f64,
    residual_max: f64,
    asymptotics: Option<crate::soliton_profiles::BowlAsymptotics>,
}

#[derive(Serialize)]
struct InitialSummary<'a> {
    config: &'a InitialDataConfig,
    smoothing: crate::initial_data::SmoothingReport,
    admissibility: crate::initial_data::AdmissibilityReport,
    nodes: usize,
}

#[derive(Serialize)]
struct EvolveSummary<'a> {
    tau0: f64,
    tau_end: f64,
    nodes: usize,
    accepted: usize,
    rejected: usize,
    events: &'a [crate::evolver::Event],
    margins: &'a [crate::evolver::Margins],
}

fn execute(cfg: &RunConfig, st: &mut Stage) -> Result<()> {
    let out = &cfg.out;
    match cfg.mode {
        Mode::SolveSoliton => {
            let prof = solve_bowl_profile(cfg.n, cfg.soliton_w_max, cfg.profile_tol)?;
            let asymptotics = if cfg.n >= 2 && cfg.soliton_w_max >= 50.0 {
                Some(check_bowl_asymptotics(&prof)?)
            } else {
                None
            };
            prof.save(&st.output(out.join("bowl_profile.csv")))?;
            write_json(
                &st.output(out.join("bowl_summary.json")),
                &SolitonSummary {
                    n: cfg.n,
                    w_max: prof.w_max(),
                    residual_max: prof.residual_max,
                    asymptotics,
                },
            )
        }
        Mode::DeriveBarriers => {
            let fam = derive_family(&cfg.barrier_inputs())?;
            write_json(&st.output(cfg.params_file()), &fam.params)
        }
        Mode::CertifyBarriers => {
            let fam = load_family(st, cfg)?;
            let opt = CertifyOptions {
                n_space: cfg.cert_points,
                taus: cert_times(fam.params.tau0, 5.0, cfg.cert_taus),
                margin: cfg.cert_margin,
                ..CertifyOptions::default()
            };
            let rep = certify(&fam, &opt)?;
            write_atomic(&st.output(out.join("certification.csv")), |f| {
                rep.write_csv(f)
            })?;
            write_json(
                &st.output(out.join("certification_summary.json")),
                &rep.summary,
            )?;
            if !rep.all_pass() {
                return Err(Error::Infeasible(format!(
                    "{} certification rows failed; see certification.csv",
                    rep.failures()
                )));
            }
            Ok(())
        }
        Mode::InitData => {
            let fam = load_family(st, cfg)?;
            let p = &fam.params;
            let idc = InitialDataConfig::new(p, cfg.zeta, cfg.t_vanish)?;
            let grid = stretched_grid(cfg.grid, p.n, &cfg.grid_shape)?;
            let hat = build_hat_lambda0(&idc, &fam, &grid)?;
            let (smooth, smoothing) = smooth_corner(&hat, &idc, &fam)?;
            let adm = admissibility(&smooth, &idc.frame()?, p, &TipFitWindow::default())?;
            write_profile(&st.output(cfg.initial_file()), &smooth)?;
            write_json(
                &st.output(out.join("initial_data.json")),
                &InitialSummary {
                    config: &idc,
                    smoothing,
                    admissibility: adm,
                    nodes: smooth.len(),
                },
            )
        }
        Mode::Evolve => {
            let fam = load_family(st, cfg)?;
            let init = load_trajectory(&st.input(cfg.initial_file())?)?;
            let start = &init.snapshots[0].profile;
            let tau_end = cfg.tau_end.unwrap_or(start.tau + cfg.tau_span);
            let cps = checkpoints(start.tau, tau_end, cfg.checkpoint_every);
            let traj = run(start, &fam, tau_end, &cps, &cfg.evolver_config())?;
            write_atomic(&st.output(cfg.trajectory_file()), |f| traj.write_csv(f))?;
            write_json(
                &st.output(out.join("evolve_log.json")),
                &EvolveSummary {
                    tau0: start.tau,
                    tau_end,
                    nodes: start.len(),
                    accepted: traj.accepted,
                    rejected: traj.rejected,
                    events: &traj.events,
                    margins: &traj.margins,
                },
            )
        }
        Mode::Report => {
            let fam = load_family(st, cfg)?;
            let traj = load_trajectory(&st.input(cfg.trajectory_file())?)?;
            let rep = diagnostics::report(&traj, &fam, cfg.t_vanish, cfg.z_cap)?;
            write_json(&st.output(out.join("diagnostics.json")), &rep)?;
            write_atomic(&st.output(out.join("tip_curves.csv")), |f| {
                diagnostics::write_tip_curves(&traj, &fam, cfg.z_cap, f)
            })?;
            write_atomic(&st.output(out.join("cylinder_curves.csv")), |f| {
                diagnostics::write_cylinder_curves(&traj, fam.params.n, f)
            })
        }
    }
}

/// Run one stage and write its manifest to `<out>/manifest_<mode>.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    let cfg = config.clone().resolve()?;
    let mut st = Stage::new();
    execute(&cfg, &mut st)?;
    let inputs = st
        .inputs
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&cfg)?);
    for i in &inputs {
        h.update(i.sha256.as_bytes());
    }
    let man = Manifest {
        mode: cfg.mode,
        content_hash: format!("{:x}", h.finalize()),
        inputs,
        outputs: st.outputs.iter().map(|p| p.display().to_string()).collect(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        unix_time: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg,
    };
    write_json(
        &man.config
            .out
            .join(format!("manifest_{}.json", man.mode.name())),
        &man,
    )?;
    Ok(man)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"mode":"evolve","bogus":1}"#).is_err());
        let c = RunConfig::from_json(r#"{"mode":"init-data","R1":30}"#).unwrap();
        assert_eq!(c.mode, Mode::InitData);
        assert_eq!(c.r1, 30.0);
    }

    #[test]
    fn resolve_fills_center() {
        let c = RunConfig::default().resolve().unwrap();
        assert!((c.c.unwrap() - (1.0 + 2f64.ln())).abs() < 1e-15);
        let c = RunConfig {
            a: 2.0,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        assert!((c.c.unwrap() - (1.0 + 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!(RunConfig {
            zeta: 0.0,
            ..RunConfig::default()
        }
        .resolve()
        .is_err());
    }

    #[test]
    fn checkpoint_grid() {
        let c = checkpoints(20.0, 20.5, 0.1);
        assert_eq!(c.len(), 4);
        assert!(checkpoints(20.0, 20.0, 0.1).is_empty());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, |f| f.write_all(b"hi").map_err(|e| io_err(&p, e))).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "hi");
        assert!(!dir.path().join("sub/x.txt.tmp").exists());
        let bad = write_atomic(&p, |_| Err(Error::Config("x".into())));
        assert!(bad.is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "hi");
    }
}
