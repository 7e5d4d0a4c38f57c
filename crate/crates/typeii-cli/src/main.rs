use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use typeii_core::{run_pipeline, Error, Mode, RunConfig};

/// Type-II mean curvature flow laboratory.
#[derive(Parser)]
#[command(name = "typeii", version, about)]
struct Cli {
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Subcommand)]
enum Stage {
    /// Tabulate the bowl soliton profile.
    SolveSoliton(Common),
    /// Select and tune the barrier constants.
    DeriveBarriers(Common),
    /// Sweep the barrier residual signs and orderings.
    CertifyBarriers(Common),
    /// Build, smooth and check the initial datum.
    InitData(Common),
    /// Evolve the initial datum between the barriers.
    Evolve(Common),
    /// Fit rates and asymptotics on a trajectory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long = "tau-end")]
    tau_end: Option<f64>,
    /// Number of grid cells.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Accepted for compatibility; runs are deterministic.
    #[arg(long)]
    seedless: bool,
}

impl Stage {
    fn split(self) -> (Mode, Common) {
        match self {
            Stage::SolveSoliton(c) => (Mode::SolveSoliton, c),
            Stage::DeriveBarriers(c) => (Mode::DeriveBarriers, c),
            Stage::CertifyBarriers(c) => (Mode::CertifyBarriers, c),
            Stage::InitData(c) => (Mode::InitData, c),
            Stage::Evolve(c) => (Mode::Evolve, c),
            Stage::Report(c) => (Mode::Report, c),
        }
    }
}

fn merged_config(mode: Mode, f: Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    if let Some(v) = f.out {
        cfg.out = v;
    }
    if let Some(v) = f.n {
        cfg.n = v;
    }
    if let Some(v) = f.a {
        cfg.a = v;
    }
    if f.c.is_some() {
        cfg.c = f.c;
    }
    if let Some(v) = f.r1 {
        cfg.r1 = v;
    }
    if let Some(v) = f.tau0 {
        cfg.tau0 = v;
    }
    if f.tau_end.is_some() {
        cfg.tau_end = f.tau_end;
    }
    if let Some(v) = f.grid {
        cfg.grid = v;
    }
    if let Some(v) = f.tol {
        cfg.tol = v;
    }
    cfg.seedless |= f.seedless;
    Ok(cfg)
}

fn main() -> ExitCode {
    let (mode, flags) = Cli::parse().stage.split();
    let res = merged_config(mode, flags).and_then(|cfg| Ok(run_pipeline(&cfg)?));
    match res {
        Ok(man) => {
            println!("{}", serde_json::to_string_pretty(&man).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map_or("error", Error::kind);
            let body = serde_json::json!({
                "error": kind,
                "message": format!("{e:#}"),
                "stage": mode.name(),
            });
            eprintln!("{body}");
            let usage = matches!(kind, "config" | "invalid_parameter" | "invalid_dimension");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
