use thiserror::Error;

/// Every failure mode reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension n = {n}: {reason}")]
    InvalidDimension { n: u32, reason: &'static str },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    #[error("integrator failed near {at}: {reason}")]
    Integrator { at: f64, reason: String },

    #[error("query {at} outside tabulated domain [{lo}, {hi}]")]
    OutOfDomain { at: f64, lo: f64, hi: f64 },

    #[error("profile too short: need {need}, have {have}")]
    DomainTooShort { need: f64, have: f64 },

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("frame conversion failed: {0}")]
    Frame(String),

    #[error("infeasible barrier configuration: {0}")]
    Infeasible(String),

    #[error("initial data rejected: {0}")]
    InitialData(String),

    #[error("step size underflow at tau = {tau} (worst node phi = {phi}, dtau = {dtau:e})")]
    StepUnderflow { tau: f64, phi: f64, dtau: f64 },

    #[error("invariant violated at tau = {tau}: {what}")]
    Invariant { tau: f64, what: String },

    #[error("sandwich violated at tau = {tau}: {side} margin {margin:e} < -{eps:e}")]
    Sandwich {
        tau: f64,
        side: &'static str,
        margin: f64,
        eps: f64,
    },

    #[error("tip region under-resolved: {nodes} nodes in |phi| <= R1 e^(-tau/2) at tau = {tau}, need {need}; remesh with a smaller tip spacing or more nodes")]
    TipGuard { tau: f64, nodes: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension { .. } => "invalid_dimension",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Integrator { .. } => "integrator",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::DomainTooShort { .. } => "domain_too_short",
            Error::Fit(_) => "fit",
            Error::Frame(_) => "frame",
            Error::Infeasible(_) => "infeasible",
            Error::InitialData(_) => "initial_data",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::Invariant { .. } => "invariant",
            Error::Sandwich { .. } => "sandwich",
            Error::TipGuard { .. } => "tip_guard",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
