//! Numerical laboratory for noncompact rotationally symmetric mean
//! curvature flow with Type-II blow-up at the tip.
//!
//! The pipeline runs in stages: bowl and auxiliary profiles, barrier
//! constants and certification, initial data, evolution of
//! `lambda(phi, tau)` and asymptotic diagnostics.

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barriers;
pub mod diagnostics;
pub mod error;
pub mod evolver;
pub mod frames;
pub mod initial_data;
pub(crate) mod numerics;
pub mod pipeline;
pub mod soliton_profiles;

pub use barriers::{
    certify, derive_constants, derive_family, BarrierFamily, BarrierInputs, BarrierParams,
    CertificationReport, CertifyOptions, Side,
};
pub use diagnostics::DiagnosticsReport;
pub use error::{Error, Result};
pub use evolver::{EvolverConfig, FlowState, Trajectory};
pub use frames::{FrameParams, PhysicalProfile, RescaledProfile, TipFrame};
pub use initial_data::{AdmissibilityReport, InitialDataConfig};
pub use numerics::LineFit;
pub use pipeline::{run_pipeline, Mode, RunConfig};
pub use soliton_profiles::{QProfile, SolitonProfile};
