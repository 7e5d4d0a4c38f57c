//! Shared fixtures for the benchmarks.

use typeii_core::barriers::{derive_family, BarrierFamily, BarrierInputs};
use typeii_core::evolver::{stretched_grid, GridShape};
use typeii_core::initial_data::{build_hat_lambda0, smooth_corner, InitialDataConfig};
use typeii_core::{FlowState, Result};

/// Barrier family for the default parameters.
pub fn family() -> Result<BarrierFamily> {
    derive_family(&BarrierInputs::default())
}

/// Smoothed initial state on a stretched grid with `cells` cells.
pub fn initial_state(fam: &BarrierFamily, cells: usize) -> Result<FlowState> {
    let idc = InitialDataConfig::new(&fam.params, 0.1, 1.0)?;
    let grid = stretched_grid(cells, fam.params.n, &GridShape::default())?;
    let hat = build_hat_lambda0(&idc, fam, &grid)?;
    Ok(FlowState::new(smooth_corner(&hat, &idc, fam)?.0))
}
