//! Shared fixtures for the criterion benches.

use dualfv_core::models::{burgers_field, swe_field, Burgers, ShallowWater};
use dualfv_core::{CellField, Grid, MeasurementData};

pub const SWE_EPSILON: f64 = 0.01;

pub fn zero_measurement() -> MeasurementData {
    MeasurementData::closed(|_, _| 0.0)
}

pub fn burgers_sine(cells: usize) -> CellField {
    let grid = Grid::new(0.0, 1.0, cells).expect("grid");
    burgers_field(grid, |x| (2.0 * std::f64::consts::PI * x).sin() + 0.1).expect("field")
}

/// Wet state over a smooth bump.
pub fn swe_bump(cells: usize) -> CellField {
    let grid = Grid::new(-10.0, 10.0, cells).expect("grid");
    swe_field(grid, |x| 1.0 + 0.1 * (-x * x).exp(), |_| 0.05, |x| 0.2 * (-(x - 1.0).powi(2)).exp())
        .expect("field")
}

pub fn burgers() -> Burgers {
    Burgers
}

pub fn shallow_water() -> ShallowWater {
    ShallowWater::new(SWE_EPSILON)
}
