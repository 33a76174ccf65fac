//! Unified primal-dual finite-volume solver for PDE-constrained inverse
//! problems.
//!
//! The constraint PDE, its lifted parameters and the adjoint are advanced
//! as one non-conservative hyperbolic system by a second-order one-step
//! scheme with a path-integrated DOT flux. A direction flag switches the
//! same scheme between the forward march and the backward adjoint march.

pub mod ader;
pub mod checks;
pub mod error;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod reference;
pub mod riemann;
pub mod system;

pub use error::{Error, Result};
pub use system::{
    CellField, Grid, Layout, MeasurementData, Model, SpaceTimeTable, TrajectoryStore,
    UnifiedState, UnifiedSystem,
};
