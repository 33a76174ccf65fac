//! Concrete constraint models and the data of the three inverse problems.

use nalgebra::{DMatrix, DVector};

use crate::ader::Scheme;
use crate::error::{Error, Result};
use crate::system::{CellField, Grid, Layout, MeasurementData, Model, SpaceTimeTable, UnifiedSystem};

/// Inviscid Burgers, `∂t q + ∂x (q²/2) = 0`, measured directly (`ψ = q`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Burgers;

impl Model for Burgers {
    fn name(&self) -> &str {
        "burgers"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        0
    }
    fn component_names(&self) -> Vec<String> {
        vec!["q".into(), "p".into()]
    }
    fn flux(&self, u: &[f64], _b: &[f64]) -> DVector<f64> {
        DVector::from_element(1, 0.5 * u[0] * u[0])
    }
    fn flux_jacobian_state(&self, u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, u[0])
    }
    fn measurement(&self, u: &[f64], _b: &[f64]) -> f64 {
        u[0]
    }
    fn measurement_gradient(&self, _u: &[f64], _b: &[f64]) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
    fn adjoint_coupling(&self, _u: &[f64], _b: &[f64], _p: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(1, 1))
    }
    fn wave_speeds(&self, u: &[f64], _b: &[f64]) -> Option<Vec<f64>> {
        Some(vec![u[0]])
    }
    fn state_flux_abs(&self, u: &[f64], _b: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, u[0].abs()))
    }
}

/// Which adjoint coupling block the shallow water model reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweCoupling {
    /// Single `−q̃` entry in the momentum-adjoint row, bottom column.
    #[default]
    Printed,
    /// Built from derivatives of the extended Jacobian (antisymmetric,
    /// entries in the depth-adjoint and bottom-adjoint rows).
    Derived,
}

/// Scaled shallow water with the bottom lifted to a parameter:
///
/// ```text
/// ∂t h + ∂x (ε q)                     = 0
/// ∂t q + ∂x (ε q²/h + h²/(2ε))        = −h ∂x b
/// ```
///
/// measured through the free surface `ζ = (h − 1)/ε + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShallowWater {
    pub epsilon: f64,
    pub coupling: SweCoupling,
}

/// Smallest admissible depth.
pub const MIN_DEPTH: f64 = 1e-10;

impl ShallowWater {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            coupling: SweCoupling::default(),
        }
    }

    pub fn with_coupling(mut self, coupling: SweCoupling) -> Self {
        self.coupling = coupling;
        self
    }

    /// Depth from free surface and bottom: `h = 1 + ε (ζ − b)`.
    pub fn depth_from_surface(&self, zeta: f64, b: f64) -> f64 {
        1.0 + self.epsilon * (zeta - b)
    }

    pub fn free_surface(&self, h: f64, b: f64) -> f64 {
        (h - 1.0) / self.epsilon + b
    }
}

impl Model for ShallowWater {
    fn name(&self) -> &str {
        "shallow_water"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn component_names(&self) -> Vec<String> {
        ["h", "q", "b", "h_adj", "q_adj", "b_adj"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
    fn flux(&self, u: &[f64], _b: &[f64]) -> DVector<f64> {
        let (h, q, e) = (u[0], u[1], self.epsilon);
        DVector::from_vec(vec![e * q, e * q * q / h + h * h / (2.0 * e)])
    }
    fn param_coupling(&self, u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, -u[0]])
    }
    fn flux_jacobian_state(&self, u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        let (h, q, e) = (u[0], u[1], self.epsilon);
        DMatrix::from_row_slice(2, 2, &[0.0, e, h / e - e * q * q / (h * h), 2.0 * e * q / h])
    }
    fn measurement(&self, u: &[f64], b: &[f64]) -> f64 {
        self.free_surface(u[0], b[0])
    }
    fn measurement_gradient(&self, _u: &[f64], _b: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![1.0 / self.epsilon, 0.0, 1.0])
    }
    fn adjoint_coupling(&self, _u: &[f64], _b: &[f64], p: &[f64]) -> Option<DMatrix<f64>> {
        match self.coupling {
            SweCoupling::Printed => {
                let mut d = DMatrix::zeros(3, 3);
                d[(1, 2)] = -p[1];
                Some(d)
            }
            SweCoupling::Derived => None,
        }
    }
    fn wave_speeds(&self, u: &[f64], _b: &[f64]) -> Option<Vec<f64>> {
        let (h, q) = (u[0], u[1]);
        let c = h.sqrt();
        let eu = self.epsilon * q / h;
        Some(vec![eu - c, eu + c])
    }
    fn state_flux_abs(&self, u: &[f64], _b: &[f64]) -> Option<DMatrix<f64>> {
        let (r, lam, rinv) = swe_eigendecomposition(u[0], u[1], self.epsilon).ok()?;
        let abs = lam.map(f64::abs);
        let full = r * abs * rinv;
        Some(full.view((0, 0), (2, 2)).into_owned())
    }
    fn check_admissible(&self, u: &[f64], _b: &[f64]) -> std::result::Result<(), String> {
        if u[0].is_finite() && u[0] >= MIN_DEPTH {
            Ok(())
        } else {
            Err(format!("depth h = {} below {MIN_DEPTH:e}", u[0]))
        }
    }
}

/// Closed-form `R`, `Λ`, `R⁻¹` of the shallow water flux Jacobian,
/// embedded in the `(h, q, b, h̃, q̃)` layout with identity outside the
/// wet block. Fails near the sonic point `q²ε² = h³`, where the
/// closed-form columns degenerate.
pub fn swe_eigendecomposition(
    h: f64,
    q: f64,
    eps: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("depth {h} must be positive")));
    }
    let h3 = h * h * h;
    let num = q * q * eps * eps - h3;
    if num.abs() < 1e-10 * h3 {
        return Err(Error::NonDiagonalizable {
            detail: format!("sonic state h = {h}, q = {q}"),
        });
    }
    let h52 = h * h * h.sqrt();
    let h32 = h * h.sqrt();
    let sq = h.sqrt();
    let u = q / h;

    let mut r = DMatrix::identity(5, 5);
    r[(0, 0)] = 1.0;
    r[(0, 1)] = 1.0;
    r[(1, 0)] = num / (h * q * eps * eps + h52 * eps);
    r[(1, 1)] = num / (h * q * eps * eps - h52 * eps);

    let mut lam = DMatrix::zeros(5, 5);
    lam[(0, 0)] = u * eps - sq;
    lam[(1, 1)] = u * eps + sq;

    let mut rinv = DMatrix::identity(5, 5);
    rinv[(0, 0)] = num / (2.0 * h32 * q * eps - 2.0 * h3);
    rinv[(0, 1)] = -eps / (2.0 * sq);
    rinv[(1, 0)] = -num / (2.0 * h32 * q * eps + 2.0 * h3);
    rinv[(1, 1)] = eps / (2.0 * sq);
    Ok((r, lam, rinv))
}

/// Prescribed free surface `ζ̄(x, t) = 0.3 (x − t) / cosh²(x − t)`.
pub fn swe_target(x: f64, t: f64) -> f64 {
    let s = x - t;
    let c = s.cosh();
    0.3 * s / (c * c)
}

/// Initial data of the Burgers recovery problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurgersProfile {
    /// `½` for `x < 0`, `0` otherwise.
    Step,
    /// `sin(2πx)`.
    Sine,
}

impl BurgersProfile {
    pub fn initial(&self, x: f64) -> f64 {
        match self {
            Self::Step => {
                if x < 0.0 {
                    0.5
                } else {
                    0.0
                }
            }
            Self::Sine => (2.0 * std::f64::consts::PI * x).sin(),
        }
    }

    /// Entropy solution at `(x, t)`, valid before the sine profile breaks
    /// (`t < 1/(2π)`).
    pub fn exact(&self, x: f64, t: f64) -> f64 {
        match self {
            // shock with speed (½ + 0)/2
            Self::Step => {
                if x < 0.25 * t {
                    0.5
                } else {
                    0.0
                }
            }
            Self::Sine => sine_characteristic(x, t),
        }
    }
}

/// Solves `q = sin(2π(x − q t))` by safeguarded Newton on `[−1, 1]`.
fn sine_characteristic(x: f64, t: f64) -> f64 {
    let k = 2.0 * std::f64::consts::PI;
    let g = |q: f64| q - (k * (x - q * t)).sin();
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut q = (k * x).sin();
    for _ in 0..100 {
        let gq = g(q);
        if gq.abs() < 1e-15 {
            break;
        }
        if gq > 0.0 {
            hi = q;
        } else {
            lo = q;
        }
        let dg = 1.0 + k * t * (k * (x - q * t)).cos();
        let next = q - gq / dg;
        q = if next > lo && next < hi && dg > 0.0 {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 {
            break;
        }
    }
    q
}

/// Where the Burgers measurement comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSource {
    /// The entropy solution in closed form.
    #[default]
    Exact,
    /// A forward run of the unified scheme, stored as a space-time table.
    Simulated,
}

/// Measurement `q̄(x, t)` for a Burgers recovery problem.
pub fn burgers_target(
    profile: BurgersProfile,
    grid: Grid,
    final_time: f64,
    cfl: f64,
    source: TargetSource,
) -> Result<MeasurementData> {
    match source {
        TargetSource::Exact => Ok(MeasurementData::closed(move |x, t| profile.exact(x, t))),
        TargetSource::Simulated => {
            let placeholder = MeasurementData::closed(|_, _| 0.0);
            let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &placeholder));
            let init = burgers_field(grid, |x| profile.initial(x))?;
            let dt = crate::ader::stable_dt(&scheme.sys, &init, cfl)?;
            let (_, traj) = scheme.solve_forward(&init, final_time, dt)?;
            let mut values = Vec::with_capacity(traj.len() * grid.cells);
            for k in 0..traj.len() {
                values.extend_from_slice(traj.level(k));
            }
            let table = SpaceTimeTable::new(grid.centers(), traj.times().to_vec(), values)?;
            Ok(MeasurementData::Table(table))
        }
    }
}

/// Burgers unified field with state `f(x)` and zero adjoint.
pub fn burgers_field(grid: Grid, f: impl Fn(f64) -> f64) -> Result<CellField> {
    let cells = grid
        .centers()
        .into_iter()
        .map(|x| DVector::from_vec(vec![f(x), 0.0]))
        .collect();
    CellField::from_interior(grid, Layout::new(1, 0), cells)
}

/// Shallow water unified field from depth, discharge and bottom profiles.
pub fn swe_field(
    grid: Grid,
    h: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
) -> Result<CellField> {
    let cells = grid
        .centers()
        .into_iter()
        .map(|x| DVector::from_vec(vec![h(x), q(x), b(x), 0.0, 0.0, 0.0]))
        .collect();
    CellField::from_interior(grid, Layout::new(2, 1), cells)
}

/// The three recovery problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    BurgersStep,
    BurgersSine,
    SweBottom,
}

impl PresetKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BurgersStep => "burgers_step",
            Self::BurgersSine => "burgers_sine",
            Self::SweBottom => "swe_bottom",
        }
    }

    pub fn all() -> [PresetKind; 3] {
        [Self::BurgersStep, Self::BurgersSine, Self::SweBottom]
    }
}

/// Parameters of one recovery experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub kind: PresetKind,
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub final_time: f64,
    pub cfl: f64,
    pub lambda_ip: f64,
    pub iterations: usize,
    /// Constant starting guess of the sought field.
    pub initial_guess: f64,
    /// Shallow water scaling; unused by Burgers.
    pub epsilon: f64,
}

impl ExperimentPreset {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.x_min, self.x_max, self.cells)
    }
}

pub fn make_preset(name: &str) -> Result<ExperimentPreset> {
    let kind = match name {
        "burgers_step" => PresetKind::BurgersStep,
        "burgers_sine" => PresetKind::BurgersSine,
        "swe_bottom" => PresetKind::SweBottom,
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(preset(kind))
}

pub fn preset(kind: PresetKind) -> ExperimentPreset {
    match kind {
        PresetKind::BurgersStep => ExperimentPreset {
            kind,
            x_min: -3.0,
            x_max: 3.0,
            cells: 200,
            final_time: 0.12,
            cfl: 0.1,
            lambda_ip: 0.7,
            iterations: 80,
            initial_guess: -0.2,
            epsilon: 0.0,
        },
        PresetKind::BurgersSine => ExperimentPreset {
            kind,
            x_min: 0.0,
            x_max: 1.0,
            cells: 160,
            final_time: 0.1,
            cfl: 0.1,
            lambda_ip: 2.7,
            iterations: 40,
            initial_guess: 0.0,
            epsilon: 0.0,
        },
        PresetKind::SweBottom => ExperimentPreset {
            kind,
            x_min: -10.0,
            x_max: 10.0,
            cells: 300,
            final_time: 3.0,
            cfl: 0.1,
            lambda_ip: 1.9,
            iterations: 40,
            initial_guess: 0.2,
            epsilon: 0.01,
        },
    }
}
