//! Domain types and the construction of the extended and unified systems.
//!
//! A constraint PDE `∂t U + ∂x R(U,b) = L(U,b) + B̃(U,b) ∂x b` is lifted by
//! appending the spatially varying parameters `b` (with `∂t b = 0`) to the
//! state, giving `Ũ = (U, b)` and the extended Jacobian
//! `J_R = [[∂R/∂U, ∂R/∂b − B̃], [0, 0]]`. The unified system then stacks
//! `Ũ` with the adjoint `P` (length `m + n`):
//!
//! ```text
//! ∂t Q + ∂x F(Q) + B(Q) ∂x Q = S(Q),   Q = (U, b, P)
//! F = (R, 0, 0),  B = [[M̃, 0], [D, J_Rᵀ]],  S = (L, 0, −(∂L̃/∂Ũ)ᵀ P + (ψ̄ − ψ) ∇ψ)
//! ```
//!
//! with `M̃ = [[0, −B̃], [0, 0]]` carrying the non-conservative parameter
//! coupling of the constraint itself.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, check_finite};
use crate::riemann::Dissipation;

/// Uniform 1-D grid with ghost layers on both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub ghost_layers: usize,
}

impl Grid {
    pub const DEFAULT_GHOST_LAYERS: usize = 2;

    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        Self::with_ghosts(x_min, x_max, cells, Self::DEFAULT_GHOST_LAYERS)
    }

    pub fn with_ghosts(x_min: f64, x_max: f64, cells: usize, ghost_layers: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument("grid needs at least one cell".into()));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid domain [{x_min}, {x_max}]"
            )));
        }
        if ghost_layers == 0 {
            return Err(Error::InvalidArgument("at least one ghost layer required".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            cells,
            ghost_layers,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    /// Barycenter of interior cell `i` (0-based).
    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    /// Barycenter of storage slot `j`, ghosts included.
    pub fn storage_center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 - self.ghost_layers as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    pub fn storage_len(&self) -> usize {
        self.cells + 2 * self.ghost_layers
    }

    /// Storage range of the interior cells.
    pub fn interior(&self) -> std::ops::Range<usize> {
        self.ghost_layers..self.ghost_layers + self.cells
    }
}

/// Partition of a unified vector into state, parameter and adjoint slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// State dimension `m`.
    pub m: usize,
    /// Parameter dimension `n`.
    pub n: usize,
}

impl Layout {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }
    /// Length of `Ũ = (U, b)`.
    pub fn extended(&self) -> usize {
        self.m + self.n
    }
    /// Length of `Q = (U, b, P)`.
    pub fn unified(&self) -> usize {
        2 * (self.m + self.n)
    }
    pub fn state(&self) -> std::ops::Range<usize> {
        0..self.m
    }
    pub fn params(&self) -> std::ops::Range<usize> {
        self.m..self.m + self.n
    }
    pub fn adjoint(&self) -> std::ops::Range<usize> {
        self.m + self.n..self.unified()
    }
}

/// One cell value `Q = (U, b, P)` of the unified system.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedState {
    q: DVector<f64>,
    layout: Layout,
}

impl UnifiedState {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            q: DVector::zeros(layout.unified()),
            layout,
        }
    }

    pub fn from_parts(layout: Layout, state: &[f64], params: &[f64], adjoint: &[f64]) -> Result<Self> {
        for (expected, found) in [
            (layout.m, state.len()),
            (layout.n, params.len()),
            (layout.extended(), adjoint.len()),
        ] {
            if expected != found {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        let q = DVector::from_iterator(
            layout.unified(),
            state.iter().chain(params).chain(adjoint).copied(),
        );
        Ok(Self { q, layout })
    }

    pub fn from_vector(layout: Layout, q: DVector<f64>) -> Result<Self> {
        if q.len() != layout.unified() {
            return Err(Error::DimensionMismatch {
                expected: layout.unified(),
                found: q.len(),
            });
        }
        Ok(Self { q, layout })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn into_vector(self) -> DVector<f64> {
        self.q
    }
    pub fn state(&self) -> &[f64] {
        &self.q.as_slice()[self.layout.state()]
    }
    pub fn params(&self) -> &[f64] {
        &self.q.as_slice()[self.layout.params()]
    }
    pub fn extended(&self) -> &[f64] {
        &self.q.as_slice()[..self.layout.extended()]
    }
    pub fn adjoint(&self) -> &[f64] {
        &self.q.as_slice()[self.layout.adjoint()]
    }
    pub fn adjoint_mut(&mut self) -> &mut [f64] {
        let r = self.layout.adjoint();
        &mut self.q.as_mut_slice()[r]
    }
}

/// Cell averages of the unified vector on a grid, ghosts included.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub grid: Grid,
    pub layout: Layout,
    pub data: Vec<DVector<f64>>,
    pub time: f64,
}

impl CellField {
    pub fn zeros(grid: Grid, layout: Layout) -> Self {
        Self {
            grid,
            layout,
            data: vec![DVector::zeros(layout.unified()); grid.storage_len()],
            time: 0.0,
        }
    }

    /// Builds a field from per-interior-cell vectors and fills the ghosts.
    pub fn from_interior(grid: Grid, layout: Layout, interior: Vec<DVector<f64>>) -> Result<Self> {
        if interior.len() != grid.cells {
            return Err(Error::DimensionMismatch {
                expected: grid.cells,
                found: interior.len(),
            });
        }
        let mut field = Self::zeros(grid, layout);
        for (slot, value) in field.data[grid.interior()].iter_mut().zip(interior) {
            if value.len() != layout.unified() {
                return Err(Error::DimensionMismatch {
                    expected: layout.unified(),
                    found: value.len(),
                });
            }
            *slot = value;
        }
        fill_transmissive(&mut field);
        Ok(field)
    }

    /// Interior cell `i` (0-based).
    pub fn cell(&self, i: usize) -> &DVector<f64> {
        &self.data[self.grid.ghost_layers + i]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.data[self.grid.ghost_layers + i]
    }

    pub fn interior(&self) -> &[DVector<f64>] {
        &self.data[self.grid.interior()]
    }

    pub fn unified_state(&self, i: usize) -> UnifiedState {
        UnifiedState {
            q: self.cell(i).clone(),
            layout: self.layout,
        }
    }

    /// Component `c` over the interior cells.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.interior().iter().map(|q| q[c]).collect()
    }

    /// Flattened `(U, b)` slices of the interior cells.
    pub fn extended_slices(&self) -> Vec<f64> {
        let e = self.layout.extended();
        self.interior()
            .iter()
            .flat_map(|q| q.as_slice()[..e].iter().copied())
            .collect()
    }

    /// Flattened adjoint slices of the interior cells.
    pub fn adjoint_slices(&self) -> Vec<f64> {
        let r = self.layout.adjoint();
        self.interior()
            .iter()
            .flat_map(|q| q.as_slice()[r.clone()].iter().copied())
            .collect()
    }
}

/// Copies the nearest interior value into every ghost cell.
pub fn fill_transmissive(field: &mut CellField) {
    let g = field.grid.ghost_layers;
    let n = field.grid.cells;
    let first = field.data[g].clone();
    let last = field.data[g + n - 1].clone();
    for j in 0..g {
        field.data[j].copy_from(&first);
        field.data[g + n + j].copy_from(&last);
    }
}

/// Space-time table of measurement values with bilinear lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeTable {
    xs: Vec<f64>,
    ts: Vec<f64>,
    /// Row-major by time level: `values[k * xs.len() + i]`.
    values: Vec<f64>,
}

impl SpaceTimeTable {
    pub fn new(xs: Vec<f64>, ts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || ts.is_empty() {
            return Err(Error::InvalidArgument("empty measurement table".into()));
        }
        if values.len() != xs.len() * ts.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len() * ts.len(),
                found: values.len(),
            });
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&xs) || !increasing(&ts) {
            return Err(Error::InvalidArgument("table axes must be increasing".into()));
        }
        Ok(Self { xs, ts, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn positions(&self) -> &[f64] {
        &self.xs
    }

    /// Bilinear interpolation, clamped to the table's bounding box.
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let (i, wx) = bracket(&self.xs, x);
        let (k, wt) = bracket(&self.ts, t);
        let nx = self.xs.len();
        let at = |kk: usize, ii: usize| self.values[kk * nx + ii];
        let i1 = (i + 1).min(nx - 1);
        let k1 = (k + 1).min(self.ts.len() - 1);
        let lo = at(k, i) * (1.0 - wx) + at(k, i1) * wx;
        let hi = at(k1, i) * (1.0 - wx) + at(k1, i1) * wx;
        lo * (1.0 - wt) + hi * wt
    }
}

fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if last == 0 || v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[last] {
        return (last, 0.0);
    }
    let i = axis.partition_point(|&a| a <= v) - 1;
    let w = (v - axis[i]) / (axis[i + 1] - axis[i]);
    (i, w)
}

/// The measurement `ψ̄(x, t)` the cost functional compares against.
#[derive(Clone)]
pub enum MeasurementData {
    Closed(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    Table(SpaceTimeTable),
}

impl MeasurementData {
    pub fn closed(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Closed(Arc::new(f))
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            Self::Closed(f) => f(x, t),
            Self::Table(table) => table.eval(x, t),
        }
    }
}

impl fmt::Debug for MeasurementData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Closed(_) => f.write_str("MeasurementData::Closed(..)"),
            Self::Table(t) => f
                .debug_struct("MeasurementData::Table")
                .field("cells", &t.xs.len())
                .field("levels", &t.ts.len())
                .finish(),
        }
    }
}

/// Recorded forward history of the `(U, b)` slices at every time level.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    layout: Layout,
    cells: usize,
    times: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl TrajectoryStore {
    pub fn new(layout: Layout, cells: usize) -> Self {
        Self {
            layout,
            cells,
            times: Vec::new(),
            levels: Vec::new(),
        }
    }

    /// Appends the interior `(U, b)` slices of `field`.
    pub fn record(&mut self, field: &CellField) -> Result<()> {
        if field.grid.cells != self.cells || field.layout != self.layout {
            return Err(Error::TrajectoryMismatch(
                "field shape differs from trajectory".into(),
            ));
        }
        if let Some(&last) = self.times.last() {
            if field.time <= last {
                return Err(Error::TrajectoryMismatch(format!(
                    "time {} does not advance past {}",
                    field.time, last
                )));
            }
        }
        self.times.push(field.time);
        self.levels.push(field.extended_slices());
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn cells(&self) -> usize {
        self.cells
    }
    pub fn len(&self) -> usize {
        self.levels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    /// Step size between level `k` and `k + 1`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
    /// Flattened `(U, b)` slices at level `k`.
    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }
    /// `(U, b)` of interior cell `i` at level `k`.
    pub fn cell(&self, k: usize, i: usize) -> &[f64] {
        let e = self.layout.extended();
        &self.levels[k][i * e..(i + 1) * e]
    }

    /// Overwrites the `(U, b)` slices of `field` with level `k`, verbatim.
    pub fn load_into(&self, k: usize, field: &mut CellField) -> Result<()> {
        if k >= self.levels.len() {
            return Err(Error::TrajectoryMismatch(format!(
                "level {k} requested, {} recorded",
                self.levels.len()
            )));
        }
        if field.grid.cells != self.cells || field.layout != self.layout {
            return Err(Error::TrajectoryMismatch(
                "field shape differs from trajectory".into(),
            ));
        }
        let e = self.layout.extended();
        for i in 0..self.cells {
            let src = self.cell(k, i);
            field.cell_mut(i).as_mut_slice()[..e].copy_from_slice(src);
        }
        fill_transmissive(field);
        field.time = self.times[k];
        Ok(())
    }
}

/// A constraint PDE `∂t U + ∂x R(U,b) = L(U,b) + B̃(U,b) ∂x b` together
/// with its measurement operator `ψ(U, b)`.
///
/// Jacobians are analytic. Defaults describe the common case of no
/// source, no parameter coupling and no parameter dependence of the flux.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    /// State dimension `m`.
    fn state_dim(&self) -> usize;
    /// Parameter dimension `n`.
    fn param_dim(&self) -> usize;

    fn layout(&self) -> Layout {
        Layout::new(self.state_dim(), self.param_dim())
    }

    /// Labels of the `2(m + n)` unified components.
    fn component_names(&self) -> Vec<String>;

    fn flux(&self, u: &[f64], b: &[f64]) -> DVector<f64>;

    fn source(&self, _u: &[f64], _b: &[f64]) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }

    /// `B̃(U, b)`, an `m × n` matrix.
    fn param_coupling(&self, _u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.param_dim())
    }

    fn flux_jacobian_state(&self, u: &[f64], b: &[f64]) -> DMatrix<f64>;

    fn flux_jacobian_params(&self, _u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.param_dim())
    }

    /// `∂L/∂(U, b)`, an `m × (m + n)` matrix.
    fn source_jacobian(&self, _u: &[f64], _b: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.state_dim() + self.param_dim())
    }

    fn measurement(&self, u: &[f64], b: &[f64]) -> f64;

    /// `∇_(U,b) ψ`, length `m + n`.
    fn measurement_gradient(&self, u: &[f64], b: &[f64]) -> DVector<f64>;

    /// Closed-form adjoint coupling block `D` (`(m+n) × (m+n)`); `None`
    /// makes the unified assembly build it from second derivatives of `J_R`.
    fn adjoint_coupling(&self, _u: &[f64], _b: &[f64], _p: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Closed-form eigenvalues of `∂R/∂U`; `None` uses a dense eigensolve.
    fn wave_speeds(&self, _u: &[f64], _b: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form `|∂R/∂U|`; used when the flux does not depend on `b`.
    fn state_flux_abs(&self, _u: &[f64], _b: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn check_admissible(&self, _u: &[f64], _b: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }
}

/// `J_R = [[∂R/∂U, ∂R/∂b − B̃], [0, 0]]`.
pub fn assemble_extended_jacobian(model: &dyn Model, u: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    let (m, n) = (model.state_dim(), model.param_dim());
    let ju = model.flux_jacobian_state(u, b);
    check_finite(&ju, "flux_jacobian_state")?;
    let mut jr = DMatrix::zeros(m + n, m + n);
    jr.view_mut((0, 0), (m, m)).copy_from(&ju);
    if n > 0 {
        let jb = model.flux_jacobian_params(u, b);
        check_finite(&jb, "flux_jacobian_params")?;
        let bt = model.param_coupling(u, b);
        check_finite(&bt, "param_coupling")?;
        jr.view_mut((0, m), (m, n)).copy_from(&(jb - bt));
    }
    Ok(jr)
}

/// Eigen-pairs of the extended Jacobian `J_R`.
#[derive(Debug, Clone)]
pub struct ExtendedEigen {
    /// `λ_1..λ_m` of `∂R/∂U` followed by `n` zeros.
    pub values: Vec<f64>,
    /// Matching eigenvectors as columns: `[v_i, 0]` then `[Ṽ_j, e_j]`.
    pub vectors: DMatrix<f64>,
}

/// Eigenstructure of the extended system; requires `∂R/∂U` invertible.
pub fn extended_eigenstructure(model: &dyn Model, u: &[f64], b: &[f64]) -> Result<ExtendedEigen> {
    let (m, n) = (model.state_dim(), model.param_dim());
    let ju = model.flux_jacobian_state(u, b);
    check_finite(&ju, "flux_jacobian_state")?;
    let (lams, vecs) = linalg::real_eigen(&ju)?;
    let scale = ju.amax().max(1.0);
    if let Some(&bad) = lams.iter().find(|l| l.abs() <= 1e-12 * scale) {
        return Err(Error::NonInvertibleFluxJacobian { eigenvalue: bad });
    }
    let jr = assemble_extended_jacobian(model, u, b)?;
    let coupling = jr.view((0, m), (m, n)).into_owned();
    let inv = ju.clone().try_inverse().ok_or(Error::NonInvertibleFluxJacobian {
        eigenvalue: 0.0,
    })?;
    let mut values = lams;
    let mut vectors = DMatrix::zeros(m + n, m + n);
    vectors.view_mut((0, 0), (m, m)).copy_from(&vecs);
    for j in 0..n {
        let v = -(&inv * coupling.column(j));
        vectors.view_mut((0, m + j), (m, 1)).copy_from(&v);
        vectors[(m + j, m + j)] = 1.0;
        values.push(0.0);
    }
    Ok(ExtendedEigen { values, vectors })
}

/// `D_{k,j} = Σ_i (∂J_{i,k}/∂Ũ_j − ∂J_{i,j}/∂Ũ_k) P_i`, with the
/// derivatives of `J_R` taken by central differences.
pub fn adjoint_coupling_from_jacobian(model: &dyn Model, ext: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    let layout = model.layout();
    let e = layout.extended();
    let mut derivs = Vec::with_capacity(e);
    let mut work = ext.to_vec();
    for j in 0..e {
        let h = 1e-6 * (1.0 + ext[j].abs());
        work[j] = ext[j] + h;
        let plus = assemble_extended_jacobian(model, &work[..layout.m], &work[layout.m..])?;
        work[j] = ext[j] - h;
        let minus = assemble_extended_jacobian(model, &work[..layout.m], &work[layout.m..])?;
        work[j] = ext[j];
        derivs.push((plus - minus) / (2.0 * h));
    }
    let mut d = DMatrix::zeros(e, e);
    for k in 0..e {
        for j in 0..e {
            d[(k, j)] = (0..e)
                .map(|i| (derivs[j][(i, k)] - derivs[k][(i, j)]) * p[i])
                .sum();
        }
    }
    Ok(d)
}

/// Unified primal-dual system bound to a model and a measurement.
#[derive(Clone, Copy)]
pub struct UnifiedSystem<'a> {
    pub model: &'a dyn Model,
    pub measurement: &'a MeasurementData,
    pub dissipation: Dissipation,
}

/// The three blocks of the unified balance law at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedTerms {
    pub flux: DVector<f64>,
    pub nonconservative: DMatrix<f64>,
    pub source: DVector<f64>,
}

impl<'a> UnifiedSystem<'a> {
    pub fn new(model: &'a dyn Model, measurement: &'a MeasurementData) -> Self {
        Self {
            model,
            measurement,
            dissipation: Dissipation::default(),
        }
    }

    pub fn with_dissipation(mut self, dissipation: Dissipation) -> Self {
        self.dissipation = dissipation;
        self
    }

    pub fn layout(&self) -> Layout {
        self.model.layout()
    }

    fn split<'q>(&self, q: &'q [f64]) -> (&'q [f64], &'q [f64], &'q [f64]) {
        let l = self.layout();
        (&q[l.state()], &q[l.params()], &q[l.adjoint()])
    }

    /// `F(Q) = (R(U, b), 0, 0)`.
    pub fn flux(&self, q: &[f64]) -> DVector<f64> {
        let (u, b, _) = self.split(q);
        let mut f = DVector::zeros(self.layout().unified());
        f.rows_mut(0, self.layout().m).copy_from(&self.model.flux(u, b));
        f
    }

    /// `∂F/∂Q`.
    pub fn flux_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let l = self.layout();
        let (u, b, _) = self.split(q);
        let mut a = DMatrix::zeros(l.unified(), l.unified());
        a.view_mut((0, 0), (l.m, l.m))
            .copy_from(&self.model.flux_jacobian_state(u, b));
        if l.n > 0 {
            a.view_mut((0, l.m), (l.m, l.n))
                .copy_from(&self.model.flux_jacobian_params(u, b));
        }
        a
    }

    /// The `D` block: model closed form when available.
    pub fn adjoint_coupling(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let (u, b, p) = self.split(q);
        match self.model.adjoint_coupling(u, b, p) {
            Some(d) => Ok(d),
            None => adjoint_coupling_from_jacobian(self.model, &q[..self.layout().extended()], p),
        }
    }

    /// `B(Q) = [[M̃, 0], [D, J_Rᵀ]]`.
    pub fn nonconservative(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let l = self.layout();
        let e = l.extended();
        let (u, b, _) = self.split(q);
        let mut bm = DMatrix::zeros(l.unified(), l.unified());
        if l.n > 0 {
            let bt = self.model.param_coupling(u, b);
            check_finite(&bt, "param_coupling")?;
            bm.view_mut((0, l.m), (l.m, l.n)).copy_from(&(-bt));
        }
        let jr = assemble_extended_jacobian(self.model, u, b)?;
        bm.view_mut((e, e), (e, e)).copy_from(&jr.transpose());
        let d = self.adjoint_coupling(q)?;
        check_finite(&d, "adjoint_coupling")?;
        bm.view_mut((e, 0), (e, e)).copy_from(&d);
        Ok(bm)
    }

    /// Quasilinear matrix `A(Q) = ∂F/∂Q + B(Q)`.
    pub fn quasilinear(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.flux_jacobian(q) + self.nonconservative(q)?)
    }

    /// `S(Q) = (L, 0, −(∂L̃/∂Ũ)ᵀ P + (ψ̄ − ψ) ∇ψ)` at position `x`, time `t`.
    pub fn source(&self, q: &[f64], x: f64, t: f64) -> DVector<f64> {
        let l = self.layout();
        let e = l.extended();
        let (u, b, p) = self.split(q);
        let mut s = DVector::zeros(l.unified());
        s.rows_mut(0, l.m).copy_from(&self.model.source(u, b));
        let lj = self.model.source_jacobian(u, b);
        let mismatch = self.measurement.eval(x, t) - self.model.measurement(u, b);
        let grad = self.model.measurement_gradient(u, b);
        let pu = DVector::from_column_slice(&p[..l.m]);
        let adj = -(lj.transpose() * pu) + grad * mismatch;
        s.rows_mut(e, e).copy_from(&adj);
        s
    }

    pub fn assemble(&self, q: &[f64], x: f64, t: f64) -> Result<UnifiedTerms> {
        let flux = self.flux(q);
        if flux.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { block: "flux" });
        }
        let nonconservative = self.nonconservative(q)?;
        let source = self.source(q, x, t);
        if source.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { block: "source" });
        }
        Ok(UnifiedTerms {
            flux,
            nonconservative,
            source,
        })
    }

    /// Eigenvalues of `∂R/∂U` at the state slice of `q`.
    pub fn state_wave_speeds(&self, q: &[f64]) -> Result<Vec<f64>> {
        let (u, b, _) = self.split(q);
        match self.model.wave_speeds(u, b) {
            Some(v) => Ok(v),
            None => linalg::real_eigenvalues(&self.model.flux_jacobian_state(u, b)),
        }
    }

    /// Eigenvalues of the quasilinear matrix: the spectrum of `J_R`
    /// (`∂R/∂U` plus `n` zeros), each repeated twice.
    pub fn eigenvalues(&self, q: &[f64]) -> Result<Vec<f64>> {
        let l = self.layout();
        let mut lams = self.state_wave_speeds(q)?;
        lams.extend(std::iter::repeat(0.0).take(l.n));
        let twice = lams.clone();
        lams.extend(twice);
        Ok(lams)
    }

    pub fn max_wave_speed(&self, q: &[f64]) -> Result<f64> {
        Ok(self
            .state_wave_speeds(q)?
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// Matrix entering the path-integrated dissipation of the DOT flux.
    pub fn dissipation_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        match self.dissipation {
            Dissipation::QuasiLinear => self.dissipation_matrix_with(q, &self.nonconservative(q)?),
            Dissipation::FluxJacobian => self.dissipation_matrix_with(q, &DMatrix::zeros(0, 0)),
        }
    }

    /// As [`Self::dissipation_matrix`], reusing an already assembled `B(q)`
    /// (ignored for [`Dissipation::FluxJacobian`]).
    pub fn dissipation_matrix_with(&self, q: &[f64], nonconservative: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.layout();
        match self.dissipation {
            Dissipation::QuasiLinear => {
                let a = self.flux_jacobian(q) + nonconservative;
                let mut spectrum = self.state_wave_speeds(q)?;
                if l.n > 0 {
                    spectrum.push(0.0);
                }
                Ok(linalg::abs_from_spectrum(&a, &spectrum))
            }
            Dissipation::FluxJacobian => {
                let (u, b, _) = self.split(q);
                let param_free = l.n == 0
                    || self.model.flux_jacobian_params(u, b).iter().all(|v| *v == 0.0);
                if param_free {
                    if let Some(block) = self.model.state_flux_abs(u, b) {
                        let mut out = DMatrix::zeros(l.unified(), l.unified());
                        out.view_mut((0, 0), (l.m, l.m)).copy_from(&block);
                        return Ok(out);
                    }
                }
                let a = self.flux_jacobian(q);
                let mut spectrum = self.state_wave_speeds(q)?;
                spectrum.push(0.0);
                Ok(linalg::abs_from_spectrum(&a, &spectrum))
            }
        }
    }
}
