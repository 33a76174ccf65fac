//! Second-order one-step finite-volume scheme for the unified system.
//!
//! Each step reconstructs cell-wise linear profiles with the minmod slope,
//! advances them locally by a first-order Cauchy-Kowalewsky predictor and
//! evaluates every time integral at the step midpoint:
//!
//! ```text
//! Q_i⁺ = Q_i − η Δt/Δx (F_{i+½} − F_{i−½}) − η Δt/Δx (D_{i+½} + D_{i−½})
//!            − η Δt ⟨B ∂x Q⟩_i + η Δt ⟨S⟩_i
//! ```
//!
//! `η = +1` marches the whole unified vector forward. `η = −1` marches the
//! adjoint slices backward while the `(U, b)` slices are replayed from the
//! forward trajectory, so the adjoint sees the forward wave structure.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::riemann::{self, PathQuadrature};
use crate::system::{fill_transmissive, CellField, TrajectoryStore, UnifiedSystem};

/// How the η flag enters the interface jump term `D̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpSign {
    /// `D̃ = η ½ ∫ B dΨ`. Combined with the `η` of the update, the jump part
    /// of `B ∂x Q` keeps its forward sign in backward mode while the
    /// cell-interior part flips.
    Eta,
    /// `D̃ = ½ ∫ B dΨ`: jump and cell-interior parts of `B ∂x Q` reverse
    /// together with `η`.
    #[default]
    Unit,
}

/// Step controls: CFL number, direction flag and an optional fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    pub cfl: f64,
    pub eta: f64,
    /// Overrides the CFL-derived step when set.
    pub dt: Option<f64>,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            cfl: 0.1,
            eta: 1.0,
            dt: None,
        }
    }
}

impl StepControls {
    pub fn new(cfl: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::InvalidArgument(format!("CFL number {cfl} outside (0, 1]")));
        }
        Ok(Self {
            cfl,
            ..Self::default()
        })
    }
}

/// Component-wise minmod slope from the two one-sided differences.
pub fn minmod_slope(qm: &DVector<f64>, q0: &DVector<f64>, qp: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        q0.len(),
        (0..q0.len()).map(|c| minmod(q0[c] - qm[c], qp[c] - q0[c])),
    )
}

#[inline]
fn minmod(left: f64, right: f64) -> f64 {
    if left * right <= 0.0 {
        0.0
    } else if left.abs() < right.abs() {
        left
    } else {
        right
    }
}

/// Local space-time predictor of one cell,
/// `Q(ξ, τ) = P(ξ) − η τ A(P(ξ)) Δ / Δx` with `P(ξ) = Q_i + (ξ − ½) Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub average: DVector<f64>,
    pub slope: DVector<f64>,
    pub dx: f64,
    pub eta: f64,
}

impl Predictor {
    pub fn reconstruction(&self, xi: f64) -> DVector<f64> {
        &self.average + &self.slope * (xi - 0.5)
    }

    pub fn value(&self, sys: &UnifiedSystem<'_>, xi: f64, tau: f64) -> Result<DVector<f64>> {
        let p = self.reconstruction(xi);
        if tau == 0.0 || self.slope.iter().all(|v| *v == 0.0) {
            return Ok(p);
        }
        let a = sys.quasilinear(p.as_slice())?;
        Ok(&p - a * &self.slope * (self.eta * tau / self.dx))
    }
}

/// Predictor of storage slot `j` (ghosts included); slots without both
/// neighbours get a zero slope.
pub fn build_predictor(j: usize, field: &CellField, eta: f64) -> Predictor {
    let q0 = &field.data[j];
    let slope = if j >= 1 && j + 1 < field.data.len() {
        minmod_slope(&field.data[j - 1], q0, &field.data[j + 1])
    } else {
        DVector::zeros(q0.len())
    };
    Predictor {
        average: q0.clone(),
        slope,
        dx: field.grid.dx(),
        eta,
    }
}

/// Left and right traces `(Q⁻, Q⁺)` at the interface between two cells:
/// the left cell's value at `ξ = 1` and the right cell's at `ξ = 0`.
pub fn interface_states(
    sys: &UnifiedSystem<'_>,
    left: &Predictor,
    right: &Predictor,
    tau: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok((left.value(sys, 1.0, tau)?, right.value(sys, 0.0, tau)?))
}

/// `Δt = C Δx / λ∞`, `λ∞` the largest eigenvalue magnitude over the
/// interior cells of `field`.
pub fn stable_dt(sys: &UnifiedSystem<'_>, field: &CellField, cfl: f64) -> Result<f64> {
    let mut lmax = 0.0f64;
    for q in field.interior() {
        for l in sys.eigenvalues(q.as_slice())? {
            lmax = lmax.max(l.abs());
        }
    }
    if lmax == 0.0 {
        return Err(Error::StationaryData);
    }
    Ok(cfl * field.grid.dx() / lmax)
}

/// Drives `step` from `t = 0` to `final_time` with `n_T = ⌈T/Δt⌉` steps,
/// the last one clipped to land on `T`, recording `(U, b)` at every level.
pub fn march_forward(
    initial: &CellField,
    final_time: f64,
    dt: f64,
    mut step: impl FnMut(&CellField, f64) -> Result<CellField>,
) -> Result<(CellField, TrajectoryStore)> {
    if !(final_time > 0.0) {
        return Err(Error::InvalidArgument(format!("final time {final_time} must be positive")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let steps = ((final_time / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = TrajectoryStore::new(initial.layout, initial.grid.cells);
    let mut field = initial.clone();
    field.time = 0.0;
    fill_transmissive(&mut field);
    traj.record(&field)?;
    for k in 0..steps {
        let t_next = if k + 1 == steps {
            final_time
        } else {
            (k + 1) as f64 * dt
        };
        let h = t_next - field.time;
        field = step(&field, h)?;
        field.time = t_next;
        traj.record(&field)?;
    }
    Ok((field, traj))
}

/// The unified one-step scheme.
#[derive(Clone)]
pub struct Scheme<'a> {
    pub sys: UnifiedSystem<'a>,
    pub quadrature: PathQuadrature,
    pub jump_sign: JumpSign,
}

/// Cell-interior quadrature on `[0, 1]`.
fn cell_quadrature() -> PathQuadrature {
    PathQuadrature::gauss_legendre_3()
}

impl<'a> Scheme<'a> {
    pub fn new(sys: UnifiedSystem<'a>) -> Self {
        Self {
            sys,
            quadrature: PathQuadrature::default(),
            jump_sign: JumpSign::default(),
        }
    }

    pub fn with_jump_sign(mut self, jump_sign: JumpSign) -> Self {
        self.jump_sign = jump_sign;
        self
    }

    fn check_traces(&self, q: &DVector<f64>, cell: usize, time: f64) -> Result<()> {
        let l = self.sys.layout();
        self.sys
            .model
            .check_admissible(&q.as_slice()[l.state()], &q.as_slice()[l.params()])
            .map_err(|detail| Error::Inadmissible { cell, time, detail })
    }

    /// One step of size `dt` in direction `eta`. With `eta < 0` only the
    /// adjoint slices are updated; the caller supplies the `(U, b)` slices.
    pub fn step(&self, field: &CellField, dt: f64, eta: f64) -> Result<CellField> {
        let grid = field.grid;
        let layout = field.layout;
        let g = grid.ghost_layers;
        let n = grid.cells;
        let dx = grid.dx();
        let tau = 0.5 * dt;
        let t_mid = field.time + eta * tau;
        let jump_eta = match self.jump_sign {
            JumpSign::Eta => eta,
            JumpSign::Unit => 1.0,
        };
        let cellq = cell_quadrature();

        // slots g-1 ..= g+n carry predictors; interior ones also need cell integrals
        let first = g - 1;
        let count = n + 2;
        let mut left_traces = Vec::with_capacity(count);
        let mut right_traces = Vec::with_capacity(count);
        let mut predictors = Vec::with_capacity(count);
        // A(P(0)) Δ and A(P(1)) Δ, shared by the traces and the cell integrals
        let mut end_rates = Vec::with_capacity(count);
        let scale = eta * tau / dx;
        for j in first..first + count {
            let pred = build_predictor(j, field, eta);
            let (mut l, mut r) = (pred.reconstruction(0.0), pred.reconstruction(1.0));
            let rates = if pred.slope.iter().all(|v| *v == 0.0) {
                None
            } else {
                let a0 = self.sys.quasilinear(l.as_slice())? * &pred.slope;
                let a1 = self.sys.quasilinear(r.as_slice())? * &pred.slope;
                l -= &a0 * scale;
                r -= &a1 * scale;
                Some((a0, a1))
            };
            let cell = j.saturating_sub(g).min(n - 1);
            self.check_traces(&l, cell, field.time)?;
            self.check_traces(&r, cell, field.time)?;
            left_traces.push(l);
            right_traces.push(r);
            predictors.push(pred);
            end_rates.push(rates);
        }

        // interfaces: k joins slot first+k and first+k+1
        let mut fluxes = Vec::with_capacity(n + 1);
        let mut jumps = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let (f, d) = riemann::interface_terms(
                &self.sys,
                &right_traces[k],
                &left_traces[k + 1],
                eta,
                jump_eta,
                &self.quadrature,
            )?;
            fluxes.push(f);
            jumps.push(d);
        }

        let mut out = field.clone();
        let adj = layout.adjoint();
        let ratio = dt / dx;
        for i in 0..n {
            let k = i + 1; // predictor index of interior cell i
            let pred = &predictors[k];
            let x_left = grid.center(i) - 0.5 * dx;
            // ∂ξ of the predictor, exact for A affine in Q
            let d_xi = match &end_rates[k] {
                Some((a0, a1)) => &pred.slope - (a1 - a0) * scale,
                None => pred.slope.clone(),
            };
            let mut bdq = DVector::zeros(layout.unified());
            let mut src = DVector::zeros(layout.unified());
            for (xi, w) in cellq.iter() {
                let qv = pred.value(&self.sys, xi, tau)?;
                if d_xi.iter().any(|v| *v != 0.0) {
                    bdq += self.sys.nonconservative(qv.as_slice())? * &d_xi * (w / dx);
                }
                src += self.sys.source(qv.as_slice(), x_left + xi * dx, t_mid) * w;
            }
            let update = (&fluxes[i + 1] - &fluxes[i]) * (-eta * ratio)
                + (&jumps[i + 1] + &jumps[i]) * (-eta * ratio)
                + bdq * (-eta * dt)
                + src * (eta * dt);
            let target = out.cell_mut(i);
            if eta > 0.0 {
                *target += &update;
            } else {
                for c in adj.clone() {
                    target[c] += update[c];
                }
            }
            if target.iter().any(|v| !v.is_finite()) {
                return Err(Error::Inadmissible {
                    cell: i,
                    time: field.time,
                    detail: "non-finite update".into(),
                });
            }
        }
        for i in 0..n {
            let q = out.cell(i);
            self.check_traces(q, i, field.time)?;
        }
        out.time = field.time + eta * dt;
        fill_transmissive(&mut out);
        Ok(out)
    }

    /// Forward march to `final_time`; see [`march_forward`].
    pub fn solve_forward(
        &self,
        initial: &CellField,
        final_time: f64,
        dt: f64,
    ) -> Result<(CellField, TrajectoryStore)> {
        march_forward(initial, final_time, dt, |f, h| self.step(f, h, 1.0))
    }

    /// Backward adjoint march from `P(·, T) = 0` to `t = 0` over the
    /// recorded levels. Returns the field at `t = 0` (`(U, b)` from the
    /// trajectory, adjoint from the march).
    pub fn solve_backward(&self, traj: &TrajectoryStore, template: &CellField) -> Result<CellField> {
        self.solve_backward_with(traj, template, |_, _| Ok(()))
    }

    /// As [`Self::solve_backward`], calling `inspect(level, field)` on the
    /// field fed to every backward step after its `(U, b)` slices were
    /// loaded from the trajectory.
    pub fn solve_backward_with(
        &self,
        traj: &TrajectoryStore,
        template: &CellField,
        mut inspect: impl FnMut(usize, &CellField) -> Result<()>,
    ) -> Result<CellField> {
        if traj.len() < 2 {
            return Err(Error::TrajectoryMismatch(format!(
                "backward solve needs at least 2 levels, got {}",
                traj.len()
            )));
        }
        if traj.layout() != template.layout || traj.cells() != template.grid.cells {
            return Err(Error::TrajectoryMismatch("template shape differs".into()));
        }
        let last = traj.len() - 1;
        let mut field = template.clone();
        for q in field.data.iter_mut() {
            for c in template.layout.adjoint() {
                q[c] = 0.0;
            }
        }
        traj.load_into(last, &mut field)?;
        for k in (1..=last).rev() {
            inspect(k, &field)?;
            let dt = traj.dt(k - 1);
            let mut next = self.step(&field, dt, -1.0)?;
            traj.load_into(k - 1, &mut next)?;
            field = next;
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Burgers;
    use crate::system::{Grid, Layout, MeasurementData};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn burgers_field(grid: Grid, f: impl Fn(f64) -> f64) -> CellField {
        let cells = grid.centers().into_iter().map(|x| v(&[f(x), 0.0])).collect();
        CellField::from_interior(grid, Layout::new(1, 0), cells).unwrap()
    }

    #[test]
    fn minmod_cases() {
        let s = minmod_slope(&v(&[0.0, 0.0, 0.0]), &v(&[1.0, 1.0, 0.0]), &v(&[3.0, 0.0, 5.0]));
        assert_eq!(s, v(&[1.0, 0.0, 0.0]));
        let s = minmod_slope(&v(&[3.0]), &v(&[1.0]), &v(&[0.0]));
        assert_eq!(s, v(&[-1.0]));
    }

    #[test]
    fn predictor_hand_value() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        // P(ξ) = ξ for the state, unit slope, Δx = 1
        let pred = Predictor {
            average: v(&[0.5, 0.0]),
            slope: v(&[1.0, 0.0]),
            dx: 1.0,
            eta: 1.0,
        };
        for &(xi, tau) in &[(0.0, 0.3), (0.4, 0.5), (1.0, 0.25), (0.7, 0.0)] {
            let val = pred.value(&sys, xi, tau).unwrap();
            assert_abs_diff_eq!(val[0], xi * (1.0 - tau), epsilon = 1e-15);
        }
    }

    #[test]
    fn constant_predictor_is_constant() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let grid = Grid::new(0.0, 1.0, 4).unwrap();
        let field = burgers_field(grid, |_| 0.7);
        let pred = build_predictor(3, &field, 1.0);
        for &(xi, tau) in &[(0.0, 0.0), (0.5, 0.1), (1.0, 0.2)] {
            assert_eq!(pred.value(&sys, xi, tau).unwrap(), v(&[0.7, 0.0]));
        }
    }

    #[test]
    fn zero_slope_traces_are_cell_values() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let l = Predictor { average: v(&[1.0, 0.0]), slope: v(&[0.0, 0.0]), dx: 0.1, eta: 1.0 };
        let r = Predictor { average: v(&[0.0, 0.0]), slope: v(&[0.0, 0.0]), dx: 0.1, eta: 1.0 };
        for tau in [0.0, 0.01, 0.05] {
            let (a, b) = interface_states(&sys, &l, &r, tau).unwrap();
            assert_eq!((a[0], b[0]), (1.0, 0.0));
        }
    }

    #[test]
    fn stable_dt_examples() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let grid = Grid::new(-3.0, 3.0, 200).unwrap();
        let field = burgers_field(grid, |_| -0.2);
        assert_abs_diff_eq!(stable_dt(&sys, &field, 0.1).unwrap(), 0.015, epsilon = 1e-15);
        assert_abs_diff_eq!(stable_dt(&sys, &field, 0.2).unwrap(), 0.03, epsilon = 1e-15);
        let still = burgers_field(grid, |_| 0.0);
        assert_eq!(stable_dt(&sys, &still, 0.1), Err(Error::StationaryData));
    }

    #[test]
    fn constant_state_is_preserved() {
        let meas = MeasurementData::closed(|_, _| 0.3);
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let scheme = Scheme::new(sys);
        let grid = Grid::new(0.0, 1.0, 10).unwrap();
        let field = burgers_field(grid, |_| 0.3);
        let next = scheme.step(&field, 0.01, 1.0).unwrap();
        for q in next.interior() {
            assert_eq!(q[0], 0.3);
        }
    }

    #[test]
    fn forward_levels_and_clipping() {
        let meas = MeasurementData::closed(|_, _| 0.0);
        let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
        let grid = Grid::new(0.0, 1.0, 8).unwrap();
        let field = burgers_field(grid, |x| x);
        let (_, traj) = scheme.solve_forward(&field, 0.01, 0.01).unwrap();
        assert_eq!(traj.len(), 2);
        let (fin, traj) = scheme.solve_forward(&field, 0.025, 0.01).unwrap();
        assert_eq!(traj.len(), 4);
        assert_eq!(traj.final_time(), 0.025);
        assert_eq!(fin.time, 0.025);
        assert!(scheme.solve_forward(&field, 0.0, 0.01).is_err());
    }

    #[test]
    fn backward_with_zero_mismatch_stays_zero() {
        let meas = MeasurementData::closed(|x, _| x);
        let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
        let grid = Grid::new(0.0, 1.0, 16).unwrap();
        // q̄ = x is not a Burgers solution, so compare against q itself via a table
        let field = burgers_field(grid, |_| 0.4);
        let meas_const = MeasurementData::closed(|_, _| 0.4);
        let scheme_const = Scheme::new(UnifiedSystem::new(&Burgers, &meas_const));
        let (_, traj) = scheme_const.solve_forward(&field, 0.05, 0.005).unwrap();
        let back = scheme_const.solve_backward(&traj, &field).unwrap();
        assert!(back.interior().iter().all(|q| q[1] == 0.0));
        assert_eq!(back.time, 0.0);
        let _ = scheme;
    }
}
