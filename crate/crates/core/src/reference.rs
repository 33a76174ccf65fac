//! Baseline scheme for comparison: first-order Rusanov forward solver with a
//! centred parameter-coupling term, and an explicit centred-difference
//! adjoint marched backward over the recorded forward states.
//!
//! ```text
//! U_i⁺ = U_i − Δt/Δx (R_{i+½} − R_{i−½}) + Δt L_i + Δt/(2Δx) B̃_i (b_{i+1} − b_{i−1})
//! P_i⁻ = P_i + Δt/(2Δx) J_Rᵀ(Ũ_i) (P_{i+1} − P_{i−1}) − Δt S̃_i
//! ```
//!
//! with `S̃ = S_P − D ∂xŨ` (centred), evaluated at the later level.

use nalgebra::DVector;

use crate::ader::{self, march_forward};
use crate::error::{Error, Result};
use crate::optimize::{self, AdjointSolver, Experiment, OptimHistory, RunFailure};
use crate::riemann::rusanov_flux;
use crate::system::{
    assemble_extended_jacobian, fill_transmissive, CellField, TrajectoryStore, UnifiedSystem,
};

fn admissible(sys: &UnifiedSystem<'_>, q: &DVector<f64>, cell: usize, time: f64) -> Result<()> {
    let l = sys.layout();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inadmissible {
            cell,
            time,
            detail: "non-finite update".into(),
        });
    }
    sys.model
        .check_admissible(&q.as_slice()[l.state()], &q.as_slice()[l.params()])
        .map_err(|detail| Error::Inadmissible { cell, time, detail })
}

/// One forward step; only the state slice changes.
pub fn ref_forward_step(sys: &UnifiedSystem<'_>, field: &CellField, dt: f64) -> Result<CellField> {
    let l = field.layout;
    let model = sys.model;
    let g = field.grid.ghost_layers;
    let n = field.grid.cells;
    let ratio = dt / field.grid.dx();
    let (su, sb) = (l.state(), l.params());
    let slot = |j: usize| field.data[j].as_slice();

    let mut fluxes = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (a, b) = (slot(g + k - 1), slot(g + k));
        fluxes.push(rusanov_flux(model, &a[su.clone()], &a[sb.clone()], &b[su.clone()], &b[sb.clone()])?);
    }
    let mut out = field.clone();
    for i in 0..n {
        let q = slot(g + i);
        let (u, b) = (&q[su.clone()], &q[sb.clone()]);
        let mut du = (&fluxes[i + 1] - &fluxes[i]) * (-ratio) + model.source(u, b) * dt;
        if l.n > 0 {
            let (bl, br) = (&slot(g + i - 1)[sb.clone()], &slot(g + i + 1)[sb.clone()]);
            let db = DVector::from_iterator(l.n, (0..l.n).map(|c| br[c] - bl[c]));
            du += model.param_coupling(u, b) * db * (0.5 * ratio);
        }
        let target = out.cell_mut(i);
        for c in 0..l.m {
            target[c] += du[c];
        }
        admissible(sys, target, i, field.time)?;
    }
    out.time = field.time + dt;
    fill_transmissive(&mut out);
    Ok(out)
}

/// One backward step from level `n+1` (`field`: `Ũ^{n+1}`, `P^{n+1}` at
/// time `t^{n+1}`) to `P^n`; the `(U, b)` slices are left untouched.
pub fn ref_backward_step(sys: &UnifiedSystem<'_>, field: &CellField, dt: f64) -> Result<CellField> {
    let l = field.layout;
    let e = l.extended();
    let g = field.grid.ghost_layers;
    let n = field.grid.cells;
    let dx = field.grid.dx();
    let mut out = field.clone();
    for i in 0..n {
        let (qm, q0, qp) = (&field.data[g + i - 1], &field.data[g + i], &field.data[g + i + 1]);
        let jr = assemble_extended_jacobian(sys.model, &q0.as_slice()[l.state()], &q0.as_slice()[l.params()])?;
        let dp = (qp.rows(e, e) - qm.rows(e, e)) / (2.0 * dx);
        let du = (qp.rows(0, e) - qm.rows(0, e)) / (2.0 * dx);
        let d = sys.adjoint_coupling(q0.as_slice())?;
        let src = sys.source(q0.as_slice(), field.grid.center(i), field.time);
        let s_tilde = src.rows(e, e) - d * du;
        let update = jr.transpose() * dp * dt - s_tilde * dt;
        let target = out.cell_mut(i);
        for c in 0..e {
            target[e + c] += update[c];
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inadmissible {
                cell: i,
                time: field.time,
                detail: "non-finite adjoint".into(),
            });
        }
    }
    out.time = field.time - dt;
    fill_transmissive(&mut out);
    Ok(out)
}

/// The baseline solver pair.
#[derive(Clone, Copy)]
pub struct ReferenceSolver<'a> {
    pub sys: UnifiedSystem<'a>,
}

impl<'a> ReferenceSolver<'a> {
    pub fn new(sys: UnifiedSystem<'a>) -> Self {
        Self { sys }
    }
}

impl AdjointSolver for ReferenceSolver<'_> {
    fn stable_dt(&self, field: &CellField, cfl: f64) -> Result<f64> {
        ader::stable_dt(&self.sys, field, cfl)
    }

    fn forward(&self, initial: &CellField, final_time: f64, dt: f64) -> Result<(CellField, TrajectoryStore)> {
        march_forward(initial, final_time, dt, |f, h| ref_forward_step(&self.sys, f, h))
    }

    fn backward(&self, traj: &TrajectoryStore, template: &CellField) -> Result<CellField> {
        if traj.len() < 2 {
            return Err(Error::TrajectoryMismatch(format!(
                "backward solve needs at least 2 levels, got {}",
                traj.len()
            )));
        }
        let mut field = template.clone();
        for q in field.data.iter_mut() {
            for c in template.layout.adjoint() {
                q[c] = 0.0;
            }
        }
        let last = traj.len() - 1;
        traj.load_into(last, &mut field)?;
        for k in (1..=last).rev() {
            let mut next = ref_backward_step(&self.sys, &field, traj.dt(k - 1))?;
            traj.load_into(k - 1, &mut next)?;
            field = next;
        }
        Ok(field)
    }
}

/// Baseline-scheme run with the preset configuration of `experiment`.
pub fn ref_run(experiment: &Experiment) -> std::result::Result<OptimHistory, RunFailure> {
    let problem = experiment.problem();
    let solver = ReferenceSolver::new(experiment.system());
    optimize::run(&problem, &solver, &experiment.config(), &problem.base_estimate())
}
