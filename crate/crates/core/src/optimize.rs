//! Outer descent loop: forward solve, cost, backward adjoint solve,
//! gradient, parameter update.

use std::fmt;

use crate::ader::{self, JumpSign, Scheme};
use crate::error::{Error, Result};
use crate::models::{
    self, burgers_field, swe_field, swe_target, BurgersProfile, ExperimentPreset, PresetKind,
    ShallowWater, SweCoupling, TargetSource,
};
use crate::riemann::Dissipation;
use crate::system::{fill_transmissive, CellField, MeasurementData, Model, TrajectoryStore, UnifiedSystem};

/// The field being recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    /// Initial value of state component `component`.
    InitialState { component: usize },
    /// Spatially varying parameter `index`.
    Parameter { index: usize },
}

impl Control {
    /// Position of the controlled entry inside the extended vector `(U, b)`.
    pub fn extended_index(&self, m: usize) -> usize {
        match *self {
            Self::InitialState { component } => component,
            Self::Parameter { index } => m + index,
        }
    }
}

/// Recorded level used by level-dependent rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeLevel {
    #[default]
    Initial,
    Final,
}

/// How the descent direction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientRule {
    /// Adjoint slice paired with the control, at `t = 0`.
    Adjoint,
    /// Pointwise measurement residual `ψ − ψ̄` at one recorded level
    /// (the shallow water closed form with the adjoint term dropped).
    MeasurementResidual { at: TimeLevel },
}

impl GradientRule {
    pub fn needs_adjoint(&self) -> bool {
        matches!(self, Self::Adjoint)
    }
}

/// Error reported per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    /// `max_i |estimate_i − reference_i|`.
    MaxAbsVsReference,
    /// `max_i |ψ_i − ψ̄(x_i, t)|` at one recorded level.
    MeasurementMaxAbs { at: TimeLevel },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lambda_ip: f64,
    pub max_iters: usize,
    /// Stop once the relative max-norm change of the estimate falls below
    /// this; `0` always runs `max_iters` updates.
    pub stop_tol: f64,
    pub error_metric: ErrorMetric,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_ip.is_finite() || self.lambda_ip < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda_ip = {}", self.lambda_ip)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("stop_tol = {}", self.stop_tol)));
        }
        Ok(())
    }
}

/// State of the loop after `iteration` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub error: f64,
    pub dt: f64,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimHistory {
    pub records: Vec<IterationRecord>,
}

impl OptimHistory {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A failed run: the error plus everything recorded before it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub history: OptimHistory,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} recorded iterations)", self.error, self.history.len())
    }
}

impl std::error::Error for RunFailure {}

/// Forward/backward solver pair driven by the loop.
pub trait AdjointSolver {
    fn stable_dt(&self, field: &CellField, cfl: f64) -> Result<f64>;
    fn forward(&self, initial: &CellField, final_time: f64, dt: f64)
        -> Result<(CellField, TrajectoryStore)>;
    /// Adjoint field at `t = 0` from the terminal condition `P(T) = 0`.
    fn backward(&self, traj: &TrajectoryStore, template: &CellField) -> Result<CellField>;
}

impl AdjointSolver for Scheme<'_> {
    fn stable_dt(&self, field: &CellField, cfl: f64) -> Result<f64> {
        ader::stable_dt(&self.sys, field, cfl)
    }
    fn forward(&self, initial: &CellField, final_time: f64, dt: f64) -> Result<(CellField, TrajectoryStore)> {
        self.solve_forward(initial, final_time, dt)
    }
    fn backward(&self, traj: &TrajectoryStore, template: &CellField) -> Result<CellField> {
        self.solve_backward(traj, template)
    }
}

/// Everything the loop needs besides the solver.
#[derive(Clone)]
pub struct InverseProblem<'a> {
    pub model: &'a dyn Model,
    pub measurement: &'a MeasurementData,
    /// Initial field; its controlled component is overwritten by the estimate.
    pub base: CellField,
    pub final_time: f64,
    pub cfl: f64,
    pub control: Control,
    pub gradient_rule: GradientRule,
    /// Sought field, for [`ErrorMetric::MaxAbsVsReference`].
    pub reference: Option<Vec<f64>>,
    /// Wave speed used for the step when the initial field is at rest.
    pub fallback_speed: Option<f64>,
    /// Fixed step overriding the CFL rule.
    pub fixed_dt: Option<f64>,
}

impl InverseProblem<'_> {
    pub fn cells(&self) -> usize {
        self.base.grid.cells
    }

    /// Initial field for a given estimate of the control.
    pub fn initial_field(&self, estimate: &[f64]) -> Result<CellField> {
        if estimate.len() != self.cells() {
            return Err(Error::DimensionMismatch {
                expected: self.cells(),
                found: estimate.len(),
            });
        }
        let c = self.control.extended_index(self.model.state_dim());
        let mut field = self.base.clone();
        field.time = 0.0;
        for (i, v) in estimate.iter().enumerate() {
            field.cell_mut(i)[c] = *v;
        }
        fill_transmissive(&mut field);
        Ok(field)
    }

    /// The controlled component of the base field.
    pub fn base_estimate(&self) -> Vec<f64> {
        self.base.component(self.control.extended_index(self.model.state_dim()))
    }

    pub fn time_step(&self, solver: &dyn AdjointSolver, field: &CellField) -> Result<f64> {
        if let Some(dt) = self.fixed_dt {
            return Ok(dt);
        }
        match solver.stable_dt(field, self.cfl) {
            Err(Error::StationaryData) => match self.fallback_speed {
                Some(s) if s > 0.0 => Ok(self.cfl * field.grid.dx() / s),
                _ => Err(Error::StationaryData),
            },
            other => other,
        }
    }

    fn level_index(traj: &TrajectoryStore, at: TimeLevel) -> usize {
        match at {
            TimeLevel::Initial => 0,
            TimeLevel::Final => traj.len() - 1,
        }
    }

    /// `ψ_i − ψ̄(x_i, t)` at recorded level `k`.
    pub fn residual_at(&self, traj: &TrajectoryStore, k: usize) -> Vec<f64> {
        let m = self.model.state_dim();
        let t = traj.time(k);
        (0..traj.cells())
            .map(|i| {
                let ext = traj.cell(k, i);
                let x = self.base.grid.center(i);
                self.model.measurement(&ext[..m], &ext[m..]) - self.measurement.eval(x, t)
            })
            .collect()
    }
}

/// `J = ½ Σ_n Σ_i (ψ_i^n − ψ̄(x_i, t^n))² Δx Δt`, trapezoid rule in time.
pub fn evaluate_cost(problem: &InverseProblem<'_>, traj: &TrajectoryStore) -> f64 {
    let dx = problem.base.grid.dx();
    let per_level: Vec<f64> = (0..traj.len())
        .map(|k| problem.residual_at(traj, k).iter().map(|r| r * r).sum::<f64>() * dx)
        .collect();
    let mut j = 0.0;
    for k in 0..traj.len().saturating_sub(1) {
        j += 0.5 * traj.dt(k) * (per_level[k] + per_level[k + 1]);
    }
    0.5 * j
}

/// Descent direction per cell.
pub fn gradient(
    problem: &InverseProblem<'_>,
    traj: &TrajectoryStore,
    adjoint: Option<&CellField>,
) -> Result<Vec<f64>> {
    match problem.gradient_rule {
        GradientRule::Adjoint => {
            let field = adjoint.ok_or_else(|| {
                Error::InvalidArgument("adjoint gradient needs the backward solution".into())
            })?;
            if field.grid.cells != problem.cells() {
                return Err(Error::DimensionMismatch {
                    expected: problem.cells(),
                    found: field.grid.cells,
                });
            }
            let c = field.layout.extended() + problem.control.extended_index(field.layout.m);
            Ok(field.component(c))
        }
        GradientRule::MeasurementResidual { at } => {
            Ok(problem.residual_at(traj, InverseProblem::level_index(traj, at)))
        }
    }
}

/// `b ← b − λ G`, rejecting non-finite directions.
pub fn update_parameters(current: &[f64], grad: &[f64], lambda_ip: f64, iteration: usize) -> Result<Vec<f64>> {
    if current.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: current.len(),
            found: grad.len(),
        });
    }
    if let Some(cell) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { iteration, cell });
    }
    Ok(current.iter().zip(grad).map(|(b, g)| b - lambda_ip * g).collect())
}

/// `max_i |a_i − b_i|`.
pub fn max_abs_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Error of the current estimate under `metric`.
pub fn error_metric(
    problem: &InverseProblem<'_>,
    estimate: &[f64],
    traj: &TrajectoryStore,
    metric: ErrorMetric,
) -> Result<f64> {
    match metric {
        ErrorMetric::MaxAbsVsReference => {
            let reference = problem.reference.as_ref().ok_or_else(|| {
                Error::InvalidArgument("no reference field for the error metric".into())
            })?;
            Ok(max_abs_distance(estimate, reference))
        }
        ErrorMetric::MeasurementMaxAbs { at } => Ok(problem
            .residual_at(traj, InverseProblem::level_index(traj, at))
            .iter()
            .fold(0.0f64, |m, r| m.max(r.abs()))),
    }
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let scale = old.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    max_abs_distance(old, new) / (1e-12 + scale)
}

/// Runs the descent loop from `initial_estimate`. Record `k` holds the
/// estimate after `k` updates with its cost and error.
pub fn run(
    problem: &InverseProblem<'_>,
    solver: &dyn AdjointSolver,
    config: &OptimConfig,
    initial_estimate: &[f64],
) -> std::result::Result<OptimHistory, RunFailure> {
    let mut history = OptimHistory::default();
    let fail = |history: &OptimHistory, error| RunFailure {
        history: history.clone(),
        error,
    };
    config.validate().map_err(|e| fail(&history, e))?;
    let mut estimate = initial_estimate.to_vec();
    let mut stop = false;
    for k in 0..=config.max_iters {
        let field = problem.initial_field(&estimate).map_err(|e| fail(&history, e))?;
        let dt = problem.time_step(solver, &field).map_err(|e| fail(&history, e))?;
        let (_, traj) = solver
            .forward(&field, problem.final_time, dt)
            .map_err(|e| fail(&history, e))?;
        let cost = evaluate_cost(problem, &traj);
        let error = error_metric(problem, &estimate, &traj, config.error_metric)
            .map_err(|e| fail(&history, e))?;
        history.records.push(IterationRecord {
            iteration: k,
            cost,
            error,
            dt,
            estimate: estimate.clone(),
        });
        if k == config.max_iters || stop {
            break;
        }
        let adjoint = if problem.gradient_rule.needs_adjoint() {
            Some(solver.backward(&traj, &field).map_err(|e| fail(&history, e))?)
        } else {
            None
        };
        let grad = gradient(problem, &traj, adjoint.as_ref()).map_err(|e| fail(&history, e))?;
        let next = update_parameters(&estimate, &grad, config.lambda_ip, k + 1)
            .map_err(|e| fail(&history, e))?;
        stop = relative_change(&estimate, &next) < config.stop_tol;
        estimate = next;
    }
    Ok(history)
}

/// Interpretation choices for a preset experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentOptions {
    pub dissipation: Dissipation,
    pub jump_sign: JumpSign,
    pub target_source: TargetSource,
    pub swe_coupling: SweCoupling,
    /// Level at which the shallow water gradient and error are taken.
    pub swe_level: TimeLevel,
    /// Wave speed for the step size when the initial guess is at rest.
    pub fallback_speed: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            dissipation: Dissipation::default(),
            jump_sign: JumpSign::default(),
            target_source: TargetSource::default(),
            swe_coupling: SweCoupling::default(),
            swe_level: TimeLevel::Initial,
            fallback_speed: 1.0,
        }
    }
}

/// A preset with its model, measurement and initial field built.
pub struct Experiment {
    pub preset: ExperimentPreset,
    pub options: ExperimentOptions,
    pub model: Box<dyn Model>,
    pub measurement: MeasurementData,
    pub base: CellField,
    pub control: Control,
    pub gradient_rule: GradientRule,
    pub error_metric: ErrorMetric,
    pub reference: Option<Vec<f64>>,
}

impl Experiment {
    pub fn new(preset: ExperimentPreset, options: ExperimentOptions) -> Result<Self> {
        let grid = preset.grid()?;
        let guess = preset.initial_guess;
        let burgers = |profile: BurgersProfile| -> Result<Experiment> {
            let measurement =
                models::burgers_target(profile, grid, preset.final_time, preset.cfl, options.target_source)?;
            Ok(Experiment {
                preset: preset.clone(),
                options,
                model: Box::new(models::Burgers),
                measurement,
                base: burgers_field(grid, |_| guess)?,
                control: Control::InitialState { component: 0 },
                gradient_rule: GradientRule::Adjoint,
                error_metric: ErrorMetric::MaxAbsVsReference,
                reference: Some(grid.centers().iter().map(|&x| profile.initial(x)).collect()),
            })
        };
        match preset.kind {
            PresetKind::BurgersStep => burgers(BurgersProfile::Step),
            PresetKind::BurgersSine => burgers(BurgersProfile::Sine),
            PresetKind::SweBottom => {
                let model = ShallowWater::new(preset.epsilon).with_coupling(options.swe_coupling);
                Ok(Experiment {
                    preset: preset.clone(),
                    options,
                    model: Box::new(model),
                    measurement: MeasurementData::closed(swe_target),
                    base: swe_field(grid, |_| 1.0, |_| 0.0, |_| guess)?,
                    control: Control::Parameter { index: 0 },
                    gradient_rule: GradientRule::MeasurementResidual { at: options.swe_level },
                    error_metric: ErrorMetric::MeasurementMaxAbs { at: options.swe_level },
                    reference: None,
                })
            }
        }
    }

    pub fn from_preset(preset: ExperimentPreset) -> Result<Self> {
        Self::new(preset, ExperimentOptions::default())
    }

    pub fn problem(&self) -> InverseProblem<'_> {
        InverseProblem {
            model: self.model.as_ref(),
            measurement: &self.measurement,
            base: self.base.clone(),
            final_time: self.preset.final_time,
            cfl: self.preset.cfl,
            control: self.control,
            gradient_rule: self.gradient_rule,
            reference: self.reference.clone(),
            fallback_speed: Some(self.options.fallback_speed),
            fixed_dt: None,
        }
    }

    pub fn config(&self) -> OptimConfig {
        OptimConfig {
            lambda_ip: self.preset.lambda_ip,
            max_iters: self.preset.iterations,
            stop_tol: 0.0,
            error_metric: self.error_metric,
        }
    }

    pub fn system(&self) -> UnifiedSystem<'_> {
        UnifiedSystem::new(self.model.as_ref(), &self.measurement).with_dissipation(self.options.dissipation)
    }

    pub fn scheme(&self) -> Scheme<'_> {
        Scheme::new(self.system()).with_jump_sign(self.options.jump_sign)
    }

    /// Unified-scheme run with the preset configuration.
    pub fn run_unified(&self) -> std::result::Result<OptimHistory, RunFailure> {
        let problem = self.problem();
        run(&problem, &self.scheme(), &self.config(), &problem.base_estimate())
    }
}
