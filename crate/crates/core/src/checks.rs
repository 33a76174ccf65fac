//! Numerical property checks shared by the test suites and `dualfv check`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ader::{self, minmod_slope, Scheme};
use crate::error::Result;
use crate::models::{self, burgers_field, BurgersProfile, Burgers, ShallowWater};
use crate::optimize::{self, Control, ErrorMetric, GradientRule, InverseProblem, OptimConfig};
use crate::riemann::{dot_flux, PathQuadrature};
use crate::system::{extended_eigenstructure, CellField, Grid, Layout, MeasurementData, Model, UnifiedSystem};

/// Outcome of one check against its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Self { name, value, threshold, passed: value <= threshold }
    }
    /// Passes when `value >= threshold`.
    pub fn at_least(name: &'static str, value: f64, threshold: f64) -> Self {
        Self { name, value, threshold, passed: value >= threshold }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_swe_state(rng: &mut impl Rng, eps: f64) -> Vec<f64> {
    let h: f64 = rng.gen_range(0.5..2.0);
    // keep the flow clearly subcritical: |ε q| ≤ 0.3 h^{3/2}
    let q = rng.gen_range(-0.3..0.3) * h * h.sqrt() / eps;
    let b = rng.gen_range(-0.5..0.5);
    let adj: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut s = vec![h, q, b];
    s.extend(adj);
    s
}

/// Largest `|dot_flux(Q, Q, η) − F(Q)|` over random states of both models
/// and both directions.
pub fn dot_consistency(rng: &mut impl Rng, samples: usize) -> Result<f64> {
    let meas = MeasurementData::closed(|_, _| 0.0);
    let swe = ShallowWater::new(0.01);
    let quad = PathQuadrature::default();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let qb = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let qs = DVector::from_vec(random_swe_state(rng, 0.01));
        for eta in [1.0, -1.0] {
            for (sys, q) in [
                (UnifiedSystem::new(&Burgers, &meas), &qb),
                (UnifiedSystem::new(&swe, &meas), &qs),
            ] {
                let f = dot_flux(&sys, q, q, eta, &quad)?;
                worst = worst.max((f - sys.flux(q.as_slice())).amax());
            }
        }
    }
    Ok(worst)
}

/// Largest entry of `R Λ R⁻¹ − A` over random wet shallow water states,
/// relative to the largest entry of `A`.
pub fn swe_decomposition_residual(rng: &mut impl Rng, samples: usize) -> Result<f64> {
    let eps = 0.01;
    let swe = ShallowWater::new(eps);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let s = random_swe_state(rng, eps);
        let (r, lam, rinv) = models::swe_eigendecomposition(s[0], s[1], eps)?;
        let a = &r * &lam * &rinv;
        let jac = swe.flux_jacobian_state(&s[..2], &s[2..3]);
        let mut full = nalgebra::DMatrix::zeros(5, 5);
        full.view_mut((0, 0), (2, 2)).copy_from(&jac);
        worst = worst.max((a - full).amax() / jac.amax());
    }
    Ok(worst)
}

/// Count of defects in the extended eigenstructure over random states:
/// wrong number of zero eigenvalues or a near-singular eigenvector matrix.
pub fn extended_structure_defects(rng: &mut impl Rng, samples: usize) -> Result<usize> {
    let swe = ShallowWater::new(0.01);
    let mut defects = 0;
    for _ in 0..samples {
        let s = random_swe_state(rng, 0.01);
        let q: f64 = rng.gen_range(0.1..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for (model, u, b) in [
            (&swe as &dyn Model, s[..2].to_vec(), s[2..3].to_vec()),
            (&Burgers as &dyn Model, vec![q], vec![]),
        ] {
            let eig = extended_eigenstructure(model, &u, &b)?;
            let zeros = eig.values.iter().filter(|l| **l == 0.0).count();
            let independent = eig.vectors.clone().svd(false, false).singular_values.min() > 1e-10;
            if zeros != model.param_dim() || !independent {
                defects += 1;
            }
        }
    }
    Ok(defects)
}

/// Largest `|D|` entry of the Burgers unified system over random states,
/// from both the closed form and the generic construction.
pub fn burgers_coupling_max(rng: &mut impl Rng, samples: usize) -> Result<f64> {
    let meas = MeasurementData::closed(|_, _| 0.0);
    let sys = UnifiedSystem::new(&Burgers, &meas);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (q, p) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        worst = worst.max(sys.adjoint_coupling(&[q, p])?.amax());
        worst = worst.max(crate::system::adjoint_coupling_from_jacobian(&Burgers, &[q], &[p])?.amax());
    }
    Ok(worst)
}

fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Largest total-variation increase between consecutive levels over random
/// monotone Burgers runs.
pub fn tvd_violation(rng: &mut impl Rng, runs: usize) -> Result<f64> {
    let meas = MeasurementData::closed(|_, _| 0.0);
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let grid = Grid::new(0.0, 1.0, 40)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..runs {
        // monotone data: sorted random values, either direction, some sign changes
        let mut vals: Vec<f64> = (0..grid.cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        if rng.gen_bool(0.5) {
            vals.reverse();
        }
        let cells = vals.iter().map(|v| DVector::from_vec(vec![*v, 0.0])).collect();
        let field = CellField::from_interior(grid, Layout::new(1, 0), cells)?;
        let dt = ader::stable_dt(&scheme.sys, &field, 0.1)?;
        let (_, traj) = scheme.solve_forward(&field, 20.0 * dt, dt)?;
        for k in 1..traj.len() {
            let before = total_variation(traj.level(k - 1));
            let after = total_variation(traj.level(k));
            worst = worst.max(after - before);
        }
    }
    Ok(worst)
}

/// Largest per-step change of `Σ q_i Δx` for compactly supported Burgers
/// data (no boundary flux while the support stays interior).
pub fn mass_defect(rng: &mut impl Rng, runs: usize) -> Result<f64> {
    let meas = MeasurementData::closed(|_, _| 0.0);
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let grid = Grid::new(-2.0, 2.0, 80)?;
    let mut worst = 0.0f64;
    for _ in 0..runs {
        let amp = rng.gen_range(0.2..1.0);
        let centre = rng.gen_range(-0.3..0.3);
        let field = burgers_field(grid, |x| {
            let s = (x - centre) / 0.5;
            if s.abs() < 1.0 {
                amp * (1.0 - s * s)
            } else {
                0.0
            }
        })?;
        let dt = ader::stable_dt(&scheme.sys, &field, 0.1)?;
        let (_, traj) = scheme.solve_forward(&field, 30.0 * dt, dt)?;
        let mass = |k: usize| traj.level(k).iter().sum::<f64>() * grid.dx();
        for k in 1..traj.len() {
            worst = worst.max((mass(k) - mass(k - 1)).abs());
        }
    }
    Ok(worst)
}

/// Cell average of `f` over `[a, b]` by 5-point Gauss-Legendre.
fn cell_average(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    X.iter().zip(W).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * 0.5
}

/// L1 errors of forward Burgers solves of `sin(2πx)` on `[0, 1]` at `t`,
/// against cell averages of the exact solution. Returns `(cells, error)`.
pub fn burgers_sine_errors(cells: &[usize], t: f64, cfl: f64) -> Result<Vec<(usize, f64)>> {
    let meas = MeasurementData::closed(|_, _| 0.0);
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let mut out = Vec::new();
    for &n in cells {
        let grid = Grid::new(0.0, 1.0, n)?;
        let dx = grid.dx();
        let avg = |x: f64, time: f64| {
            cell_average(|y| BurgersProfile::Sine.exact(y, time), x - 0.5 * dx, x + 0.5 * dx)
        };
        let field = burgers_field(grid, |x| avg(x, 0.0))?;
        let dt = ader::stable_dt(&scheme.sys, &field, cfl)?;
        let (fin, _) = scheme.solve_forward(&field, t, dt)?;
        let err: f64 = grid
            .centers()
            .iter()
            .enumerate()
            .map(|(i, &x)| (fin.cell(i)[0] - avg(x, t)).abs() * dx)
            .sum();
        out.push((n, err));
    }
    Ok(out)
}

/// Smallest observed order between consecutive resolutions.
pub fn convergence_order(errors: &[(usize, f64)]) -> f64 {
    errors
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[1].0 as f64 / w[0].0 as f64).ln())
        .fold(f64::INFINITY, f64::min)
}

/// Small smooth Burgers recovery problem (`N = cells`, `T = t`) around
/// the exact sine data, with a non-trivial base guess.
pub fn small_sine_problem<'a>(meas: &'a MeasurementData, cells: usize, t: f64) -> Result<InverseProblem<'a>> {
    let grid = Grid::new(0.0, 1.0, cells)?;
    let base = burgers_field(grid, |x| 0.5 * (2.0 * std::f64::consts::PI * x).sin() + 0.1)?;
    Ok(InverseProblem {
        model: &Burgers,
        measurement: meas,
        base,
        final_time: t,
        cfl: 0.1,
        control: Control::InitialState { component: 0 },
        gradient_rule: GradientRule::Adjoint,
        reference: Some(grid.centers().iter().map(|&x| BurgersProfile::Sine.initial(x)).collect()),
        fallback_speed: Some(1.0),
        fixed_dt: None,
    })
}

/// Random periodic perturbation built from the three lowest Fourier modes.
pub fn smooth_direction(rng: &mut impl Rng, xs: &[f64]) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let coeffs: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    xs.iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let w = tau * (k + 1) as f64 * x;
                    a * w.sin() + b * w.cos()
                })
                .sum()
        })
        .collect()
}

/// Relative gaps between the adjoint directional derivative `Δx Σ G_i δ_i`
/// and the central difference of `J`, over random directions.
pub fn gradient_fd_gaps(rng: &mut impl Rng, directions: usize) -> Result<Vec<f64>> {
    let meas = MeasurementData::closed(|x, t| BurgersProfile::Sine.exact(x, t));
    let mut problem = small_sine_problem(&meas, 20, 0.05)?;
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let h0 = problem.base_estimate();
    let field = problem.initial_field(&h0)?;
    let dt = ader::stable_dt(&scheme.sys, &field, problem.cfl)?;
    problem.fixed_dt = Some(dt);
    let (_, traj) = scheme.solve_forward(&field, problem.final_time, dt)?;
    let adj = scheme.solve_backward(&traj, &field)?;
    let grad = optimize::gradient(&problem, &traj, Some(&adj))?;
    let dx = field.grid.dx();
    let cost = |h: &[f64]| -> Result<f64> {
        let f = problem.initial_field(h)?;
        let (_, tr) = scheme.solve_forward(&f, problem.final_time, dt)?;
        Ok(optimize::evaluate_cost(&problem, &tr))
    };
    let eps = 1e-4;
    let mut gaps = Vec::with_capacity(directions);
    for _ in 0..directions {
        let dir = smooth_direction(rng, &field.grid.centers());
        let plus: Vec<f64> = h0.iter().zip(&dir).map(|(h, d)| h + eps * d).collect();
        let minus: Vec<f64> = h0.iter().zip(&dir).map(|(h, d)| h - eps * d).collect();
        let fd = (cost(&plus)? - cost(&minus)?) / (2.0 * eps);
        let adjoint: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() * dx;
        gaps.push((adjoint - fd).abs() / fd.abs().max(1e-300));
    }
    Ok(gaps)
}

/// Costs of a short descent on the small smooth problem.
pub fn descent_costs(lambda_ip: f64, iterations: usize) -> Result<Vec<f64>> {
    let meas = MeasurementData::closed(|x, t| BurgersProfile::Sine.exact(x, t));
    let problem = small_sine_problem(&meas, 20, 0.05)?;
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let config = OptimConfig {
        lambda_ip,
        max_iters: iterations,
        stop_tol: 0.0,
        error_metric: ErrorMetric::MaxAbsVsReference,
    };
    let hist = optimize::run(&problem, &scheme, &config, &problem.base_estimate()).map_err(|f| f.error)?;
    Ok(hist.records.iter().map(|r| r.cost).collect())
}

/// Frozen replay on Burgers shock data `½ / 0`. Returns the number of
/// backward levels whose loaded `(U, b)` slices differ from the forward
/// record in any bit, and the smallest state value seen just behind the
/// shock during the backward march (the recorded shock-side value, where a
/// genuine backward solve would see the rarefaction value 0).
pub fn frozen_replay() -> Result<(usize, f64)> {
    let meas = MeasurementData::closed(|x, t| BurgersProfile::Step.exact(x, t));
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let grid = Grid::new(-1.0, 1.0, 80)?;
    let field = burgers_field(grid, |x| BurgersProfile::Step.initial(x))?;
    let dt = ader::stable_dt(&scheme.sys, &field, 0.1)?;
    let (_, traj) = scheme.solve_forward(&field, 0.12, dt)?;
    let mut mismatched = 0;
    let mut behind = f64::INFINITY;
    let dx = grid.dx();
    scheme.solve_backward_with(&traj, &field, |k, f| {
        let e = f.layout.extended();
        let same = (0..grid.cells).all(|i| {
            f.cell(i).as_slice()[..e]
                .iter()
                .zip(traj.cell(k, i))
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            mismatched += 1;
        }
        let shock = 0.25 * traj.time(k);
        let i = ((shock - 3.0 * dx - grid.x_min) / dx).floor() as usize;
        behind = behind.min(f.cell(i)[0]);
        Ok(())
    })?;
    Ok((mismatched, behind))
}

/// The property suite run by `dualfv check`; every check draws from its
/// own stream seeded with `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let gaps = gradient_fd_gaps(&mut rng(seed), 10)?;
    Ok(vec![
        CheckOutcome::at_most("dot_flux_consistency", dot_consistency(&mut rng(seed), 1000)?, 1e-14),
        CheckOutcome::at_most(
            "swe_eigendecomposition",
            swe_decomposition_residual(&mut rng(seed), 1000)?,
            1e-10,
        ),
        CheckOutcome::at_most(
            "extended_eigenstructure_defects",
            extended_structure_defects(&mut rng(seed), 1000)? as f64,
            0.0,
        ),
        CheckOutcome::at_most("burgers_adjoint_coupling", burgers_coupling_max(&mut rng(seed), 1000)?, 1e-8),
        CheckOutcome::at_most("minmod_tvd", tvd_violation(&mut rng(seed), 100)?, 1e-12),
        CheckOutcome::at_most("mass_conservation", mass_defect(&mut rng(seed), 10)?, 1e-12),
        CheckOutcome::at_most(
            "gradient_vs_finite_difference",
            gaps.iter().fold(0.0f64, |m, g| m.max(*g)),
            5e-2,
        ),
    ])
}

/// Slope check used by property tests: the limited slope never exceeds
/// either one-sided difference in magnitude and never opposes them.
pub fn minmod_is_bounded(qm: f64, q0: f64, qp: f64) -> bool {
    let s = minmod_slope(
        &DVector::from_element(1, qm),
        &DVector::from_element(1, q0),
        &DVector::from_element(1, qp),
    )[0];
    let (l, r) = (q0 - qm, qp - q0);
    s.abs() <= l.abs().min(r.abs()) && s * l >= 0.0 && s * r >= 0.0
}
