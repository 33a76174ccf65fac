use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dualfv_core::ader::{self, Scheme};
use dualfv_core::checks;
use dualfv_core::linalg::matrix_abs;
use dualfv_core::models::{self, burgers_field, swe_field, Burgers, BurgersProfile, ShallowWater};
use dualfv_core::optimize::{self, max_abs_distance, ErrorMetric, OptimConfig};
use dualfv_core::reference::ReferenceSolver;
use dualfv_core::riemann::{dot_flux, jump_term, PathQuadrature};
use dualfv_core::system::{fill_transmissive, CellField, Grid, Layout, MeasurementData, Model, UnifiedSystem};
use dualfv_core::optimize::AdjointSolver;

fn zero() -> MeasurementData {
    MeasurementData::closed(|_, _| 0.0)
}

fn wet_state() -> impl Strategy<Value = (f64, f64)> {
    (0.5f64..2.0, -0.3f64..0.3).prop_map(|(h, s)| (h, s * h * h.sqrt() / 0.01))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dot_flux_is_consistent(q in -3.0f64..3.0, p in -3.0f64..3.0, (h, qs) in wet_state(), b in -1.0f64..1.0) {
        let meas = zero();
        let swe = ShallowWater::new(0.01);
        let quad = PathQuadrature::default();
        for eta in [1.0, -1.0] {
            let sys = UnifiedSystem::new(&Burgers, &meas);
            let v = DVector::from_vec(vec![q, p]);
            prop_assert_eq!(dot_flux(&sys, &v, &v, eta, &quad).unwrap(), sys.flux(v.as_slice()));
            let sys = UnifiedSystem::new(&swe, &meas);
            let v = DVector::from_vec(vec![h, qs, b, 0.3, -0.2, 0.1]);
            prop_assert_eq!(dot_flux(&sys, &v, &v, eta, &quad).unwrap(), sys.flux(v.as_slice()));
        }
    }

    #[test]
    fn burgers_quasilinear_matrix_is_q_identity(q in -3.0f64..3.0, p in -3.0f64..3.0) {
        let meas = zero();
        let a = UnifiedSystem::new(&Burgers, &meas).quasilinear(&[q, p]).unwrap();
        // characteristic polynomial (q − λ)²
        prop_assert_eq!(a, DMatrix::identity(2, 2) * q);
    }

    #[test]
    fn swe_closed_form_reproduces_wet_block((h, q) in wet_state()) {
        let (r, lam, rinv) = models::swe_eigendecomposition(h, q, 0.01).unwrap();
        let a = &r * lam * rinv;
        let jac = ShallowWater::new(0.01).flux_jacobian_state(&[h, q], &[0.0]);
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((a[(i, j)] - jac[(i, j)]).abs() <= 1e-10 * jac.amax());
            }
        }
    }

    #[test]
    fn matrix_abs_is_idempotent(a in prop::collection::vec(-2.0f64..2.0, 3), d in prop::collection::vec(-3.0f64..3.0, 3)) {
        // similarity transform of a diagonal matrix by a unit lower-triangular one
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, a[0], 1.0, 0.0, a[1], a[2], 1.0]);
        let m = &t * DMatrix::from_diagonal(&DVector::from_vec(d)) * t.clone().try_inverse().unwrap();
        let once = matrix_abs(&m).unwrap();
        let twice = matrix_abs(&once).unwrap();
        prop_assert!((once - twice).amax() <= 1e-9);
    }

    #[test]
    fn jump_term_negates_under_path_reversal(ql in -2.0f64..2.0, qr in -2.0f64..2.0, pl in -2.0f64..2.0, pr in -2.0f64..2.0) {
        let meas = zero();
        let sys = UnifiedSystem::new(&Burgers, &meas);
        let quad = PathQuadrature::default();
        let l = DVector::from_vec(vec![ql, pl]);
        let r = DVector::from_vec(vec![qr, pr]);
        let forward = jump_term(&sys, &l, &r, 1.0, &quad).unwrap();
        let back = jump_term(&sys, &r, &l, 1.0, &quad).unwrap();
        // constant (zero) state row, symmetric nodes for the adjoint row
        prop_assert_eq!(forward[0], 0.0);
        prop_assert!((forward[1] + back[1]).abs() <= 1e-14 * (1.0 + forward[1].abs()));
    }

    #[test]
    fn minmod_never_exceeds_one_sided_differences(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        prop_assert!(checks::minmod_is_bounded(a, b, c));
    }

    #[test]
    fn swe_target_is_odd_about_the_pulse_centre(s in -5.0f64..5.0, t in 0.0f64..3.0) {
        prop_assert!((models::swe_target(t + s, t) + models::swe_target(t - s, t)).abs() <= 1e-15);
    }

    #[test]
    fn free_surface_identity(h in 0.5f64..1.5, b in -1.0f64..1.0) {
        let swe = ShallowWater::new(0.01);
        let zeta = swe.measurement(&[h, 0.0], &[b]);
        prop_assert!((swe.depth_from_surface(zeta, b) - h).abs() <= 1e-12);
    }

    #[test]
    fn max_abs_distance_is_a_metric(
        a in prop::collection::vec(-1.0f64..1.0, 8),
        b in prop::collection::vec(-1.0f64..1.0, 8),
        c in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        prop_assert_eq!(max_abs_distance(&a, &b), max_abs_distance(&b, &a));
        prop_assert_eq!(max_abs_distance(&a, &a), 0.0);
        prop_assert_eq!(max_abs_distance(&a, &b) == 0.0, a == b);
        prop_assert!(max_abs_distance(&a, &c) <= max_abs_distance(&a, &b) + max_abs_distance(&b, &c) + 1e-15);
    }

    #[test]
    fn transmissive_fill_is_idempotent(vals in prop::collection::vec(-1.0f64..1.0, 3..12)) {
        let grid = Grid::new(0.0, 1.0, vals.len()).unwrap();
        let cells = vals.iter().map(|v| DVector::from_vec(vec![*v, 0.0])).collect();
        let mut f = CellField::from_interior(grid, Layout::new(1, 0), cells).unwrap();
        let once = f.clone();
        fill_transmissive(&mut f);
        prop_assert_eq!(&f, &once);
        prop_assert_eq!(&f.data[0], &f.data[grid.ghost_layers]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn burgers_forward_is_tvd_for_monotone_data(mut vals in prop::collection::vec(-1.0f64..1.0, 30), flip in any::<bool>()) {
        vals.sort_by(|a, b| a.total_cmp(b));
        if flip {
            vals.reverse();
        }
        prop_assume!(vals.iter().any(|v| *v != 0.0));
        let meas = zero();
        let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
        let grid = Grid::new(0.0, 1.0, vals.len()).unwrap();
        let cells = vals.iter().map(|v| DVector::from_vec(vec![*v, 0.0])).collect();
        let field = CellField::from_interior(grid, Layout::new(1, 0), cells).unwrap();
        let dt = ader::stable_dt(&scheme.sys, &field, 0.1).unwrap();
        let (_, traj) = scheme.solve_forward(&field, 15.0 * dt, dt).unwrap();
        let tv = |k: usize| traj.level(k).windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        for k in 1..traj.len() {
            prop_assert!(tv(k) <= tv(k - 1) + 1e-12);
        }
    }

    #[test]
    fn compact_burgers_data_conserves_mass(amp in 0.1f64..1.0, centre in -0.3f64..0.3) {
        let meas = zero();
        let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
        let grid = Grid::new(-2.0, 2.0, 60).unwrap();
        let field = burgers_field(grid, |x| if (x - centre).abs() < 0.5 { amp } else { 0.0 }).unwrap();
        let dt = ader::stable_dt(&scheme.sys, &field, 0.1).unwrap();
        let (_, traj) = scheme.solve_forward(&field, 20.0 * dt, dt).unwrap();
        let mass = |k: usize| traj.level(k).iter().sum::<f64>() * grid.dx();
        for k in 1..traj.len() {
            prop_assert!((mass(k) - mass(k - 1)).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_replay_is_bit_exact(amp in 0.2f64..1.0, shift in 0.0f64..1.0) {
        let meas = MeasurementData::closed(|x, _| 0.3 * x);
        let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
        let grid = Grid::new(0.0, 1.0, 24).unwrap();
        let field = burgers_field(grid, |x| amp * (6.0 * (x + shift)).sin() + 0.1).unwrap();
        let dt = ader::stable_dt(&scheme.sys, &field, 0.1).unwrap();
        let (_, traj) = scheme.solve_forward(&field, 0.05, dt).unwrap();
        let mut seen = Vec::new();
        scheme.solve_backward_with(&traj, &field, |k, f| {
            let bits_equal = (0..grid.cells).all(|i| f.cell(i)[0].to_bits() == traj.cell(k, i)[0].to_bits());
            seen.push((k, bits_equal));
            Ok(())
        }).unwrap();
        prop_assert_eq!(seen.len(), traj.len() - 1);
        prop_assert!(seen.iter().all(|(_, eq)| *eq));
    }
}

#[test]
fn lake_at_rest_is_preserved() {
    let meas = zero();
    let swe = ShallowWater::new(0.01);
    let scheme = Scheme::new(UnifiedSystem::new(&swe, &meas));
    let grid = Grid::new(-10.0, 10.0, 60).unwrap();
    let field = swe_field(grid, |_| 1.0, |_| 0.0, |_| 0.2).unwrap();
    let dt = ader::stable_dt(&scheme.sys, &field, 0.1).unwrap();
    assert_abs_diff_eq!(dt, 0.1 * grid.dx(), epsilon = 1e-15);
    let (fin, traj) = scheme.solve_forward(&field, 100.0 * dt, dt).unwrap();
    assert_eq!(traj.len(), 101);
    for q in fin.interior() {
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-12);
    }
}

#[test]
fn burgers_shock_travels_at_quarter_speed() {
    let meas = zero();
    let sys = UnifiedSystem::new(&Burgers, &meas);
    let grid = Grid::new(-3.0, 3.0, 200).unwrap();
    let field = burgers_field(grid, |x| BurgersProfile::Step.initial(x)).unwrap();
    let dt = ader::stable_dt(&sys, &field, 0.1).unwrap();
    let solvers: [(&str, Box<dyn AdjointSolver>); 2] = [
        ("unified", Box::new(Scheme::new(sys))),
        ("reference", Box::new(ReferenceSolver::new(sys))),
    ];
    for (name, solver) in solvers {
        let (fin, _) = solver.forward(&field, 0.12, dt).unwrap();
        // position where the profile crosses the mid value 0.25
        let vals: Vec<f64> = fin.interior().iter().map(|q| q[0]).collect();
        let k = vals.windows(2).position(|w| w[0] >= 0.25 && w[1] < 0.25).unwrap();
        let x = grid.center(k) + grid.dx() * (vals[k] - 0.25) / (vals[k] - vals[k + 1]);
        assert!((x - 0.03).abs() <= grid.dx(), "{name}: shock at {x}");
    }
}

#[test]
fn costs_decrease_with_small_step() {
    let costs = checks::descent_costs(0.05, 10).unwrap();
    assert!(costs.windows(2).all(|w| w[1] <= w[0]), "{costs:?}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let meas = MeasurementData::closed(|x, t| BurgersProfile::Sine.exact(x, t));
    let problem = checks::small_sine_problem(&meas, 20, 0.05).unwrap();
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let config = |iters| OptimConfig {
        lambda_ip: 1.0,
        max_iters: iters,
        stop_tol: 0.0,
        error_metric: ErrorMetric::MaxAbsVsReference,
    };
    let start = problem.base_estimate();
    let whole = optimize::run(&problem, &scheme, &config(5), &start).unwrap();
    let first = optimize::run(&problem, &scheme, &config(3), &start).unwrap();
    let rest = optimize::run(&problem, &scheme, &config(2), &first.last().unwrap().estimate).unwrap();
    assert_eq!(whole.last().unwrap().estimate, rest.last().unwrap().estimate);
    assert_eq!(whole.last().unwrap().cost, rest.last().unwrap().cost);
    assert_eq!(whole.records[3].estimate, first.last().unwrap().estimate);
}

#[test]
fn history_length_and_single_cycle() {
    let meas = MeasurementData::closed(|x, t| BurgersProfile::Sine.exact(x, t));
    let problem = checks::small_sine_problem(&meas, 20, 0.05).unwrap();
    let scheme = Scheme::new(UnifiedSystem::new(&Burgers, &meas));
    let config = OptimConfig {
        lambda_ip: 1.0,
        max_iters: 1,
        stop_tol: 0.0,
        error_metric: ErrorMetric::MaxAbsVsReference,
    };
    let h = optimize::run(&problem, &scheme, &config, &problem.base_estimate()).unwrap();
    assert_eq!(h.len(), 2);
    let stopping = OptimConfig { max_iters: 50, stop_tol: 10.0, ..config };
    let h = optimize::run(&problem, &scheme, &stopping, &problem.base_estimate()).unwrap();
    assert!(h.len() <= 3, "stop rule ignored: {} records", h.len());
}

#[test]
fn reference_adjoint_stays_bounded_on_burgers_presets() {
    for name in ["burgers_sine", "burgers_step"] {
        let exp = optimize::Experiment::from_preset(models::make_preset(name).unwrap()).unwrap();
        let problem = exp.problem();
        let solver = ReferenceSolver::new(exp.system());
        let field = problem.initial_field(&problem.base_estimate()).unwrap();
        let dt = problem.time_step(&solver, &field).unwrap();
        let (_, traj) = solver.forward(&field, problem.final_time, dt).unwrap();
        let p = solver.backward(&traj, &field).unwrap();
        let peak = p.interior().iter().fold(0.0f64, |m, q| m.max(q[1].abs()));
        assert!(peak.is_finite() && peak < 10.0, "{name}: max |p| = {peak}");
    }
}
