//! The `run` subcommand and its output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dualfv_core::optimize::{self, AdjointSolver, Experiment, OptimConfig, OptimHistory};
use dualfv_core::reference::ReferenceSolver;

use crate::config::{self, RunConfig};
use crate::CliError;

const DEFAULT_OUT: &str = "results";

struct SchemeRun {
    name: &'static str,
    history: OptimHistory,
    seconds: f64,
    failure: Option<dualfv_core::Error>,
}

fn solver_for<'a>(exp: &'a Experiment, name: &str) -> Box<dyn AdjointSolver + 'a> {
    match name {
        "unified" => Box::new(exp.scheme()),
        _ => Box::new(ReferenceSolver::new(exp.system())),
    }
}

fn history_csv(runs: &[SchemeRun]) -> String {
    let mut s = String::from("scheme,iter,J,error\n");
    for r in runs {
        for rec in &r.history.records {
            let _ = writeln!(s, "{},{},{},{}", r.name, rec.iteration, rec.cost, rec.error);
        }
    }
    s
}

/// Final forward state of the last estimate, with the recovered field and
/// its target side by side.
fn profile_csv(exp: &Experiment, run: &SchemeRun) -> Result<String, CliError> {
    let solver_error = |source| CliError::Solver {
        scheme: run.name,
        source,
    };
    let problem = exp.problem();
    let estimate = match run.history.last() {
        Some(rec) => rec.estimate.clone(),
        None => problem.base_estimate(),
    };
    let solver = solver_for(exp, run.name);
    let field = problem.initial_field(&estimate).map_err(solver_error)?;
    let dt = problem.time_step(solver.as_ref(), &field).map_err(solver_error)?;
    let (fin, _) = solver.forward(&field, problem.final_time, dt).map_err(solver_error)?;

    let target_time = match exp.options.swe_level {
        optimize::TimeLevel::Initial => 0.0,
        optimize::TimeLevel::Final => problem.final_time,
    };
    let mut s = String::from("x");
    for name in exp.model.component_names() {
        let _ = write!(s, ",{name}");
    }
    s.push_str(",recovered,target\n");
    for (i, q) in fin.interior().iter().enumerate() {
        let x = fin.grid.center(i);
        let target = match &exp.reference {
            Some(r) => r[i],
            None => exp.measurement.eval(x, target_time),
        };
        let _ = write!(s, "{x}");
        for v in q.iter() {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{},{target}", estimate[i]);
    }
    Ok(s)
}

fn manifest(cfg: &RunConfig, runs: &[SchemeRun]) -> String {
    let mut s = String::from("# resolved configuration\n");
    s.push_str(&cfg.resolved());
    for r in runs {
        let _ = writeln!(s, "\n# {}", r.name);
        let status = match &r.failure {
            None => "ok".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        let _ = writeln!(s, "status.{} = {status}", r.name);
        let _ = writeln!(s, "records.{} = {}", r.name, r.history.len());
        let dts: Vec<String> = r.history.records.iter().map(|rec| rec.dt.to_string()).collect();
        let _ = writeln!(s, "dt.{} = {}", r.name, dts.join(","));
        let _ = writeln!(s, "wall_clock_s.{} = {:.3}", r.name, r.seconds);
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(CliError::io(path))
}

pub fn run(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path).map_err(CliError::io(config_path))?;
    let cfg = config::parse(&text)?;
    let dir = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT).join(cfg.preset.name()));
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;

    let exp = Experiment::new(cfg.preset.clone(), cfg.options).map_err(|source| CliError::Solver {
        scheme: "setup",
        source,
    })?;
    let problem = exp.problem();
    let optim = OptimConfig {
        stop_tol: cfg.stop_tol,
        ..exp.config()
    };

    let mut runs = Vec::new();
    for &name in cfg.scheme.names() {
        let solver = solver_for(&exp, name);
        let start = Instant::now();
        let outcome = optimize::run(&problem, solver.as_ref(), &optim, &problem.base_estimate());
        let seconds = start.elapsed().as_secs_f64();
        let (history, failure) = match outcome {
            Ok(h) => (h, None),
            Err(f) => (f.history, Some(f.error)),
        };
        if let Some(rec) = history.last() {
            println!(
                "{name}: {} iterations, J = {}, error = {}, {seconds:.2}s",
                rec.iteration, rec.cost, rec.error
            );
        }
        let failed = failure.is_some();
        runs.push(SchemeRun {
            name,
            history,
            seconds,
            failure,
        });
        if failed {
            break;
        }
    }

    write(&dir, "history.csv", &history_csv(&runs))?;
    write(&dir, "manifest.txt", &manifest(&cfg, &runs))?;
    if let Some(bad) = runs.iter_mut().find(|r| r.failure.is_some()) {
        let source = bad.failure.take().expect("failure present");
        return Err(CliError::Solver {
            scheme: bad.name,
            source,
        });
    }
    write(&dir, "profile_final.csv", &profile_csv(&exp, &runs[0])?)?;
    println!("wrote {}", dir.display());
    Ok(())
}
