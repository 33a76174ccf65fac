//! `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. `preset` is required and may
//! appear anywhere; every other key overrides one field of that preset.

use std::fmt::Write as _;
use std::path::PathBuf;

use dualfv_core::ader::JumpSign;
use dualfv_core::models::{make_preset, ExperimentPreset, SweCoupling, TargetSource};
use dualfv_core::optimize::{ExperimentOptions, TimeLevel};
use dualfv_core::riemann::Dissipation;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Unified,
    Reference,
    Both,
}

impl SchemeChoice {
    pub fn names(&self) -> &'static [&'static str] {
        match self {
            Self::Unified => &["unified"],
            Self::Reference => &["reference"],
            Self::Both => &["unified", "reference"],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: ExperimentPreset,
    pub options: ExperimentOptions,
    pub scheme: SchemeChoice,
    pub stop_tol: f64,
    pub out: Option<PathBuf>,
    /// Recorded in the manifest; runs themselves are deterministic.
    pub seed: u64,
}

fn config_error(line: usize, message: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        message: message.into(),
    }
}

fn number(line: usize, key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = value
        .parse()
        .map_err(|_| config_error(line, format!("`{key}` expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(config_error(line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn count(line: usize, key: &str, value: &str) -> Result<usize, CliError> {
    value
        .parse()
        .map_err(|_| config_error(line, format!("`{key}` expects a non-negative integer, got `{value}`")))
}

fn choice<T: Copy>(line: usize, key: &str, value: &str, options: &[(&str, T)]) -> Result<T, CliError> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let allowed: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            config_error(line, format!("`{key}` must be one of {}, got `{value}`", allowed.join("|")))
        })
}

/// Parses a configuration file's contents. Line numbers in errors are 1-based;
/// errors that concern the file as a whole use line 0.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| config_error(line, format!("expected `key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(config_error(line, "empty key or value"));
        }
        if let Some((first, ..)) = pairs.iter().find(|(_, k, _)| *k == key) {
            return Err(config_error(line, format!("`{key}` already set on line {first}")));
        }
        pairs.push((line, key, value));
    }

    let (_, _, name) = pairs
        .iter()
        .find(|(_, k, _)| *k == "preset")
        .ok_or_else(|| config_error(0, "missing required key `preset`"))?;
    let preset_line = pairs.iter().find(|(_, k, _)| *k == "preset").map(|p| p.0).unwrap_or(0);
    let preset = make_preset(name).map_err(|e| config_error(preset_line, e.to_string()))?;

    let mut cfg = RunConfig {
        preset,
        options: ExperimentOptions::default(),
        scheme: SchemeChoice::Both,
        stop_tol: 0.0,
        out: None,
        seed: 0,
    };
    for &(line, key, value) in &pairs {
        let p = &mut cfg.preset;
        let o = &mut cfg.options;
        match key {
            "preset" => {}
            "scheme" => {
                cfg.scheme = choice(
                    line,
                    key,
                    value,
                    &[
                        ("unified", SchemeChoice::Unified),
                        ("reference", SchemeChoice::Reference),
                        ("both", SchemeChoice::Both),
                    ],
                )?
            }
            "cells" => {
                p.cells = count(line, key, value)?;
                if p.cells < 2 {
                    return Err(config_error(line, "`cells` must be at least 2"));
                }
            }
            "x_min" => p.x_min = number(line, key, value)?,
            "x_max" => p.x_max = number(line, key, value)?,
            "final_time" => {
                p.final_time = number(line, key, value)?;
                if p.final_time <= 0.0 {
                    return Err(config_error(line, "`final_time` must be positive"));
                }
            }
            "cfl" => {
                p.cfl = number(line, key, value)?;
                if !(p.cfl > 0.0 && p.cfl <= 1.0) {
                    return Err(config_error(line, "`cfl` must lie in (0, 1]"));
                }
            }
            "lambda_ip" => {
                p.lambda_ip = number(line, key, value)?;
                if p.lambda_ip <= 0.0 {
                    return Err(config_error(line, "`lambda_ip` must be positive"));
                }
            }
            "max_iters" => {
                p.iterations = count(line, key, value)?;
                if p.iterations < 1 {
                    return Err(config_error(line, "`max_iters` must be at least 1"));
                }
            }
            "initial_guess" => p.initial_guess = number(line, key, value)?,
            "epsilon" => {
                p.epsilon = number(line, key, value)?;
                if p.epsilon <= 0.0 {
                    return Err(config_error(line, "`epsilon` must be positive"));
                }
            }
            "stop_tol" => {
                cfg.stop_tol = number(line, key, value)?;
                if cfg.stop_tol < 0.0 {
                    return Err(config_error(line, "`stop_tol` must be non-negative"));
                }
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| config_error(line, format!("`seed` expects a non-negative integer, got `{value}`")))?
            }
            "dissipation" => {
                o.dissipation = choice(
                    line,
                    key,
                    value,
                    &[
                        ("quasilinear", Dissipation::QuasiLinear),
                        ("flux_jacobian", Dissipation::FluxJacobian),
                    ],
                )?
            }
            "jump_sign" => {
                o.jump_sign = choice(line, key, value, &[("unit", JumpSign::Unit), ("eta", JumpSign::Eta)])?
            }
            "target" => {
                o.target_source = choice(
                    line,
                    key,
                    value,
                    &[("exact", TargetSource::Exact), ("simulated", TargetSource::Simulated)],
                )?
            }
            "swe_coupling" => {
                o.swe_coupling = choice(
                    line,
                    key,
                    value,
                    &[("printed", SweCoupling::Printed), ("derived", SweCoupling::Derived)],
                )?
            }
            "swe_level" => {
                o.swe_level = choice(
                    line,
                    key,
                    value,
                    &[("initial", TimeLevel::Initial), ("final", TimeLevel::Final)],
                )?
            }
            "fallback_speed" => {
                o.fallback_speed = number(line, key, value)?;
                if o.fallback_speed <= 0.0 {
                    return Err(config_error(line, "`fallback_speed` must be positive"));
                }
            }
            other => return Err(config_error(line, format!("unknown key `{other}`"))),
        }
    }
    if cfg.preset.x_min >= cfg.preset.x_max {
        let line = pairs
            .iter()
            .filter(|(_, k, _)| *k == "x_min" || *k == "x_max")
            .map(|p| p.0)
            .max()
            .unwrap_or(0);
        return Err(config_error(line, "`x_min` must be below `x_max`"));
    }
    Ok(cfg)
}

fn level_name(level: TimeLevel) -> &'static str {
    match level {
        TimeLevel::Initial => "initial",
        TimeLevel::Final => "final",
    }
}

impl RunConfig {
    /// Fully resolved configuration in the input syntax, one key per line.
    pub fn resolved(&self) -> String {
        let p = &self.preset;
        let o = &self.options;
        let scheme = match self.scheme {
            SchemeChoice::Unified => "unified",
            SchemeChoice::Reference => "reference",
            SchemeChoice::Both => "both",
        };
        let dissipation = match o.dissipation {
            Dissipation::QuasiLinear => "quasilinear",
            Dissipation::FluxJacobian => "flux_jacobian",
        };
        let jump = match o.jump_sign {
            JumpSign::Unit => "unit",
            JumpSign::Eta => "eta",
        };
        let target = match o.target_source {
            TargetSource::Exact => "exact",
            TargetSource::Simulated => "simulated",
        };
        let coupling = match o.swe_coupling {
            SweCoupling::Printed => "printed",
            SweCoupling::Derived => "derived",
        };
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", p.name());
        let _ = writeln!(s, "scheme = {scheme}");
        let _ = writeln!(s, "cells = {}", p.cells);
        let _ = writeln!(s, "x_min = {}", p.x_min);
        let _ = writeln!(s, "x_max = {}", p.x_max);
        let _ = writeln!(s, "final_time = {}", p.final_time);
        let _ = writeln!(s, "cfl = {}", p.cfl);
        let _ = writeln!(s, "lambda_ip = {}", p.lambda_ip);
        let _ = writeln!(s, "max_iters = {}", p.iterations);
        let _ = writeln!(s, "stop_tol = {}", self.stop_tol);
        let _ = writeln!(s, "initial_guess = {}", p.initial_guess);
        let _ = writeln!(s, "epsilon = {}", p.epsilon);
        let _ = writeln!(s, "dissipation = {dissipation}");
        let _ = writeln!(s, "jump_sign = {jump}");
        let _ = writeln!(s, "target = {target}");
        let _ = writeln!(s, "swe_coupling = {coupling}");
        let _ = writeln!(s, "swe_level = {}", level_name(o.swe_level));
        let _ = writeln!(s, "fallback_speed = {}", o.fallback_speed);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}
