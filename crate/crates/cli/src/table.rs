//! The `table` subcommand: one summary row per (file, scheme).

use std::fs;
use std::path::PathBuf;

use crate::CliError;

struct Row {
    file: String,
    scheme: String,
    iters: usize,
    first_cost: f64,
    last_cost: f64,
    last_error: f64,
}

fn parse_history(path: &PathBuf) -> Result<Vec<Row>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let bad = |line: usize, message: &str| CliError::Input {
        path: path.clone(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "scheme,iter,J,error")) => {}
        _ => return Err(bad(1, "expected header `scheme,iter,J,error`")),
    }
    let mut rows: Vec<Row> = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(idx + 1, "expected 4 columns"));
        }
        let iter: usize = fields[1].parse().map_err(|_| bad(idx + 1, "bad iteration"))?;
        let cost: f64 = fields[2].parse().map_err(|_| bad(idx + 1, "bad J"))?;
        let error: f64 = fields[3].parse().map_err(|_| bad(idx + 1, "bad error"))?;
        match rows.last_mut() {
            Some(row) if row.scheme == fields[0] => {
                row.iters = iter;
                row.last_cost = cost;
                row.last_error = error;
            }
            _ => rows.push(Row {
                file: path.display().to_string(),
                scheme: fields[0].to_string(),
                iters: iter,
                first_cost: cost,
                last_cost: cost,
                last_error: error,
            }),
        }
    }
    Ok(rows)
}

pub fn table(paths: &[PathBuf]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(parse_history(p)?);
    }
    let width = rows.iter().map(|r| r.file.len()).max().unwrap_or(4).max(4);
    println!(
        "{:<width$}  {:<9}  {:>5}  {:>11}  {:>11}  {:>11}",
        "file", "scheme", "iters", "J_first", "J_last", "error"
    );
    for r in rows {
        println!(
            "{:<width$}  {:<9}  {:>5}  {:>11.4e}  {:>11.4e}  {:>11.4e}",
            r.file, r.scheme, r.iters, r.first_cost, r.last_cost, r.last_error
        );
    }
    Ok(())
}
