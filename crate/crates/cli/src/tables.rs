//! Relative-error grids: one row per estimator, one column per theta or x.

use rayon::prelude::*;

use sln_core::inversion::{density, density_cond_mc, stehfest_weights};
use sln_core::oracle::{density_convolution, log_laplace_reference, QuadratureSpec};
use sln_core::transform::{laplace, Method};
use sln_core::LognormalModel;

use crate::commands::model_cell;
use crate::report::{Cell, Report};
use crate::{Failure, RunArgs};

pub const TABLE1_THETA: [f64; 5] = [100.0, 2500.0, 5000.0, 7500.0, 10000.0];
pub const TABLE1_REPS: usize = 1_000_000;
pub const TABLE2_X: [f64; 5] = [0.01, 1.0, 1.5, 2.0, 3.0];
pub const TABLE2_REPS: usize = 10_000;

const TRANSFORM_ROWS: [Method; 4] = [Method::Tilde, Method::Cmc, Method::Is, Method::Qmc];

fn grid(points: &[f64], labels: &[&str], cells: Vec<Vec<Cell>>, extra: &[(&str, Cell)]) -> Report {
    let mut header: Vec<String> = vec!["estimator".into()];
    header.extend(points.iter().map(|p| format!("{p:.6e}")));
    header.extend(extra.iter().map(|(k, _)| k.to_string()));
    let mut report = Report::new(header);
    for (r, label) in labels.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*label).into()];
        row.extend(cells.iter().map(|column| column[r].clone()));
        row.extend(extra.iter().map(|(_, v)| v.clone()));
        report.push(row);
    }
    report
}

/// `L_hat / L - 1`, formed from logarithms so it survives tiny transforms.
fn rel_from_logs(log_est: f64, log_ref: f64) -> f64 {
    (log_est - log_ref).exp_m1()
}

pub fn table1(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    let thetas = if args.theta.is_empty() {
        TABLE1_THETA.to_vec()
    } else {
        args.theta.clone()
    };
    let reps = args.reps.unwrap_or(TABLE1_REPS);
    let spec = QuadratureSpec::default();
    let columns: Vec<Vec<Cell>> = thetas
        .par_iter()
        .map(|t| {
            let truth = log_laplace_reference(model, *t, &spec)?;
            TRANSFORM_ROWS
                .iter()
                .map(|m| {
                    let e = laplace(model, *t, *m, reps, args.seed)?;
                    Ok(if e.value == 0.0 && *m == Method::Cmc {
                        Cell::Star
                    } else {
                        Cell::Num(rel_from_logs(e.log_value, truth))
                    })
                })
                .collect::<sln_core::Result<Vec<Cell>>>()
        })
        .collect::<sln_core::Result<_>>()?;
    let labels: Vec<&str> = TRANSFORM_ROWS.iter().map(|m| m.as_str()).collect();
    Ok(grid(
        &thetas,
        &labels,
        columns,
        &[
            ("reps", reps.into()),
            ("seed", args.seed.into()),
            ("model", model_cell(model)),
        ],
    ))
}

pub fn table2(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    let xs = if args.x.is_empty() {
        TABLE2_X.to_vec()
    } else {
        args.x.clone()
    };
    let reps = args.reps.unwrap_or(TABLE2_REPS);
    let rule = stehfest_weights(args.gs_terms)?;
    let spec = QuadratureSpec::default();
    let columns: Vec<Vec<Cell>> = xs
        .par_iter()
        .map(|x| {
            let truth = density_convolution(model, *x, &spec)?;
            let cond = density_cond_mc(model, *x, reps, args.seed)?.value;
            let mut column = vec![Cell::Num(cond / truth - 1.0)];
            for m in [Method::Tilde, Method::Is, Method::Qmc] {
                let f = density(model, *x, m, &rule, reps, args.seed)?;
                column.push(Cell::Num(f / truth - 1.0));
            }
            Ok(column)
        })
        .collect::<sln_core::Result<_>>()?;
    Ok(grid(
        &xs,
        &["cond", "tilde", "is", "qmc"],
        columns,
        &[
            ("gs_terms", args.gs_terms.into()),
            ("reps", reps.into()),
            ("seed", args.seed.into()),
            ("model", model_cell(model)),
        ],
    ))
}
