use nalgebra::DMatrix;
use rayon::prelude::*;

use sln_core::asymptotic::{expand, AsymptoticExpansion};
use sln_core::inversion::{density as invert_density, density_cond_mc, stehfest_weights};
use sln_core::minimiser::minimise_h;
use sln_core::oracle::{density_convolution, log_laplace_reference, QuadratureSpec};
use sln_core::transform::{laplace, Method};
use sln_core::LognormalModel;

use crate::report::{Cell, Report};
use crate::{Failure, MethodArg, RunArgs};

pub const DEFAULT_REPS: usize = 10_000;

pub fn model_cell(model: &LognormalModel) -> Cell {
    Cell::Text(model.name().unwrap_or("").to_string())
}

pub fn require(values: &[f64], flag: &str, command: &str) -> Result<(), Failure> {
    if values.is_empty() {
        return Err(Failure::Usage(format!("{command} needs --{flag}")));
    }
    Ok(())
}

pub fn transform_method(m: MethodArg) -> Result<Method, Failure> {
    match m {
        MethodArg::Tilde => Ok(Method::Tilde),
        MethodArg::Cmc => Ok(Method::Cmc),
        MethodArg::Is => Ok(Method::Is),
        MethodArg::Qmc => Ok(Method::Qmc),
        MethodArg::Cond => Err(Failure::Usage(
            "--method cond applies to density only; use tilde, cmc, is or qmc".into(),
        )),
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Cond => "cond",
        other => transform_method(other)
            .map(Method::as_str)
            .unwrap_or("cond"),
    }
}

pub fn minimise(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    require(&args.theta, "theta", "minimise")?;
    let n = model.dim();
    let mut header: Vec<String> = ["theta", "method", "iterations", "residual"]
        .map(String::from)
        .to_vec();
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("model".into());
    let results: Vec<_> = args
        .theta
        .par_iter()
        .map(|t| minimise_h(model, *t, None))
        .collect::<Result<_, _>>()?;
    let mut report = Report::new(header);
    for (t, r) in args.theta.iter().zip(results) {
        let mut row: Vec<Cell> = vec![
            (*t).into(),
            r.method.as_str().into(),
            r.iterations.into(),
            r.residual_inf.into(),
        ];
        row.extend(r.x_star.iter().map(|v| Cell::Num(*v)));
        row.push(model_cell(model));
        report.push(row);
    }
    Ok(report)
}

/// `(beta | c - mu)` and `D (beta | c - mu)`. Entries of the second block
/// after the first negative one of a row in `F+` carry no information and
/// are starred.
pub fn asymptotic_layout(model: &LognormalModel, e: &AsymptoticExpansion) -> Report {
    let n = model.dim();
    let cols = e.beta.ncols();
    let mut table = DMatrix::zeros(n, cols + 1);
    table.columns_mut(0, cols).copy_from(&e.beta);
    table.set_column(cols, &e.c_minus_mu(model));
    let product = model.precision() * &table;
    let snap = 1e-9 * model.precision().amax() * table.amax().max(1.0);

    let mut header: Vec<String> = vec!["matrix".into(), "row".into()];
    header.extend((1..=cols).map(|j| format!("log{j}")));
    header.push("c_minus_mu".into());
    let mut report = Report::new(header);
    for i in 0..n {
        let mut row: Vec<Cell> = vec!["beta".into(), (i + 1).into()];
        row.extend(table.row(i).iter().map(|v| Cell::Num(*v)));
        report.push(row);
    }
    for i in 0..n {
        let cut = e.first_negative[i];
        let mut row: Vec<Cell> = vec!["d_beta".into(), (i + 1).into()];
        for j in 0..=cols {
            let v = product[(i, j)];
            row.push(match cut {
                Some(k) if j >= k => Cell::Star,
                _ if v.abs() <= snap => Cell::Num(0.0),
                _ => Cell::Num(v),
            });
        }
        report.push(row);
    }
    report
}

pub fn asymptotic(_args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    let e = expand(model)?;
    Ok(asymptotic_layout(model, &e))
}

const TRANSFORM_HEADER: [&str; 8] = [
    "theta",
    "value",
    "log_value",
    "std_error",
    "method",
    "reps",
    "seed",
    "model",
];
const DENSITY_HEADER: [&str; 7] = [
    "x", "estimate", "method", "gs_terms", "reps", "seed", "model",
];

pub fn transform(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    require(&args.theta, "theta", "transform")?;
    let method = transform_method(args.method.unwrap_or(MethodArg::Tilde))?;
    let reps = args.reps.unwrap_or(DEFAULT_REPS);
    let estimates: Vec<_> = args
        .theta
        .par_iter()
        .map(|t| laplace(model, *t, method, reps, args.seed))
        .collect::<Result<_, _>>()?;
    let mut report = Report::new(TRANSFORM_HEADER);
    for e in estimates {
        report.push(vec![
            e.theta.into(),
            e.value.into(),
            e.log_value.into(),
            e.std_error.into(),
            e.method.as_str().into(),
            e.reps.into(),
            args.seed.into(),
            model_cell(model),
        ]);
    }
    Ok(report)
}

pub fn density(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    require(&args.x, "x", "density")?;
    let choice = args.method.unwrap_or(MethodArg::Tilde);
    if choice == MethodArg::Cmc {
        return Err(Failure::Usage(
            "--method cmc has no density estimator; use tilde, is, qmc or cond".into(),
        ));
    }
    let reps = args.reps.unwrap_or(DEFAULT_REPS);
    let rule = stehfest_weights(args.gs_terms)?;
    let values: Vec<f64> = args
        .x
        .par_iter()
        .map(|x| match choice {
            MethodArg::Cond => density_cond_mc(model, *x, reps, args.seed).map(|d| d.value),
            MethodArg::Is => invert_density(model, *x, Method::Is, &rule, reps, args.seed),
            MethodArg::Qmc => invert_density(model, *x, Method::Qmc, &rule, reps, args.seed),
            _ => invert_density(model, *x, Method::Tilde, &rule, reps, args.seed),
        })
        .collect::<Result<_, _>>()?;
    let used_reps = if choice == MethodArg::Tilde { 0 } else { reps };
    let mut report = Report::new(DENSITY_HEADER);
    for (x, v) in args.x.iter().zip(values) {
        report.push(vec![
            (*x).into(),
            v.into(),
            method_name(choice).into(),
            args.gs_terms.into(),
            used_reps.into(),
            args.seed.into(),
            model_cell(model),
        ]);
    }
    Ok(report)
}

pub fn oracle(args: &RunArgs, model: &LognormalModel) -> Result<Report, Failure> {
    let spec = QuadratureSpec::default();
    match (args.theta.is_empty(), args.x.is_empty()) {
        (false, true) => {
            let logs: Vec<f64> = args
                .theta
                .par_iter()
                .map(|t| log_laplace_reference(model, *t, &spec))
                .collect::<Result<_, _>>()?;
            let mut report = Report::new(TRANSFORM_HEADER);
            for (t, l) in args.theta.iter().zip(logs) {
                report.push(vec![
                    (*t).into(),
                    l.exp().into(),
                    l.into(),
                    0.0.into(),
                    "oracle".into(),
                    0usize.into(),
                    args.seed.into(),
                    model_cell(model),
                ]);
            }
            Ok(report)
        }
        (true, false) => {
            let values: Vec<f64> = args
                .x
                .par_iter()
                .map(|x| density_convolution(model, *x, &spec))
                .collect::<Result<_, _>>()?;
            let mut report = Report::new(DENSITY_HEADER);
            for (x, v) in args.x.iter().zip(values) {
                report.push(vec![
                    (*x).into(),
                    v.into(),
                    "oracle".into(),
                    0usize.into(),
                    0usize.into(),
                    args.seed.into(),
                    model_cell(model),
                ]);
            }
            Ok(report)
        }
        _ => Err(Failure::Usage(
            "oracle needs exactly one of --theta or --x".into(),
        )),
    }
}
