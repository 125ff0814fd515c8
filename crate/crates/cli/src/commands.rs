//! The four subcommands. Each writes its report to `out` and its files to the
//! configured paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bdf_weak_adjoint::adjoint::{adjoint_sweep, assemble_weak_adjoint, AdjointDocument};
use bdf_weak_adjoint::analysis::{fit_order, pointwise_error, verify_kkt, ConvergenceTable};
use bdf_weak_adjoint::bdf::{integrate_adaptive, integrate_nonadaptive, IntegrationTape};
use bdf_weak_adjoint::model::{AnalyticReference, OdeProblem, ProblemSpec};
use bdf_weak_adjoint::Error;
use nalgebra::DVector;

use crate::config::{ExperimentConfig, RunSettings};
use crate::CliError;

/// Stored coefficients must reproduce their invariants to this relative accuracy.
pub const COEFFICIENT_TOLERANCE: f64 = 1e-12;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| usage(format!("cannot write output: {e}")))
}

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn number(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn vector(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|&x| number(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn build(spec: &ProblemSpec) -> Result<(OdeProblem, Arc<dyn AnalyticReference>), CliError> {
    spec.build()
        .map_err(|e| usage(format!("invalid problem: {e}")))
}

fn integrate_point(
    problem: &OdeProblem,
    run: &RunSettings,
    i: usize,
) -> Result<IntegrationTape, Error> {
    match run {
        RunSettings::Nonadaptive { order, h } => integrate_nonadaptive(problem, *order, h[i]),
        RunSettings::Adaptive { rtol, atol } => integrate_adaptive(problem, rtol[i], *atol),
    }
}

fn read_tape(path: &Path) -> Result<IntegrationTape, CliError> {
    IntegrationTape::from_json(&read_file(path)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// The problem a tape belongs to: the configured one, or else the one the
/// tape describes. Both must agree when present, and the tape has to cover
/// the problem's interval with states of its dimension.
fn tape_problem(
    cfg: &ExperimentConfig,
    tape: &IntegrationTape,
) -> Result<(OdeProblem, Arc<dyn AnalyticReference>), CliError> {
    let spec = match (&cfg.problem, &tape.problem) {
        (Some(a), Some(b)) if a != b => {
            return Err(usage(format!(
                "tape was produced for {b:?}, configuration names {a:?}"
            )))
        }
        (Some(spec), _) | (None, Some(spec)) => spec,
        (None, None) => return Err(usage("tape does not describe its problem; give --problem")),
    };
    let (problem, reference) = build(spec)?;
    if tape.dim() != problem.dim() {
        return Err(usage(format!(
            "tape has dimension {}, problem has {}",
            tape.dim(),
            problem.dim()
        )));
    }
    if tape.grid.t_start() != problem.t_start() || tape.grid.t_final() != problem.t_final() {
        return Err(usage(format!(
            "tape covers [{}, {}], problem is posed on [{}, {}]",
            tape.grid.t_start(),
            tape.grid.t_final(),
            problem.t_start(),
            problem.t_final()
        )));
    }
    Ok((problem, reference))
}

pub fn integrate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.require_problem()?;
    let run = cfg.require_run()?;
    if run.points() != 1 {
        return Err(usage("integrate takes a single --h or --rtol"));
    }
    let path = cfg.require_path(&cfg.tape, "tape")?;
    let (problem, _) = build(spec)?;
    let tape = integrate_point(&problem, run, 0).map_err(CliError::Solver)?;
    write_file(path, &tape.to_json().map_err(CliError::Solver)?)?;

    let (lo, hi) = tape.grid.order_range();
    let max_residual = tape.newton.iter().map(|s| s.residual).fold(0.0, f64::max);
    let iterations = tape.total_newton_iterations();
    emit(
        out,
        &format!(
            "steps {}\norders {lo}..{hi}\nt_final {}\nnewton_iterations {iterations}\n\
             newton_iterations_per_step {}\nnewton_max_residual {max_residual:e}\n\
             newton_max_tolerance {:e}\nfinal_state {}\ntape {}\n",
            tape.n_steps(),
            tape.grid.t_final(),
            iterations as f64 / tape.n_steps() as f64,
            tape.max_newton_tolerance(),
            vector(tape.final_state()),
            path.display()
        ),
    )
}

pub fn adjoint(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tape_path = cfg.require_path(&cfg.tape, "tape")?;
    let json_path = cfg.require_path(&cfg.adjoint_file, "adjoint-file")?;
    let csv_path = cfg.out.clone().unwrap_or_else(|| csv_path_for(json_path));
    let tape = read_tape(tape_path)?;
    let (problem, reference) = tape_problem(cfg, &tape)?;
    tape.validate(&problem)
        .map_err(|e| usage(format!("{}: {e}", tape_path.display())))?;

    let adjoints = adjoint_sweep(&problem, &tape).map_err(CliError::Solver)?;
    let weak = assemble_weak_adjoint(&tape, &adjoints).map_err(CliError::Solver)?;
    let doc = AdjointDocument::new(&tape, &adjoints, &weak);
    write_file(json_path, &doc.to_json().map_err(CliError::Solver)?)?;
    write_file(&csv_path, &doc.to_csv(Some(reference.as_ref())))?;
    emit(
        out,
        &format!(
            "steps {}\ngradient {}\nlambda_final {}\nLambda_h_final {}\nadjoint_file {}\ncsv {}\n",
            tape.n_steps(),
            vector(&adjoints.gradient),
            vector(adjoints.lambda(tape.n_steps())),
            vector(weak.node_values().last().unwrap()),
            json_path.display(),
            csv_path.display()
        ),
    )
}

pub fn verify(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tape_path = cfg.require_path(&cfg.tape, "tape")?;
    let adjoint_path = cfg.require_path(&cfg.adjoint_file, "adjoint-file")?;
    let tape = read_tape(tape_path)?;
    let doc = AdjointDocument::from_json(&read_file(adjoint_path)?)
        .map_err(|e| usage(format!("{}: {e}", adjoint_path.display())))?;
    if doc.problem != tape.problem
        || doc.t_start != tape.grid.t_start()
        || doc.nodes != tape.grid.nodes()[1..]
        || doc.gradient.len() != tape.dim()
    {
        return Err(usage(format!(
            "{} does not belong to {}",
            adjoint_path.display(),
            tape_path.display()
        )));
    }
    let (problem, _) = tape_problem(cfg, &tape)?;
    let kkt = verify_kkt(&problem, &tape, &doc.adjoints()).map_err(|e| usage(e.to_string()))?;
    let drift = tape.coefficient_drift().map_err(|e| usage(e.to_string()))?;
    let (sum_defect, identity_defect) = tape.coefficient_defects();

    let mut violations = Vec::new();
    if !kkt.nominal_ok() {
        violations.push(format!(
            "nominal_residual {:e} exceeds {:e}",
            kkt.nominal_residual, kkt.nominal_threshold
        ));
    }
    if !kkt.adjoint_ok() {
        violations.push(format!(
            "adjoint_residual {:e} exceeds {:e}",
            kkt.adjoint_residual, kkt.adjoint_threshold
        ));
    }
    if !kkt.initial_ok() {
        violations.push(format!(
            "initial_residual {:e} is not zero",
            kkt.initial_residual
        ));
    }
    for (name, value) in [
        ("coefficient_drift", drift),
        ("coefficient_sum_defect", sum_defect),
        ("coefficient_identity_defect", identity_defect),
    ] {
        if !(value <= COEFFICIENT_TOLERANCE) {
            violations.push(format!(
                "{name} {value:e} exceeds {COEFFICIENT_TOLERANCE:e}"
            ));
        }
    }

    let mut report = serde_json::to_value(kkt).map_err(|e| usage(e.to_string()))?;
    let map = report.as_object_mut().unwrap();
    map.insert("coefficient_drift".into(), drift.into());
    map.insert("coefficient_sum_defect".into(), sum_defect.into());
    map.insert("coefficient_identity_defect".into(), identity_defect.into());
    map.insert("coefficient_threshold".into(), COEFFICIENT_TOLERANCE.into());
    map.insert(
        "violations".into(),
        violations
            .iter()
            .map(|v| v.split(' ').next().unwrap())
            .collect::<Vec<_>>()
            .into(),
    );
    map.insert("passes".into(), violations.is_empty().into());
    let text = serde_json::to_string_pretty(&report).map_err(|e| usage(e.to_string()))? + "\n";
    match &cfg.out {
        Some(path) => write_file(path, &text)?,
        None => emit(out, &text)?,
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(violations.join("; ")))
    }
}

/// Outcome of one sweep point.
struct Point {
    param: f64,
    result: Result<Measured, String>,
}

struct Measured {
    steps: usize,
    /// weak-adjoint error at each evaluation time
    errors: Vec<f64>,
    /// `Λʰ` at each evaluation time
    values: Vec<DVector<f64>>,
}

fn measure(
    problem: &OdeProblem,
    reference: &dyn AnalyticReference,
    run: &RunSettings,
    i: usize,
    times: &[f64],
) -> Result<Measured, Error> {
    let tape = integrate_point(problem, run, i)?;
    let adjoints = adjoint_sweep(problem, &tape)?;
    let weak = assemble_weak_adjoint(&tape, &adjoints)?;
    let mut errors = Vec::with_capacity(times.len());
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        errors.push(pointwise_error(&weak, reference, t)?);
        values.push(weak.eval(t)?);
    }
    Ok(Measured {
        steps: tape.n_steps(),
        errors,
        values,
    })
}

/// Errors this close to the size of `Λ(t)` are roundoff and carry no order.
fn resolved(error: f64, scale: f64) -> bool {
    error.is_finite() && error > 1e3 * f64::EPSILON * (1.0 + scale)
}

pub fn converge(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.require_problem()?;
    let run = cfg.require_run()?;
    let (param_name, params) = match run {
        RunSettings::Nonadaptive { h, .. } => ("h", h),
        RunSettings::Adaptive { rtol, .. } => ("rtol", rtol),
    };
    let minimum = if param_name == "h" { 3 } else { 2 };
    if params.len() < minimum {
        return Err(usage(format!(
            "a {param_name} sweep needs at least {minimum} points, got {}",
            params.len()
        )));
    }
    // coarse to fine
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| params[b].total_cmp(&params[a]));
    if order.windows(2).any(|w| params[w[0]] == params[w[1]]) {
        return Err(usage(format!("repeated {param_name} in the sweep")));
    }

    let (problem, reference) = build(spec)?;
    let tf = problem.t_final();
    let mut times = vec![tf];
    for &t in &cfg.probes {
        if !times.contains(&t) {
            times.push(t);
        }
    }
    let scales: Vec<f64> = times
        .iter()
        .map(|&t| reference.weak_adjoint(t).norm())
        .collect();

    let points: Vec<Point> = std::thread::scope(|s| {
        let handles: Vec<_> = order
            .iter()
            .map(|&i| {
                let (problem, reference, times) = (&problem, reference.as_ref(), &times);
                s.spawn(move || measure(problem, reference, run, i, times))
            })
            .collect();
        order
            .iter()
            .zip(handles)
            .map(|(&i, handle)| Point {
                param: params[i],
                result: match handle.join() {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(_) => Err("worker panicked".into()),
                },
            })
            .collect()
    });

    // per evaluation time: observed orders between usable rows and the fit
    let mut columns = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let mut table = ConvergenceTable::default();
        for p in &points {
            match &p.result {
                Ok(m) if resolved(m.errors[j], scales[j]) => table.push(p.param, m.errors[j]),
                Ok(m) => log::warn!(
                    "{param_name} = {}: error {:e} at t = {t} is at roundoff level; excluded from the fit",
                    p.param,
                    m.errors[j]
                ),
                Err(e) => log::warn!("{param_name} = {} failed ({e}); excluded from the fit", p.param),
            }
        }
        let fit = if table.len() < 3 {
            log::warn!(
                "fit skipped at t = {t}: {} usable point(s), need 3",
                table.len()
            );
            None
        } else {
            match fit_order(&table) {
                Ok(q) => Some(q),
                Err(e) => {
                    log::warn!("fit skipped at t = {t}: {e}");
                    None
                }
            }
        };
        columns.push((table, fit));
    }

    let csv = convergence_csv(param_name, &times, &points, &columns)?;
    let mut summary = String::new();
    for p in &points {
        match &p.result {
            Ok(m) => {
                summary += &format!("{param_name} {} steps {}", number(p.param), m.steps);
                for (t, v) in times.iter().zip(&m.values) {
                    summary += &format!(" Lambda_h({}) {}", number(*t), vector(v));
                }
                summary.push('\n');
            }
            Err(e) => summary += &format!("{param_name} {} failed: {e}\n", number(p.param)),
        }
    }
    for (t, (_, fit)) in times.iter().zip(&columns) {
        match fit {
            Some(q) => summary += &format!("fitted order at t = {t}: {q}\n"),
            None => summary += &format!("fitted order at t = {t}: skipped\n"),
        }
    }
    match &cfg.out {
        Some(path) => {
            write_file(path, &csv)?;
            emit(out, &summary)?;
            emit(out, &format!("table {}\n", path.display()))
        }
        None => emit(out, &csv),
    }
}

fn convergence_csv(
    param_name: &str,
    times: &[f64],
    points: &[Point],
    columns: &[(ConvergenceTable, Option<f64>)],
) -> Result<String, CliError> {
    let column_names = |j: usize| -> (String, String) {
        match j {
            0 => ("error_tf".into(), "order_tf".into()),
            1 => ("error_interior".into(), "order_interior".into()),
            _ => (
                format!("error_t{}", number(times[j])),
                format!("order_t{}", number(times[j])),
            ),
        }
    };
    // the interior columns are always present, empty without a probe
    let width = times.len().max(2);
    let mut header = vec![param_name.to_string()];
    for j in 0..width {
        let (e, o) = column_names(j);
        header.push(e);
        header.push(o);
    }
    header.push("steps".into());
    header.push("status".into());

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| usage(format!("cannot format table: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut row = vec![number(p.param)];
        for j in 0..width {
            match (&p.result, columns.get(j)) {
                (Ok(m), Some((table, _))) => {
                    row.push(number(m.errors[j]));
                    let observed = table
                        .rows
                        .iter()
                        .find(|r| r.param == p.param)
                        .and_then(|r| r.order);
                    row.push(observed.map(number).unwrap_or_default());
                }
                _ => row.extend([String::new(), String::new()]),
            }
        }
        match &p.result {
            Ok(m) => row.extend([m.steps.to_string(), "ok".into()]),
            Err(e) => row.extend([String::new(), format!("failed: {e}")]),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut fit_row = vec!["fit".to_string()];
    for j in 0..width {
        let fit = columns.get(j).and_then(|c| c.1);
        fit_row.push(String::new());
        fit_row.push(fit.map(number).unwrap_or_default());
    }
    fit_row.extend([String::new(), String::new()]);
    w.write_record(&fit_row).map_err(csv_err)?;
    let bytes = w
        .into_inner()
        .map_err(|e| usage(format!("cannot format table: {e}")))?;
    String::from_utf8(bytes).map_err(|e| usage(e.to_string()))
}

/// Default location of the plotting table next to an adjoint file.
pub fn csv_path_for(adjoint_file: &Path) -> PathBuf {
    adjoint_file.with_extension("csv")
}
