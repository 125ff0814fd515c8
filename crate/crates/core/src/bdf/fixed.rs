use nalgebra::DVector;

use super::coefficients::MAX_ORDER;
use super::grid::TimeGrid;
use super::newton::{NewtonSettings, NewtonSolver};
use super::stepping::advance;
use super::tape::{IntegrationMode, IntegrationTape, NewtonStats};
use crate::error::{Error, Result};
use crate::model::OdeProblem;

/// Absolute residual tolerance of the non-adaptive driver.
pub const NONADAPTIVE_NEWTON_TOLERANCE: f64 = 1e-12;

/// Nodes and orders of the constant-order, constant-stepsize scheme.
///
/// The first interval `[t_s, t_s + h]` is split into `k` pieces of lengths
/// `h/2^{k-1}, h/2^{k-1}, h/2^{k-2}, ..., h/2` taken with orders
/// `1, 1, 2, ..., k-1`; for `k = 2` these are two implicit Euler steps of
/// length `h/2`. All later steps use order `k` and stepsize `h`.
pub fn nonadaptive_grid(t_start: f64, t_final: f64, order: usize, h: f64) -> Result<TimeGrid> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidOrder(order));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stepsize must be positive, got {h}"
        )));
    }
    let width = t_final - t_start;
    let intervals = (width / h).round();
    if intervals < 1.0 || (intervals * h - width).abs() > 1e-9 * width {
        return Err(Error::InvalidArgument(format!(
            "interval length {width} is not an integer multiple of h = {h}"
        )));
    }
    let intervals = intervals as usize;
    let mut nodes = vec![t_start];
    let mut orders = Vec::new();
    // ramp pieces j = 0..k-1 end at t_s + h·2^{-(k-1-j)}; the last one is t_s + h
    for j in 0..order.saturating_sub(1) {
        nodes.push(t_start + h * 0.5f64.powi((order - 1 - j) as i32));
        orders.push(j.max(1));
    }
    for j in 1..=intervals {
        nodes.push(if j == intervals {
            t_final
        } else {
            t_start + j as f64 * h
        });
        orders.push(if j == 1 { (order - 1).max(1) } else { order });
    }
    TimeGrid::new(nodes, orders)
}

/// Constant-order, constant-stepsize BDF integration.
///
/// Newton failures abort with the index of the failing step.
pub fn integrate_nonadaptive(
    problem: &OdeProblem,
    order: usize,
    h: f64,
) -> Result<IntegrationTape> {
    let grid = nonadaptive_grid(problem.t_start(), problem.t_final(), order, h)?;
    let mut tape = run_on_grid(
        problem,
        &grid,
        NewtonSettings::default(),
        NONADAPTIVE_NEWTON_TOLERANCE,
    )?;
    tape.mode = IntegrationMode::Nonadaptive { order, h };
    Ok(tape)
}

/// Replays a prescribed grid (nodes and orders), solving every step to
/// roundoff with full Newton. The initial state is taken from `problem`.
pub fn integrate_on_grid(problem: &OdeProblem, grid: &TimeGrid) -> Result<IntegrationTape> {
    if grid.t_start() != problem.t_start() || grid.t_final() != problem.t_final() {
        return Err(Error::InvalidArgument(
            "grid does not span the problem interval".into(),
        ));
    }
    run_on_grid(problem, grid, NewtonSettings::tight(), 0.0)
}

fn run_on_grid(
    problem: &OdeProblem,
    grid: &TimeGrid,
    settings: NewtonSettings,
    tolerance: f64,
) -> Result<IntegrationTape> {
    let mut solver = NewtonSolver::new(settings);
    let nodes = grid.nodes();
    let mut states: Vec<DVector<f64>> = vec![problem.y_start().clone()];
    let mut coefficients = Vec::with_capacity(grid.n_steps());
    let mut newton = Vec::with_capacity(grid.n_steps());
    for n in 0..grid.n_steps() {
        let step = advance(
            problem,
            &mut solver,
            &nodes[..=n],
            &states,
            grid.order(n),
            nodes[n + 1],
            tolerance,
        )?;
        // replays converge to roundoff; record a tolerance that survives
        // re-evaluating the residual with a different summation order
        let alpha_sum: f64 = step.coefficients.alphas.iter().map(|a| a.abs()).sum();
        let roundoff = 64.0 * f64::EPSILON * alpha_sum * (1.0 + step.outcome.y.amax());
        newton.push(NewtonStats {
            iterations: step.outcome.iterations,
            residual: step.outcome.residual,
            tolerance: tolerance.max(step.outcome.residual).max(roundoff),
        });
        states.push(step.outcome.y);
        coefficients.push(step.coefficients);
    }
    Ok(IntegrationTape {
        problem: problem.spec().cloned(),
        mode: IntegrationMode::Prescribed,
        grid: grid.clone(),
        states,
        coefficients,
        newton,
    })
}
