use nalgebra::DVector;

use super::coefficients::{compute_coefficients, interpolate, BdfCoefficients};
use super::newton::{NewtonOutcome, NewtonSolver};
use crate::error::Result;
use crate::model::OdeProblem;

/// Result of one attempted step.
pub(crate) struct StepResult {
    pub coefficients: BdfCoefficients,
    pub outcome: NewtonOutcome,
}

/// Predictor for the step to `t_next`: the interpolation polynomial through
/// the last `min(order + 1, n + 1)` accepted states, extrapolated.
pub(crate) fn predict(
    nodes: &[f64],
    states: &[DVector<f64>],
    order: usize,
    t_next: f64,
) -> DVector<f64> {
    let m = (order + 1).min(nodes.len());
    let start = nodes.len() - m;
    let values: Vec<&DVector<f64>> = states[start..].iter().collect();
    interpolate(&nodes[start..], &values, t_next)
}

/// Takes one BDF step of the given order from the accepted history.
pub(crate) fn advance(
    problem: &OdeProblem,
    solver: &mut NewtonSolver,
    nodes: &[f64],
    states: &[DVector<f64>],
    order: usize,
    t_next: f64,
    tolerance: f64,
) -> Result<StepResult> {
    let n = nodes.len() - 1;
    let mut stencil = nodes[nodes.len() - order..].to_vec();
    stencil.push(t_next);
    let coefficients = compute_coefficients(&stencil, order)?;
    let mut history = DVector::zeros(problem.dim());
    for i in 1..=order {
        history.axpy(coefficients.alphas[i], &states[n + 1 - i], 1.0);
    }
    let predictor = predict(nodes, states, order, t_next);
    let outcome = solver.solve(
        problem,
        n,
        &history,
        coefficients.leading(),
        t_next,
        t_next - nodes[n],
        predictor,
        tolerance,
    )?;
    Ok(StepResult {
        coefficients,
        outcome,
    })
}
