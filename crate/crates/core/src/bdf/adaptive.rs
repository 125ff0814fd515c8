use nalgebra::DVector;

use super::coefficients::MAX_ORDER;
use super::grid::TimeGrid;
use super::newton::{NewtonSettings, NewtonSolver};
use super::stepping::advance;
use super::tape::{IntegrationMode, IntegrationTape, NewtonStats};
use crate::error::{Error, Result};
use crate::model::OdeProblem;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 2.5;
/// Increases smaller than this are not worth changing the stepsize for.
const MIN_INCREASE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_order: usize,
    pub initial_step: Option<f64>,
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl AdaptiveSettings {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            max_order: MAX_ORDER,
            initial_step: None,
            max_step: None,
            max_steps: 1_000_000,
        }
    }
}

/// Variable-order, variable-stepsize integration with local error control.
pub fn integrate_adaptive(problem: &OdeProblem, rtol: f64, atol: f64) -> Result<IntegrationTape> {
    integrate_adaptive_with(problem, &AdaptiveSettings::new(rtol, atol))
}

/// Local error estimate of an order-`j` step for the latest accepted state.
///
/// Uses the divided difference of order `j + 1` over `t_{n+1}, ..., t_{n-j}`,
/// scaled to `h_n ∏_{i=1}^{j} (t_{n+1} - t_{n+1-i}) · y[t_{n+1}, ..., t_{n-j}]`,
/// which equals the corrector-predictor difference times the order-`j` error
/// constant. When the history ends at `t_0`, the missing node is replaced by
/// a repeated `t_0` carrying `f(t_0, y_0)`.
fn error_estimate(
    problem: &OdeProblem,
    nodes: &[f64],
    states: &[DVector<f64>],
    j: usize,
) -> DVector<f64> {
    let last = nodes.len() - 1;
    debug_assert!(j <= last);
    let mut xs: Vec<f64> = Vec::with_capacity(j + 2);
    let mut vals: Vec<DVector<f64>> = Vec::with_capacity(j + 2);
    for i in 0..=j {
        xs.push(nodes[last - i]);
        vals.push(states[last - i].clone());
    }
    let confluent = j + 1 > last;
    if confluent {
        xs.push(nodes[0]);
        vals.push(states[0].clone());
    } else {
        xs.push(nodes[last - j - 1]);
        vals.push(states[last - j - 1].clone());
    }
    // divided-difference table, in place
    for level in 1..xs.len() {
        for i in 0..xs.len() - level {
            let dx = xs[i] - xs[i + level];
            vals[i] = if dx == 0.0 {
                problem.rhs(xs[i], &states[0])
            } else {
                (&vals[i] - &vals[i + 1]) / dx
            };
        }
    }
    let h = nodes[last] - nodes[last - 1];
    let scale: f64 = h
        * (1..=j)
            .map(|i| nodes[last] - nodes[last - i])
            .product::<f64>();
    &vals[0] * scale
}

fn weighted_norm(e: &DVector<f64>, y: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    e.iter()
        .zip(y.iter())
        .map(|(ei, yi)| ei.abs() / (rtol * yi.abs() + atol))
        .fold(0.0, f64::max)
}

fn factor_for(err: f64, order: usize) -> f64 {
    if err == 0.0 {
        f64::INFINITY
    } else {
        SAFETY * err.powf(-1.0 / (order as f64 + 1.0))
    }
}

fn initial_step(problem: &OdeProblem, rtol: f64, atol: f64) -> f64 {
    let (ts, tf) = (problem.t_start(), problem.t_final());
    let width = tf - ts;
    let y0 = problem.y_start();
    let f0 = problem.rhs(ts, y0);
    let delta = 1e-6 * width;
    let y1 = y0 + &f0 * delta;
    let ydd = (problem.rhs(ts + delta, &y1) - &f0) / delta;
    let curvature = weighted_norm(&ydd, y0, rtol, atol);
    let h = if curvature > 0.0 {
        0.5 * (2.0 / curvature).sqrt()
    } else {
        f64::INFINITY
    };
    h.min(0.1 * width).max(1e-10 * width)
}

pub fn integrate_adaptive_with(
    problem: &OdeProblem,
    settings: &AdaptiveSettings,
) -> Result<IntegrationTape> {
    let AdaptiveSettings { rtol, atol, .. } = *settings;
    if !(rtol > 0.0 && atol > 0.0 && rtol.is_finite() && atol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerances must be positive, got rtol = {rtol}, atol = {atol}"
        )));
    }
    if !(1..=MAX_ORDER).contains(&settings.max_order) {
        return Err(Error::InvalidOrder(settings.max_order));
    }
    let (ts, tf) = (problem.t_start(), problem.t_final());
    let h_max = settings.max_step.unwrap_or(tf - ts);

    let mut solver = NewtonSolver::new(NewtonSettings::default());
    let mut nodes = vec![ts];
    let mut states = vec![problem.y_start().clone()];
    let mut orders: Vec<usize> = Vec::new();
    let mut coefficients = Vec::new();
    let mut newton = Vec::new();

    let mut h = settings
        .initial_step
        .unwrap_or_else(|| initial_step(problem, rtol, atol));
    let mut order = 1;
    let mut steps_at_order = 0;
    let mut failures = 0;

    while *nodes.last().unwrap() < tf {
        if orders.len() >= settings.max_steps {
            return Err(Error::StepLimit {
                limit: settings.max_steps,
                t: *nodes.last().unwrap(),
            });
        }
        let n = nodes.len() - 1;
        let t = nodes[n];
        order = order.min(n + 1).min(settings.max_order);
        h = h.min(h_max);
        let t_next = if t + 1.05 * h >= tf { tf } else { t + h };
        h = t_next - t;
        if !(h > 1e3 * f64::EPSILON * t.abs().max(t_next.abs())) {
            return Err(Error::StepsizeUnderflow { t, h });
        }
        let y_norm = states[n].amax();
        let tolerance = (1e-2 * rtol.min(h * h) * y_norm.max(atol / rtol))
            .max(64.0 * f64::EPSILON * y_norm.max(1.0));

        let step = match advance(
            problem,
            &mut solver,
            &nodes,
            &states,
            order,
            t_next,
            tolerance,
        ) {
            Ok(step) => step,
            Err(Error::NewtonFailure { .. } | Error::SingularMatrix { .. }) => {
                failures += 1;
                if failures >= 3 {
                    order = 1;
                    steps_at_order = 0;
                }
                h *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };

        nodes.push(t_next);
        states.push(step.outcome.y.clone());
        let err = weighted_norm(
            &error_estimate(problem, &nodes, &states, order),
            &step.outcome.y,
            rtol,
            atol,
        );
        if err > 1.0 {
            // retry with whichever of k-1, k promises the larger step
            let mut factor = factor_for(err, order);
            if order > 1 {
                let e = weighted_norm(
                    &error_estimate(problem, &nodes, &states, order - 1),
                    &step.outcome.y,
                    rtol,
                    atol,
                );
                let r = factor_for(e, order - 1);
                if r > factor {
                    factor = r;
                    order -= 1;
                    steps_at_order = 0;
                }
            }
            nodes.pop();
            states.pop();
            failures += 1;
            if failures >= 3 {
                order = 1;
                steps_at_order = 0;
            }
            h *= factor.clamp(MIN_FACTOR, SAFETY);
            continue;
        }

        failures = 0;
        steps_at_order += 1;
        orders.push(order);
        coefficients.push(step.coefficients);
        newton.push(NewtonStats {
            iterations: step.outcome.iterations,
            residual: step.outcome.residual,
            tolerance,
        });
        if t_next >= tf {
            break;
        }

        // order and stepsize for the next step
        let step_index = nodes.len() - 2;
        let mut best_order = order;
        let mut best = factor_for(err, order);
        if order > 1 {
            let e = weighted_norm(
                &error_estimate(problem, &nodes, &states, order - 1),
                &step.outcome.y,
                rtol,
                atol,
            );
            let r = factor_for(e, order - 1);
            if r > best {
                best = r;
                best_order = order - 1;
            }
        }
        if order < settings.max_order && steps_at_order > order && order <= step_index {
            let e = weighted_norm(
                &error_estimate(problem, &nodes, &states, order + 1),
                &step.outcome.y,
                rtol,
                atol,
            );
            let r = factor_for(e, order + 1);
            if r > best {
                best = r;
                best_order = order + 1;
            }
        }
        if best_order != order {
            order = best_order;
            steps_at_order = 0;
        }
        let mut factor = best.clamp(MIN_FACTOR, MAX_FACTOR);
        if factor > 1.0 && factor < MIN_INCREASE {
            factor = 1.0;
        }
        h *= factor;
    }

    Ok(IntegrationTape {
        problem: problem.spec().cloned(),
        mode: IntegrationMode::Adaptive { rtol, atol },
        grid: TimeGrid::new(nodes, orders)?,
        states,
        coefficients,
        newton,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{catenary_problem, linear_test_problem, OdeSystem};

    /// `y' = y²` blows up at `t = 1/y_0`.
    struct BlowUp;

    impl OdeSystem for BlowUp {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
            y.map(|v| v * v)
        }
        fn jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 * y[0])
        }
        fn criterion(&self, y: &DVector<f64>) -> f64 {
            y[0]
        }
        fn criterion_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, 1.0)
        }
    }

    #[test]
    fn catenary_loose_tolerance() {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_adaptive(&problem, 1e-4, 1e-4).unwrap();
        let (lo, hi) = tape.grid.order_range();
        assert!(lo >= 1 && hi <= MAX_ORDER);
        assert_eq!(tape.grid.t_final(), 2.0);
        let exact = reference.nominal(2.0);
        let rel = (tape.final_state() - &exact).norm() / exact.norm();
        assert!(rel < 1e-3, "relative final error {rel:e}");
        tape.validate(&problem).unwrap();
    }

    #[test]
    fn tighter_tolerance_refines_grid() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let coarse = integrate_adaptive(&problem, 1e-4, 1e-4).unwrap();
        let fine = integrate_adaptive(&problem, 1e-9, 1e-9).unwrap();
        assert!(fine.n_steps() > coarse.n_steps());
    }

    #[test]
    fn accepted_steps_meet_local_tolerance() {
        // local truncation error of each accepted step, from the exact solution
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let (rtol, atol) = (1e-6, 1e-6);
        let tape = integrate_adaptive(&problem, rtol, atol).unwrap();
        let nodes = tape.grid.nodes();
        for (n, c) in tape.coefficients.iter().enumerate() {
            let t = nodes[n + 1];
            let h = tape.grid.stepsize(n);
            let y = reference.nominal(t);
            let mut r = -problem.rhs(t, &y) * h;
            for (i, a) in c.alphas.iter().enumerate() {
                r.axpy(*a, &reference.nominal(nodes[n + 1 - i]), 1.0);
            }
            let m = DMatrix::identity(2, 2) * c.leading() - problem.jacobian(t, &y) * h;
            let lte = m.lu().solve(&r).unwrap();
            // small slack: the controller sees the estimate, not the truth
            assert!(weighted_norm(&lte, &y, rtol, atol) <= 2.0, "step {n}");
        }
    }

    #[test]
    fn zero_dynamics_take_few_steps() {
        let (problem, _) = linear_test_problem(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 2.0]),
            0.0,
            10.0,
            None,
        )
        .unwrap();
        let tape = integrate_adaptive(&problem, 1e-8, 1e-8).unwrap();
        assert!(tape.n_steps() <= 6, "{} steps", tape.n_steps());
        assert!(tape.states.iter().all(|y| y == problem.y_start()));
    }

    #[test]
    fn blow_up_underflows() {
        let problem =
            OdeProblem::new(Arc::new(BlowUp), 0.0, 2.0, DVector::from_element(1, 1.0)).unwrap();
        assert!(matches!(
            integrate_adaptive(&problem, 1e-6, 1e-6),
            Err(Error::StepsizeUnderflow { .. })
        ));
    }

    #[test]
    fn rejects_bad_settings() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        assert!(integrate_adaptive(&problem, 0.0, 1e-6).is_err());
        assert!(integrate_adaptive(&problem, 1e-6, -1.0).is_err());
        let mut s = AdaptiveSettings::new(1e-6, 1e-6);
        s.max_order = 7;
        assert_eq!(
            integrate_adaptive_with(&problem, &s),
            Err(Error::InvalidOrder(7))
        );
        s.max_order = 3;
        s.max_steps = 5;
        assert!(matches!(
            integrate_adaptive_with(&problem, &s),
            Err(Error::StepLimit { limit: 5, .. })
        ));
    }

    #[test]
    fn order_cap_and_step_cap_are_respected() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let mut s = AdaptiveSettings::new(1e-7, 1e-7);
        s.max_order = 2;
        s.max_step = Some(0.05);
        let tape = integrate_adaptive_with(&problem, &s).unwrap();
        assert!(tape.grid.orders().iter().all(|&k| k <= 2));
        assert!(tape
            .grid
            .stepsizes()
            .iter()
            .all(|&h| h <= 0.05 * (1.0 + 1e-12)));
    }

    #[test]
    fn runs_are_bit_identical() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let a = integrate_adaptive(&problem, 1e-6, 1e-6).unwrap();
        let b = integrate_adaptive(&problem, 1e-6, 1e-6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
