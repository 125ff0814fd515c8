use nalgebra::DVector;

use crate::adjoint::WeakAdjoint;
use crate::bdf::TimeGrid;
use crate::error::{Error, Result};
use crate::model::AnalyticReference;

/// `‖Λ(t) - Λʰ(t)‖₂`.
pub fn pointwise_error(
    weak: &WeakAdjoint,
    reference: &dyn AnalyticReference,
    t: f64,
) -> Result<f64> {
    let approx = weak.eval(t)?;
    Ok((reference.weak_adjoint(t) - approx).norm())
}

/// Stepsize of the equidistant part of `grid`.
///
/// A short leading start-up segment of smaller steps is allowed; every step
/// after the first full-size one must have the same length.
pub fn equidistant_stepsize(grid: &TimeGrid) -> Result<f64> {
    let steps = grid.stepsizes();
    let h = *steps.last().unwrap();
    let same = |x: f64| (x - h).abs() <= 1e-9 * h;
    let first = steps.iter().position(|&x| same(x)).unwrap();
    if first > crate::bdf::MAX_ORDER {
        return Err(Error::NonEquidistantGrid(format!(
            "start-up segment has {first} steps"
        )));
    }
    if let Some(i) = steps[..first].iter().position(|&x| x > h) {
        return Err(Error::NonEquidistantGrid(format!(
            "start-up step {i} is longer than h = {h}"
        )));
    }
    if let Some(i) = steps[first..].iter().position(|&x| !same(x)) {
        return Err(Error::NonEquidistantGrid(format!(
            "step {} has length {} instead of {h}",
            first + i,
            steps[first + i]
        )));
    }
    Ok(h)
}

/// Computable upper-bound surrogate for `‖Λ - Λʰ‖_NBV`:
/// `h|λ(t_0)| + Σ_n h_{n-1}|λ(t_n) - λ_n| + h|λ(t_N)|`, maximized over components.
///
/// On a strictly equidistant grid this is `h{|λ(t_0)| + Σ|λ(t_n) - λ_n| + |λ(t_N)|}`.
pub fn dual_norm_bound(
    weak: &WeakAdjoint,
    reference: &dyn AnalyticReference,
    grid: &TimeGrid,
) -> Result<f64> {
    if weak.jump_times() != &grid.nodes()[1..] {
        return Err(Error::DimensionMismatch(
            "weak adjoint jumps do not sit on the grid nodes".into(),
        ));
    }
    let h = equidistant_stepsize(grid)?;
    let nodes = grid.nodes();
    let mut per_component: DVector<f64> = reference.classical_adjoint(nodes[0]).abs() * h
        + reference.classical_adjoint(grid.t_final()).abs() * h;
    for (n, jump) in weak.jumps().iter().enumerate() {
        let hn = grid.stepsize(n);
        let lambda = jump / hn;
        per_component += (reference.classical_adjoint(nodes[n + 1]) - lambda).abs() * hn;
    }
    Ok(per_component.max())
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::adjoint::{adjoint_sweep, assemble_weak_adjoint};
    use crate::bdf::{integrate_adaptive, integrate_nonadaptive};
    use crate::model::{catenary_problem, linear_test_problem};

    /// `Λʰ` with jumps `h λ(t_n)` taken from the analytic adjoint.
    fn exact_jumps(reference: &dyn AnalyticReference, grid: &TimeGrid) -> WeakAdjoint {
        let jumps = (1..=grid.n_steps())
            .map(|n| reference.classical_adjoint(grid.nodes()[n]) * grid.stepsize(n - 1))
            .collect();
        WeakAdjoint::from_jumps(grid.t_start(), grid.nodes()[1..].to_vec(), jumps).unwrap()
    }

    #[test]
    fn zero_at_start() {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_nonadaptive(&problem, 2, 0.25).unwrap();
        let weak = assemble_weak_adjoint(&tape, &adjoint_sweep(&problem, &tape).unwrap()).unwrap();
        assert_eq!(
            pointwise_error(&weak, reference.as_ref(), 0.0).unwrap(),
            0.0
        );
        assert!(pointwise_error(&weak, reference.as_ref(), 2.5).is_err());
    }

    #[test]
    fn refinement_reduces_terminal_error() {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let err = |h: f64| {
            let tape = integrate_nonadaptive(&problem, 2, h).unwrap();
            let weak =
                assemble_weak_adjoint(&tape, &adjoint_sweep(&problem, &tape).unwrap()).unwrap();
            pointwise_error(&weak, reference.as_ref(), 2.0).unwrap()
        };
        assert!(err(0.0625) > err(0.015625));
    }

    #[test]
    fn exact_jumps_leave_only_the_quadrature_gap() {
        // with λ(t_n) sampled exactly, Λʰ(t_f) is the right Riemann sum of λ
        let (_, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let gap = |h: f64| {
            let grid = crate::bdf::nonadaptive_grid(0.0, 2.0, 1, h).unwrap();
            let weak = exact_jumps(reference.as_ref(), &grid);
            let riemann: DVector<f64> = (1..=grid.n_steps())
                .map(|n| reference.classical_adjoint(grid.nodes()[n]) * h)
                .fold(DVector::zeros(2), |a, b| a + b);
            let err = pointwise_error(&weak, reference.as_ref(), 2.0).unwrap();
            assert!((err - (reference.weak_adjoint(2.0) - riemann).norm()).abs() <= 1e-13);
            err
        };
        let ratio = gap(0.0625) / gap(0.03125);
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn bound_with_exact_jumps_is_the_boundary_terms() {
        let (_, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let h = 0.125;
        let grid = crate::bdf::nonadaptive_grid(0.0, 2.0, 2, h).unwrap();
        let weak = exact_jumps(reference.as_ref(), &grid);
        let expected =
            ((reference.classical_adjoint(0.0).abs() + reference.classical_adjoint(2.0).abs()) * h)
                .max();
        let b = dual_norm_bound(&weak, reference.as_ref(), &grid).unwrap();
        assert!((b - expected).abs() <= 1e-14);
    }

    #[test]
    fn bound_scales_with_criterion() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -0.5]);
        let ys = DVector::from_vec(vec![1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, -0.5]);
        let bound = |scale: f64| {
            let (problem, reference) =
                linear_test_problem(a.clone(), ys.clone(), 0.0, 1.0, Some(&c * scale)).unwrap();
            let tape = integrate_nonadaptive(&problem, 2, 0.0625).unwrap();
            let weak =
                assemble_weak_adjoint(&tape, &adjoint_sweep(&problem, &tape).unwrap()).unwrap();
            dual_norm_bound(&weak, reference.as_ref(), &tape.grid).unwrap()
        };
        let (b1, b3) = (bound(1.0), bound(3.0));
        assert!((b3 - 3.0 * b1).abs() <= 1e-12 * b3);
    }

    #[test]
    fn grids_must_be_equidistant() {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_adaptive(&problem, 1e-5, 1e-5).unwrap();
        let weak = assemble_weak_adjoint(&tape, &adjoint_sweep(&problem, &tape).unwrap()).unwrap();
        assert!(matches!(
            dual_norm_bound(&weak, reference.as_ref(), &tape.grid),
            Err(Error::NonEquidistantGrid(_))
        ));
        let grid = crate::bdf::nonadaptive_grid(0.0, 2.0, 6, 0.25).unwrap();
        assert_eq!(equidistant_stepsize(&grid).unwrap(), 0.25);
        let long_start = TimeGrid::new(vec![0.0, 0.5, 0.75, 1.0], vec![1, 1, 1]).unwrap();
        assert!(equidistant_stepsize(&long_start).is_err());
        let other = crate::bdf::nonadaptive_grid(0.0, 2.0, 2, 0.5).unwrap();
        assert!(matches!(
            dual_norm_bound(&weak, reference.as_ref(), &other),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
