use nalgebra::{DMatrix, DVector};

use crate::bdf::IntegrationTape;
use crate::error::{Error, Result};
use crate::model::OdeProblem;

/// Discrete adjoints `λ_1..λ_N` and the gradient `l = dJ(y_N)/dy_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAdjoints {
    /// `lambdas[n - 1]` is `λ_n`.
    pub lambdas: Vec<DVector<f64>>,
    pub gradient: DVector<f64>,
}

impl DiscreteAdjoints {
    /// `λ_n` for `1 <= n <= N`.
    pub fn lambda(&self, n: usize) -> &DVector<f64> {
        &self.lambdas[n - 1]
    }

    pub fn n_steps(&self) -> usize {
        self.lambdas.len()
    }

    pub fn max_norm(&self) -> f64 {
        self.lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }
}

/// Matrix `α_0^{(n)} I - h_n f_y(t_{n+1}, y_{n+1})` of step `n`.
pub(crate) fn step_matrix(problem: &OdeProblem, tape: &IntegrationTape, n: usize) -> DMatrix<f64> {
    let d = tape.dim();
    let t = tape.grid.nodes()[n + 1];
    DMatrix::identity(d, d) * tape.coefficients[n].leading()
        - problem.jacobian(t, &tape.states[n + 1]) * tape.grid.stepsize(n)
}

/// Reverse sweep over a frozen tape.
///
/// Solves `(α_0^{(N-1)} I - h_{N-1} f_yᵀ) λ_N = J'(y_N)ᵀ`, then for
/// `n = N-2, ..., 0`
/// `(α_0^{(n)} I - h_n f_yᵀ) λ_{n+1} = -Σ_{i≥1} α_i^{(n+i)} λ_{n+1+i}`.
/// Contributions of each solved `λ_{n+1}` are scattered onto the states its
/// step touched; whatever lands on `y_0` is the gradient.
pub fn adjoint_sweep(problem: &OdeProblem, tape: &IntegrationTape) -> Result<DiscreteAdjoints> {
    tape.check_structure()?;
    if tape.dim() != problem.dim() {
        return Err(Error::DimensionMismatch(format!(
            "tape has dimension {}, problem has {}",
            tape.dim(),
            problem.dim()
        )));
    }
    let big_n = tape.n_steps();
    let d = tape.dim();
    // acc[m] collects -Σ α_i^{(n)} λ_{n+1} over steps n with n+1-i = m
    let mut acc: Vec<DVector<f64>> = vec![DVector::zeros(d); big_n + 1];
    acc[big_n] += problem.criterion_gradient(tape.final_state());
    let mut lambdas = vec![DVector::zeros(d); big_n];
    for n in (0..big_n).rev() {
        let m = step_matrix(problem, tape, n).transpose();
        let lambda = m
            .lu()
            .solve(&acc[n + 1])
            .ok_or(Error::SingularMatrix { step: n })?;
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { step: n });
        }
        let c = &tape.coefficients[n];
        for i in 1..=c.order {
            acc[n + 1 - i].axpy(-c.alphas[i], &lambda, 1.0);
        }
        lambdas[n] = lambda;
    }
    Ok(DiscreteAdjoints {
        gradient: acc.swap_remove(0),
        lambdas,
    })
}

/// `l = -Σ_{n : n+1 <= k_n} α_{n+1}^{(n)} λ_{n+1}`, the derivative of
/// `J(y_N)` with respect to the initial state.
pub fn gradient_wrt_initial(tape: &IntegrationTape, adjoints: &DiscreteAdjoints) -> DVector<f64> {
    let mut l = DVector::zeros(tape.dim());
    for (n, c) in tape.coefficients.iter().enumerate() {
        if n + 1 > c.order {
            continue;
        }
        l.axpy(-c.alphas[n + 1], adjoints.lambda(n + 1), 1.0);
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdf::{integrate_adaptive, integrate_nonadaptive, integrate_on_grid};
    use crate::model::{catenary_problem, linear_test_problem};

    fn linear(a: DMatrix<f64>, ys: Vec<f64>, tf: f64, c: Vec<f64>) -> OdeProblem {
        linear_test_problem(
            a,
            DVector::from_vec(ys),
            0.0,
            tf,
            Some(DVector::from_vec(c)),
        )
        .unwrap()
        .0
    }

    /// Central differences of `J(y_N)` with respect to `y_s` on a frozen grid.
    fn fd_gradient(problem: &OdeProblem, tape: &IntegrationTape) -> DVector<f64> {
        DVector::from_fn(problem.dim(), |j, _| {
            let delta = 1e-6 * (1.0 + problem.y_start()[j].abs());
            let run = |s: f64| {
                let mut ys = problem.y_start().clone();
                ys[j] += s * delta;
                let p = problem.with_initial_state(ys).unwrap();
                let t = integrate_on_grid(&p, &tape.grid).unwrap();
                p.criterion(t.final_state())
            };
            (run(1.0) - run(-1.0)) / (2.0 * delta)
        })
    }

    #[test]
    fn frozen_dynamics_first_order() {
        let c = vec![1.0, -2.0];
        let problem = linear(DMatrix::zeros(2, 2), vec![0.3, 0.4], 1.0, c.clone());
        let tape = integrate_nonadaptive(&problem, 1, 0.125).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let c = DVector::from_vec(c);
        assert!(adj.lambdas.iter().all(|l| (l - &c).amax() <= 1e-15));
        assert!((&adj.gradient - &c).amax() <= 1e-15);
    }

    #[test]
    fn frozen_dynamics_second_order_terminal_value() {
        let c = DVector::from_vec(vec![1.0, 0.5]);
        let problem = linear(
            DMatrix::zeros(2, 2),
            vec![0.3, 0.4],
            1.0,
            c.as_slice().to_vec(),
        );
        let tape = integrate_nonadaptive(&problem, 2, 0.125).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let expected = &c * (2.0 / 3.0);
        assert!((adj.lambda(tape.n_steps()) - expected).amax() <= 1e-15);
        // the gradient of an affine-free identity map is still exact
        assert!((&adj.gradient - &c).amax() <= 1e-13);
    }

    #[test]
    fn single_implicit_euler_step() {
        let (a, h) = (-0.7, 0.25);
        let problem = linear(DMatrix::from_element(1, 1, a), vec![2.0], h, vec![1.5]);
        let tape = integrate_nonadaptive(&problem, 1, h).unwrap();
        assert_eq!(tape.n_steps(), 1);
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let expected = 1.5 / (1.0 - h * a);
        assert!((adj.lambda(1)[0] - expected).abs() <= 1e-15);
        assert!((adj.gradient[0] - expected).abs() <= 1e-15);
    }

    #[test]
    fn first_order_gradient_is_first_adjoint() {
        let problem = linear(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -0.3]),
            vec![1.0, 1.0],
            1.0,
            vec![0.0, 1.0],
        );
        let tape = integrate_nonadaptive(&problem, 1, 0.1).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        assert!((&adj.gradient - adj.lambda(1)).amax() <= 1e-15);
    }

    #[test]
    fn gradient_matches_explicit_formula() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        for tape in [
            integrate_nonadaptive(&problem, 4, 0.125).unwrap(),
            integrate_adaptive(&problem, 1e-5, 1e-5).unwrap(),
        ] {
            let adj = adjoint_sweep(&problem, &tape).unwrap();
            let l = gradient_wrt_initial(&tape, &adj);
            assert!((l - &adj.gradient).amax() <= 1e-12 * (1.0 + adj.gradient.amax()));
        }
    }

    #[test]
    fn adjoint_equations_hold() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_adaptive(&problem, 1e-6, 1e-6).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let big_n = tape.n_steps();
        let scale = 1.0 + adj.max_norm();
        // terminal equation
        let r = step_matrix(&problem, &tape, big_n - 1).transpose() * adj.lambda(big_n)
            - problem.criterion_gradient(tape.final_state());
        assert!(r.amax() <= 1e-10 * scale);
        // interior recurrences
        for n in 0..big_n - 1 {
            let mut r = step_matrix(&problem, &tape, n).transpose() * adj.lambda(n + 1);
            for m in n + 1..big_n {
                let c = &tape.coefficients[m];
                let i = m - n;
                if i <= c.order {
                    r.axpy(c.alphas[i], adj.lambda(m + 1), 1.0);
                }
            }
            assert!(r.amax() <= 1e-10 * scale, "step {n}: {:e}", r.amax());
        }
    }

    #[test]
    fn matches_finite_differences_on_linear_problem() {
        let problem = linear(
            DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.5, 0.0, 0.3, -0.2]),
            vec![1.0, 0.0, -1.0],
            1.5,
            vec![0.5, -1.0, 2.0],
        );
        for tape in [
            integrate_nonadaptive(&problem, 3, 0.0625).unwrap(),
            integrate_adaptive(&problem, 1e-6, 1e-8).unwrap(),
        ] {
            let adj = adjoint_sweep(&problem, &tape).unwrap();
            let fd = fd_gradient(&problem, &tape);
            let rel = (&adj.gradient - &fd).amax() / fd.amax();
            assert!(rel <= 1e-6, "{rel:e}");
        }
    }

    #[test]
    fn matches_finite_differences_on_catenary() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_nonadaptive(&problem, 2, 0.5f64.powi(5)).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let fd = fd_gradient(&problem, &tape);
        assert!((&adj.gradient - &fd).amax() / fd.amax() <= 1e-6);
    }

    #[test]
    fn rejects_mismatched_problem() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_nonadaptive(&problem, 2, 0.25).unwrap();
        let other = linear(DMatrix::zeros(1, 1), vec![1.0], 2.0, vec![1.0]);
        assert!(matches!(
            adjoint_sweep(&other, &tape),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
