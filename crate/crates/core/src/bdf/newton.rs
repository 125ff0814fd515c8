use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::coefficients::BdfCoefficients;
use crate::error::{Error, Result};
use crate::model::OdeProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub max_iterations: usize,
    /// Observed contraction above which the iteration matrix is rebuilt.
    pub rate_threshold: f64,
    /// Accept an iterate once the update is at roundoff level even if the
    /// residual has not reached the tolerance.
    pub accept_stagnation: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_iterations: 7,
            rate_threshold: 0.25,
            accept_stagnation: false,
        }
    }
}

impl NewtonSettings {
    /// Full Newton until the update reaches roundoff; used to replay grids.
    pub fn tight() -> Self {
        Self {
            max_iterations: 25,
            rate_threshold: 0.0,
            accept_stagnation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub y: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

struct IterationMatrix {
    alpha0: f64,
    h: f64,
    lu: LU<f64, Dyn, Dyn>,
}

/// Simplified Newton iteration for the implicit BDF equation with a cached
/// iteration matrix `α_0 I - h f_y`.
pub struct NewtonSolver {
    settings: NewtonSettings,
    matrix: Option<IterationMatrix>,
}

impl NewtonSolver {
    pub fn new(settings: NewtonSettings) -> Self {
        Self {
            settings,
            matrix: None,
        }
    }

    fn factor(&mut self, problem: &OdeProblem, t: f64, y: &DVector<f64>, alpha0: f64, h: f64) {
        let d = problem.dim();
        let m = DMatrix::identity(d, d) * alpha0 - problem.jacobian(t, y) * h;
        self.matrix = Some(IterationMatrix {
            alpha0,
            h,
            lu: m.lu(),
        });
    }

    /// Solves `α_0 y + history - h f(t, y) = 0` starting from `predictor`.
    ///
    /// `history` is `Σ_{i≥1} α_i y_{n+1-i}`; `step` only labels errors.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        &mut self,
        problem: &OdeProblem,
        step: usize,
        history: &DVector<f64>,
        alpha0: f64,
        t: f64,
        h: f64,
        predictor: DVector<f64>,
        tolerance: f64,
    ) -> Result<NewtonOutcome> {
        let stale = match &self.matrix {
            Some(m) => m.alpha0 != alpha0 || m.h != h,
            None => true,
        };
        if stale {
            self.factor(problem, t, &predictor, alpha0, h);
        }
        match self.iterate(problem, step, history, alpha0, t, h, predictor, tolerance) {
            Ok(out) => Ok(out),
            Err(Stalled { y, iterations, .. }) => {
                // the matrix may be too old or factored too far from the
                // solution; refresh it at the last iterate and carry on from there
                self.factor(problem, t, &y, alpha0, h);
                self.iterate(problem, step, history, alpha0, t, h, y, tolerance)
                    .map(|mut out| {
                        out.iterations += iterations;
                        out
                    })
                    .map_err(|s| s.error)
            }
        }
    }

    fn residual(
        problem: &OdeProblem,
        history: &DVector<f64>,
        alpha0: f64,
        t: f64,
        h: f64,
        y: &DVector<f64>,
    ) -> DVector<f64> {
        let mut r = problem.rhs(t, y) * (-h);
        r.axpy(alpha0, y, 1.0);
        r += history;
        r
    }

    #[allow(clippy::too_many_arguments)]
    fn iterate(
        &mut self,
        problem: &OdeProblem,
        step: usize,
        history: &DVector<f64>,
        alpha0: f64,
        t: f64,
        h: f64,
        mut y: DVector<f64>,
        tolerance: f64,
    ) -> std::result::Result<NewtonOutcome, Stalled> {
        let fail = |reason: String| Error::NewtonFailure { step, reason };
        let mut r = Self::residual(problem, history, alpha0, t, h, &y);
        // at least one correction is always applied, even to a predictor
        // that already meets the tolerance
        let mut res = r.amax();
        let mut previous_update: Option<f64> = None;
        for it in 1..=self.settings.max_iterations {
            let lu = &self.matrix.as_ref().expect("factored").lu;
            let Some(delta) = lu.solve(&(-&r)) else {
                return Err(Stalled {
                    error: Error::SingularMatrix { step },
                    y,
                    iterations: it - 1,
                });
            };
            let candidate = &y + &delta;
            let r_new = Self::residual(problem, history, alpha0, t, h, &candidate);
            if !r_new.iter().all(|v| v.is_finite()) {
                return Err(Stalled {
                    error: fail("non-finite residual".into()),
                    y,
                    iterations: it - 1,
                });
            }
            y = candidate;
            r = r_new;
            res = r.amax();
            let update = delta.amax();
            let stagnated = update <= 16.0 * f64::EPSILON * (1.0 + y.amax());
            if res <= tolerance || (self.settings.accept_stagnation && stagnated) {
                return Ok(NewtonOutcome {
                    y,
                    iterations: it,
                    residual: res,
                });
            }
            let rate = previous_update.map(|p| update / p);
            previous_update = Some(update);
            if rate.is_some_and(|q| q > self.settings.rate_threshold) {
                self.factor(problem, t, &y, alpha0, h);
                previous_update = None;
            }
        }
        Err(Stalled {
            error: fail(format!(
                "no convergence after {} iterations (residual {res:e}, tolerance {tolerance:e})",
                self.settings.max_iterations
            )),
            y,
            iterations: self.settings.max_iterations,
        })
    }
}

/// A failed Newton attempt and where it stopped.
struct Stalled {
    error: Error,
    y: DVector<f64>,
    iterations: usize,
}

/// One implicit BDF step from `history` (`y_n, y_{n-1}, ...`, most recent first).
pub fn newton_bdf_step(
    problem: &OdeProblem,
    history: &[&DVector<f64>],
    coefficients: &BdfCoefficients,
    t_next: f64,
    h: f64,
    predictor: DVector<f64>,
    tolerance: f64,
) -> Result<NewtonOutcome> {
    let k = coefficients.order;
    if history.len() < k {
        return Err(Error::InvalidArgument(format!(
            "order {k} needs {k} history states, got {}",
            history.len()
        )));
    }
    let mut sum = DVector::zeros(problem.dim());
    for i in 1..=k {
        sum.axpy(coefficients.alphas[i], history[i - 1], 1.0);
    }
    NewtonSolver::new(NewtonSettings::default()).solve(
        problem,
        0,
        &sum,
        coefficients.leading(),
        t_next,
        h,
        predictor,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdf::coefficients::compute_coefficients;
    use crate::model::{catenary_problem, linear_test_problem};

    fn scalar(a: f64) -> OdeProblem {
        let (p, _) = linear_test_problem(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, 1.0),
            0.0,
            1.0,
            None,
        )
        .unwrap();
        p
    }

    #[test]
    fn implicit_euler_on_linear_scalar() {
        let (a, h) = (-2.0, 0.1);
        let problem = scalar(a);
        let y0 = DVector::from_element(1, 1.0);
        let c = compute_coefficients(&[0.0, h], 1).unwrap();
        let out = newton_bdf_step(&problem, &[&y0], &c, h, h, y0.clone(), 1e-14).unwrap();
        assert!((out.y[0] - 1.0 / (1.0 - h * a)).abs() <= 1e-14);
        // linear problem: one exact Newton step
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_dynamics_keep_constant_history() {
        let (problem, _) = linear_test_problem(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![0.7, -1.3]),
            0.0,
            1.0,
            None,
        )
        .unwrap();
        let c0 = problem.y_start().clone();
        let coeffs = compute_coefficients(&[0.0, 0.1, 0.25, 0.3], 3).unwrap();
        let guess = DVector::from_vec(vec![5.0, 5.0]);
        let out =
            newton_bdf_step(&problem, &[&c0, &c0, &c0], &coeffs, 0.3, 0.05, guess, 1e-13).unwrap();
        assert!((out.y - c0).amax() <= 1e-13);
    }

    #[test]
    fn catenary_step_matches_bisection() {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let h = 0.5f64.powi(6);
        let (t0, t1, t2) = (1.0 - h, 1.0, 1.0 + h);
        let (y0, y1) = (reference.nominal(t0), reference.nominal(t1));
        let c = compute_coefficients(&[t0, t1, t2], 2).unwrap();
        let out = newton_bdf_step(&problem, &[&y1, &y0], &c, t2, h, y1.clone(), 1e-14).unwrap();

        // the second component decouples: α_0 v + hist = h p sqrt(1 + v²)
        let hist = c.alphas[1] * y1[1] + c.alphas[2] * y0[1];
        let g = |v: f64| c.alphas[0] * v + hist - h * 3.0 * v.hypot(1.0);
        let (mut lo, mut hi) = (y1[1] - 1.0, y1[1] + 1.0);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        let u = (h * v - c.alphas[1] * y1[0] - c.alphas[2] * y0[0]) / c.alphas[0];
        assert!((out.y[1] - v).abs() <= 1e-10, "{} vs {v}", out.y[1]);
        assert!((out.y[0] - u).abs() <= 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        // α_0 - h a = 0 for implicit Euler with h a = 1
        let problem = scalar(1.0);
        let y0 = DVector::from_element(1, 1.0);
        let c = compute_coefficients(&[0.0, 1.0], 1).unwrap();
        let err = newton_bdf_step(&problem, &[&y0], &c, 1.0, 1.0, y0.clone(), 1e-12).unwrap_err();
        assert!(matches!(
            err,
            Error::SingularMatrix { .. } | Error::NewtonFailure { .. }
        ));
    }

    #[test]
    fn short_history_is_rejected() {
        let problem = scalar(1.0);
        let y0 = DVector::from_element(1, 1.0);
        let c = compute_coefficients(&[0.0, 0.1, 0.2], 2).unwrap();
        assert!(matches!(
            newton_bdf_step(&problem, &[&y0], &c, 0.2, 0.1, y0.clone(), 1e-12),
            Err(Error::InvalidArgument(_))
        ));
    }
}
