use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{AnalyticReference, OdeProblem, OdeSystem, ProblemSpec};
use crate::error::{Error, Result};

const QUADRATURE_TOLERANCE: f64 = 1e-12;

/// `y' = a·y` with the linear criterion `J(y) = cᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub y_start: DVector<f64>,
    pub t_start: f64,
    pub t_final: f64,
}

impl OdeSystem for LinearProblem {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        &self.a * y
    }
    fn jacobian(&self, _t: f64, _y: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn criterion(&self, y: &DVector<f64>) -> f64 {
        self.c.dot(y)
    }
    fn criterion_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        self.c.clone()
    }
}

impl AnalyticReference for LinearProblem {
    fn nominal(&self, t: f64) -> DVector<f64> {
        (&self.a * (t - self.t_start)).exp() * &self.y_start
    }

    fn classical_adjoint(&self, t: f64) -> DVector<f64> {
        (self.a.transpose() * (self.t_final - t)).exp() * &self.c
    }

    fn weak_adjoint(&self, t: f64) -> DVector<f64> {
        if t == self.t_start {
            return DVector::zeros(self.dim());
        }
        DVector::from_fn(self.dim(), |i, _| {
            quadrature::integrate(
                |s| self.classical_adjoint(s)[i],
                self.t_start,
                t,
                QUADRATURE_TOLERANCE,
            )
            .integral
        })
    }
}

/// Linear test problem; `c` defaults to the first unit vector.
pub fn linear_test_problem(
    a: DMatrix<f64>,
    y_start: DVector<f64>,
    t_start: f64,
    t_final: f64,
    c: Option<DVector<f64>>,
) -> Result<(OdeProblem, Arc<dyn AnalyticReference>)> {
    let d = y_start.len();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, state has length {d}",
            a.nrows(),
            a.ncols()
        )));
    }
    let c = c.unwrap_or_else(|| {
        let mut e = DVector::zeros(d);
        if d > 0 {
            e[0] = 1.0;
        }
        e
    });
    if c.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "criterion weights have length {}, state has length {d}",
            c.len()
        )));
    }
    let spec = ProblemSpec::Linear {
        matrix: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        y0: y_start.iter().copied().collect(),
        c: c.iter().copied().collect(),
        ts: t_start,
        tf: t_final,
    };
    let lin = Arc::new(LinearProblem {
        a,
        c,
        y_start: y_start.clone(),
        t_start,
        t_final,
    });
    let problem = OdeProblem::new(lin.clone(), t_start, t_final, y_start)?.with_spec(spec);
    Ok((problem, lin))
}
