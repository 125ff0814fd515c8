use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{AnalyticReference, OdeProblem, OdeSystem, ProblemSpec};
use crate::error::{Error, Result};

/// `y'' = p·sqrt(1 + y'^2)` written as a first-order system, with `J(y) = y_1`.
///
/// The exact solution is `y(t) = [B + cosh(pt + A)/p, sinh(pt + A)]` on `[0, t_f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Catenary {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub t_final: f64,
}

impl Catenary {
    /// Recovers `A` and `B` from an initial state at `t = 0`.
    pub fn from_initial_state(p: f64, y0: [f64; 2], t_final: f64) -> Result<Self> {
        check_p(p)?;
        let a = y0[1].asinh();
        Ok(Self {
            p,
            a,
            b: y0[0] - a.cosh() / p,
            t_final,
        })
    }

    fn phase(&self, t: f64) -> f64 {
        self.p * t + self.a
    }

    /// Antiderivative of the second adjoint component, up to a constant.
    fn weak_second(&self, t: f64) -> f64 {
        let u = self.phase(t);
        let p2 = self.p * self.p;
        -ln_cosh(u) / p2 + 2.0 / p2 * self.phase(self.t_final).sinh() * u.exp().atan()
    }
}

fn ln_cosh(u: f64) -> f64 {
    let x = u.abs();
    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "catenary parameter p must be positive, got {p}"
        )));
    }
    Ok(())
}

impl OdeSystem for Catenary {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![y[1], self.p * y[1].hypot(1.0)])
    }

    fn jacobian(&self, _t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, self.p * y[1] / y[1].hypot(1.0)])
    }

    fn criterion(&self, y: &DVector<f64>) -> f64 {
        y[0]
    }

    fn criterion_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![1.0, 0.0])
    }
}

impl AnalyticReference for Catenary {
    fn nominal(&self, t: f64) -> DVector<f64> {
        let u = self.phase(t);
        DVector::from_vec(vec![self.b + u.cosh() / self.p, u.sinh()])
    }

    fn classical_adjoint(&self, t: f64) -> DVector<f64> {
        let u = self.phase(t);
        let uf = self.phase(self.t_final);
        DVector::from_vec(vec![1.0, (uf.sinh() / u.cosh() - u.tanh()) / self.p])
    }

    fn weak_adjoint(&self, t: f64) -> DVector<f64> {
        DVector::from_vec(vec![t, self.weak_second(t) - self.weak_second(0.0)])
    }
}

/// The catenary test problem on `[0, t_f]` with `B = 0`, i.e.
/// `y(0) = [cosh(A)/p, sinh(A)]`.
pub fn catenary_problem(
    p: f64,
    a: f64,
    t_final: f64,
) -> Result<(OdeProblem, Arc<dyn AnalyticReference>)> {
    check_p(p)?;
    if !a.is_finite() {
        return Err(Error::InvalidArgument(format!("A must be finite, got {a}")));
    }
    let cat = Arc::new(Catenary {
        p,
        a,
        b: 0.0,
        t_final,
    });
    let problem = OdeProblem::new(cat.clone(), 0.0, t_final, cat.nominal(0.0))?
        .with_spec(ProblemSpec::Catenary { p, a, tf: t_final });
    Ok((problem, cat))
}
