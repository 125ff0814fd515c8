//! ODE initial value problems with a scalar criterion of interest, plus the
//! shipped test problems with closed-form nominal and adjoint solutions.

mod catenary;
mod linear;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catenary::{catenary_problem, Catenary};
pub use linear::{linear_test_problem, LinearProblem};

/// Right-hand side, its Jacobian and the criterion `J(y(t_f))` with its gradient.
pub trait OdeSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64>;
    fn criterion(&self, y: &DVector<f64>) -> f64;
    /// Gradient of the criterion as a column vector (the transpose of `J'(y)`).
    fn criterion_gradient(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// Closed-form solutions used as oracles.
pub trait AnalyticReference: Send + Sync {
    fn nominal(&self, t: f64) -> DVector<f64>;
    /// Solution of `λ' = -f_yᵀ λ`, `λ(t_f) = J'(y(t_f))ᵀ`.
    fn classical_adjoint(&self, t: f64) -> DVector<f64>;
    /// `Λ(t) = ∫_{t_s}^t λ(τ) dτ`, normalized to zero at `t_s`.
    fn weak_adjoint(&self, t: f64) -> DVector<f64>;
}

/// Serializable description of a shipped problem, used to rebuild it from files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ProblemSpec {
    Catenary {
        p: f64,
        #[serde(rename = "A")]
        a: f64,
        tf: f64,
    },
    Linear {
        matrix: Vec<Vec<f64>>,
        y0: Vec<f64>,
        c: Vec<f64>,
        ts: f64,
        tf: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<(OdeProblem, Arc<dyn AnalyticReference>)> {
        match self {
            ProblemSpec::Catenary { p, a, tf } => catenary_problem(*p, *a, *tf),
            ProblemSpec::Linear {
                matrix,
                y0,
                c,
                ts,
                tf,
            } => {
                let d = y0.len();
                if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::DimensionMismatch(format!(
                        "linear problem matrix must be {d}x{d}"
                    )));
                }
                if c.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "criterion weights have length {}, expected {d}",
                        c.len()
                    )));
                }
                let a = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
                linear_test_problem(
                    a,
                    DVector::from_column_slice(y0),
                    *ts,
                    *tf,
                    Some(DVector::from_column_slice(c)),
                )
            }
        }
    }
}

/// An initial value problem `y' = f(t, y)`, `y(t_s) = y_s` on `[t_s, t_f]`.
#[derive(Clone)]
pub struct OdeProblem {
    system: Arc<dyn OdeSystem>,
    t_start: f64,
    t_final: f64,
    y_start: DVector<f64>,
    spec: Option<ProblemSpec>,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("dim", &self.dim())
            .field("t_start", &self.t_start)
            .field("t_final", &self.t_final)
            .field("y_start", &self.y_start.as_slice())
            .field("spec", &self.spec)
            .finish()
    }
}

impl OdeProblem {
    pub fn new(
        system: Arc<dyn OdeSystem>,
        t_start: f64,
        t_final: f64,
        y_start: DVector<f64>,
    ) -> Result<Self> {
        if !(t_start.is_finite() && t_final.is_finite() && t_start < t_final) {
            return Err(Error::InvalidArgument(format!(
                "need finite t_s < t_f, got [{t_start}, {t_final}]"
            )));
        }
        if system.dim() == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if y_start.len() != system.dim() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, system dimension is {}",
                y_start.len(),
                system.dim()
            )));
        }
        Ok(Self {
            system,
            t_start,
            t_final,
            y_start,
            spec: None,
        })
    }

    pub fn with_spec(mut self, spec: ProblemSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    /// Same system and interval with a different initial state.
    pub fn with_initial_state(&self, y_start: DVector<f64>) -> Result<Self> {
        let mut p = Self::new(self.system.clone(), self.t_start, self.t_final, y_start)?;
        p.spec = None;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }
    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn y_start(&self) -> &DVector<f64> {
        &self.y_start
    }
    pub fn spec(&self) -> Option<&ProblemSpec> {
        self.spec.as_ref()
    }
    pub fn system(&self) -> &dyn OdeSystem {
        self.system.as_ref()
    }

    pub fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        self.system.rhs(t, y)
    }
    pub fn jacobian(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        self.system.jacobian(t, y)
    }
    pub fn criterion(&self, y: &DVector<f64>) -> f64 {
        self.system.criterion(y)
    }
    pub fn criterion_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        self.system.criterion_gradient(y)
    }

    /// Largest relative deviation between the analytic Jacobian and a
    /// central-difference approximation at `(t, y)`.
    pub fn jacobian_consistency(&self, t: f64, y: &DVector<f64>) -> f64 {
        let d = self.dim();
        let analytic = self.jacobian(t, y);
        let mut fd = DMatrix::zeros(d, d);
        for j in 0..d {
            let delta = f64::EPSILON.cbrt() * (1.0 + y[j].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += delta;
            ym[j] -= delta;
            let col = (self.rhs(t, &yp) - self.rhs(t, &ym)) / (2.0 * delta);
            fd.set_column(j, &col);
        }
        (analytic - &fd).amax() / (1.0 + fd.amax())
    }

    /// Same as [`jacobian_consistency`](Self::jacobian_consistency) for the criterion gradient.
    pub fn gradient_consistency(&self, y: &DVector<f64>) -> f64 {
        let analytic = self.criterion_gradient(y);
        let fd = DVector::from_fn(self.dim(), |j, _| {
            let delta = f64::EPSILON.cbrt() * (1.0 + y[j].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += delta;
            ym[j] -= delta;
            (self.criterion(&yp) - self.criterion(&ym)) / (2.0 * delta)
        });
        (analytic - &fd).amax() / (1.0 + fd.amax())
    }
}

/// Worst-case deviations found by [`reference_consistency`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConsistency {
    /// max |ẏ − f(t, y)| with ẏ from central differences of the nominal solution
    pub nominal_residual: f64,
    /// max |Λ'(t) − λ(t)| with Λ' from central differences
    pub weak_derivative_residual: f64,
    /// max |λ(t_f) − J'(y(t_f))ᵀ|
    pub terminal_residual: f64,
    /// |Λ(t_s)|
    pub normalization: f64,
}

impl ReferenceConsistency {
    pub fn max(&self) -> f64 {
        self.nominal_residual
            .max(self.weak_derivative_residual)
            .max(self.terminal_residual)
            .max(self.normalization)
    }
}

/// Cross-checks an analytic reference against its problem at `probes`
/// uniformly spaced interior points.
pub fn reference_consistency(
    problem: &OdeProblem,
    reference: &dyn AnalyticReference,
    probes: usize,
) -> ReferenceConsistency {
    let (ts, tf) = (problem.t_start(), problem.t_final());
    let width = tf - ts;
    let delta = 1e-5 * width.max(1.0);
    let mut nominal_residual: f64 = 0.0;
    let mut weak_derivative_residual: f64 = 0.0;
    for i in 0..probes {
        let t = ts + (i as f64 + 0.5) * width / probes as f64;
        let (tm, tp) = ((t - delta).max(ts), (t + delta).min(tf));
        let ydot = (reference.nominal(tp) - reference.nominal(tm)) / (tp - tm);
        let f = problem.rhs(t, &reference.nominal(t));
        nominal_residual = nominal_residual.max((ydot - f).amax());
        let lam_fd = (reference.weak_adjoint(tp) - reference.weak_adjoint(tm)) / (tp - tm);
        weak_derivative_residual =
            weak_derivative_residual.max((lam_fd - reference.classical_adjoint(t)).amax());
    }
    let terminal = problem.criterion_gradient(&reference.nominal(tf));
    ReferenceConsistency {
        nominal_residual,
        weak_derivative_residual,
        terminal_residual: (reference.classical_adjoint(tf) - terminal).amax(),
        normalization: reference.weak_adjoint(ts).amax(),
    }
}
