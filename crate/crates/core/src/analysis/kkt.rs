use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adjoint::DiscreteAdjoints;
use crate::bdf::IntegrationTape;
use crate::error::{Error, Result};
use crate::model::OdeProblem;

/// The block lower-triangular matrix `A` of the nominal scheme: row `n` holds
/// `α_i^{(n)}` in column `n - i` (column `m - 1` multiplies `y_m`). Stored by
/// band, so it can be assembled for any grid length.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSystem {
    rows: Vec<Vec<(usize, f64)>>,
    /// `α_{n+1}^{(n)}` for the steps whose stencil reaches back to `y_0`
    start: Vec<f64>,
}

impl BandedSystem {
    pub fn assemble(tape: &IntegrationTape) -> Self {
        let mut rows = Vec::with_capacity(tape.n_steps());
        let mut start = Vec::with_capacity(tape.n_steps());
        for (n, c) in tape.coefficients.iter().enumerate() {
            let row = (0..=c.order)
                .filter(|&i| i <= n)
                .map(|i| (n - i, c.alphas[i]))
                .collect();
            rows.push(row);
            start.push(if n < c.order { c.alphas[n + 1] } else { 0.0 });
        }
        Self { rows, start }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Dense `A`, for inspection of small systems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut a = DMatrix::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                a[(r, c)] = v;
            }
        }
        a
    }

    /// Coefficient of `y_s` in each row.
    pub fn start_coefficients(&self) -> &[f64] {
        &self.start
    }

    /// `(A ⊗ I) Y` for `Y = (y_1, ..., y_N)`.
    pub fn apply(&self, ys: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut acc = DVector::zeros(ys[0].len());
                for &(c, v) in row {
                    acc.axpy(v, &ys[c], 1.0);
                }
                acc
            })
            .collect()
    }

    /// `(A ⊗ I)ᵀ Λ` for `Λ = (λ_1, ..., λ_N)`.
    pub fn apply_transpose(&self, lambdas: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(lambdas[0].len()); self.size()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[c].axpy(v, &lambdas[r], 1.0);
            }
        }
        out
    }
}

/// Residuals of the discretized optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidualReport {
    pub nominal_residual: f64,
    pub adjoint_residual: f64,
    pub initial_residual: f64,
    pub nominal_threshold: f64,
    pub adjoint_threshold: f64,
}

impl KktResidualReport {
    pub fn nominal_ok(&self) -> bool {
        self.nominal_residual <= self.nominal_threshold
    }
    pub fn adjoint_ok(&self) -> bool {
        self.adjoint_residual <= self.adjoint_threshold
    }
    pub fn initial_ok(&self) -> bool {
        self.initial_residual == 0.0
    }
    pub fn passes(&self) -> bool {
        self.nominal_ok() && self.adjoint_ok() && self.initial_ok()
    }
}

/// Evaluates the assembled nominal and adjoint systems at the tape states and
/// the discrete adjoints.
///
/// Nominal: `(A⊗I) Y + a_s ⊗ y_s - (h_n f(t_{n+1}, y_{n+1}))_n`.
/// Adjoint: `e_N ⊗ J'(y_N)ᵀ - [(A⊗I) - diag(h_n f_y)]ᵀ Λ` for the states
/// `y_1..y_N`, and `l + Σ_n α_{n+1}^{(n)} λ_{n+1}` for `y_0`.
pub fn verify_kkt(
    problem: &OdeProblem,
    tape: &IntegrationTape,
    adjoints: &DiscreteAdjoints,
) -> Result<KktResidualReport> {
    tape.check_structure()?;
    let big_n = tape.n_steps();
    let d = tape.dim();
    if adjoints.n_steps() != big_n
        || adjoints.gradient.len() != d
        || adjoints.lambdas.iter().any(|l| l.len() != d)
        || problem.dim() != d
    {
        return Err(Error::DimensionMismatch(format!(
            "tape has {big_n} steps of dimension {d}, adjoints have {} entries of dimension {}",
            adjoints.n_steps(),
            adjoints.gradient.len()
        )));
    }
    let system = BandedSystem::assemble(tape);
    let nodes = tape.grid.nodes();
    let ys = &tape.states[1..];

    let mut nominal: f64 = 0.0;
    for (n, mut r) in system.apply(ys).into_iter().enumerate() {
        r.axpy(system.start[n], &tape.states[0], 1.0);
        r.axpy(
            -tape.grid.stepsize(n),
            &problem.rhs(nodes[n + 1], &ys[n]),
            1.0,
        );
        nominal = nominal.max(r.amax());
    }

    let mut adjoint: f64 = 0.0;
    for (c, at_lambda) in system
        .apply_transpose(&adjoints.lambdas)
        .into_iter()
        .enumerate()
    {
        let m = c + 1;
        let lambda = adjoints.lambda(m);
        let mut r = -at_lambda;
        r += problem.jacobian(nodes[m], &ys[c]).transpose() * lambda * tape.grid.stepsize(c);
        if m == big_n {
            r += problem.criterion_gradient(&ys[c]);
        }
        adjoint = adjoint.max(r.amax());
    }
    let mut r0 = adjoints.gradient.clone();
    for (n, &a) in system.start.iter().enumerate() {
        r0.axpy(a, adjoints.lambda(n + 1), 1.0);
    }
    adjoint = adjoint.max(r0.amax());

    Ok(KktResidualReport {
        nominal_residual: nominal,
        adjoint_residual: adjoint,
        initial_residual: (&tape.states[0] - problem.y_start()).amax(),
        nominal_threshold: 10.0 * tape.max_newton_tolerance(),
        adjoint_threshold: 1e-9 * (1.0 + adjoints.max_norm()),
    })
}
