use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 6;

/// Coefficients `α_0..α_k` of one BDF step `Σ α_i y_{n+1-i} = h_n f(t_{n+1}, y_{n+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdfCoefficients {
    pub order: usize,
    /// `alphas[i]` multiplies `y_{n+1-i}`.
    pub alphas: Vec<f64>,
}

impl BdfCoefficients {
    /// `α_i`, zero for `i > order`.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas.get(i).copied().unwrap_or(0.0)
    }

    pub fn leading(&self) -> f64 {
        self.alphas[0]
    }
}

/// Value of the `i`-th fundamental Lagrange polynomial over `nodes` at `t`.
pub fn lagrange_basis(nodes: &[f64], i: usize, t: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &xj)| (t - xj) / (nodes[i] - xj))
        .product()
}

/// Derivative of the `i`-th fundamental Lagrange polynomial at `t`,
/// summed factor by factor with the product rule.
pub fn lagrange_basis_derivative(nodes: &[f64], i: usize, t: f64) -> f64 {
    let xi = nodes[i];
    let mut sum = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == i {
            continue;
        }
        let mut term = 1.0 / (xi - xm);
        for (j, &xj) in nodes.iter().enumerate() {
            if j != i && j != m {
                term *= (t - xj) / (xi - xj);
            }
        }
        sum += term;
    }
    sum
}

/// Evaluates the interpolation polynomial through `(nodes[i], values[i])` at `t`.
pub fn interpolate(nodes: &[f64], values: &[&DVector<f64>], t: f64) -> DVector<f64> {
    let mut out = DVector::zeros(values[0].len());
    for (i, v) in values.iter().enumerate() {
        // exact reproduction at the nodes
        if t == nodes[i] {
            return (*v).clone();
        }
        out.axpy(lagrange_basis(nodes, i, t), v, 1.0);
    }
    out
}

pub(crate) fn check_increasing(nodes: &[f64]) -> Result<()> {
    for (i, w) in nodes.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NodesNotIncreasing(i + 1));
        }
    }
    Ok(())
}

/// BDF coefficients for the step ending at the last entry of `nodes`.
///
/// `nodes` holds `t_{n+1-k}, ..., t_{n+1}` in increasing order and must have
/// length `order + 1`. The coefficients are `α_i = h_n · L̇_i(t_{n+1})` with
/// `h_n = t_{n+1} - t_n`.
pub fn compute_coefficients(nodes: &[f64], order: usize) -> Result<BdfCoefficients> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidOrder(order));
    }
    if nodes.len() != order + 1 {
        return Err(Error::InvalidArgument(format!(
            "order {order} needs {} nodes, got {}",
            order + 1,
            nodes.len()
        )));
    }
    check_increasing(nodes)?;
    // local numbering x_i = t_{n+1-i}
    let local: Vec<f64> = nodes.iter().rev().copied().collect();
    let t_next = local[0];
    let h = local[0] - local[1];
    let alphas = (0..=order)
        .map(|i| h * lagrange_basis_derivative(&local, i, t_next))
        .collect();
    Ok(BdfCoefficients { order, alphas })
}
