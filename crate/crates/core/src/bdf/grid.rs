use serde::{Deserialize, Serialize};

use super::coefficients::{check_increasing, MAX_ORDER};
use crate::error::{Error, Result};

/// Nodes `t_0 < ... < t_N` together with the order `k_n` of each step `t_n -> t_{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    orders: Vec<usize>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>, orders: Vec<usize>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument(
                "a grid needs at least one step".into(),
            ));
        }
        if orders.len() + 1 != nodes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodes need {} orders, got {}",
                nodes.len(),
                nodes.len() - 1,
                orders.len()
            )));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("grid nodes must be finite".into()));
        }
        check_increasing(&nodes)?;
        for (n, &k) in orders.iter().enumerate() {
            if k == 0 || k > MAX_ORDER {
                return Err(Error::InvalidOrder(k));
            }
            if k > n + 1 {
                return Err(Error::InvalidArgument(format!(
                    "order {k} at step {n} exceeds the available history"
                )));
            }
        }
        Ok(Self { nodes, orders })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn orders(&self) -> &[usize] {
        &self.orders
    }
    /// Number of steps N.
    pub fn n_steps(&self) -> usize {
        self.orders.len()
    }
    pub fn stepsize(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }
    pub fn stepsizes(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }
    pub fn order(&self, n: usize) -> usize {
        self.orders[n]
    }
    pub fn t_start(&self) -> f64 {
        self.nodes[0]
    }
    pub fn t_final(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
    /// The nodes `t_{n+1-k_n}, ..., t_{n+1}` entering step `n`.
    pub fn stencil(&self, n: usize) -> &[f64] {
        &self.nodes[n + 1 - self.orders[n]..=n + 1]
    }
    /// Index of a node equal to `t`, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&x| x < t);
        (i < self.nodes.len() && self.nodes[i] == t).then_some(i)
    }
    pub fn order_range(&self) -> (usize, usize) {
        let lo = *self.orders.iter().min().unwrap();
        let hi = *self.orders.iter().max().unwrap();
        (lo, hi)
    }
}
