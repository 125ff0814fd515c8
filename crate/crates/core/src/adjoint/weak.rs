use nalgebra::DVector;

use super::sweep::DiscreteAdjoints;
use crate::bdf::IntegrationTape;
use crate::error::{Error, Result};

/// Right-continuous step function `Λʰ(t) = Σ_n h_{n-1} λ_n H_n(t)` with
/// `Λʰ(t_s) = 0` and jumps `h_{n-1} λ_n` at `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakAdjoint {
    t_start: f64,
    jump_times: Vec<f64>,
    jumps: Vec<DVector<f64>>,
    /// `cumulative[n]` is `Λʰ(t_n)` for `n = 0..N`.
    cumulative: Vec<DVector<f64>>,
}

impl WeakAdjoint {
    /// Builds the step function from jump locations and magnitudes.
    pub fn from_jumps(
        t_start: f64,
        jump_times: Vec<f64>,
        jumps: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if jump_times.is_empty() || jump_times.len() != jumps.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} jump times for {} jumps",
                jump_times.len(),
                jumps.len()
            )));
        }
        let mut previous = t_start;
        for (i, &t) in jump_times.iter().enumerate() {
            if !(t > previous) {
                return Err(Error::NodesNotIncreasing(i + 1));
            }
            previous = t;
        }
        let d = jumps[0].len();
        if jumps.iter().any(|j| j.len() != d) {
            return Err(Error::DimensionMismatch("jumps differ in length".into()));
        }
        let mut cumulative = Vec::with_capacity(jumps.len() + 1);
        cumulative.push(DVector::zeros(d));
        for j in &jumps {
            let next = cumulative.last().unwrap() + j;
            cumulative.push(next);
        }
        Ok(Self {
            t_start,
            jump_times,
            jumps,
            cumulative,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_final(&self) -> f64 {
        *self.jump_times.last().unwrap()
    }
    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }
    pub fn jumps(&self) -> &[DVector<f64>] {
        &self.jumps
    }
    pub fn dim(&self) -> usize {
        self.jumps[0].len()
    }
    /// `Λʰ(t_n)` for `n = 0..N`.
    pub fn node_values(&self) -> &[DVector<f64>] {
        &self.cumulative
    }

    /// `Λʰ(t)`; at a node the post-jump value is returned.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        if !(t >= self.t_start && t <= self.t_final()) {
            return Err(Error::OutOfRange {
                t,
                t_start: self.t_start,
                t_final: self.t_final(),
            });
        }
        let passed = self.jump_times.partition_point(|&x| x <= t);
        Ok(self.cumulative[passed].clone())
    }

    /// Riemann–Stieltjes pairing `∫ g dΛʰ`, componentwise:
    /// entry `i` is `Σ_n h_{n-1} λ_{n,i} g_i(t_n)`.
    pub fn rs_pair<G>(&self, g: G) -> DVector<f64>
    where
        G: Fn(f64) -> DVector<f64>,
    {
        let mut out = DVector::zeros(self.dim());
        for (t, jump) in self.jump_times.iter().zip(&self.jumps) {
            out += jump.component_mul(&g(*t));
        }
        out
    }
}

/// Assembles `Λʰ` with jumps `h_{n-1} λ_n` at the tape nodes `t_1..t_N`.
pub fn assemble_weak_adjoint(
    tape: &IntegrationTape,
    adjoints: &DiscreteAdjoints,
) -> Result<WeakAdjoint> {
    if adjoints.n_steps() != tape.n_steps() {
        return Err(Error::DimensionMismatch(format!(
            "{} adjoints for a tape with {} steps",
            adjoints.n_steps(),
            tape.n_steps()
        )));
    }
    let grid = &tape.grid;
    let jumps = (1..=tape.n_steps())
        .map(|n| adjoints.lambda(n) * grid.stepsize(n - 1))
        .collect();
    WeakAdjoint::from_jumps(grid.t_start(), grid.nodes()[1..].to_vec(), jumps)
}
