use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::coefficients::{compute_coefficients, interpolate, BdfCoefficients};
use super::grid::TimeGrid;
use crate::error::{Error, Result};
use crate::model::{OdeProblem, ProblemSpec};

pub const TAPE_FORMAT: &str = "bdf-tape";
pub const TAPE_VERSION: u32 = 1;

/// Newton statistics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    /// max-norm of `Σ α_i y_{n+1-i} - h_n f(t_{n+1}, y_{n+1})` at the accepted state
    pub residual: f64,
    pub tolerance: f64,
}

/// How the grid of a tape was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum IntegrationMode {
    Nonadaptive { order: usize, h: f64 },
    Adaptive { rtol: f64, atol: f64 },
    Prescribed,
}

/// Frozen record of a forward integration.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationTape {
    pub problem: Option<ProblemSpec>,
    pub mode: IntegrationMode,
    pub grid: TimeGrid,
    /// `y_0, ..., y_N`
    pub states: Vec<DVector<f64>>,
    /// coefficients of steps `0..N`
    pub coefficients: Vec<BdfCoefficients>,
    pub newton: Vec<NewtonStats>,
}

impl IntegrationTape {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn state(&self, n: usize) -> &DVector<f64> {
        &self.states[n]
    }

    /// Largest Newton tolerance used on any step.
    pub fn max_newton_tolerance(&self) -> f64 {
        self.newton.iter().map(|s| s.tolerance).fold(0.0, f64::max)
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.newton.iter().map(|s| s.iterations).sum()
    }

    /// Residual vector of step `n`: `Σ α_i y_{n+1-i} - h_n f(t_{n+1}, y_{n+1})`.
    pub fn step_residual(&self, problem: &OdeProblem, n: usize) -> DVector<f64> {
        let c = &self.coefficients[n];
        let t_next = self.grid.nodes()[n + 1];
        let mut r = -problem.rhs(t_next, &self.states[n + 1]) * self.grid.stepsize(n);
        for (i, &a) in c.alphas.iter().enumerate() {
            r.axpy(a, &self.states[n + 1 - i], 1.0);
        }
        r
    }

    /// Checks the structural invariants and the per-step residual bound.
    pub fn validate(&self, problem: &OdeProblem) -> Result<()> {
        self.check_structure()?;
        if self.dim() != problem.dim() {
            return Err(Error::DimensionMismatch(format!(
                "tape has dimension {}, problem has {}",
                self.dim(),
                problem.dim()
            )));
        }
        if self.states[0] != *problem.y_start() {
            return Err(Error::MalformedTape(
                "y_0 differs from the initial state".into(),
            ));
        }
        if self.grid.t_start() != problem.t_start() || self.grid.t_final() != problem.t_final() {
            return Err(Error::MalformedTape(format!(
                "tape covers [{}, {}], problem is posed on [{}, {}]",
                self.grid.t_start(),
                self.grid.t_final(),
                problem.t_start(),
                problem.t_final()
            )));
        }
        for n in 0..self.n_steps() {
            let r = self.step_residual(problem, n).amax();
            if !(r <= self.newton[n].tolerance) {
                return Err(Error::MalformedTape(format!(
                    "step {n} residual {r:e} exceeds its Newton tolerance {:e}",
                    self.newton[n].tolerance
                )));
            }
        }
        Ok(())
    }

    /// Length and consistency checks that do not need the problem.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.n_steps();
        if self.states.len() != n + 1 || self.coefficients.len() != n || self.newton.len() != n {
            return Err(Error::MalformedTape(format!(
                "{n} steps but {} states, {} coefficient sets, {} Newton records",
                self.states.len(),
                self.coefficients.len(),
                self.newton.len()
            )));
        }
        let d = self.states[0].len();
        if d == 0 || self.states.iter().any(|y| y.len() != d) {
            return Err(Error::MalformedTape(
                "states have inconsistent dimension".into(),
            ));
        }
        for (i, c) in self.coefficients.iter().enumerate() {
            if c.order != self.grid.order(i) || c.alphas.len() != c.order + 1 {
                return Err(Error::MalformedTape(format!(
                    "coefficients of step {i} do not match its order"
                )));
            }
        }
        Ok(())
    }

    /// Largest deviation between the stored coefficients and a recomputation
    /// from the nodes, relative to the largest coefficient of each step.
    pub fn coefficient_drift(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (n, c) in self.coefficients.iter().enumerate() {
            let fresh = compute_coefficients(self.grid.stencil(n), self.grid.order(n))?;
            let scale = fresh.alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            for (a, b) in c.alphas.iter().zip(&fresh.alphas) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Worst defects of the stored coefficients over all steps:
    /// `|Σ α_i| / max|α_i|` and `|Σ α_i (t_{n+1-i} - t_{n+1}) - h_n| / h_n`.
    pub fn coefficient_defects(&self) -> (f64, f64) {
        let nodes = self.grid.nodes();
        let mut sum: f64 = 0.0;
        let mut moment: f64 = 0.0;
        for (n, c) in self.coefficients.iter().enumerate() {
            let h = self.grid.stepsize(n);
            let amax = c.alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let s: f64 = c.alphas.iter().sum();
            let m: f64 = c
                .alphas
                .iter()
                .enumerate()
                .map(|(i, a)| a * (nodes[n + 1 - i] - nodes[n + 1]))
                .sum();
            sum = sum.max(s.abs() / amax);
            moment = moment.max((m - h).abs() / h);
        }
        (sum, moment)
    }

    /// Dense output: evaluates the interpolation polynomial of the step whose
    /// interval `(t_n, t_{n+1}]` contains `t`.
    pub fn dense_eval(&self, t: f64) -> Result<DVector<f64>> {
        let nodes = self.grid.nodes();
        let (ts, tf) = (self.grid.t_start(), self.grid.t_final());
        if !(t >= ts && t <= tf) {
            return Err(Error::OutOfRange {
                t,
                t_start: ts,
                t_final: tf,
            });
        }
        if t == ts {
            return Ok(self.states[0].clone());
        }
        // first node >= t is t_{n+1}
        let n = nodes.partition_point(|&x| x < t) - 1;
        let (stencil, values) = self.interval_polynomial(n);
        Ok(interpolate(stencil, &values, t))
    }

    /// Node/value pairs of the interpolation polynomial on `(t_n, t_{n+1}]`.
    pub fn interval_polynomial(&self, n: usize) -> (&[f64], Vec<&DVector<f64>>) {
        let k = self.grid.order(n);
        let stencil = self.grid.stencil(n);
        let values = self.states[n + 1 - k..=n + 1].iter().collect();
        (stencil, values)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TapeDocument {
            format: TAPE_FORMAT.into(),
            version: TAPE_VERSION,
            problem: self.problem.clone(),
            mode: self.mode,
            nodes: self.grid.nodes().to_vec(),
            stepsizes: self.grid.stepsizes(),
            orders: self.grid.orders().to_vec(),
            states: self.states.iter().map(|y| y.as_slice().to_vec()).collect(),
            coefficients: self.coefficients.iter().map(|c| c.alphas.clone()).collect(),
            newton: self.newton.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TapeDocument = serde_json::from_str(text)?;
        if doc.format != TAPE_FORMAT {
            return Err(Error::MalformedTape(format!(
                "unknown format '{}'",
                doc.format
            )));
        }
        if doc.version != TAPE_VERSION {
            return Err(Error::MalformedTape(format!(
                "unsupported tape version {}",
                doc.version
            )));
        }
        if doc.orders.is_empty() {
            return Err(Error::MalformedTape("tape contains no steps".into()));
        }
        let grid = TimeGrid::new(doc.nodes, doc.orders)?;
        if doc.stepsizes != grid.stepsizes() {
            return Err(Error::MalformedTape(
                "stepsizes are inconsistent with the nodes".into(),
            ));
        }
        let coefficients = doc
            .coefficients
            .into_iter()
            .map(|alphas| BdfCoefficients {
                order: alphas.len().saturating_sub(1),
                alphas,
            })
            .collect();
        let tape = Self {
            problem: doc.problem,
            mode: doc.mode,
            grid,
            states: doc.states.into_iter().map(DVector::from_vec).collect(),
            coefficients,
            newton: doc.newton,
        };
        tape.check_structure()?;
        Ok(tape)
    }
}

#[derive(Serialize, Deserialize)]
struct TapeDocument {
    format: String,
    version: u32,
    problem: Option<ProblemSpec>,
    #[serde(flatten)]
    mode: IntegrationMode,
    nodes: Vec<f64>,
    stepsizes: Vec<f64>,
    orders: Vec<usize>,
    states: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    newton: Vec<NewtonStats>,
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::bdf::{integrate_adaptive, integrate_nonadaptive};
    use crate::model::{catenary_problem, linear_test_problem};

    fn catenary_tape(h: f64) -> (OdeProblem, IntegrationTape) {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_nonadaptive(&problem, 2, h).unwrap();
        (problem, tape)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        for tape in [
            integrate_nonadaptive(&problem, 2, 0.0625).unwrap(),
            integrate_adaptive(&problem, 1e-6, 1e-8).unwrap(),
        ] {
            let text = tape.to_json().unwrap();
            let back = IntegrationTape::from_json(&text).unwrap();
            assert_eq!(back, tape);
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn json_rejects_foreign_documents() {
        let (_, tape) = catenary_tape(0.25);
        let text = tape.to_json().unwrap();
        let wrong_format = text.replacen("bdf-tape", "other", 1);
        assert!(matches!(
            IntegrationTape::from_json(&wrong_format),
            Err(Error::MalformedTape(_))
        ));
        let wrong_version = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            IntegrationTape::from_json(&wrong_version),
            Err(Error::MalformedTape(_))
        ));
        assert!(matches!(
            IntegrationTape::from_json("{"),
            Err(Error::Serialization(_))
        ));
    }

    #[test]
    fn validation_catches_tampering() {
        let (problem, mut tape) = catenary_tape(0.0625);
        tape.validate(&problem).unwrap();
        assert!(tape.coefficient_drift().unwrap() <= 1e-15);
        tape.states[5][1] += 1e-6;
        assert!(matches!(
            tape.validate(&problem),
            Err(Error::MalformedTape(_))
        ));

        let (_, mut tape) = catenary_tape(0.0625);
        tape.coefficients[3].alphas[1] += 1e-3;
        assert!(tape.coefficient_drift().unwrap() > 1e-4);

        let (_, mut tape) = catenary_tape(0.0625);
        tape.states.pop();
        assert!(tape.check_structure().is_err());
    }

    #[test]
    fn coefficient_defects_of_fresh_and_tampered_tapes() {
        let (problem, _) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_adaptive(&problem, 1e-6, 1e-6).unwrap();
        let (sum, moment) = tape.coefficient_defects();
        assert!(sum <= 1e-12 && moment <= 1e-12, "{sum} {moment}");

        let (_, mut tape) = catenary_tape(0.0625);
        tape.coefficients[7].alphas[1] *= 1.0 + 1e-6;
        let (sum, moment) = tape.coefficient_defects();
        assert!(sum > 1e-7 && moment > 1e-7);
    }

    #[test]
    fn validation_checks_problem_match() {
        let (_, tape) = catenary_tape(0.25);
        let (other, _) = catenary_problem(3.0, -2.0, 2.0).unwrap();
        assert!(tape.validate(&other).is_err());
        let (shorter, _) = catenary_problem(3.0, -3.0, 1.0).unwrap();
        assert!(tape.validate(&shorter).is_err());
    }

    #[test]
    fn dense_output_interpolates_and_is_continuous() {
        let (_, tape) = catenary_tape(0.0625);
        let nodes = tape.grid.nodes();
        for (n, t) in nodes.iter().enumerate() {
            let y = tape.dense_eval(*t).unwrap();
            assert!((y - &tape.states[n]).amax() <= 1e-12 * (1.0 + tape.states[n].amax()));
        }
        // the polynomial of interval n also passes through y_n
        for n in 1..tape.n_steps() {
            let (stencil, values) = tape.interval_polynomial(n);
            let left = interpolate(stencil, &values, nodes[n]);
            assert!((left - &tape.states[n]).amax() <= 1e-12 * (1.0 + tape.states[n].amax()));
        }
        assert!(tape.dense_eval(-0.1).is_err());
        assert!(tape.dense_eval(2.1).is_err());
    }

    #[test]
    fn dense_output_of_constant_solution() {
        let (problem, _) = linear_test_problem(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![3.0, -1.0]),
            0.0,
            1.0,
            None,
        )
        .unwrap();
        let tape = integrate_nonadaptive(&problem, 3, 0.125).unwrap();
        for i in 0..=40 {
            let y = tape.dense_eval(i as f64 / 40.0).unwrap();
            assert!((y - problem.y_start()).amax() <= 1e-12);
        }
    }

    #[test]
    fn dense_output_is_second_order_between_nodes() {
        let (_, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let err = |e: i32| {
            let h = 0.5f64.powi(e);
            let (_, tape) = catenary_tape(h);
            let t = 1.0 + 0.5 * h;
            (tape.dense_eval(t).unwrap() - reference.nominal(t)).norm()
        };
        let (e6, e7) = (err(6), err(7));
        assert!(e6 <= 10.0 * 0.5f64.powi(12), "{e6:e}");
        let ratio = e6 / e7;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }
}
