use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::sweep::DiscreteAdjoints;
use super::weak::WeakAdjoint;
use crate::bdf::IntegrationTape;
use crate::error::{Error, Result};
use crate::model::{AnalyticReference, ProblemSpec};

pub const ADJOINT_FORMAT: &str = "bdf-adjoint";
pub const ADJOINT_VERSION: u32 = 1;

/// JSON form of an adjoint run: discrete adjoints, gradient and the jump table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointDocument {
    pub format: String,
    pub version: u32,
    pub problem: Option<ProblemSpec>,
    pub t_start: f64,
    /// `t_1..t_N`
    pub nodes: Vec<f64>,
    /// `λ_1..λ_N`
    pub lambdas: Vec<Vec<f64>>,
    pub gradient: Vec<f64>,
    /// jumps `h_{n-1} λ_n` of the weak adjoint
    pub jumps: Vec<Vec<f64>>,
    /// `Λʰ(t_n)` for `n = 1..N`
    pub weak_adjoint: Vec<Vec<f64>>,
}

impl AdjointDocument {
    pub fn new(tape: &IntegrationTape, adjoints: &DiscreteAdjoints, weak: &WeakAdjoint) -> Self {
        let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect();
        Self {
            format: ADJOINT_FORMAT.into(),
            version: ADJOINT_VERSION,
            problem: tape.problem.clone(),
            t_start: tape.grid.t_start(),
            nodes: tape.grid.nodes()[1..].to_vec(),
            lambdas: rows(&adjoints.lambdas),
            gradient: adjoints.gradient.as_slice().to_vec(),
            jumps: rows(weak.jumps()),
            weak_adjoint: rows(&weak.node_values()[1..]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != ADJOINT_FORMAT || doc.version != ADJOINT_VERSION {
            return Err(Error::Serialization(format!(
                "expected {ADJOINT_FORMAT} version {ADJOINT_VERSION}, got {} version {}",
                doc.format, doc.version
            )));
        }
        if doc.lambdas.len() != doc.nodes.len() || doc.lambdas.is_empty() {
            return Err(Error::DimensionMismatch(
                "adjoint file has inconsistent lengths".into(),
            ));
        }
        Ok(doc)
    }

    pub fn adjoints(&self) -> DiscreteAdjoints {
        DiscreteAdjoints {
            lambdas: self
                .lambdas
                .iter()
                .map(|l| DVector::from_column_slice(l))
                .collect(),
            gradient: DVector::from_column_slice(&self.gradient),
        }
    }

    /// Plotting table with rows `(t_n, λ_n, Λʰ(t_n))`, plus the analytic
    /// `λ(t_n)` and `Λ(t_n)` columns when a reference is supplied.
    pub fn to_csv(&self, reference: Option<&dyn AnalyticReference>) -> String {
        let d = self.gradient.len();
        let mut out = String::from("t");
        for prefix in ["lambda", "Lambda_h"] {
            for i in 1..=d {
                let _ = write!(out, ",{prefix}_{i}");
            }
        }
        if reference.is_some() {
            for prefix in ["lambda_exact", "Lambda_exact"] {
                for i in 1..=d {
                    let _ = write!(out, ",{prefix}_{i}");
                }
            }
        }
        out.push('\n');
        for (n, &t) in self.nodes.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in self.lambdas[n].iter().chain(&self.weak_adjoint[n]) {
                let _ = write!(out, ",{v}");
            }
            if let Some(r) = reference {
                for v in r
                    .classical_adjoint(t)
                    .iter()
                    .chain(r.weak_adjoint(t).iter())
                {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{adjoint_sweep, assemble_weak_adjoint};
    use crate::bdf::integrate_nonadaptive;
    use crate::model::catenary_problem;

    fn document() -> (AdjointDocument, std::sync::Arc<dyn AnalyticReference>) {
        let (problem, reference) = catenary_problem(3.0, -3.0, 2.0).unwrap();
        let tape = integrate_nonadaptive(&problem, 2, 0.25).unwrap();
        let adj = adjoint_sweep(&problem, &tape).unwrap();
        let weak = assemble_weak_adjoint(&tape, &adj).unwrap();
        (AdjointDocument::new(&tape, &adj, &weak), reference)
    }

    #[test]
    fn json_round_trip() {
        let (doc, _) = document();
        let text = doc.to_json().unwrap();
        let back = AdjointDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.adjoints().lambdas.len(), doc.nodes.len());
        let wrong = text.replacen("bdf-adjoint", "bdf-tape", 1);
        assert!(AdjointDocument::from_json(&wrong).is_err());
    }

    #[test]
    fn csv_layout() {
        let (doc, reference) = document();
        let plain = doc.to_csv(None);
        let mut lines = plain.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,lambda_1,lambda_2,Lambda_h_1,Lambda_h_2"
        );
        assert_eq!(lines.count(), doc.nodes.len());
        let full = doc.to_csv(Some(reference.as_ref()));
        let header = full.lines().next().unwrap();
        assert!(header.ends_with("lambda_exact_1,lambda_exact_2,Lambda_exact_1,Lambda_exact_2"));
        assert!(full.lines().skip(1).all(|l| l.split(',').count() == 9));
    }
}
