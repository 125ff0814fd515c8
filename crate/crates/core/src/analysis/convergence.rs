use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// stepsize or tolerance
    pub param: f64,
    pub error: f64,
    /// order observed between the previous row and this one
    pub order: Option<f64>,
}

/// Errors over a refinement sweep, ordered from coarse to fine.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

/// `log(e_a / e_b) / log(h_a / h_b)`; `None` unless both errors are positive and finite.
pub fn observed_order(h_a: f64, e_a: f64, h_b: f64, e_b: f64) -> Option<f64> {
    let usable = |e: f64| e.is_finite() && e > 0.0;
    (usable(e_a) && usable(e_b) && h_a != h_b).then(|| (e_a / e_b).ln() / (h_a / h_b).ln())
}

impl ConvergenceTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut table = Self::default();
        for (param, error) in pairs {
            table.push(param, error);
        }
        table
    }

    pub fn push(&mut self, param: f64, error: f64) {
        let order = self
            .rows
            .last()
            .and_then(|prev| observed_order(prev.param, prev.error, param, error));
        self.rows.push(ConvergenceRow {
            param,
            error,
            order,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Least-squares slope of `log(error)` against `log(param)`.
///
/// Rows with zero or non-finite errors are dropped with a warning; at least
/// three usable rows are required.
pub fn fit_order(table: &ConvergenceTable) -> Result<f64> {
    if table.rows.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 rows to fit an order, got {}",
            table.rows.len()
        )));
    }
    if table.rows.windows(2).any(|w| !(w[1].param < w[0].param)) {
        return Err(Error::InvalidArgument(
            "sweep parameters must be strictly decreasing".into(),
        ));
    }
    let points: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| {
            let keep = r.error.is_finite() && r.error > 0.0 && r.param > 0.0;
            if !keep {
                log::warn!(
                    "excluding row at {} with error {} from the fit",
                    r.param,
                    r.error
                );
            }
            keep
        })
        .map(|r| (r.param.ln(), r.error.ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} rows with positive finite errors",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_law(p: f64) -> ConvergenceTable {
        ConvergenceTable::from_pairs((4..=9).map(|e| {
            let h = 0.5f64.powi(e);
            (h, 3.7 * h.powf(p))
        }))
    }

    #[test]
    fn exact_slopes() {
        for p in [0.5, 1.0, 2.0, 4.0] {
            let table = power_law(p);
            assert!((fit_order(&table).unwrap() - p).abs() <= 1e-10);
            for row in &table.rows[1..] {
                assert!((row.order.unwrap() - p).abs() <= 1e-10);
            }
            assert!(table.rows[0].order.is_none());
        }
    }

    #[test]
    fn pairwise_order_formula() {
        let o = observed_order(0.1, 1e-2, 0.05, 2.5e-3).unwrap();
        assert!((o - 2.0).abs() <= 1e-12);
        assert_eq!(observed_order(0.1, 0.0, 0.05, 1e-3), None);
        assert_eq!(observed_order(0.1, f64::NAN, 0.05, 1e-3), None);
    }

    #[test]
    fn needs_enough_good_rows() {
        assert!(fit_order(&ConvergenceTable::from_pairs([(0.1, 1.0), (0.05, 0.5)])).is_err());
        let decreasing_only = ConvergenceTable::from_pairs([(0.1, 1.0), (0.2, 0.5), (0.05, 0.1)]);
        assert!(fit_order(&decreasing_only).is_err());
        let mostly_zero =
            ConvergenceTable::from_pairs([(0.4, 1.0), (0.2, 0.0), (0.1, 0.0), (0.05, 0.1)]);
        assert!(fit_order(&mostly_zero).is_err());
    }

    #[test]
    fn zero_errors_are_skipped() {
        let mut table = power_law(2.0);
        table.push(0.5f64.powi(10), 0.0);
        assert!((fit_order(&table).unwrap() - 2.0).abs() <= 1e-10);
        assert!(table.rows.last().unwrap().order.is_none());
        assert_eq!(table.len(), 7);
        assert!(!table.is_empty());
    }
}
