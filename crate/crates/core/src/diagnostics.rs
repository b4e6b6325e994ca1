//! Pass/fail rows shared by every checker, plus plain numeric series.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub check: String,
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs|` for identities, `lhs − rhs` for inequalities `lhs ≤ rhs`.
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl DiagnosticRow {
    pub fn eq(check: &str, n: usize, lhs: f64, rhs: f64, tol: f64) -> Self {
        let residual = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() };
        Self::make(check, n, lhs, rhs, residual, tol)
    }

    pub fn le(check: &str, n: usize, lhs: f64, rhs: f64, tol: f64) -> Self {
        let residual = if lhs == rhs { 0.0 } else { lhs - rhs };
        Self::make(check, n, lhs, rhs, residual, tol)
    }

    /// A residual computed elsewhere (max-norms of vector identities and the like).
    pub fn residual(check: &str, n: usize, residual: f64, tol: f64) -> Self {
        Self::make(check, n, residual, 0.0, residual, tol)
    }

    fn make(check: &str, n: usize, lhs: f64, rhs: f64, residual: f64, tol: f64) -> Self {
        let pass = residual <= tol;
        DiagnosticRow { check: check.to_string(), n, lhs, rhs, residual, tol, pass }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rows: Vec<DiagnosticRow>,
}

impl DiagnosticsReport {
    pub fn push(&mut self, row: DiagnosticRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: DiagnosticsReport) {
        self.rows.extend(other.rows);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DiagnosticRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn checks(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.check) {
                names.push(r.check.clone());
            }
        }
        names
    }

    /// Largest residual recorded for `check` (NaN counts as worst).
    pub fn worst(&self, check: &str) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.check == check)
            .map(|r| r.residual)
            .fold(None, |acc, v| match acc {
                None => Some(v),
                Some(a) if v.is_nan() || v > a => Some(v),
                keep => keep,
            })
    }
}

/// A named sequence of `(n, value)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

impl Series {
    pub fn new(name: &str) -> Self {
        Series { name: name.to_string(), points: Vec::new() }
    }

    pub fn from_values(name: &str, values: &[f64]) -> Self {
        Series { name: name.to_string(), points: values.iter().copied().enumerate().collect() }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}
