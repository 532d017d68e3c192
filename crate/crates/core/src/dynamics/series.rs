use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// One sampled observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<C64>,
    /// Standard errors for stochastic estimates.
    pub std_err: Option<Vec<f64>>,
}

/// Observables on a strictly increasing time grid, plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub columns: Vec<Column>,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        validate_grid(&times)?;
        Ok(TimeSeries { times, columns: Vec::new(), metadata: BTreeMap::new() })
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<C64>, std_err: Option<Vec<f64>>) -> Result<()> {
        let n = self.times.len();
        if values.len() != n || std_err.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: values.len() });
        }
        self.columns.push(Column { name: name.into(), values, std_err });
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingLabel(name.to_string()))
    }

    /// Real parts of a column.
    pub fn real(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(name)?.values.iter().map(|v| v.re).collect())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn is_stochastic(&self) -> bool {
        self.columns.iter().any(|c| c.std_err.is_some())
    }
}

/// Checks that a time grid is non-empty, finite and strictly increasing.
pub fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("time grid is empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("time grid contains non-finite values".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` evenly spaced points from `t0` to `t1` inclusive.
pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect(),
    }
}
