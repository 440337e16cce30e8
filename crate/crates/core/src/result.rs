use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::UnfoldError;

/// Unfolding method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    /// Matrix inversion.
    Mi,
    /// Iterative Bayesian unfolding.
    Ibu,
    /// Truncated singular-value pseudo-inverse.
    Svd,
    /// Bounded-integer coordinate descent on the quadratic objective.
    Cd,
    /// Simulated annealing on the binary-encoded objective.
    Anneal,
    /// Exhaustive enumeration of the binary-encoded objective.
    Brute,
}

impl Method {
    pub const BENCHMARK: [Method; 5] = [Method::Mi, Method::Ibu, Method::Svd, Method::Cd, Method::Anneal];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mi => "MI",
            Method::Ibu => "IBU",
            Method::Svd => "SVD",
            Method::Cd => "CD",
            Method::Anneal => "ANNEAL",
            Method::Brute => "BRUTE",
        }
    }

    /// Whether the method minimizes the regularized quadratic objective.
    pub fn is_optimization(self) -> bool {
        matches!(self, Method::Cd | Method::Anneal | Method::Brute)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = UnfoldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MI" => Ok(Method::Mi),
            "IBU" => Ok(Method::Ibu),
            "SVD" => Ok(Method::Svd),
            "CD" | "GRB" => Ok(Method::Cd),
            "ANNEAL" | "HYB" | "SA" => Ok(Method::Anneal),
            "BRUTE" => Ok(Method::Brute),
            other => Err(UnfoldError::invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Output of one unfolding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfoldResult {
    pub method: Method,
    pub estimate: Vec<f64>,
    /// Per-bin statistical uncertainties; zero until a bootstrap fills them.
    pub errors: Vec<f64>,
    /// Pearson chi-square against a known truth, when one is available.
    pub chi2: Option<f64>,
    pub diagnostics: BTreeMap<String, Value>,
}

impl UnfoldResult {
    pub fn new(method: Method, estimate: Vec<f64>) -> Self {
        let m = estimate.len();
        Self {
            method,
            estimate,
            errors: vec![0.0; m],
            chi2: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn diag(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }

    pub fn set_diag(&mut self, key: &str, value: impl Into<Value>) {
        self.diagnostics.insert(key.to_string(), value.into());
    }

    /// Appends a message to the `warnings` diagnostic list.
    pub fn warn(&mut self, msg: impl Into<String>) {
        let entry = self
            .diagnostics
            .entry("warnings".to_string())
            .or_insert_with(|| Value::Array(Vec::new()));
        if let Value::Array(list) = entry {
            list.push(Value::String(msg.into()));
        }
    }

    pub fn warnings(&self) -> Vec<String> {
        match self.diagnostics.get("warnings") {
            Some(Value::Array(list)) => list
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
            _ => Vec::new(),
        }
    }
}
