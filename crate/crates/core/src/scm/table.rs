use serde::{Deserialize, Serialize};

use super::ScmError;
use crate::graph::VarId;

/// Value of variable `v` in a packed assignment (bit `v`).
#[inline]
pub fn bit(assignment: usize, v: VarId) -> u8 {
    ((assignment >> v) & 1) as u8
}

/// Whether a packed assignment agrees with every `(variable, value)` pair.
#[inline]
pub fn consistent(assignment: usize, event: &[(VarId, u8)]) -> bool {
    event.iter().all(|&(v, val)| bit(assignment, v) == val)
}

/// An exact joint distribution over binary variables.
///
/// Entry `a` holds the probability of the assignment whose bit `i` is the
/// value of variable `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub vars: Vec<String>,
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(vars: Vec<String>, probs: Vec<f64>) -> Result<Self, ScmError> {
        if probs.len() != 1usize << vars.len() {
            return Err(ScmError::InvalidTable(format!(
                "{} entries for {} variables",
                probs.len(),
                vars.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(ScmError::InvalidTable("negative or NaN entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ScmError::InvalidTable(format!("entries sum to {total}")));
        }
        Ok(DistributionTable { vars, probs })
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn prob(&self, assignment: usize) -> f64 {
        self.probs[assignment]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `P(event)` for a conjunction of `(variable, value)` pairs.
    pub fn marginal(&self, event: &[(VarId, u8)]) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|&(a, _)| consistent(a, event))
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(target | given)`; errors when the conditioning event has zero mass.
    pub fn conditional(&self, target: &[(VarId, u8)], given: &[(VarId, u8)]) -> Result<f64, ScmError> {
        let den = self.marginal(given);
        if den <= 0.0 {
            return Err(ScmError::Positivity(self.describe(given)));
        }
        let joint: Vec<_> = target.iter().chain(given).copied().collect();
        Ok(self.marginal(&joint) / den)
    }

    pub fn var_index(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn describe(&self, event: &[(VarId, u8)]) -> String {
        let parts: Vec<String> = event
            .iter()
            .map(|&(v, val)| format!("{}={}", self.vars[v], val))
            .collect();
        parts.join(", ")
    }
}
