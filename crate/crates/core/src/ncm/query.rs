use serde::{Deserialize, Serialize};

use crate::graph::{CausalDiagram, VarId};

use super::NcmError;

/// A causal quantity to identify or estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    /// `P(outcome=1 | do(treatment=1)) - P(outcome=1 | do(treatment=0))`.
    Ate { treatment: VarId, outcome: VarId },
    /// `P(outcome | do(intervention))`.
    Interventional { outcome: Vec<(VarId, u8)>, intervention: Vec<(VarId, u8)> },
}

impl Query {
    pub fn ate(g: &CausalDiagram, treatment: &str, outcome: &str) -> Result<Query, NcmError> {
        let t = g.var(treatment)?;
        let o = g.var(outcome)?;
        if t == o {
            return Err(NcmError::Query("treatment and outcome coincide".into()));
        }
        Ok(Query::Ate { treatment: t, outcome: o })
    }

    pub fn validate(&self, n: usize) -> Result<(), NcmError> {
        match self {
            Query::Ate { treatment, outcome } => {
                if *treatment >= n || *outcome >= n || treatment == outcome {
                    return Err(NcmError::Query("bad treatment/outcome".into()));
                }
            }
            Query::Interventional { outcome, intervention } => {
                if outcome.is_empty() {
                    return Err(NcmError::Query("empty outcome".into()));
                }
                for &(v, b) in outcome.iter().chain(intervention) {
                    if v >= n || b > 1 {
                        return Err(NcmError::Query(format!("bad literal ({v}, {b})")));
                    }
                }
                if outcome.iter().any(|(v, _)| intervention.iter().any(|(w, _)| w == v)) {
                    return Err(NcmError::Query("outcome and intervention overlap".into()));
                }
            }
        }
        Ok(())
    }

    /// Readable form such as `ATE(X -> Y)` or `P(Y=1 | do(X=1))`.
    pub fn describe(&self, g: &CausalDiagram) -> String {
        let lits = |l: &[(VarId, u8)]| l.iter().map(|&(v, b)| format!("{}={b}", g.name(v))).collect::<Vec<_>>().join(", ");
        match self {
            Query::Ate { treatment, outcome } => format!("ATE({} -> {})", g.name(*treatment), g.name(*outcome)),
            Query::Interventional { outcome, intervention } if intervention.is_empty() => format!("P({})", lits(outcome)),
            Query::Interventional { outcome, intervention } => format!("P({} | do({}))", lits(outcome), lits(intervention)),
        }
    }

    /// Interventional probabilities the query is built from.
    pub fn terms(&self) -> Vec<(Vec<(VarId, u8)>, Vec<(VarId, u8)>)> {
        match self {
            Query::Ate { treatment, outcome } => vec![
                (vec![(*outcome, 1)], vec![(*treatment, 1)]),
                (vec![(*outcome, 1)], vec![(*treatment, 0)]),
            ],
            Query::Interventional { outcome, intervention } => vec![(outcome.clone(), intervention.clone())],
        }
    }

    /// Query value from its term probabilities.
    pub fn combine(&self, terms: &[f64]) -> f64 {
        match self {
            Query::Ate { .. } => terms[0] - terms[1],
            Query::Interventional { .. } => terms[0],
        }
    }
}
