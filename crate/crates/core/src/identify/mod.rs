//! Deciding whether a query is identifiable, neurally from paired min/max
//! training and symbolically from the diagram alone.

mod symbolic;

pub use symbolic::{symbolic_id, Estimand, Expr, Identification};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{CausalDiagram, VarSet};
use crate::ncm::{MonteCarloConfig, Query};
use crate::scm::Dataset;
use crate::train::{train_minmax, train_nll, GapTrace, TrainConfig, TrainError};
use crate::util;

/// One-sided z value of the gap test.
pub const Z_95: f64 = 1.65;

#[derive(Debug, thiserror::Error)]
pub enum IdentifyError {
    #[error("the gap test needs at least 2 gaps, got {0}")]
    TooFewGaps(usize),
    #[error("gaps must be finite")]
    NonFiniteGap,
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Identifiable,
    NotIdentifiable,
}

/// How the standard error of the mean gap is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdErrorRule {
    /// `(1/r) sqrt(Σ (g_i - mean)^2)`.
    #[default]
    Root,
    /// `s / sqrt(r)` with the unbiased sample deviation `s`.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTestResult {
    pub gaps: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    pub tau: f64,
    pub verdict: Verdict,
}

/// One-sided test of `mean + 1.65 se < tau` over repeated max-min gaps.
///
/// The statistics are computed from the sorted gaps, so any permutation of the
/// input gives bitwise the same result.
pub fn gap_test(gaps: &[f64], tau: f64, rule: StdErrorRule) -> Result<GapTestResult, IdentifyError> {
    if gaps.len() < 2 {
        return Err(IdentifyError::TooFewGaps(gaps.len()));
    }
    if gaps.iter().any(|g| !g.is_finite()) {
        return Err(IdentifyError::NonFiniteGap);
    }
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    let base = sorted[0];
    let mean = base + sorted.iter().map(|g| g - base).sum::<f64>() / r;
    let ss: f64 = sorted.iter().map(|g| (g - mean).powi(2)).sum();
    let std_error = match rule {
        StdErrorRule::Root => ss.sqrt() / r,
        StdErrorRule::Sample => (ss / (r - 1.0)).sqrt() / r.sqrt(),
    };
    let verdict = if mean + Z_95 * std_error < tau { Verdict::Identifiable } else { Verdict::NotIdentifiable };
    Ok(GapTestResult { gaps: gaps.to_vec(), mean, std_error, tau, verdict })
}

/// Outcome of neural identification: the test, the per-run traces, and the
/// estimate when the verdict is positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralIdResult {
    pub test: GapTestResult,
    pub traces: Vec<GapTrace>,
    pub estimate: Option<f64>,
}

/// Settings of a neural identification call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralIdConfig {
    pub train: TrainConfig,
    pub tau: f64,
    pub repeats: usize,
    pub rule: StdErrorRule,
}

impl Default for NeuralIdConfig {
    fn default() -> Self {
        NeuralIdConfig { train: TrainConfig::default(), tau: 0.03, repeats: 4, rule: StdErrorRule::Root }
    }
}

/// Seed of repeat `i` of a run keyed by `seed`.
pub fn repeat_seed(seed: u64, i: usize) -> u64 {
    util::child_seed(seed, &format!("repeat/{i}"))
}

/// Train `repeats` min/max pairs on `data`, test their final gaps, and report
/// the first minimizing model's query value when the test passes.
pub fn neural_id(data: &Dataset, g: &CausalDiagram, q: &Query, cfg: &NeuralIdConfig) -> Result<NeuralIdResult, IdentifyError> {
    if cfg.repeats < 2 {
        return Err(IdentifyError::TooFewGaps(cfg.repeats));
    }
    let runs = (0..cfg.repeats)
        .into_par_iter()
        .map(|i| {
            let train = TrainConfig { seed: repeat_seed(cfg.train.seed, i), ..cfg.train.clone() };
            train_minmax(data, g, q, &train).map(|run| (run, train))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let gaps: Vec<f64> = runs.iter().map(|(r, _)| r.trace.final_gap().expect("at least one epoch")).collect();
    let test = gap_test(&gaps, cfg.tau, cfg.rule)?;
    let estimate = match test.verdict {
        Verdict::Identifiable => {
            let (run, train) = &runs[0];
            let mc = MonteCarloConfig::new(train.eval_samples, util::child_seed(train.seed, "estimate"));
            Some(run.min.query_value(q, &mc).map_err(TrainError::from)?)
        }
        Verdict::NotIdentifiable => None,
    };
    Ok(NeuralIdResult { test, traces: runs.into_iter().map(|(r, _)| r.trace).collect(), estimate })
}

/// Symbolic identification of every interventional term of `q`.
pub fn identify_query(g: &CausalDiagram, q: &Query) -> Identification {
    let (y, x) = match q {
        Query::Ate { treatment, outcome } => (VarSet::singleton(*outcome), VarSet::singleton(*treatment)),
        Query::Interventional { outcome, intervention } => (
            outcome.iter().fold(VarSet::EMPTY, |s, &(v, _)| s.with(v)),
            intervention.iter().fold(VarSet::EMPTY, |s, &(v, _)| s.with(v)),
        ),
    };
    symbolic_id(g, y, x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridResult {
    pub estimand: Option<String>,
    pub estimate: Option<f64>,
}

/// Symbolic identification first; only identifiable queries are then
/// estimated by a likelihood-trained model.
pub fn hybrid_id_estimate(data: &Dataset, g: &CausalDiagram, q: &Query, cfg: &TrainConfig) -> Result<HybridResult, IdentifyError> {
    let Identification::Identified(est) = identify_query(g, q) else {
        return Ok(HybridResult { estimand: None, estimate: None });
    };
    let (model, _) = train_nll(data, g, cfg)?;
    let mc = MonteCarloConfig::new(cfg.eval_samples, util::child_seed(cfg.seed, "estimate"));
    let value = model.query_value(q, &mc).map_err(TrainError::from)?;
    Ok(HybridResult { estimand: Some(est.to_string()), estimate: Some(value) })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::graph::fixtures;
    use crate::nn::OptimConfig;
    use crate::scm::CanonicalScm;

    #[test]
    fn boundary_examples() {
        let t = gap_test(&[0.001, 0.002, 0.001, 0.002], 0.03, StdErrorRule::Root).unwrap();
        assert_eq!(t.verdict, Verdict::Identifiable);
        assert!((t.mean - 0.0015).abs() < 1e-15);
        // sqrt(4 * 0.0005^2) / 4
        assert!((t.std_error - 0.00025).abs() < 1e-15);
        let t = gap_test(&[0.2, 0.21, 0.19, 0.2], 0.03, StdErrorRule::Root).unwrap();
        assert_eq!(t.verdict, Verdict::NotIdentifiable);
        let t = gap_test(&[0.03; 4], 0.03, StdErrorRule::Root).unwrap();
        assert_eq!((t.mean, t.std_error), (0.03, 0.0));
        assert_eq!(t.verdict, Verdict::NotIdentifiable);
    }

    #[test]
    fn sample_rule() {
        let t = gap_test(&[1.0, 2.0, 3.0], 10.0, StdErrorRule::Sample).unwrap();
        assert!((t.std_error - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let t = gap_test(&[1.0, 2.0, 3.0], 10.0, StdErrorRule::Root).unwrap();
        assert!((t.std_error - 2f64.sqrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_or_bad_input() {
        assert!(matches!(gap_test(&[0.1], 0.03, StdErrorRule::Root), Err(IdentifyError::TooFewGaps(1))));
        assert!(gap_test(&[0.1, f64::NAN], 0.03, StdErrorRule::Root).is_err());
    }

    #[test]
    fn zero_tau_never_passes() {
        let t = gap_test(&[0.0, 0.0, 0.0], 0.0, StdErrorRule::Root).unwrap();
        assert_eq!(t.verdict, Verdict::NotIdentifiable);
    }

    proptest! {
        #[test]
        fn verdict_ignores_order(gaps in proptest::collection::vec(-0.1..0.3f64, 2..8), tau in 0.0..0.1f64, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let base = gap_test(&gaps, tau, StdErrorRule::Root).unwrap();
            let mut rng = util::rng(seed);
            let mut shuffled = gaps.clone();
            for _ in 0..20 {
                shuffled.shuffle(&mut rng);
                let t = gap_test(&shuffled, tau, StdErrorRule::Root).unwrap();
                prop_assert_eq!(t.verdict, base.verdict);
                prop_assert_eq!(t.mean.to_bits(), base.mean.to_bits());
                prop_assert_eq!(t.std_error.to_bits(), base.std_error.to_bits());
            }
        }

        #[test]
        fn statistics_are_recomputable(gaps in proptest::collection::vec(-0.1..0.3f64, 2..8)) {
            let t = gap_test(&gaps, 0.03, StdErrorRule::Root).unwrap();
            let r = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / r;
            let se = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>().sqrt() / r;
            prop_assert!((t.mean - mean).abs() < 1e-12);
            prop_assert!((t.std_error - se).abs() < 1e-12);
            prop_assert_eq!(t.verdict == Verdict::Identifiable, t.mean + Z_95 * t.std_error < 0.03);
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            mc_samples: 64,
            eval_samples: 200,
            hidden: vec![8],
            optim: OptimConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn hybrid_skips_training_when_not_identifiable() {
        let g = fixtures::BOW.diagram();
        let d = CanonicalScm::random(&g, 1).unwrap().sample(50, 2, &[]).unwrap();
        // zero epochs would be rejected if training ran
        let cfg = TrainConfig { epochs: 0, ..quick() };
        let r = hybrid_id_estimate(&d, &g, &Query::ate(&g, "X", "Y").unwrap(), &cfg).unwrap();
        assert_eq!(r, HybridResult { estimand: None, estimate: None });
    }

    #[test]
    fn hybrid_estimates_identifiable_queries() {
        let g = fixtures::BACKDOOR.diagram();
        let d = CanonicalScm::random(&g, 1).unwrap().sample(200, 2, &[]).unwrap();
        let r = hybrid_id_estimate(&d, &g, &Query::ate(&g, "X", "Y").unwrap(), &quick()).unwrap();
        assert_eq!(r.estimand.as_deref(), Some("sum_{Z} (P(Y|X,Z) * P(Z))"));
        assert!((-1.0..=1.0).contains(&r.estimate.unwrap()));
    }

    #[test]
    fn neural_id_runs_and_respects_tau() {
        let g = fixtures::FRONTDOOR.diagram();
        let d = CanonicalScm::random(&g, 4).unwrap().sample(200, 5, &[]).unwrap();
        let q = Query::ate(&g, "X", "Y").unwrap();
        let cfg = NeuralIdConfig { train: quick(), tau: 0.0, repeats: 2, rule: StdErrorRule::Root };
        let r = neural_id(&d, &g, &q, &cfg).unwrap();
        assert_eq!(r.test.verdict, Verdict::NotIdentifiable);
        assert_eq!(r.estimate, None);
        assert_eq!(r.traces.len(), 2);
        let gaps: Vec<f64> = r.traces.iter().map(|t| t.final_gap().unwrap()).collect();
        assert_eq!(r.test.gaps, gaps);
        let again = neural_id(&d, &g, &q, &cfg).unwrap();
        assert_eq!(again, r);
        let one = NeuralIdConfig { repeats: 1, ..cfg };
        assert!(neural_id(&d, &g, &q, &one).is_err());
    }

    #[test]
    fn generous_tau_yields_an_estimate() {
        let g = fixtures::BACKDOOR.diagram();
        let d = CanonicalScm::random(&g, 4).unwrap().sample(200, 5, &[]).unwrap();
        let q = Query::ate(&g, "X", "Y").unwrap();
        let cfg = NeuralIdConfig { train: quick(), tau: 10.0, repeats: 2, rule: StdErrorRule::Root };
        let r = neural_id(&d, &g, &q, &cfg).unwrap();
        assert_eq!(r.test.verdict, Verdict::Identifiable);
        assert!(r.estimate.is_some());
    }
}
