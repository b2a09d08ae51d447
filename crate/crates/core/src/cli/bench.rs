//! Seeded benchmark sweeps over the fixture graphs.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{ExperimentReport, TauVerdict, TrialRecord};
use super::{estimate, expected_verdict, load_graph, observe, random_model, CliError, GenDataConfig, QuerySpec};
use crate::graph::fixtures;
use crate::identify::{gap_test, neural_id, NeuralIdConfig};
use crate::ncm::Query;
use crate::scm::ScmError;
use crate::train::{empirical_tv, TrainConfig};
use crate::util;

/// Seed of one trial: a hash of everything that identifies it.
pub fn trial_seed(base: u64, graph: &str, n: usize, trial: usize) -> u64 {
    util::derive_seed(&format!("{base}/{graph}/{n}/{trial}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub graph: String,
    pub n: usize,
    pub trial: usize,
    pub seconds: f64,
}

pub fn write_timings<W: Write>(timings: &[Timing], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for t in timings {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

/// Run `f` on a pool of `threads` workers, or on the global pool.
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchIdConfig {
    pub graphs: Vec<String>,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub taus: Vec<f64>,
    pub neural: NeuralIdConfig,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for BenchIdConfig {
    fn default() -> Self {
        let s = super::Settings::default();
        BenchIdConfig {
            graphs: fixtures::BENCHMARK.iter().map(|f| f.name.to_string()).collect(),
            trials: s.trials,
            n: s.n,
            seed: 0,
            taus: s.taus.clone(),
            neural: s.neural(),
            threads: None,
        }
    }
}

fn id_trial(cfg: &BenchIdConfig, graph: &str, trial: usize, hash: &str) -> Result<(TrialRecord, Timing), CliError> {
    let start = Instant::now();
    let (_, g) = load_graph(graph)?;
    let seed = trial_seed(cfg.seed, graph, cfg.n, trial);
    let gen_cfg = GenDataConfig { n: cfg.n, seed, ..GenDataConfig::default() };
    let (model, _) = random_model(&g, util::child_seed(seed, "scm"), "X", "Y", None)?;
    let gen = observe(&model, None, &gen_cfg)?;
    let q = Query::ate(&g, "X", "Y")?;
    let neural = NeuralIdConfig { train: TrainConfig { seed, ..cfg.neural.train.clone() }, ..cfg.neural.clone() };
    let res = neural_id(&gen.data, &g, &q, &neural)?;
    let verdicts = cfg
        .taus
        .iter()
        .map(|&tau| Ok(TauVerdict { tau, verdict: gap_test(&res.test.gaps, tau, neural.rule)?.verdict }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut estimates = BTreeMap::new();
    if let Some(e) = res.estimate {
        estimates.insert("ncm".to_string(), e);
    }
    estimates.insert("tv".to_string(), empirical_tv(&gen.data, "X", "Y")?);
    let record = TrialRecord {
        graph: graph.to_string(),
        trial,
        seed,
        n: cfg.n,
        config_hash: hash.to_string(),
        exact_ate: gen.truth.ate,
        expected: expected_verdict(&g, &q),
        widened: false,
        gaps: res.test.gaps,
        verdicts,
        traces: res.traces,
        estimates,
        kl: BTreeMap::new(),
    };
    let timing = Timing { graph: graph.to_string(), n: cfg.n, trial, seconds: start.elapsed().as_secs_f64() };
    Ok((record, timing))
}

/// Neural identification of the ATE on every graph, `trials` times each.
///
/// Trials run in parallel; records come back in (graph, trial) order, so the
/// report does not depend on scheduling. Wall times are returned separately.
pub fn benchmark_id(cfg: &BenchIdConfig) -> Result<(ExperimentReport, Vec<Timing>), CliError> {
    if cfg.trials == 0 || cfg.graphs.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one graph and one trial".into()));
    }
    let hash = super::config_hash(cfg)?;
    let jobs: Vec<(&str, usize)> = cfg.graphs.iter().flat_map(|g| (0..cfg.trials).map(move |t| (g.as_str(), t))).collect();
    let results = with_pool(cfg.threads, || {
        jobs.par_iter().map(|&(g, t)| id_trial(cfg, g, t, &hash)).collect::<Result<Vec<_>, _>>()
    })??;
    let (records, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = ExperimentReport::new("identification", serde_json::to_value(cfg)?, hash, cfg.taus.clone(), records);
    Ok((report, timings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchEstConfig {
    pub graphs: Vec<String>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub widen: Option<f64>,
    pub train: TrainConfig,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for BenchEstConfig {
    fn default() -> Self {
        let s = super::Settings::default();
        BenchEstConfig {
            graphs: fixtures::IDENTIFIABLE.iter().map(|f| f.name.to_string()).collect(),
            sizes: s.sizes.clone(),
            trials: s.trials,
            seed: 0,
            widen: s.widen,
            train: s.train.clone(),
            threads: None,
        }
    }
}

fn est_trial(cfg: &BenchEstConfig, graph: &str, n: usize, trial: usize, hash: &str) -> Result<(TrialRecord, Timing), CliError> {
    let start = Instant::now();
    let (_, g) = load_graph(graph)?;
    // one model per (graph, trial), shared across sample sizes
    let model_seed = util::child_seed(trial_seed(cfg.seed, graph, 0, trial), "scm");
    let (model, steps) = match random_model(&g, model_seed, "X", "Y", cfg.widen) {
        Err(CliError::Scm(ScmError::WideningFailed { .. })) => random_model(&g, model_seed, "X", "Y", None)?,
        other => other?,
    };
    let seed = trial_seed(cfg.seed, graph, n, trial);
    let gen = observe(&model, steps, &GenDataConfig { n, seed, ..GenDataConfig::default() })?;
    let train = TrainConfig { seed, ..cfg.train.clone() };
    let est = estimate(&gen.data, &g, &QuerySpec::default(), &train, Some((&gen.truth, Some(&model))))?;
    let q = Query::ate(&g, "X", "Y")?;
    let mut kl = BTreeMap::new();
    kl.extend(est.kl_ncm.map(|v| ("ncm".to_string(), v)));
    kl.extend(est.kl_naive.map(|v| ("naive".to_string(), v)));
    let record = TrialRecord {
        graph: graph.to_string(),
        trial,
        seed,
        n,
        config_hash: hash.to_string(),
        exact_ate: gen.truth.ate,
        expected: expected_verdict(&g, &q),
        widened: steps.is_some(),
        gaps: Vec::new(),
        verdicts: Vec::new(),
        traces: Vec::new(),
        estimates: BTreeMap::from([("ncm".to_string(), est.ncm_estimate), ("naive".to_string(), est.naive_estimate)]),
        kl,
    };
    let timing = Timing { graph: graph.to_string(), n, trial, seconds: start.elapsed().as_secs_f64() };
    Ok((record, timing))
}

/// Likelihood-trained and naive ATE estimates against the exact effect across
/// sample sizes, `trials` models per graph.
pub fn benchmark_est(cfg: &BenchEstConfig) -> Result<(ExperimentReport, Vec<Timing>), CliError> {
    if cfg.trials == 0 || cfg.graphs.is_empty() || cfg.sizes.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one graph, size and trial".into()));
    }
    let hash = super::config_hash(cfg)?;
    let mut jobs = Vec::new();
    for g in &cfg.graphs {
        for &n in &cfg.sizes {
            for t in 0..cfg.trials {
                jobs.push((g.as_str(), n, t));
            }
        }
    }
    let results = with_pool(cfg.threads, || {
        jobs.par_iter().map(|&(g, n, t)| est_trial(cfg, g, n, t, &hash)).collect::<Result<Vec<_>, _>>()
    })??;
    let (records, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = ExperimentReport::new("estimation", serde_json::to_value(cfg)?, hash, Vec::new(), records);
    Ok((report, timings))
}
