//! Experiment pipelines behind the `ncm` binary.
//!
//! Every command is a plain function over in-memory values plus a thin
//! wrapper that reads and writes files, so the pipelines can be driven from
//! tests and other crates as well as from the command line.

pub mod bench;
pub mod metrics;
pub mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::graph::{fixtures, CausalDiagram, GraphError, VarId};
use crate::identify::{self, hybrid_id_estimate, neural_id, IdentifyError, NeuralIdConfig, StdErrorRule, Verdict};
use crate::ncm::{MonteCarloConfig, Ncm, NcmError, Query};
use crate::scm::{expand_high_dim, widen_ate_tv_gap, CanonicalScm, Dataset, DistributionTable, HighDimMap, ScmError, WidenConfig};
use crate::train::{naive_effect, train_naive, train_nll, TrainConfig, TrainError};
use crate::util;

pub use bench::{benchmark_est, benchmark_id, BenchEstConfig, BenchIdConfig};
pub use metrics::{kl_divergence, mae, MetricError};
pub use report::{EstimateReport, ExperimentReport, TrialRecord, VerdictReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Ncm(#[from] NcmError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status for this error: 1 for usage, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

/// Defaults shared by all commands; a `--config` file overrides these and
/// flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub train: TrainConfig,
    pub tau: f64,
    pub repeats: usize,
    pub rule: StdErrorRule,
    pub n: usize,
    pub trials: usize,
    pub taus: Vec<f64>,
    pub sizes: Vec<usize>,
    pub widen: Option<f64>,
    pub threads: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig { epochs: 500, mc_samples: 5000, eval_samples: 5000, ..TrainConfig::default() },
            tau: 0.03,
            repeats: 4,
            rule: StdErrorRule::Root,
            n: 10_000,
            trials: 5,
            taus: vec![0.01, 0.03, 0.05],
            sizes: vec![1_000, 10_000, 100_000],
            widen: Some(0.05),
            threads: None,
        }
    }
}

impl Settings {
    /// The larger settings of the original experiments.
    pub fn full_scale() -> Self {
        let mut s = Settings::default();
        s.train.epochs = 3000;
        s.train.mc_samples = 20_000;
        s.train.eval_samples = 20_000;
        s.trials = 20;
        s.sizes = log_grid(1_000, 1_000_000, 15);
        s
    }

    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn neural(&self) -> NeuralIdConfig {
        NeuralIdConfig { train: self.train.clone(), tau: self.tau, repeats: self.repeats, rule: self.rule }
    }
}

/// `count` sizes from `lo` to `hi` evenly spaced in log scale, rounded.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count < 2 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize).collect()
}

/// Short hash of a serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    Ok(util::short_hash(serde_json::to_string(cfg)?.as_bytes()))
}

/// A graph file in the text format, or the name of a benchmark fixture.
pub fn load_graph(spec: &str) -> Result<(String, CausalDiagram), CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        let g = CausalDiagram::parse(&std::fs::read_to_string(path)?)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok((name, g));
    }
    match fixtures::by_name(spec) {
        Some(f) => Ok((f.name.to_string(), f.diagram())),
        None => Err(CliError::Usage(format!("'{spec}' is neither a graph file nor a fixture name"))),
    }
}

/// Which quantity a command targets, by variable name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuerySpec {
    Ate { treatment: String, outcome: String },
    Interventional { outcome: Vec<(String, u8)>, intervention: Vec<(String, u8)> },
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec::Ate { treatment: "X".into(), outcome: "Y".into() }
    }
}

/// `"X=1,Z=0"` into pairs.
pub fn parse_event(text: &str) -> Result<Vec<(String, u8)>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected NAME=0|1, got '{item}'")))?;
            let v = match value.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(CliError::Usage(format!("value '{other}' of {name} is not 0 or 1"))),
            };
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

impl QuerySpec {
    pub fn resolve(&self, g: &CausalDiagram) -> Result<Query, CliError> {
        let ids = |event: &[(String, u8)]| -> Result<Vec<(VarId, u8)>, CliError> {
            event.iter().map(|(n, v)| Ok((g.var(n)?, *v))).collect()
        };
        let q = match self {
            QuerySpec::Ate { treatment, outcome } => Query::ate(g, treatment, outcome)?,
            QuerySpec::Interventional { outcome, intervention } => {
                Query::Interventional { outcome: ids(outcome)?, intervention: ids(intervention)? }
            }
        };
        q.validate(g.num_vars())?;
        Ok(q)
    }

    /// Exact value of the query in `m`.
    pub fn exact(&self, m: &CanonicalScm) -> Result<f64, CliError> {
        let g = m.graph();
        match self.resolve(g)? {
            Query::Ate { treatment, outcome } => Ok(m.ate(treatment, outcome)?),
            Query::Interventional { outcome, intervention } => Ok(m.valuate_l2(&intervention)?.marginal(&outcome)),
        }
    }

    /// What a model ignoring confounding reports: conditioning in place of intervening.
    fn naive(&self, naive: &Ncm, mc: &MonteCarloConfig) -> Result<f64, CliError> {
        match self {
            QuerySpec::Ate { treatment, outcome } => Ok(naive_effect(naive, treatment, outcome, mc)?),
            QuerySpec::Interventional { outcome, intervention } => {
                let table = naive.l1_table(mc)?;
                let resolve = |event: &[(String, u8)]| -> Result<Vec<(VarId, u8)>, CliError> {
                    event.iter().map(|(n, v)| Ok((naive.graph().var(n)?, *v))).collect()
                };
                Ok(table.conditional(&resolve(outcome)?, &resolve(intervention)?)?)
            }
        }
    }

    fn treatment_outcome(&self) -> Option<(&str, &str)> {
        match self {
            QuerySpec::Ate { treatment, outcome } => Some((treatment, outcome)),
            QuerySpec::Interventional { .. } => None,
        }
    }
}

/// Exact facts about the model that generated a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub graph: CausalDiagram,
    pub treatment: String,
    pub outcome: String,
    pub ate: f64,
    pub tv: f64,
    pub table: DistributionTable,
    pub model_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widen_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high_dim: Option<HighDimMap>,
}

pub fn truth_path(csv: &Path) -> PathBuf {
    csv.with_extension("truth.json")
}

pub fn model_path(csv: &Path) -> PathBuf {
    csv.with_extension("model.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub n: usize,
    pub seed: u64,
    pub treatment: String,
    pub outcome: String,
    /// Push `|ATE - TV|` to at least this value before sampling.
    pub widen: Option<f64>,
    /// Expand every covariate into this many bits.
    pub high_dim: Option<usize>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig { n: 10_000, seed: 0, treatment: "X".into(), outcome: "Y".into(), widen: None, high_dim: None }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub model: CanonicalScm,
}

/// A random canonical model on `g`, gap-widened to `widen` when given.
///
/// Returns the number of widening steps alongside the model.
pub fn random_model(
    g: &CausalDiagram,
    seed: u64,
    treatment: &str,
    outcome: &str,
    widen: Option<f64>,
) -> Result<(CanonicalScm, Option<usize>), CliError> {
    let (x, y) = (g.var(treatment)?, g.var(outcome)?);
    let model = CanonicalScm::random(g, seed)?;
    match widen {
        Some(threshold) => {
            let (wide, steps) = widen_ate_tv_gap(&model, x, y, &WidenConfig { threshold, ..WidenConfig::default() })?;
            Ok((wide, Some(steps)))
        }
        None => Ok((model, None)),
    }
}

/// Samples of `model` with their ground truth; `cfg.widen` is ignored.
pub fn observe(model: &CanonicalScm, widen_steps: Option<usize>, cfg: &GenDataConfig) -> Result<GeneratedData, CliError> {
    let g = model.graph();
    let (x, y) = (g.var(&cfg.treatment)?, g.var(&cfg.outcome)?);
    let mut data = model.sample(cfg.n, util::child_seed(cfg.seed, "sample"), &[])?;
    let mut high_dim = None;
    if let Some(k) = cfg.high_dim {
        let covariates: Vec<String> =
            g.names().iter().filter(|n| **n != cfg.treatment && **n != cfg.outcome).cloned().collect();
        let (wide, map) = expand_high_dim(&data, &covariates, k, util::child_seed(cfg.seed, "high-dim"))?;
        data = wide;
        high_dim = Some(map);
    }
    let truth = GroundTruth {
        graph: g.clone(),
        treatment: cfg.treatment.clone(),
        outcome: cfg.outcome.clone(),
        ate: model.ate(x, y)?,
        tv: model.tv(x, y)?,
        table: model.valuate_l1()?,
        model_hash: model.hash(),
        widen_steps,
        high_dim,
    };
    Ok(GeneratedData { data, truth, model: model.clone() })
}

/// A random canonical model on `g`, optionally gap-widened, and samples from it.
pub fn generate(g: &CausalDiagram, cfg: &GenDataConfig) -> Result<GeneratedData, CliError> {
    let (model, steps) = random_model(g, util::child_seed(cfg.seed, "scm"), &cfg.treatment, &cfg.outcome, cfg.widen)?;
    observe(&model, steps, cfg)
}

/// `generate` and write the CSV with its provenance, truth and model sidecars.
pub fn cmd_gen_data(graph: &str, out: &Path, cfg: &GenDataConfig) -> Result<GroundTruth, CliError> {
    let (_, g) = load_graph(graph)?;
    let gen = generate(&g, cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    gen.data.save(out)?;
    std::fs::write(truth_path(out), serde_json::to_string_pretty(&gen.truth)?)?;
    std::fs::write(model_path(out), serde_json::to_string_pretty(&gen.model)?)?;
    Ok(gen.truth)
}

/// Neural identification, or symbolic identification plus estimation when `symbolic`.
pub fn identify(
    data: &Dataset,
    g: &CausalDiagram,
    query: &QuerySpec,
    cfg: &NeuralIdConfig,
    symbolic: bool,
) -> Result<(VerdictReport, Vec<crate::train::GapTrace>), CliError> {
    let q = query.resolve(g)?;
    let mut report = VerdictReport {
        query: q.describe(g),
        graph_hash: g.digest(),
        method: if symbolic { "symbolic" } else { "neural" }.into(),
        tau: cfg.tau,
        r: cfg.repeats,
        gaps: Vec::new(),
        mean: None,
        se: None,
        verdict: Verdict::NotIdentifiable,
        estimate: None,
        estimand_string: None,
    };
    if symbolic {
        let h = hybrid_id_estimate(data, g, &q, &cfg.train)?;
        report.verdict = if h.estimand.is_some() { Verdict::Identifiable } else { Verdict::NotIdentifiable };
        report.estimate = h.estimate;
        report.estimand_string = h.estimand;
        return Ok((report, Vec::new()));
    }
    let res = neural_id(data, g, &q, cfg)?;
    report.gaps = res.test.gaps.clone();
    report.mean = Some(res.test.mean);
    report.se = Some(res.test.std_error);
    report.verdict = res.test.verdict;
    report.estimate = res.estimate;
    Ok((report, res.traces))
}

/// `identify` on files; writes `report.json` and one `gap_trace_<i>.csv` per repeat into `out`.
pub fn cmd_identify(
    data: &Path,
    graph: &str,
    query: &QuerySpec,
    cfg: &NeuralIdConfig,
    symbolic: bool,
    out: &Path,
) -> Result<VerdictReport, CliError> {
    let (_, g) = load_graph(graph)?;
    let d = Dataset::load(data)?;
    let (report, traces) = identify(&d, &g, query, cfg, symbolic)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    for (i, t) in traces.iter().enumerate() {
        t.save_csv(&out.join(format!("gap_trace_{i}.csv")))?;
    }
    Ok(report)
}

/// Likelihood-trained estimate of the query next to the naive baseline, scored
/// against the generating model when it is known.
pub fn estimate(
    data: &Dataset,
    g: &CausalDiagram,
    query: &QuerySpec,
    cfg: &TrainConfig,
    truth: Option<(&GroundTruth, Option<&CanonicalScm>)>,
) -> Result<EstimateReport, CliError> {
    let q = query.resolve(g)?;
    let mc = MonteCarloConfig::new(cfg.eval_samples, util::child_seed(cfg.seed, "estimate"));
    let (model, ncm_trace) = train_nll(data, g, cfg)?;
    let (naive, naive_trace) = train_naive(data, cfg)?;
    let ncm_estimate = model.query_value(&q, &mc)?;
    let naive_estimate = query.naive(&naive, &mc)?;

    let exact = match truth {
        Some((_, Some(m))) => Some(query.exact(m)?),
        Some((t, None)) if query.treatment_outcome() == Some((t.treatment.as_str(), t.outcome.as_str())) => Some(t.ate),
        _ => None,
    };
    let mut kl_ncm = None;
    let mut kl_naive = None;
    if let Some((t, _)) = truth {
        if t.high_dim.is_none() && data.vars() == t.table.vars.as_slice() {
            kl_ncm = Some(kl_divergence(&t.table, &model.l1_table(&mc)?)?);
            kl_naive = Some(kl_divergence(&t.table, &naive.l1_table(&mc)?)?);
        }
    }
    Ok(EstimateReport {
        query: q.describe(g),
        graph_hash: g.digest(),
        n: data.num_rows(),
        ncm_estimate,
        naive_estimate,
        exact,
        ncm_error: exact.map(|e| (ncm_estimate - e).abs()),
        naive_error: exact.map(|e| (naive_estimate - e).abs()),
        kl_ncm,
        kl_naive,
        ncm_epochs: ncm_trace.nll.len(),
        naive_epochs: naive_trace.nll.len(),
    })
}

/// `estimate` on files; reads the truth and model sidecars when present and
/// writes the report to `out`.
pub fn cmd_estimate(data: &Path, graph: &str, query: &QuerySpec, cfg: &TrainConfig, out: &Path) -> Result<EstimateReport, CliError> {
    let (_, g) = load_graph(graph)?;
    let d = Dataset::load(data)?;
    let truth: Option<GroundTruth> = match std::fs::read_to_string(truth_path(data)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let model: Option<CanonicalScm> = match std::fs::read_to_string(model_path(data)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let report = estimate(&d, &g, query, cfg, truth.as_ref().map(|t| (t, model.as_ref())))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Reload a benchmark report, check its aggregates and rewrite the CSV views.
pub fn cmd_report(report: &Path, out: &Path) -> Result<ExperimentReport, CliError> {
    let r = ExperimentReport::load(report)?;
    if !r.is_consistent() {
        return Err(CliError::Usage(format!("{}: aggregates do not match the records", report.display())));
    }
    r.write_all(out)?;
    Ok(r)
}

/// The symbolic label of `P(outcome | do(treatment))` on `g`.
pub fn expected_verdict(g: &CausalDiagram, q: &Query) -> Verdict {
    if identify::identify_query(g, q).is_identified() {
        Verdict::Identifiable
    } else {
        Verdict::NotIdentifiable
    }
}

#[cfg(test)]
mod tests;
