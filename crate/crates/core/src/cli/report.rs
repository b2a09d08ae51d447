//! Report types written by the commands, their aggregates and CSV views.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::identify::Verdict;
use crate::train::GapTrace;

/// Percentiles reported for gap traces.
pub const PERCENTILES: [f64; 9] = [1.0, 5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0];

/// Outcome of `identify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub query: String,
    pub graph_hash: String,
    pub method: String,
    pub tau: f64,
    pub r: usize,
    pub gaps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimand_string: Option<String>,
}

/// Outcome of `estimate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub query: String,
    pub graph_hash: String,
    pub n: usize,
    pub ncm_estimate: f64,
    pub naive_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncm_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_ncm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_naive: Option<f64>,
    pub ncm_epochs: usize,
    pub naive_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauVerdict {
    pub tau: f64,
    pub verdict: Verdict,
}

/// One trial of a benchmark: one graph, one generated model, one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub graph: String,
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub config_hash: String,
    pub exact_ate: f64,
    /// The symbolic label of the query on this graph.
    pub expected: Verdict,
    #[serde(default)]
    pub widened: bool,
    #[serde(default)]
    pub gaps: Vec<f64>,
    #[serde(default)]
    pub verdicts: Vec<TauVerdict>,
    #[serde(default)]
    pub traces: Vec<GapTrace>,
    /// ATE estimate per method.
    #[serde(default)]
    pub estimates: BTreeMap<String, f64>,
    /// `KL(true || fitted)` per method.
    #[serde(default)]
    pub kl: BTreeMap<String, f64>,
}

impl TrialRecord {
    pub fn verdict_at(&self, tau: f64) -> Option<Verdict> {
        self.verdicts.iter().find(|v| v.tau == tau).map(|v| v.verdict)
    }
}

/// Percentiles of the gap across all runs of a graph at one logged epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBand {
    pub graph: String,
    pub epoch: usize,
    pub percentiles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub graph: String,
    pub tau: f64,
    pub correct: usize,
    pub trials: usize,
    pub accuracy: f64,
}

/// Mean, median and a normal 95% band of one metric over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub graph: String,
    pub n: usize,
    pub method: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub gap_bands: Vec<GapBand>,
    pub accuracy: Vec<Accuracy>,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub taus: Vec<f64>,
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Linear interpolation between closest ranks; `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn median(v: &[f64]) -> f64 {
    percentile(&sorted(v.to_vec()), 50.0)
}

fn graphs_in_order(records: &[TrialRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.graph) {
            out.push(r.graph.clone());
        }
    }
    out
}

/// Aggregates of `records`, in first-appearance order of graphs.
pub fn summarize(records: &[TrialRecord], taus: &[f64]) -> Summary {
    let mut summary = Summary::default();
    for graph in graphs_in_order(records) {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.graph == graph).collect();

        let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for trace in rows.iter().flat_map(|r| &r.traces) {
            for rec in &trace.records {
                by_epoch.entry(rec.epoch).or_default().push(rec.gap);
            }
        }
        for (epoch, gaps) in by_epoch {
            let s = sorted(gaps);
            summary.gap_bands.push(GapBand {
                graph: graph.clone(),
                epoch,
                percentiles: PERCENTILES.iter().map(|&p| percentile(&s, p)).collect(),
            });
        }

        for &tau in taus {
            let judged: Vec<bool> = rows.iter().filter_map(|r| r.verdict_at(tau).map(|v| v == r.expected)).collect();
            if judged.is_empty() {
                continue;
            }
            let correct = judged.iter().filter(|&&ok| ok).count();
            summary.accuracy.push(Accuracy {
                graph: graph.clone(),
                tau,
                correct,
                trials: judged.len(),
                accuracy: correct as f64 / judged.len() as f64,
            });
        }

        let mut groups: BTreeMap<(usize, String, String), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            for (method, est) in &r.estimates {
                groups.entry((r.n, method.clone(), "abs_error".into())).or_default().push((est - r.exact_ate).abs());
            }
            for (method, kl) in &r.kl {
                groups.entry((r.n, method.clone(), "kl".into())).or_default().push(*kl);
            }
        }
        for ((n, method, metric), values) in groups {
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let sd = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            let half = 1.96 * sd / k.sqrt();
            summary.metrics.push(MetricSummary {
                graph: graph.clone(),
                n,
                method,
                metric,
                count: values.len(),
                mean,
                median: median(&values),
                ci_low: mean - half,
                ci_high: mean + half,
            });
        }
    }
    summary
}

impl ExperimentReport {
    pub fn new(kind: &str, config: serde_json::Value, config_hash: String, taus: Vec<f64>, records: Vec<TrialRecord>) -> Self {
        let summary = summarize(&records, &taus);
        ExperimentReport { kind: kind.into(), config, config_hash, taus, records, summary }
    }

    /// Whether the stored aggregates match a recomputation from the records.
    pub fn is_consistent(&self) -> bool {
        self.summary == summarize(&self.records, &self.taus) && self.records.iter().all(|r| r.config_hash == self.config_hash)
    }

    /// Per-graph majority verdict at `tau` agrees with the symbolic label.
    pub fn majority_agrees(&self, graph: &str, tau: f64) -> Option<bool> {
        let acc = self.summary.accuracy.iter().find(|a| a.graph == graph && a.tau == tau)?;
        Some(2 * acc.correct > acc.trials)
    }

    pub fn metric(&self, graph: &str, n: usize, method: &str, metric: &str) -> Option<&MetricSummary> {
        self.summary.metrics.iter().find(|m| m.graph == graph && m.n == n && m.method == method && m.metric == metric)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_gap_bands<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["graph".to_string(), "epoch".to_string()];
        header.extend(PERCENTILES.iter().map(|p| format!("p{p}")));
        w.write_record(&header)?;
        for b in &self.summary.gap_bands {
            let mut row = vec![b.graph.clone(), b.epoch.to_string()];
            row.extend(b.percentiles.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_accuracy<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["graph", "tau", "correct", "trials", "accuracy"])?;
        for a in &self.summary.accuracy {
            w.write_record([a.graph.clone(), a.tau.to_string(), a.correct.to_string(), a.trials.to_string(), a.accuracy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metrics<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["graph", "n", "method", "metric", "count", "mean", "median", "ci_low", "ci_high"])?;
        for m in &self.summary.metrics {
            w.write_record([
                m.graph.clone(),
                m.n.to_string(),
                m.method.clone(),
                m.metric.clone(),
                m.count.to_string(),
                m.mean.to_string(),
                m.median.to_string(),
                m.ci_low.to_string(),
                m.ci_high.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `report.json` plus the plot-ready CSVs into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        self.save(&dir.join("report.json"))?;
        self.write_gap_bands(std::fs::File::create(dir.join("gap_percentiles.csv"))?)?;
        self.write_accuracy(std::fs::File::create(dir.join("accuracy.csv"))?)?;
        self.write_metrics(std::fs::File::create(dir.join("metrics.csv"))?)?;
        Ok(())
    }

    /// A short plain-text overview.
    pub fn render(&self) -> String {
        let mut s = format!("{} report, {} trials, config {}\n", self.kind, self.records.len(), self.config_hash);
        for a in &self.summary.accuracy {
            s += &format!("  {:<14} tau={:<5} accuracy {}/{}\n", a.graph, a.tau, a.correct, a.trials);
        }
        for m in &self.summary.metrics {
            s += &format!(
                "  {:<14} n={:<8} {:<6} {:<9} median {:.4} mean {:.4} [{:.4}, {:.4}]\n",
                m.graph, m.n, m.method, m.metric, m.median, m.mean, m.ci_low, m.ci_high
            );
        }
        s
    }
}

/// JSON schema of [`ExperimentReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/experiment_report.schema.json");
