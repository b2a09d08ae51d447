//! Fitting neural causal models: plain likelihood training, the paired
//! min/max training that brackets a query, and the naive baseline.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::{CausalDiagram, GraphError, VarId};
use crate::ncm::{Evaluation, MonteCarloConfig, Ncm, NcmError, Query, MAX_QUERY_BITS};
use crate::nn::{AdamW, NnError, OptimConfig, DEFAULT_HIDDEN};
use crate::scm::{tv_from_table, Dataset, ScmError};
use crate::util;

/// Smallest probability inside any logarithm of the training objectives.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data does not fit the diagram: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Ncm(#[from] NcmError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Ncm(NcmError::Autodiff(e))
    }
}

/// Training settings. Every field has a default and can be overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Noise draws per training step.
    pub mc_samples: usize,
    /// Noise draws when reporting query values.
    pub eval_samples: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub optim: OptimConfig,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Epoch interval between trace records.
    pub log_every: usize,
    /// Rows per step when the data holds more distinct rows than this.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            mc_samples: 20_000,
            eval_samples: 20_000,
            lambda_start: 1.0,
            lambda_end: 1e-3,
            optim: OptimConfig::default(),
            patience: 100,
            min_delta: 1e-6,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            log_every: 10,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.mc_samples == 0 || self.eval_samples == 0 {
            return Err(TrainError::Config("Monte Carlo sample counts must be at least 1".into()));
        }
        if !(self.lambda_end > 0.0 && self.lambda_end <= self.lambda_start) {
            return Err(TrainError::Config(format!(
                "need 0 < lambda_end <= lambda_start, got {} and {}",
                self.lambda_end, self.lambda_start
            )));
        }
        if self.log_every == 0 || self.batch_size == Some(0) {
            return Err(TrainError::Config("log interval and batch size must be positive".into()));
        }
        Ok(())
    }

    fn eval_mc(&self) -> MonteCarloConfig {
        MonteCarloConfig::new(self.eval_samples, util::child_seed(self.seed, "eval"))
    }
}

/// Which end of the query's range a model is pushed toward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

/// Geometric interpolation from `start` at epoch 0 to `end` at the last epoch.
pub fn lambda_schedule(epoch: usize, total: usize, start: f64, end: f64) -> f64 {
    if total <= 1 {
        return start;
    }
    start * (end / start).powf(epoch as f64 / (total - 1) as f64)
}

/// Distinct data rows (as packed assignments) with their empirical weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: Vec<u64>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn from_packed(packed: &[u64]) -> Result<Batch, TrainError> {
        if packed.is_empty() {
            return Err(TrainError::Data("empty dataset".into()));
        }
        let mut sorted = packed.to_vec();
        sorted.sort_unstable();
        let mut rows = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for a in sorted {
            if rows.last() == Some(&a) {
                *weights.last_mut().expect("paired with rows") += 1.0;
            } else {
                rows.push(a);
                weights.push(1.0);
            }
        }
        let n = packed.len() as f64;
        weights.iter_mut().for_each(|w| *w /= n);
        Ok(Batch { rows, weights })
    }

    pub fn from_dataset(ncm: &Ncm, d: &Dataset) -> Result<Batch, TrainError> {
        Batch::from_packed(&ncm.pack_rows(d)?)
    }
}

/// Assignment sets whose masses make up a query's penalty terms.
///
/// `toward_max` sums to an affine image of the query value in `[0, 1]`,
/// `toward_min` to its complement; both carry the same log offset.
#[derive(Clone, Debug)]
pub struct PenaltySets {
    toward_max: Vec<(Vec<u64>, Vec<(VarId, u8)>)>,
    toward_min: Vec<(Vec<u64>, Vec<(VarId, u8)>)>,
    log_offset: f64,
}

impl PenaltySets {
    pub fn new(ncm: &Ncm, q: &Query) -> Result<PenaltySets, TrainError> {
        q.validate(ncm.num_vars())?;
        if ncm.total_bits() > MAX_QUERY_BITS {
            return Err(TrainError::Config(format!(
                "query penalties need at most {MAX_QUERY_BITS} assignment bits, model has {}",
                ncm.total_bits()
            )));
        }
        let split = |y: &[(VarId, u8)], x: &[(VarId, u8)]| -> Result<(Vec<u64>, Vec<u64>), TrainError> {
            let all = ncm.assignments(x)?;
            Ok(all.into_iter().partition(|&a| ncm.consistent(a, y)))
        };
        Ok(match q {
            Query::Ate { treatment, outcome } => {
                let (x1, x0) = (vec![(*treatment, 1)], vec![(*treatment, 0)]);
                let (y1_x1, y0_x1) = split(&[(*outcome, 1)], &x1)?;
                let (y1_x0, y0_x0) = split(&[(*outcome, 1)], &x0)?;
                PenaltySets {
                    toward_max: vec![(y1_x1, x1.clone()), (y0_x0, x0.clone())],
                    toward_min: vec![(y1_x0, x0), (y0_x1, x1)],
                    log_offset: -std::f64::consts::LN_2,
                }
            }
            Query::Interventional { outcome, intervention } => {
                let (hit, miss) = split(outcome, intervention)?;
                PenaltySets {
                    toward_max: vec![(hit, intervention.clone())],
                    toward_min: vec![(miss, intervention.clone())],
                    log_offset: 0.0,
                }
            }
        })
    }

    /// Assignment sets to evaluate after the data rows, in the order the loss reads them.
    pub fn sets(&self) -> impl Iterator<Item = &Vec<u64>> {
        self.toward_max.iter().chain(&self.toward_min).map(|(s, _)| s)
    }

    fn log_mass<'t>(&self, ncm: &Ncm, ev: &Evaluation<'t>, dir: Direction) -> Result<Var<'t>, TrainError> {
        let parts = match dir {
            Direction::Max => &self.toward_max,
            Direction::Min => &self.toward_min,
        };
        let terms = parts
            .iter()
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, x)| ev.log_total(ncm, s, x))
            .collect::<Result<Vec<_>, _>>()?;
        let tape = ev.tape();
        if terms.is_empty() {
            return Ok(tape.constant(crate::autodiff::Tensor::scalar(LOG_FLOOR.ln())));
        }
        let joined = tape.concat(&terms)?;
        Ok(joined.log_sum_exp(0)?.add_scalar(self.log_offset)?.clamp_min(LOG_FLOOR.ln())?)
    }
}

/// `-Σ_k w_k log P̂(v_k)` over the batch's distinct rows.
pub fn nll_loss<'t>(ncm: &Ncm, ev: &Evaluation<'t>, batch: &Batch) -> Result<Var<'t>, TrainError> {
    let lp = ev.log_probs(ncm, &batch.rows, &[])?.clamp_min(LOG_FLOOR.ln())?;
    let w = ev.tape().constant(crate::autodiff::Tensor::vector(batch.weights.clone()));
    Ok(lp.mul(w)?.sum()?.neg()?)
}

/// Likelihood loss minus `λ` times the log of the query's (rescaled) value
/// for `Max`, or of its complement for `Min`.
pub fn id_loss<'t>(
    ncm: &Ncm,
    ev: &Evaluation<'t>,
    batch: &Batch,
    penalty: &PenaltySets,
    lambda: f64,
    dir: Direction,
) -> Result<Var<'t>, TrainError> {
    let nll = nll_loss(ncm, ev, batch)?;
    if lambda == 0.0 {
        return Ok(nll);
    }
    Ok(nll.sub(penalty.log_mass(ncm, ev, dir)?.scale(lambda)?)?)
}

struct Stepper {
    opt: AdamW,
    noise_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    mc_samples: usize,
    batch_size: Option<usize>,
}

impl Stepper {
    fn new(ncm: &Ncm, cfg: &TrainConfig, label: &str) -> Stepper {
        Stepper {
            opt: AdamW::new(cfg.optim.clone(), &ncm.param_sizes()),
            noise_rng: util::rng(util::child_seed(cfg.seed, &format!("noise/{label}"))),
            batch_rng: util::rng(util::child_seed(cfg.seed, &format!("batch/{label}"))),
            mc_samples: cfg.mc_samples,
            batch_size: cfg.batch_size,
        }
    }

    fn minibatch(&mut self, full: &Batch) -> Batch {
        match self.batch_size {
            Some(b) if full.rows.len() > b => {
                let idx = sample_indices(&mut self.batch_rng, full.rows.len(), b);
                let rows: Vec<u64> = idx.iter().map(|i| full.rows[i]).collect();
                let total: f64 = idx.iter().map(|i| full.weights[i]).sum();
                let weights = idx.iter().map(|i| full.weights[i] / total).collect();
                Batch { rows, weights }
            }
            _ => full.clone(),
        }
    }

    /// One optimizer step; returns the likelihood part of the loss.
    fn step(
        &mut self,
        ncm: &mut Ncm,
        full: &Batch,
        penalty: Option<(&PenaltySets, f64, Direction)>,
        epoch: usize,
    ) -> Result<f64, TrainError> {
        let batch = self.minibatch(full);
        let noise = ncm.draw_noise(self.mc_samples, &mut self.noise_rng);
        let tape = Tape::new();
        let bound = ncm.bind(&tape);
        let diverged = |e: &dyn std::fmt::Display| TrainError::Diverged { epoch, detail: e.to_string() };
        let (loss, nll) = {
            let mut sets: Vec<&[u64]> = vec![&batch.rows];
            if let Some((p, _, _)) = penalty {
                sets.extend(p.sets().map(|s| s.as_slice()));
            }
            let ev = ncm.evaluate(&tape, &bound, &noise, &sets).map_err(|e| diverged(&e))?;
            let nll = nll_loss(ncm, &ev, &batch).map_err(|e| diverged(&e))?;
            let loss = match penalty {
                Some((p, lambda, dir)) if lambda != 0.0 => {
                    nll.sub(p.log_mass(ncm, &ev, dir)?.scale(lambda)?).map_err(|e| diverged(&e))?
                }
                _ => nll,
            };
            (loss, nll.item())
        };
        if !loss.item().is_finite() {
            return Err(diverged(&format!("loss {}", loss.item())));
        }
        let grads = bound.gradients(&tape.backward(loss).map_err(|e| diverged(&e))?);
        self.opt.step(&mut ncm.params_mut(), &grads)?;
        Ok(nll)
    }
}

/// One logged epoch of a min/max run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub epoch: usize,
    pub ate_min: f64,
    pub ate_max: f64,
    pub gap: f64,
    pub nll_min: f64,
    pub nll_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GapTrace {
    pub records: Vec<GapRecord>,
}

impl GapTrace {
    pub fn push(&mut self, epoch: usize, ate_min: f64, ate_max: f64, nll_min: f64, nll_max: f64) {
        self.records.push(GapRecord { epoch, ate_min, ate_max, gap: ate_max - ate_min, nll_min, nll_max });
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.gap)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "ate_min", "ate_max", "gap", "nll_min", "nll_max"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record(&[
                r.epoch.to_string(),
                r.ate_min.to_string(),
                r.ate_max.to_string(),
                r.gap.to_string(),
                r.nll_min.to_string(),
                r.nll_max.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrainError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e))
}

/// The two trained models and the gap trace of a min/max run.
#[derive(Clone, Debug)]
pub struct MinMaxRun {
    pub min: Ncm,
    pub max: Ncm,
    pub trace: GapTrace,
}

fn check_columns(g: &CausalDiagram, d: &Dataset) -> Result<Vec<usize>, TrainError> {
    let dims = Ncm::dims_for(g, d).map_err(|e| TrainError::Data(e.to_string()))?;
    let used: usize = dims.iter().sum();
    if used != d.num_vars() {
        return Err(TrainError::Data(format!("{} columns but the diagram accounts for {used}", d.num_vars())));
    }
    Ok(dims)
}

fn fresh_model(g: &CausalDiagram, d: &Dataset, cfg: &TrainConfig, label: &str) -> Result<Ncm, TrainError> {
    let dims = check_columns(g, d)?;
    Ok(Ncm::with_dims(g, dims, &cfg.hidden, util::child_seed(cfg.seed, label))?)
}

/// Train a minimizing and a maximizing model of `q` on `data`, logging both
/// query values every `log_every` epochs and at the last epoch.
pub fn train_minmax(data: &Dataset, g: &CausalDiagram, q: &Query, cfg: &TrainConfig) -> Result<MinMaxRun, TrainError> {
    cfg.validate()?;
    let mut min = fresh_model(g, data, cfg, "init/min")?;
    let mut max = fresh_model(g, data, cfg, "init/max")?;
    let batch = Batch::from_dataset(&min, data)?;
    let penalty = PenaltySets::new(&min, q)?;
    let eval = cfg.eval_mc();
    let mut s_min = Stepper::new(&min, cfg, "min");
    let mut s_max = Stepper::new(&max, cfg, "max");
    let mut trace = GapTrace::default();
    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(epoch, cfg.epochs, cfg.lambda_start, cfg.lambda_end);
        let (r_min, r_max) = rayon::join(
            || s_min.step(&mut min, &batch, Some((&penalty, lambda, Direction::Min)), epoch),
            || s_max.step(&mut max, &batch, Some((&penalty, lambda, Direction::Max)), epoch),
        );
        let (nll_min, nll_max) = (r_min?, r_max?);
        if epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs {
            let (a, b) = rayon::join(|| min.query_value(q, &eval), || max.query_value(q, &eval));
            let (q_min, q_max) = (a?, b?);
            log::debug!("epoch {epoch}: query in [{q_min:.4}, {q_max:.4}], nll {nll_min:.4}/{nll_max:.4}");
            trace.push(epoch, q_min, q_max, nll_min, nll_max);
        }
    }
    Ok(MinMaxRun { min, max, trace })
}

/// Per-epoch likelihood history of a plain fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NllTrace {
    pub nll: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl NllTrace {
    pub fn best(&self) -> f64 {
        self.nll[self.best_epoch]
    }
}

fn fit_nll(mut ncm: Ncm, data: &Dataset, cfg: &TrainConfig) -> Result<(Ncm, NllTrace), TrainError> {
    cfg.validate()?;
    let batch = Batch::from_dataset(&ncm, data)?;
    let mut stepper = Stepper::new(&ncm, cfg, "nll");
    let mut trace = NllTrace::default();
    let mut best = (f64::INFINITY, ncm.clone());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let before = ncm.clone();
        let nll = stepper.step(&mut ncm, &batch, None, epoch)?;
        trace.nll.push(nll);
        // the loss was measured on the parameters before this step
        if nll < best.0 - cfg.min_delta {
            best = (nll, before);
            trace.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                trace.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.1, trace))
}

/// Likelihood-only training with early stopping; returns the parameters of
/// the best epoch.
pub fn train_nll(data: &Dataset, g: &CausalDiagram, cfg: &TrainConfig) -> Result<(Ncm, NllTrace), TrainError> {
    let ncm = fresh_model(g, data, cfg, "init/nll")?;
    fit_nll(ncm, data, cfg)
}

/// Likelihood training of a model over the complete unconfounded DAG on the
/// data's columns, in column order.
pub fn train_naive(data: &Dataset, cfg: &TrainConfig) -> Result<(Ncm, NllTrace), TrainError> {
    let g = CausalDiagram::complete_markovian(data.vars().to_vec())?;
    let ncm = Ncm::new(&g, &cfg.hidden, util::child_seed(cfg.seed, "init/naive"))?;
    fit_nll(ncm, data, cfg)
}

/// The naive model's effect estimate: `P(y=1|x=1) - P(y=1|x=0)` of its fitted table.
pub fn naive_effect(naive: &Ncm, treatment: &str, outcome: &str, mc: &MonteCarloConfig) -> Result<f64, TrainError> {
    let g = naive.graph();
    let (x, y) = (g.var(treatment)?, g.var(outcome)?);
    if naive.total_bits() <= MAX_QUERY_BITS {
        return Ok(tv_from_table(&naive.l1_table(mc)?, x, y)?);
    }
    let d = naive.sample(mc.samples, &[], mc.seed)?;
    empirical_tv(&d, treatment, outcome)
}

/// `P(y=1|x=1) - P(y=1|x=0)` from row frequencies.
pub fn empirical_tv(d: &Dataset, treatment: &str, outcome: &str) -> Result<f64, TrainError> {
    let (x, y) = (d.var_index(treatment)?, d.var_index(outcome)?);
    let mut counts = [[0u64; 2]; 2];
    for row in d.rows() {
        counts[row[x] as usize][row[y] as usize] += 1;
    }
    let p = |xv: usize| {
        let total = counts[xv][0] + counts[xv][1];
        if total == 0 {
            Err(TrainError::Data(format!("no rows with {treatment}={xv}")))
        } else {
            Ok(counts[xv][1] as f64 / total as f64)
        }
    };
    Ok(p(1)? - p(0)?)
}
