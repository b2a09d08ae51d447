//! Graph-constrained neural causal models.
//!
//! Each variable is produced by its own network fed with the variable's
//! parents and the uniform noise blocks of the confounded cliques it belongs
//! to. A variable may span several bits; bit `j` is produced by its own
//! network that also sees bits `0..j`.

mod query;

pub use query::Query;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
use crate::graph::{CausalDiagram, GraphError, VarId, VarSet};
use crate::nn::{BoundMlp, Mlp, NnError, DEFAULT_HIDDEN};
use crate::scm::{Dataset, DatasetMeta, DistributionTable, ScmError};
use crate::util;

/// Most bits an assignment may span (packed into a `u64`).
pub const MAX_BITS: usize = 64;

/// Most bits for which assignments can be enumerated at all.
pub const MAX_ENUM_BITS: usize = 24;

/// Most free bits a query is summed over; wider queries are sampled.
pub const MAX_QUERY_BITS: usize = 12;

/// Upper bound on `assignments x samples` held in memory at once.
const TERM_BUDGET: usize = 1 << 22;

#[derive(Debug, thiserror::Error)]
pub enum NcmError {
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("invalid query: {0}")]
    Query(String),
    #[error("{0} assignment bits exceed the limit of {1}")]
    TooManyBits(usize, usize),
    #[error("data does not match the model: {0}")]
    Data(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// Monte Carlo settings for probability estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
    /// Noise rows processed at once.
    pub batch_size: usize,
}

impl MonteCarloConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        MonteCarloConfig { samples: samples.max(1), seed, batch_size: 20_000 }
    }
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig::new(20_000, 0)
    }
}

/// Estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `m` draws of the full exogenous vector, row-major.
#[derive(Clone, Debug)]
pub struct Noise {
    pub m: usize,
    pub u: Vec<f64>,
}

/// Which values feed a variable's networks.
#[derive(Clone, Debug, PartialEq)]
struct NetInputs {
    parents: Vec<VarId>,
    blocks: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NcmRepr {
    graph: CausalDiagram,
    dims: Vec<usize>,
    hidden: Vec<usize>,
    nets: Vec<Vec<Mlp>>,
}

/// A neural causal model constrained by a causal diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NcmRepr", into = "NcmRepr")]
pub struct Ncm {
    graph: CausalDiagram,
    dims: Vec<usize>,
    hidden: Vec<usize>,
    blocks: Vec<VarSet>,
    block_dims: Vec<usize>,
    u_offsets: Vec<usize>,
    u_total: usize,
    bit_offsets: Vec<usize>,
    total_bits: usize,
    inputs: Vec<NetInputs>,
    nets: Vec<Vec<Mlp>>,
    order: Vec<VarId>,
}

impl From<Ncm> for NcmRepr {
    fn from(n: Ncm) -> Self {
        NcmRepr { graph: n.graph, dims: n.dims, hidden: n.hidden, nets: n.nets }
    }
}

impl TryFrom<NcmRepr> for Ncm {
    type Error = NcmError;
    fn try_from(r: NcmRepr) -> Result<Self, NcmError> {
        let mut n = Ncm::skeleton(&r.graph, r.dims, r.hidden)?;
        if r.nets.len() != n.nets.len() || r.nets.iter().zip(&n.dims).any(|(ns, &d)| ns.len() != d) {
            return Err(NcmError::Structure("network count does not match the variables".into()));
        }
        for (v, ns) in r.nets.iter().enumerate() {
            for (j, net) in ns.iter().enumerate() {
                if net.input_dim() != n.input_dim(v, j) {
                    return Err(NcmError::Structure(format!("network {v}/{j} has input width {}", net.input_dim())));
                }
            }
        }
        n.nets = r.nets;
        Ok(n)
    }
}

/// Parameters of every network bound to one tape.
pub struct BoundNcm<'t> {
    nets: Vec<Vec<BoundMlp<'t>>>,
}

impl BoundNcm<'_> {
    /// Gradients in the order of [`Ncm::params_mut`].
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.nets.iter().flatten().flat_map(|b| b.gradients(grads)).collect()
    }
}

struct Slot<'t> {
    /// `[log σ(z) ; log σ(-z)]` over contexts × samples.
    ls: Var<'t>,
    index: HashMap<u64, usize>,
    contexts: usize,
}

/// Per-network log-likelihood terms for one noise draw, on a tape.
pub struct Evaluation<'t> {
    tape: &'t Tape,
    m: usize,
    slots: Vec<Vec<Slot<'t>>>,
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

fn ln_sigmoid(z: f64) -> f64 {
    -((-z).max(0.0) + (-z.abs()).exp().ln_1p())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Ncm {
    /// Structure only; networks are zero.
    fn skeleton(graph: &CausalDiagram, dims: Vec<usize>, hidden: Vec<usize>) -> Result<Ncm, NcmError> {
        let n = graph.num_vars();
        if dims.len() != n || dims.contains(&0) {
            return Err(NcmError::Structure("every variable needs a positive width".into()));
        }
        let total_bits: usize = dims.iter().sum();
        if total_bits > MAX_BITS {
            return Err(NcmError::TooManyBits(total_bits, MAX_BITS));
        }
        let mut bit_offsets = Vec::with_capacity(n);
        let mut off = 0;
        for &d in &dims {
            bit_offsets.push(off);
            off += d;
        }
        let blocks = graph.c2_components();
        let block_dims: Vec<usize> = blocks.iter().map(|b| b.iter().map(|v| dims[v]).sum()).collect();
        let mut u_offsets = Vec::with_capacity(blocks.len());
        let mut u_total = 0;
        for &d in &block_dims {
            u_offsets.push(u_total);
            u_total += d;
        }
        let inputs: Vec<NetInputs> = (0..n)
            .map(|v| NetInputs {
                parents: graph.parents(v).to_vec(),
                blocks: (0..blocks.len()).filter(|&b| blocks[b].contains(v)).collect(),
            })
            .collect();
        let mut ncm = Ncm {
            graph: graph.clone(),
            dims,
            hidden,
            blocks,
            block_dims,
            u_offsets,
            u_total,
            bit_offsets,
            total_bits,
            inputs,
            nets: Vec::new(),
            order: graph.topological_order(),
        };
        ncm.nets = (0..n)
            .map(|v| (0..ncm.dims[v]).map(|j| Mlp::zeros(ncm.input_dim(v, j), &ncm.hidden)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        Ok(ncm)
    }

    /// One binary variable per node, randomly initialized networks.
    pub fn new(graph: &CausalDiagram, hidden: &[usize], seed: u64) -> Result<Ncm, NcmError> {
        Ncm::with_dims(graph, vec![1; graph.num_vars()], hidden, seed)
    }

    /// Default architecture with binary variables.
    pub fn with_defaults(graph: &CausalDiagram, seed: u64) -> Result<Ncm, NcmError> {
        Ncm::new(graph, &DEFAULT_HIDDEN, seed)
    }

    /// Variables of the given bit widths.
    pub fn with_dims(graph: &CausalDiagram, dims: Vec<usize>, hidden: &[usize], seed: u64) -> Result<Ncm, NcmError> {
        let mut ncm = Ncm::skeleton(graph, dims, hidden.to_vec())?;
        for v in 0..ncm.num_vars() {
            for j in 0..ncm.dims[v] {
                let s = util::child_seed(seed, &format!("net/{v}/{j}"));
                ncm.nets[v][j] = Mlp::new(ncm.input_dim(v, j), hidden, s)?;
            }
        }
        Ok(ncm)
    }

    pub fn graph(&self) -> &CausalDiagram {
        &self.graph
    }

    pub fn num_vars(&self) -> usize {
        self.graph.num_vars()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn is_binary(&self) -> bool {
        self.dims.iter().all(|&d| d == 1)
    }

    pub fn total_bits(&self) -> usize {
        self.total_bits
    }

    /// Exogenous blocks, one per confounded clique (singletons included).
    pub fn noise_blocks(&self) -> &[VarSet] {
        &self.blocks
    }

    pub fn noise_block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn nets(&self) -> &[Vec<Mlp>] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Vec<Mlp>] {
        &mut self.nets
    }

    pub fn evaluation_order(&self) -> &[VarId] {
        &self.order
    }

    /// Input width of the network producing bit `j` of `v`.
    pub fn input_dim(&self, v: VarId, j: usize) -> usize {
        let inp = &self.inputs[v];
        inp.parents.iter().map(|&p| self.dims[p]).sum::<usize>()
            + inp.blocks.iter().map(|&b| self.block_dims[b]).sum::<usize>()
            + j
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nets.iter_mut().flatten().flat_map(|m| m.params_mut()).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.nets.iter().flatten().flat_map(|m| m.params().into_iter().map(|t| t.len())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.nets.iter().flatten().all(|m| m.is_finite())
    }

    /// Identifier derived from the serialized parameters.
    pub fn hash(&self) -> String {
        util::short_hash(serde_json::to_string(self).expect("model serializes").as_bytes())
    }

    /// Diagram read back from the network wiring.
    pub fn induced_diagram(&self) -> CausalDiagram {
        let mut directed = Vec::new();
        for (v, inp) in self.inputs.iter().enumerate() {
            directed.extend(inp.parents.iter().map(|&p| (p, v)));
        }
        let mut bidirected = Vec::new();
        for a in 0..self.num_vars() {
            for b in a + 1..self.num_vars() {
                if self.inputs[a].blocks.iter().any(|x| self.inputs[b].blocks.contains(x)) {
                    bidirected.push((a, b));
                }
            }
        }
        CausalDiagram::new(self.graph.names().to_vec(), directed, bidirected).expect("wiring mirrors a valid diagram")
    }

    /// Bit position of bit `j` of `v` in a packed assignment.
    pub fn bit_position(&self, v: VarId, j: usize) -> usize {
        self.bit_offsets[v] + j
    }

    /// Dataset column names, in packed bit order.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total_bits);
        for v in 0..self.num_vars() {
            let name = self.graph.name(v);
            if self.dims[v] == 1 {
                out.push(name.to_string());
            } else {
                out.extend((0..self.dims[v]).map(|j| format!("{name}_{j}")));
            }
        }
        out
    }

    /// Widths of the graph's variables as laid out in a dataset: a column named
    /// after the variable, or columns `V_0, V_1, ...`.
    pub fn dims_for(graph: &CausalDiagram, d: &Dataset) -> Result<Vec<usize>, NcmError> {
        graph
            .names()
            .iter()
            .map(|name| {
                if d.var_index(name).is_ok() {
                    return Ok(1);
                }
                let k = (0..).take_while(|j| d.var_index(&format!("{name}_{j}")).is_ok()).count();
                if k == 0 {
                    Err(NcmError::Data(format!("no column for variable '{name}'")))
                } else {
                    Ok(k)
                }
            })
            .collect()
    }

    /// Packed assignment of every dataset row.
    pub fn pack_rows(&self, d: &Dataset) -> Result<Vec<u64>, NcmError> {
        let cols = self
            .column_names()
            .iter()
            .map(|c| d.var_index(c).map_err(|_| NcmError::Data(format!("missing column '{c}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if cols.len() != d.num_vars() {
            return Err(NcmError::Data(format!("{} columns for {} model bits", d.num_vars(), cols.len())));
        }
        Ok(d.rows().map(|r| cols.iter().enumerate().fold(0u64, |acc, (i, &c)| acc | (r[c] as u64) << i)).collect())
    }

    fn check_intervention(&self, x: &[(VarId, u8)]) -> Result<(), NcmError> {
        for &(v, b) in x {
            if v >= self.num_vars() || b > 1 {
                return Err(NcmError::Query(format!("bad intervention literal ({v}, {b})")));
            }
            if self.dims[v] != 1 {
                return Err(NcmError::Query(format!("cannot intervene on multi-bit variable {}", self.graph.name(v))));
            }
        }
        Ok(())
    }

    pub fn consistent(&self, a: u64, x: &[(VarId, u8)]) -> bool {
        x.iter().all(|&(v, b)| (a >> self.bit_offsets[v]) & 1 == b as u64)
    }

    /// All packed assignments consistent with `fixed` (single-bit literals).
    pub fn assignments(&self, fixed: &[(VarId, u8)]) -> Result<Vec<u64>, NcmError> {
        if self.total_bits > MAX_ENUM_BITS {
            return Err(NcmError::TooManyBits(self.total_bits, MAX_ENUM_BITS));
        }
        Ok((0..1u64 << self.total_bits).filter(|&a| self.consistent(a, fixed)).collect())
    }

    pub fn draw_noise<R: Rng>(&self, m: usize, rng: &mut R) -> Noise {
        Noise { m, u: (0..m * self.u_total).map(|_| rng.random::<f64>()).collect() }
    }

    fn context_key(&self, v: VarId, j: usize, a: u64) -> u64 {
        let mut key = 0u64;
        let mut i = 0;
        for &p in &self.inputs[v].parents {
            for b in 0..self.dims[p] {
                key |= ((a >> (self.bit_offsets[p] + b)) & 1) << i;
                i += 1;
            }
        }
        for b in 0..j {
            key |= ((a >> (self.bit_offsets[v] + b)) & 1) << i;
            i += 1;
        }
        key
    }

    fn parent_bits(&self, v: VarId) -> usize {
        self.inputs[v].parents.iter().map(|&p| self.dims[p]).sum()
    }

    /// Network inputs for every (context, noise row) pair, context-major.
    fn build_inputs(&self, v: VarId, j: usize, contexts: &[u64], noise: &Noise) -> Vec<f64> {
        let width = self.input_dim(v, j);
        let pbits = self.parent_bits(v);
        let mut x = Vec::with_capacity(contexts.len() * noise.m * width);
        for &key in contexts {
            for s in 0..noise.m {
                x.extend((0..pbits).map(|i| ((key >> i) & 1) as f64));
                let row = &noise.u[s * self.u_total..(s + 1) * self.u_total];
                for &b in &self.inputs[v].blocks {
                    x.extend_from_slice(&row[self.u_offsets[b]..self.u_offsets[b] + self.block_dims[b]]);
                }
                x.extend((pbits..pbits + j).map(|i| ((key >> i) & 1) as f64));
            }
        }
        x
    }

    fn distinct_contexts<'a>(&self, v: VarId, j: usize, sets: impl Iterator<Item = &'a u64>) -> Vec<u64> {
        let mut c: Vec<u64> = sets.map(|&a| self.context_key(v, j, a)).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNcm<'t> {
        BoundNcm { nets: self.nets.iter().map(|ns| ns.iter().map(|m| m.bind(tape)).collect()).collect() }
    }

    /// Network outputs on a tape for every context appearing in `sets`.
    pub fn evaluate<'t>(&self, tape: &'t Tape, bound: &BoundNcm<'t>, noise: &Noise, sets: &[&[u64]]) -> Result<Evaluation<'t>, NcmError> {
        let mut slots = Vec::with_capacity(self.num_vars());
        for v in 0..self.num_vars() {
            let mut per_bit = Vec::with_capacity(self.dims[v]);
            for j in 0..self.dims[v] {
                let contexts = self.distinct_contexts(v, j, sets.iter().flat_map(|s| s.iter()));
                let x = self.build_inputs(v, j, &contexts, noise);
                let rows = contexts.len() * noise.m;
                let z = bound.nets[v][j].forward(tape.constant(Tensor::matrix(rows, self.input_dim(v, j), x)?))?;
                let ls1 = z.log_sigmoid()?;
                let ls0 = z.neg()?.log_sigmoid()?;
                let ls = tape.concat(&[ls1, ls0])?;
                let index = contexts.iter().enumerate().map(|(i, &c)| (c, i)).collect();
                per_bit.push(Slot { ls, index, contexts: contexts.len() });
            }
            slots.push(per_bit);
        }
        Ok(Evaluation { tape, m: noise.m, slots })
    }

    /// `Σ_{V∉X} log σ̃(v)` per assignment and noise row, without a tape: `[A × m]`.
    fn plain_log_terms(&self, noise: &Noise, assignments: &[u64], x: &[(VarId, u8)]) -> Result<Vec<f64>, NcmError> {
        let m = noise.m;
        let mut out = vec![0.0; assignments.len() * m];
        for v in (0..self.num_vars()).filter(|v| !x.iter().any(|(w, _)| w == v)) {
            for j in 0..self.dims[v] {
                let contexts = self.distinct_contexts(v, j, assignments.iter());
                let index: HashMap<u64, usize> = contexts.iter().enumerate().map(|(i, &c)| (c, i)).collect();
                let z = self.nets[v][j].forward(&self.build_inputs(v, j, &contexts, noise), contexts.len() * m)?;
                let pos = self.bit_offsets[v] + j;
                for (ai, &a) in assignments.iter().enumerate() {
                    let base = index[&self.context_key(v, j, a)] * m;
                    let sign = if (a >> pos) & 1 == 1 { 1.0 } else { -1.0 };
                    for (o, &zv) in out[ai * m..(ai + 1) * m].iter_mut().zip(&z[base..base + m]) {
                        *o += ln_sigmoid(sign * zv);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Batched noise draws for `mc`, visiting each batch in order.
    fn for_each_batch(&self, mc: &MonteCarloConfig, mut f: impl FnMut(&Noise) -> Result<(), NcmError>) -> Result<(), NcmError> {
        let mut rng = util::rng(mc.seed);
        let mut left = mc.samples.max(1);
        while left > 0 {
            let b = left.min(mc.batch_size.max(1));
            f(&self.draw_noise(b, &mut rng))?;
            left -= b;
        }
        Ok(())
    }

    /// `P̂(v | do(x))` for each assignment, sharing one noise draw; exactly 0 where
    /// an assignment contradicts the intervention.
    pub fn estimate_probs(&self, assignments: &[u64], x: &[(VarId, u8)], mc: &MonteCarloConfig) -> Result<Vec<McEstimate>, NcmError> {
        self.check_intervention(x)?;
        let keep: Vec<u64> = assignments.iter().copied().filter(|&a| self.consistent(a, x)).collect();
        let mut sum = vec![0.0; keep.len()];
        let mut sum_sq = vec![0.0; keep.len()];
        if !keep.is_empty() {
            self.for_each_batch(mc, |noise| {
                let step = (TERM_BUDGET / noise.m).max(1);
                for (c, chunk) in keep.chunks(step).enumerate() {
                    let l = self.plain_log_terms(noise, chunk, x)?;
                    for (i, row) in l.chunks(noise.m).enumerate() {
                        for &t in row {
                            let p = t.exp();
                            sum[c * step + i] += p;
                            sum_sq[c * step + i] += p * p;
                        }
                    }
                }
                Ok(())
            })?;
        }
        let n = mc.samples.max(1) as f64;
        let mut it = sum.iter().zip(&sum_sq);
        Ok(assignments
            .iter()
            .map(|&a| {
                if !self.consistent(a, x) {
                    return McEstimate { value: 0.0, std_error: 0.0 };
                }
                let (&s, &s2) = it.next().expect("one estimate per kept assignment");
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0);
                McEstimate { value: mean, std_error: (var / n).sqrt() }
            })
            .collect())
    }

    pub fn estimate_prob(&self, a: u64, x: &[(VarId, u8)], mc: &MonteCarloConfig) -> Result<McEstimate, NcmError> {
        Ok(self.estimate_probs(&[a], x, mc)?[0])
    }

    /// `P̂(y | do(x))`: the sum over consistent assignments, one shared noise draw.
    /// A single-literal outcome with more than [`MAX_QUERY_BITS`] free bits is
    /// estimated by ancestral sampling instead.
    pub fn estimate_query(&self, y: &[(VarId, u8)], x: &[(VarId, u8)], mc: &MonteCarloConfig) -> Result<f64, NcmError> {
        self.check_intervention(x)?;
        self.check_intervention(y)?;
        if y.iter().any(|(v, _)| x.iter().any(|(w, _)| w == v)) {
            return Err(NcmError::Query("outcome and intervention overlap".into()));
        }
        let fixed: Vec<(VarId, u8)> = y.iter().chain(x).copied().collect();
        let free = self.total_bits - fixed.iter().map(|&(v, _)| self.dims[v]).sum::<usize>();
        if free > MAX_QUERY_BITS {
            if let [(v, b)] = y {
                return self.sampled_outcome(*v, *b, x, mc);
            }
        }
        let set = self.assignments(&fixed)?;
        let mut log_total = f64::NEG_INFINITY;
        self.for_each_batch(mc, |noise| {
            for chunk in set.chunks((TERM_BUDGET / noise.m).max(1)) {
                for t in self.plain_log_terms(noise, chunk, x)? {
                    log_total = log_add_exp(log_total, t);
                }
            }
            Ok(())
        })?;
        Ok((log_total - (mc.samples.max(1) as f64).ln()).exp())
    }

    /// Value of `q`, each term using the same noise seed.
    pub fn query_value(&self, q: &Query, mc: &MonteCarloConfig) -> Result<f64, NcmError> {
        q.validate(self.num_vars())?;
        let terms = q.terms().iter().map(|(y, x)| self.estimate_query(y, x, mc)).collect::<Result<Vec<_>, _>>()?;
        Ok(q.combine(&terms))
    }

    pub fn ate(&self, x: VarId, y: VarId, mc: &MonteCarloConfig) -> Result<f64, NcmError> {
        self.query_value(&Query::Ate { treatment: x, outcome: y }, mc)
    }

    /// Estimated observational table over binary variables.
    pub fn l1_table(&self, mc: &MonteCarloConfig) -> Result<DistributionTable, NcmError> {
        if !self.is_binary() {
            return Err(NcmError::Query("joint tables need single-bit variables".into()));
        }
        let all = self.assignments(&[])?;
        let probs = self.estimate_probs(&all, &[], mc)?.into_iter().map(|e| e.value).collect();
        Ok(DistributionTable { vars: self.graph.names().to_vec(), probs })
    }

    /// Ancestral pass over `n` rows; with `outcome` set, stops there and
    /// returns `P(outcome = value)` per row instead of sampling it.
    fn ancestral<R: Rng>(
        &self,
        n: usize,
        x: &[(VarId, u8)],
        rng: &mut R,
        outcome: Option<(VarId, u8)>,
    ) -> Result<(Vec<u64>, Vec<f64>), NcmError> {
        let noise = self.draw_noise(n, rng);
        let mut rows = vec![0u64; n];
        for &v in &self.order {
            if let Some(&(_, b)) = x.iter().find(|(w, _)| *w == v) {
                for r in rows.iter_mut() {
                    *r |= (b as u64) << self.bit_offsets[v];
                }
                continue;
            }
            for j in 0..self.dims[v] {
                let width = self.input_dim(v, j);
                let pbits = self.parent_bits(v);
                let mut inp = Vec::with_capacity(n * width);
                for (s, &a) in rows.iter().enumerate() {
                    let key = self.context_key(v, j, a);
                    inp.extend((0..pbits).map(|i| ((key >> i) & 1) as f64));
                    let row = &noise.u[s * self.u_total..(s + 1) * self.u_total];
                    for &b in &self.inputs[v].blocks {
                        inp.extend_from_slice(&row[self.u_offsets[b]..self.u_offsets[b] + self.block_dims[b]]);
                    }
                    inp.extend((pbits..pbits + j).map(|i| ((key >> i) & 1) as f64));
                }
                let z = self.nets[v][j].forward(&inp, n)?;
                if let Some((ov, ob)) = outcome {
                    if ov == v {
                        let sign = if ob == 1 { 1.0 } else { -1.0 };
                        return Ok((rows, z.iter().map(|&zv| ln_sigmoid(sign * zv).exp()).collect()));
                    }
                }
                let pos = self.bit_offsets[v] + j;
                for (r, &zv) in rows.iter_mut().zip(&z) {
                    let one = gumbel(rng) + ln_sigmoid(zv);
                    let zero = gumbel(rng) + ln_sigmoid(-zv);
                    if one >= zero {
                        *r |= 1 << pos;
                    }
                }
            }
        }
        Ok((rows, Vec::new()))
    }

    fn sampled_outcome(&self, y: VarId, b: u8, x: &[(VarId, u8)], mc: &MonteCarloConfig) -> Result<f64, NcmError> {
        let mut rng = util::rng(mc.seed);
        let mut total = 0.0;
        let mut left = mc.samples.max(1);
        while left > 0 {
            let k = left.min(mc.batch_size.max(1));
            let (_, p) = self.ancestral(k, x, &mut rng, Some((y, b)))?;
            total += p.iter().sum::<f64>();
            left -= k;
        }
        Ok(total / mc.samples.max(1) as f64)
    }

    /// `count` rows by Gumbel-max ancestral sampling, optionally under an intervention.
    pub fn sample(&self, count: usize, x: &[(VarId, u8)], seed: u64) -> Result<Dataset, NcmError> {
        if count == 0 {
            return Err(NcmError::Query("sample size must be at least 1".into()));
        }
        self.check_intervention(x)?;
        let mut rng = util::rng(seed);
        let mut data = Vec::with_capacity(count * self.total_bits);
        let mut left = count;
        while left > 0 {
            let k = left.min(65_536);
            let (rows, _) = self.ancestral(k, x, &mut rng, None)?;
            for a in rows {
                data.extend((0..self.total_bits).map(|i| ((a >> i) & 1) as u8));
            }
            left -= k;
        }
        let meta = DatasetMeta {
            seed: Some(seed),
            model: Some(self.hash()),
            intervention: x.iter().map(|&(v, b)| (self.graph.name(v).to_string(), b)).collect(),
        };
        Ok(Dataset::new(self.column_names(), data, meta)?)
    }
}

impl<'t> Evaluation<'t> {
    pub fn samples(&self) -> usize {
        self.m
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// `Σ_{V∉X} log σ̃(v)` as an `[A, m]` tape value.
    pub fn log_terms(&self, ncm: &Ncm, assignments: &[u64], x: &[(VarId, u8)]) -> Result<Var<'t>, NcmError> {
        if let Some(a) = assignments.iter().find(|&&a| !ncm.consistent(a, x)) {
            return Err(NcmError::Query(format!("assignment {a:#b} contradicts the intervention")));
        }
        let m = self.m;
        let mut acc: Option<Var<'t>> = None;
        for v in (0..ncm.num_vars()).filter(|v| !x.iter().any(|(w, _)| w == v)) {
            for (j, slot) in self.slots[v].iter().enumerate() {
                let pos = ncm.bit_offsets[v] + j;
                let mut idx = Vec::with_capacity(assignments.len() * m);
                for &a in assignments {
                    let c = *slot
                        .index
                        .get(&ncm.context_key(v, j, a))
                        .ok_or_else(|| NcmError::Query("assignment was not part of the evaluation".into()))?;
                    let base = if (a >> pos) & 1 == 1 { 0 } else { slot.contexts * m } + c * m;
                    idx.extend(base..base + m);
                }
                let g = slot.ls.gather(idx, vec![assignments.len(), m])?;
                acc = Some(match acc {
                    None => g,
                    Some(a) => a.add(g)?,
                });
            }
        }
        Ok(match acc {
            Some(a) => a,
            None => self.tape.constant(Tensor::zeros(vec![assignments.len(), m])),
        })
    }

    /// `log P̂(v | do(x))` per assignment, shape `[A]`.
    pub fn log_probs(&self, ncm: &Ncm, assignments: &[u64], x: &[(VarId, u8)]) -> Result<Var<'t>, NcmError> {
        let ln_m = (self.m as f64).ln();
        Ok(self.log_terms(ncm, assignments, x)?.log_sum_exp(1)?.add_scalar(-ln_m)?)
    }

    /// `log Σ_v P̂(v | do(x))` over the assignments, a scalar.
    pub fn log_total(&self, ncm: &Ncm, assignments: &[u64], x: &[(VarId, u8)]) -> Result<Var<'t>, NcmError> {
        let ln_m = (self.m as f64).ln();
        let n = assignments.len() * self.m;
        Ok(self.log_terms(ncm, assignments, x)?.reshape(vec![n])?.log_sum_exp(0)?.add_scalar(-ln_m)?.reshape(vec![])?)
    }
}
