//! Canonical structural causal models over binary variables with exact valuation.

mod dataset;
pub mod examples;
mod highdim;
mod table;
mod widen;

pub use dataset::{Dataset, DatasetMeta};
pub use highdim::{decode_high_dim, expand_high_dim, HighDimMap};
pub use table::{bit, consistent, DistributionTable};
pub use widen::{widen_ate_tv_gap, WidenConfig};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::graph::{CausalDiagram, GraphError, VarId, VarSet};
use crate::util;

/// Upper bound on enumerated joint selector states.
pub const MAX_JOINT_STATES: u128 = 1 << 24;

/// Largest supported in-degree; a variable with `k` parents has `2^(2^k)` functions.
pub const MAX_PARENTS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ScmError {
    #[error("joint selector space has {0} states, above the enumeration limit of 2^24")]
    StateSpaceTooLarge(u128),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("positivity violation: P({0}) = 0")]
    Positivity(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("selector index {r} out of range for {m} functions")]
    IndexOutOfRange { r: u64, m: u64 },
    #[error("variable '{var}' has {k} parents; at most {MAX_PARENTS} are supported")]
    TooManyParents { var: String, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gap widening did not reach {threshold} after {steps} steps (gap {gap:.4})")]
    WideningFailed { steps: usize, gap: f64, threshold: f64 },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `h^(r)(pa)`: bit `pa_index` of `r`.
#[inline]
pub fn eval_function(r: u64, pa_index: usize) -> u8 {
    ((r >> pa_index) & 1) as u8
}

/// Position of a parent assignment in lexicographic order (first parent most significant).
pub fn parent_index(pa_values: &[u8]) -> usize {
    pa_values.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Number of boolean functions of `k` binary inputs.
pub fn num_functions(k: usize) -> u64 {
    1u64 << (1u64 << k)
}

/// How a variable's selector `R_V` is distributed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    /// Unconfounded: an independent table over `0..m_V`.
    Free(Vec<f64>),
    /// In exactly one confounded block: `R_V` is that block's coordinate.
    Block,
    /// In several blocks: one table per tuple of block coordinates
    /// (mixed radix, first block least significant).
    Mixed(Vec<Vec<f64>>),
}

/// Joint table over a confounded clique of selectors.
///
/// State `s` encodes the coordinates of `members` in mixed radix, first
/// member least significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlock {
    pub members: Vec<VarId>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScmRepr {
    graph: CausalDiagram,
    blocks: Vec<NoiseBlock>,
    selectors: Vec<Selector>,
}

/// A canonical SCM: every variable picks one of its `m_V` boolean functions via `R_V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmRepr", into = "ScmRepr")]
pub struct CanonicalScm {
    graph: CausalDiagram,
    parents: Vec<Vec<VarId>>,
    sizes: Vec<u64>,
    blocks: Vec<NoiseBlock>,
    /// Per variable: `(block, stride)` for each block containing it.
    memberships: Vec<Vec<(usize, usize)>>,
    selectors: Vec<Selector>,
}

impl From<CanonicalScm> for ScmRepr {
    fn from(m: CanonicalScm) -> Self {
        ScmRepr { graph: m.graph, blocks: m.blocks, selectors: m.selectors }
    }
}

impl TryFrom<ScmRepr> for CanonicalScm {
    type Error = ScmError;
    fn try_from(r: ScmRepr) -> Result<Self, ScmError> {
        CanonicalScm::from_parts(r.graph, r.blocks, r.selectors)
    }
}

/// One potential-outcome clause: the event `values` in the world where `intervention` holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualClause {
    pub intervention: Vec<(VarId, u8)>,
    pub values: Vec<(VarId, u8)>,
}

fn check_simplex(p: &[f64], what: &str) -> Result<(), ScmError> {
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(ScmError::InvalidTable(format!("{what}: negative or NaN entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(ScmError::InvalidTable(format!("{what}: sums to {s}")));
    }
    Ok(())
}

fn flat_dirichlet<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

impl CanonicalScm {
    /// Assemble a model from explicit tables, validating shapes and normalization.
    pub fn from_parts(graph: CausalDiagram, blocks: Vec<NoiseBlock>, selectors: Vec<Selector>) -> Result<Self, ScmError> {
        let n = graph.num_vars();
        let mut parents = Vec::with_capacity(n);
        let mut sizes = Vec::with_capacity(n);
        for v in 0..n {
            let pa = graph.parents(v).to_vec();
            if pa.len() > MAX_PARENTS {
                return Err(ScmError::TooManyParents { var: graph.name(v).to_string(), k: pa.len() });
            }
            sizes.push(num_functions(pa.len()));
            parents.push(pa);
        }
        if selectors.len() != n {
            return Err(ScmError::InvalidTable(format!("{} selectors for {n} variables", selectors.len())));
        }
        let mut memberships = vec![Vec::new(); n];
        for (b, block) in blocks.iter().enumerate() {
            let mut stride = 1usize;
            for &v in &block.members {
                if v >= n {
                    return Err(ScmError::InvalidTable(format!("block member {v} out of range")));
                }
                memberships[v].push((b, stride));
                stride *= sizes[v] as usize;
            }
            if block.probs.len() != stride {
                return Err(ScmError::InvalidTable(format!("block {b} has {} states, expected {stride}", block.probs.len())));
            }
            check_simplex(&block.probs, &format!("block {b}"))?;
        }
        for v in 0..n {
            let m = sizes[v] as usize;
            let name = graph.name(v);
            match (&selectors[v], memberships[v].len()) {
                (Selector::Free(p), 0) => {
                    if p.len() != m {
                        return Err(ScmError::InvalidTable(format!("selector of {name} has {} entries, expected {m}", p.len())));
                    }
                    check_simplex(p, name)?;
                }
                (Selector::Block, 1) => {}
                (Selector::Mixed(rows), b) if b >= 2 => {
                    if rows.len() != m.pow(b as u32) {
                        return Err(ScmError::InvalidTable(format!("selector of {name} has {} rows", rows.len())));
                    }
                    for row in rows {
                        if row.len() != m {
                            return Err(ScmError::InvalidTable(format!("selector row of {name} has {} entries", row.len())));
                        }
                        check_simplex(row, name)?;
                    }
                }
                _ => return Err(ScmError::InvalidTable(format!("selector kind of {name} does not match its block count"))),
            }
        }
        Ok(CanonicalScm { graph, parents, sizes, blocks, memberships, selectors })
    }

    /// Random canonical SCM: a flat-Dirichlet joint table per confounded clique,
    /// flat-Dirichlet selector tables elsewhere.
    pub fn random(graph: &CausalDiagram, seed: u64) -> Result<Self, ScmError> {
        let n = graph.num_vars();
        for v in 0..n {
            let k = graph.parents(v).len();
            if k > MAX_PARENTS {
                return Err(ScmError::TooManyParents { var: graph.name(v).to_string(), k });
            }
        }
        let sizes: Vec<usize> = (0..n).map(|v| num_functions(graph.parents(v).len()) as usize).collect();
        let mut rng = util::rng(seed);
        let cliques: Vec<VarSet> = graph.c2_components().into_iter().filter(|c| c.len() >= 2).collect();
        let mut count = vec![0usize; n];
        for c in &cliques {
            for v in c.iter() {
                count[v] += 1;
            }
        }
        let states: u128 = cliques.iter().map(|c| c.iter().map(|v| sizes[v] as u128).product::<u128>()).product::<u128>()
            * (0..n).filter(|&v| count[v] != 1).map(|v| sizes[v] as u128).product::<u128>();
        if states > MAX_JOINT_STATES {
            return Err(ScmError::StateSpaceTooLarge(states));
        }
        let blocks: Vec<NoiseBlock> = cliques
            .iter()
            .map(|c| {
                let k: usize = c.iter().map(|v| sizes[v]).product();
                NoiseBlock { members: c.to_vec(), probs: flat_dirichlet(&mut rng, k) }
            })
            .collect();
        let selectors = (0..n)
            .map(|v| match count[v] {
                0 => Selector::Free(flat_dirichlet(&mut rng, sizes[v])),
                1 => Selector::Block,
                b => Selector::Mixed((0..sizes[v].pow(b as u32)).map(|_| flat_dirichlet(&mut rng, sizes[v])).collect()),
            })
            .collect();
        CanonicalScm::from_parts(graph.clone(), blocks, selectors)
    }

    pub fn graph(&self) -> &CausalDiagram {
        &self.graph
    }

    pub fn num_vars(&self) -> usize {
        self.graph.num_vars()
    }

    pub fn parents(&self, v: VarId) -> &[VarId] {
        &self.parents[v]
    }

    /// `m_V`, the number of selectable functions for `v`.
    pub fn num_selectors(&self, v: VarId) -> u64 {
        self.sizes[v]
    }

    pub fn blocks(&self) -> &[NoiseBlock] {
        &self.blocks
    }

    pub fn selectors(&self) -> &[Selector] {
        &self.selectors
    }

    /// Identifier derived from the serialized model.
    pub fn hash(&self) -> String {
        util::short_hash(serde_json::to_string(self).expect("model serializes").as_bytes())
    }

    /// `h_v^(r)` at the given parent values.
    pub fn enumerate_function(&self, v: VarId, r: u64, pa_values: &[u8]) -> Result<u8, ScmError> {
        let m = self.sizes[v];
        if r >= m {
            return Err(ScmError::IndexOutOfRange { r, m });
        }
        if pa_values.len() != self.parents[v].len() {
            return Err(ScmError::InvalidArgument(format!(
                "{} parent values given for {} parents",
                pa_values.len(),
                self.parents[v].len()
            )));
        }
        Ok(eval_function(r, parent_index(pa_values)))
    }

    fn pa_index(&self, v: VarId, assignment: usize) -> usize {
        self.parents[v].iter().fold(0, |acc, &p| (acc << 1) | bit(assignment, p) as usize)
    }

    /// Number of joint states enumerated by the exact valuators.
    pub fn joint_state_count(&self) -> u128 {
        let blocks: u128 = self.blocks.iter().map(|b| b.probs.len() as u128).product();
        let own: u128 = (0..self.num_vars())
            .filter(|&v| !matches!(self.selectors[v], Selector::Block))
            .map(|v| self.sizes[v] as u128)
            .product();
        blocks * own
    }

    fn guard(&self) -> Result<(), ScmError> {
        let s = self.joint_state_count();
        if s > MAX_JOINT_STATES || self.num_vars() > 24 {
            return Err(ScmError::StateSpaceTooLarge(s));
        }
        Ok(())
    }

    /// Coordinate of `v` within a block state.
    fn coord(&self, v: VarId, stride: usize, state: usize) -> usize {
        (state / stride) % self.sizes[v] as usize
    }

    /// Row of a `Mixed` selector addressed by the block states.
    fn mixed_row(&self, v: VarId, block_states: &[usize]) -> usize {
        let m = self.sizes[v] as usize;
        let mut row = 0;
        let mut mul = 1;
        for &(b, stride) in &self.memberships[v] {
            row += self.coord(v, stride, block_states[b]) * mul;
            mul *= m;
        }
        row
    }

    /// Visit every block-state tuple with positive mass.
    fn for_each_block_state(&self, mut f: impl FnMut(&[usize], f64)) {
        let nb = self.blocks.len();
        let mut states = vec![0usize; nb];
        loop {
            let w: f64 = self.blocks.iter().zip(&states).map(|(b, &s)| b.probs[s]).product();
            if w > 0.0 {
                f(&states, w);
            }
            let mut i = 0;
            loop {
                if i == nb {
                    return;
                }
                states[i] += 1;
                if states[i] < self.blocks[i].probs.len() {
                    break;
                }
                states[i] = 0;
                i += 1;
            }
        }
    }

    /// `q[pa][val] = P(f_v(pa, R_v) = val)` given the block states.
    fn response(&self, v: VarId, block_states: &[usize], out: &mut Vec<[f64; 2]>) {
        let npa = 1usize << self.parents[v].len();
        out.clear();
        out.resize(npa, [0.0; 2]);
        let mut add = |r: usize, p: f64| {
            for (pa, q) in out.iter_mut().enumerate() {
                q[eval_function(r as u64, pa) as usize] += p;
            }
        };
        match &self.selectors[v] {
            Selector::Free(t) => t.iter().enumerate().filter(|(_, &p)| p > 0.0).for_each(|(r, &p)| add(r, p)),
            Selector::Block => {
                let (b, stride) = self.memberships[v][0];
                add(self.coord(v, stride, block_states[b]), 1.0)
            }
            Selector::Mixed(rows) => rows[self.mixed_row(v, block_states)]
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .for_each(|(r, &p)| add(r, p)),
        }
    }

    /// Exact observational distribution `P(V)`.
    pub fn valuate_l1(&self) -> Result<DistributionTable, ScmError> {
        self.valuate_l2(&[])
    }

    /// Exact interventional distribution `P(V | do(x))`.
    pub fn valuate_l2(&self, intervention: &[(VarId, u8)]) -> Result<DistributionTable, ScmError> {
        self.guard()?;
        let n = self.num_vars();
        for &(v, val) in intervention {
            if v >= n {
                return Err(ScmError::UnknownVariable(format!("#{v}")));
            }
            if val > 1 {
                return Err(ScmError::InvalidArgument(format!("value {val} is not binary")));
            }
        }
        let xmask: VarSet = intervention.iter().map(|&(v, _)| v).collect();
        let free: Vec<VarId> = (0..n).filter(|&v| !xmask.contains(v)).collect();
        let consistent_rows: Vec<usize> = (0..1usize << n).filter(|&a| consistent(a, intervention)).collect();
        let mut probs = vec![0.0; 1 << n];
        let mut q: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n];
        self.for_each_block_state(|states, w| {
            for &v in &free {
                self.response(v, states, &mut q[v]);
            }
            for &a in &consistent_rows {
                let mut p = w;
                for &v in &free {
                    p *= q[v][self.pa_index(v, a)][bit(a, v) as usize];
                    if p == 0.0 {
                        break;
                    }
                }
                probs[a] += p;
            }
        });
        Ok(DistributionTable { vars: self.graph.names().to_vec(), probs })
    }

    /// Named-variable convenience for [`valuate_l2`](Self::valuate_l2).
    pub fn valuate_l2_named(&self, intervention: &[(&str, u8)]) -> Result<DistributionTable, ScmError> {
        let x = self.resolve(intervention)?;
        self.valuate_l2(&x)
    }

    pub fn resolve(&self, event: &[(&str, u8)]) -> Result<Vec<(VarId, u8)>, ScmError> {
        event
            .iter()
            .map(|&(name, val)| {
                let v = self.graph.var(name).map_err(|_| ScmError::UnknownVariable(name.to_string()))?;
                Ok((v, val))
            })
            .collect()
    }

    /// Probability that every clause holds simultaneously, each in its own intervened world
    /// sharing the same exogenous state.
    pub fn valuate_l3(&self, clauses: &[CounterfactualClause]) -> Result<f64, ScmError> {
        self.guard()?;
        let n = self.num_vars();
        for c in clauses {
            for &(v, _) in c.intervention.iter().chain(&c.values) {
                if v >= n {
                    return Err(ScmError::UnknownVariable(format!("#{v}")));
                }
            }
        }
        let order = self.graph.topological_order();
        let own: Vec<VarId> = (0..n).filter(|&v| !matches!(self.selectors[v], Selector::Block)).collect();
        let mut total = 0.0;
        let mut r = vec![0usize; n];
        self.for_each_block_state(|states, w| {
            for v in 0..n {
                if let Selector::Block = self.selectors[v] {
                    let (b, stride) = self.memberships[v][0];
                    r[v] = self.coord(v, stride, states[b]);
                }
            }
            let tables: Vec<&[f64]> = own
                .iter()
                .map(|&v| match &self.selectors[v] {
                    Selector::Free(t) => t.as_slice(),
                    Selector::Mixed(rows) => rows[self.mixed_row(v, states)].as_slice(),
                    Selector::Block => unreachable!(),
                })
                .collect();
            let mut idx = vec![0usize; own.len()];
            'outer: loop {
                let mut p = w;
                for (i, &v) in own.iter().enumerate() {
                    p *= tables[i][idx[i]];
                    r[v] = idx[i];
                }
                if p > 0.0 && clauses.iter().all(|c| {
                    let world = self.solve(&order, &r, &c.intervention);
                    consistent(world, &c.values)
                }) {
                    total += p;
                }
                let mut i = 0;
                loop {
                    if i == own.len() {
                        break 'outer;
                    }
                    idx[i] += 1;
                    if idx[i] < tables[i].len() {
                        break;
                    }
                    idx[i] = 0;
                    i += 1;
                }
            }
        });
        Ok(total)
    }

    /// Deterministic solution for selector values `r` under an intervention.
    fn solve(&self, order: &[VarId], r: &[usize], intervention: &[(VarId, u8)]) -> usize {
        let mut a = 0usize;
        for &v in order {
            let val = match intervention.iter().find(|&&(x, _)| x == v) {
                Some(&(_, val)) => val,
                None => eval_function(r[v] as u64, self.pa_index(v, a)),
            };
            a |= (val as usize) << v;
        }
        a
    }

    /// `n` i.i.d. ancestral samples, optionally under an intervention.
    pub fn sample(&self, n: usize, seed: u64, intervention: &[(VarId, u8)]) -> Result<Dataset, ScmError> {
        if n == 0 {
            return Err(ScmError::InvalidArgument("sample size must be at least 1".into()));
        }
        let nv = self.num_vars();
        let mut rng = util::rng(seed);
        let weighted = |p: &[f64]| WeightedIndex::new(p).map_err(|e| ScmError::InvalidTable(e.to_string()));
        let block_dists = self.blocks.iter().map(|b| weighted(&b.probs)).collect::<Result<Vec<_>, _>>()?;
        let own_dists: Vec<Vec<WeightedIndex<f64>>> = self
            .selectors
            .iter()
            .map(|s| match s {
                Selector::Free(t) => Ok(vec![weighted(t)?]),
                Selector::Block => Ok(Vec::new()),
                Selector::Mixed(rows) => rows.iter().map(|t| weighted(t)).collect(),
            })
            .collect::<Result<_, ScmError>>()?;
        let order = self.graph.topological_order();
        let mut data = Vec::with_capacity(n * nv);
        let mut states = vec![0usize; self.blocks.len()];
        let mut r = vec![0usize; nv];
        for _ in 0..n {
            for (s, d) in states.iter_mut().zip(&block_dists) {
                *s = d.sample(&mut rng);
            }
            for v in 0..nv {
                r[v] = match &self.selectors[v] {
                    Selector::Free(_) => own_dists[v][0].sample(&mut rng),
                    Selector::Block => {
                        let (b, stride) = self.memberships[v][0];
                        self.coord(v, stride, states[b])
                    }
                    Selector::Mixed(_) => own_dists[v][self.mixed_row(v, &states)].sample(&mut rng),
                };
            }
            let a = self.solve(&order, &r, intervention);
            data.extend((0..nv).map(|v| bit(a, v)));
        }
        let meta = DatasetMeta {
            seed: Some(seed),
            model: Some(self.hash()),
            intervention: intervention.iter().map(|&(v, val)| (self.graph.name(v).to_string(), val)).collect(),
        };
        Dataset::new(self.graph.names().to_vec(), data, meta)
    }

    /// `P(y=1 | do(x=1)) - P(y=1 | do(x=0))`.
    pub fn ate(&self, x: VarId, y: VarId) -> Result<f64, ScmError> {
        let p1 = self.valuate_l2(&[(x, 1)])?.marginal(&[(y, 1)]);
        let p0 = self.valuate_l2(&[(x, 0)])?.marginal(&[(y, 1)]);
        Ok(p1 - p0)
    }

    /// `P(y=1 | x=1) - P(y=1 | x=0)` from the observational table.
    pub fn tv(&self, x: VarId, y: VarId) -> Result<f64, ScmError> {
        let l1 = self.valuate_l1()?;
        tv_from_table(&l1, x, y)
    }
}

/// Total variation `P(y=1|x=1) - P(y=1|x=0)` of a joint table.
pub fn tv_from_table(table: &DistributionTable, x: VarId, y: VarId) -> Result<f64, ScmError> {
    Ok(table.conditional(&[(y, 1)], &[(x, 1)])? - table.conditional(&[(y, 1)], &[(x, 0)])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn function_indexing() {
        // unary functions: 0 const0, 1 negation, 2 identity, 3 const1
        let table: Vec<[u8; 2]> = (0..4).map(|r| [eval_function(r, 0), eval_function(r, 1)]).collect();
        assert_eq!(table, vec![[0, 0], [1, 0], [0, 1], [1, 1]]);
        assert_eq!(eval_function(0, 0), 0);
        assert_eq!(eval_function(1, 0), 1);
        assert_eq!(parent_index(&[1, 0]), 2);
        let m = CanonicalScm::random(&fixtures::backdoor(), 1).unwrap();
        assert!(matches!(m.enumerate_function(0, 2, &[]), Err(ScmError::IndexOutOfRange { .. })));
        assert_eq!(m.enumerate_function(2, 1 << 2, &[1, 0]).unwrap(), 1);
    }

    #[test]
    fn table_sizes() {
        let bow = CanonicalScm::random(&fixtures::bow(), 3).unwrap();
        assert_eq!(bow.blocks().len(), 1);
        assert_eq!(bow.blocks()[0].probs.len(), 2 * 4);
        let chain = CanonicalScm::random(&CausalDiagram::parse("Z -> X\nX -> Y").unwrap(), 3).unwrap();
        let sizes: Vec<usize> = chain
            .selectors()
            .iter()
            .map(|s| match s {
                Selector::Free(t) => t.len(),
                _ => 0,
            })
            .collect();
        assert_eq!(sizes, vec![2, 4, 4]);
        assert_eq!(CanonicalScm::random(&fixtures::bow(), 3).unwrap(), bow);
        assert_ne!(CanonicalScm::random(&fixtures::bow(), 4).unwrap(), bow);
    }

    #[test]
    fn degenerate_models() {
        let g = CausalDiagram::parse("X -> Y").unwrap();
        let m = CanonicalScm::from_parts(
            g,
            vec![],
            vec![Selector::Free(vec![0.0, 1.0]), Selector::Free(vec![1.0, 0.0, 0.0, 0.0])],
        )
        .unwrap();
        let l1 = m.valuate_l1().unwrap();
        assert_eq!(l1.probs, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(m.tv(0, 1), Err(ScmError::Positivity(_))));
        assert_eq!(m.ate(1, 1).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_tables() {
        let g = CausalDiagram::parse("X -> Y").unwrap();
        let bad = CanonicalScm::from_parts(g, vec![], vec![Selector::Free(vec![0.5, 0.6]), Selector::Free(vec![0.25; 4])]);
        assert!(matches!(bad, Err(ScmError::InvalidTable(_))));
    }

    #[test]
    fn serde_round_trip() {
        let m = CanonicalScm::random(&fixtures::napkin(), 9).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: CanonicalScm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }

    #[test]
    fn clamp_everything_is_point_mass() {
        let m = CanonicalScm::random(&fixtures::frontdoor(), 5).unwrap();
        let t = m.valuate_l2(&[(0, 1), (1, 0), (2, 1)]).unwrap();
        assert_abs_diff_eq!(t.prob(0b101), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn counterfactual_basics() {
        let m = CanonicalScm::random(&fixtures::bow(), 2).unwrap();
        let l1 = m.valuate_l1().unwrap();
        let c = CounterfactualClause { intervention: vec![], values: vec![(0, 1), (1, 0)] };
        assert_abs_diff_eq!(m.valuate_l3(&[c]).unwrap(), l1.marginal(&[(0, 1), (1, 0)]), epsilon = 1e-12);
        let a = CounterfactualClause { intervention: vec![(0, 1)], values: vec![(1, 1)] };
        let b = CounterfactualClause { intervention: vec![(0, 1)], values: vec![(1, 0)] };
        assert_eq!(m.valuate_l3(&[a, b]).unwrap(), 0.0);
    }

    #[test]
    fn independent_outcome_has_zero_ate() {
        let g = CausalDiagram::parse("node X\nnode Y").unwrap();
        let m = CanonicalScm::random(&g, 1).unwrap();
        assert_abs_diff_eq!(m.ate(0, 1).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn m_graph_ate_equals_tv() {
        let g = fixtures::m_graph();
        let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
        for seed in 0..20 {
            let m = CanonicalScm::random(&g, seed).unwrap();
            assert_abs_diff_eq!(m.ate(x, y).unwrap(), m.tv(x, y).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn markovian_tv_equals_ate() {
        let g = CausalDiagram::parse("X -> Y\nW -> Y").unwrap();
        let m = CanonicalScm::random(&g, 11).unwrap();
        let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
        assert_abs_diff_eq!(m.ate(x, y).unwrap(), m.tv(x, y).unwrap(), epsilon = 1e-12);
    }

    /// Backdoor adjustment on the observational table.
    fn adjustment(l1: &DistributionTable, x: VarId, y: VarId, z: &[VarId], xv: u8) -> f64 {
        let mut total = 0.0;
        for zs in 0..1usize << z.len() {
            let ze: Vec<(VarId, u8)> = z.iter().enumerate().map(|(i, &v)| (v, ((zs >> i) & 1) as u8)).collect();
            let pz = l1.marginal(&ze);
            if pz == 0.0 {
                continue;
            }
            let mut given = ze.clone();
            given.push((x, xv));
            total += l1.conditional(&[(y, 1)], &given).unwrap() * pz;
        }
        total
    }

    #[test]
    fn markovian_l2_matches_adjustment() {
        let g = CausalDiagram::parse("Z -> X\nZ -> Y\nX -> Y\nW -> Z").unwrap();
        let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
        let nondesc: Vec<VarId> = g.all().difference(g.descendants(VarSet::singleton(x))).to_vec();
        for seed in 0..5 {
            let m = CanonicalScm::random(&g, seed).unwrap();
            let l1 = m.valuate_l1().unwrap();
            for xv in 0..2 {
                let exact = m.valuate_l2(&[(x, xv)]).unwrap().marginal(&[(y, 1)]);
                assert_abs_diff_eq!(exact, adjustment(&l1, x, y, &nondesc, xv), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn guard_rejects_large_models() {
        let mut text = String::new();
        for i in 0..4 {
            for j in 0..i {
                text.push_str(&format!("V{j} -> V{i}\n"));
            }
        }
        text.push_str("V0 <-> V3\nV1 <-> V3\nV2 <-> V3\nV0 <-> V1\n");
        let g = CausalDiagram::parse(&text).unwrap();
        assert!(matches!(CanonicalScm::random(&g, 0), Err(ScmError::StateSpaceTooLarge(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = CanonicalScm::random(&fixtures::iv(), 4).unwrap();
        let a = m.sample(200, 17, &[]).unwrap();
        let b = m.sample(200, 17, &[]).unwrap();
        assert_eq!(a, b);
        assert!(m.sample(0, 17, &[]).is_err());
        let d = m.sample(50, 1, &[(1, 1)]).unwrap();
        assert!(d.rows().all(|r| r[1] == 1));
    }

    #[test]
    fn sampling_converges_on_fixtures() {
        let n = 100_000;
        for (i, f) in fixtures::BENCHMARK.iter().enumerate() {
            let m = CanonicalScm::random(&f.diagram(), 100 + i as u64).unwrap();
            let l1 = m.valuate_l1().unwrap();
            let counts = m.sample(n, 7, &[]).unwrap().counts();
            for (a, &c) in counts.iter().enumerate() {
                let p = l1.prob(a);
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let freq = c as f64 / n as f64;
                assert!((freq - p).abs() <= 4.0 * sigma + 1e-12, "{}: cell {a} freq {freq} vs {p}", f.name);
            }
        }
    }

    fn any_fixture() -> impl Strategy<Value = CausalDiagram> {
        (0..fixtures::BENCHMARK.len()).prop_map(|i| fixtures::BENCHMARK[i].diagram())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn interventional_tables_normalize(g in any_fixture(), seed in any::<u64>(), xs in any::<u8>(), vals in any::<u8>()) {
            let m = CanonicalScm::random(&g, seed).unwrap();
            let x: Vec<(VarId, u8)> = (0..g.num_vars()).filter(|v| xs >> v & 1 == 1).map(|v| (v, (vals >> v) & 1)).collect();
            let t = m.valuate_l2(&x).unwrap();
            prop_assert!((t.total() - 1.0).abs() < 1e-12);
            for (a, &p) in t.probs.iter().enumerate() {
                if !consistent(a, &x) {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }

        #[test]
        fn empty_intervention_is_observational(g in any_fixture(), seed in any::<u64>()) {
            let m = CanonicalScm::random(&g, seed).unwrap();
            prop_assert_eq!(m.valuate_l2(&[]).unwrap(), m.valuate_l1().unwrap());
        }

        #[test]
        fn single_clause_matches_l1(g in any_fixture(), seed in any::<u64>(), a in any::<u8>()) {
            let m = CanonicalScm::random(&g, seed).unwrap();
            let l1 = m.valuate_l1().unwrap();
            let a = a as usize % (1 << g.num_vars());
            let event: Vec<(VarId, u8)> = (0..g.num_vars()).map(|v| (v, bit(a, v))).collect();
            let p3 = m.valuate_l3(&[CounterfactualClause { intervention: vec![], values: event }]).unwrap();
            prop_assert!((p3 - l1.prob(a)).abs() < 1e-12);
        }

        #[test]
        fn l3_marginal_of_intervened_world_matches_l2(g in any_fixture(), seed in any::<u64>(), xv in 0u8..2) {
            let m = CanonicalScm::random(&g, seed).unwrap();
            let x = 0;
            let y = g.num_vars() - 1;
            let p2 = m.valuate_l2(&[(x, xv)]).unwrap().marginal(&[(y, 1)]);
            let p3 = m.valuate_l3(&[CounterfactualClause { intervention: vec![(x, xv)], values: vec![(y, 1)] }]).unwrap();
            prop_assert!((p2 - p3).abs() < 1e-12);
        }
    }
}
