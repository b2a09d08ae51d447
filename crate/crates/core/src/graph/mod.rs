//! Causal diagrams: directed edges for functional arguments and bidirected
//! edges for shared exogenous influence.
//!
//! Text format, one statement per line:
//!
//! ```text
//! # comment
//! node W          # optional explicit declaration
//! W -> X          # directed edge
//! W <-> Y         # bidirected edge
//! ```
//!
//! Variables are declared implicitly on first mention. Declaration order is the
//! tie-breaker for every deterministic ordering in the crate.

mod cliques;
pub mod fixtures;
mod varset;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use varset::{VarId, VarSet, MAX_VARS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate edge {edge}")]
    DuplicateEdge { line: usize, edge: String },
    #[error("line {line}: self-loop on {var}")]
    SelfLoop { line: usize, var: String },
    #[error("directed cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("too many variables (limit {MAX_VARS})")]
    TooManyVariables,
}

/// A causal diagram over binary endogenous variables.
///
/// Immutable after construction; the directed part is guaranteed acyclic.
#[derive(Clone, PartialEq, Eq)]
pub struct CausalDiagram {
    names: Vec<String>,
    index: HashMap<String, VarId>,
    directed: BTreeSet<(VarId, VarId)>,
    bidirected: BTreeSet<(VarId, VarId)>,
    parents: Vec<VarSet>,
    children: Vec<VarSet>,
    spouses: Vec<VarSet>,
}

impl fmt::Debug for CausalDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CausalDiagram({:?})", self.to_text())
    }
}

impl CausalDiagram {
    /// Build a diagram from names and edge lists given by index.
    pub fn new(
        names: Vec<String>,
        directed: impl IntoIterator<Item = (VarId, VarId)>,
        bidirected: impl IntoIterator<Item = (VarId, VarId)>,
    ) -> Result<Self, GraphError> {
        let mut b = Builder::default();
        for n in &names {
            b.declare(n);
        }
        for (a, c) in directed {
            let (a, c) = (names[a].clone(), names[c].clone());
            b.add_edge(0, &a, &c, false)?;
        }
        for (a, c) in bidirected {
            let (a, c) = (names[a].clone(), names[c].clone());
            b.add_edge(0, &a, &c, true)?;
        }
        b.finish()
    }

    /// Parse the line-oriented text format.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut b = Builder::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("node ") {
                let name = rest.trim();
                check_name(line_no, name)?;
                b.declare(name);
                continue;
            }
            let (lhs, rhs, bidirected) = if let Some(p) = line.find("<->") {
                (&line[..p], &line[p + 3..], true)
            } else if let Some(p) = line.find("->") {
                (&line[..p], &line[p + 2..], false)
            } else {
                return Err(GraphError::Syntax {
                    line: line_no,
                    message: format!("expected `A -> B`, `A <-> B` or `node A`, got {line:?}"),
                });
            };
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            check_name(line_no, lhs)?;
            check_name(line_no, rhs)?;
            b.add_edge(line_no, lhs, rhs, bidirected)?;
        }
        b.finish()
    }

    /// Serialize to the text format; `parse(to_text(g)) == g`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            out.push_str(&format!("node {n}\n"));
        }
        for &(a, b) in &self.directed {
            out.push_str(&format!("{} -> {}\n", self.names[a], self.names[b]));
        }
        for &(a, b) in &self.bidirected {
            out.push_str(&format!("{} <-> {}\n", self.names[a], self.names[b]));
        }
        out
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v]
    }

    pub fn all(&self) -> VarSet {
        VarSet::full(self.num_vars())
    }

    pub fn var(&self, name: &str) -> Result<VarId, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownVariable(name.to_string()))
    }

    pub fn var_set(&self, names: &[&str]) -> Result<VarSet, GraphError> {
        names.iter().map(|n| self.var(n)).collect()
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (VarId, VarId)> + '_ {
        self.directed.iter().copied()
    }

    /// Bidirected edges as `(a, b)` with `a < b`.
    pub fn bidirected_edges(&self) -> impl Iterator<Item = (VarId, VarId)> + '_ {
        self.bidirected.iter().copied()
    }

    pub fn has_directed(&self, from: VarId, to: VarId) -> bool {
        self.directed.contains(&(from, to))
    }

    pub fn has_bidirected(&self, a: VarId, b: VarId) -> bool {
        self.bidirected.contains(&(a.min(b), a.max(b)))
    }

    pub fn parents(&self, v: VarId) -> VarSet {
        self.parents[v]
    }

    pub fn children(&self, v: VarId) -> VarSet {
        self.children[v]
    }

    /// Variables sharing a bidirected edge with `v`.
    pub fn spouses(&self, v: VarId) -> VarSet {
        self.spouses[v]
    }

    pub fn is_markovian(&self) -> bool {
        self.bidirected.is_empty()
    }

    /// Topological order with ties broken by declaration order.
    pub fn topological_order(&self) -> Vec<VarId> {
        let n = self.num_vars();
        let mut indegree: Vec<usize> = (0..n).map(|v| self.parents[v].len()).collect();
        let mut ready: BTreeSet<VarId> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for c in self.children[v].iter() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        debug_assert_eq!(order.len(), n, "acyclicity is a construction invariant");
        order
    }

    /// Maximal cliques of the bidirected subgraph (C²-components); variables
    /// without bidirected edges appear as singletons. Each component is sorted,
    /// and components are ordered lexicographically by their member lists.
    pub fn c2_components(&self) -> Vec<VarSet> {
        let mut comps = cliques::maximal_cliques(&self.spouses);
        comps.sort_by_key(|c| c.to_vec());
        comps
    }

    /// Connected components of the bidirected subgraph, ordered by smallest member.
    pub fn c_components(&self) -> Vec<VarSet> {
        self.c_components_within(self.all())
    }

    /// C-components of the subgraph induced by `within`.
    pub fn c_components_within(&self, within: VarSet) -> Vec<VarSet> {
        let mut seen = VarSet::EMPTY;
        let mut out = Vec::new();
        for start in within.iter() {
            if seen.contains(start) {
                continue;
            }
            let mut comp = VarSet::singleton(start);
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for s in self.spouses[v].intersection(within).iter() {
                    if !comp.contains(s) {
                        comp.insert(s);
                        stack.push(s);
                    }
                }
            }
            seen = seen.union(comp);
            out.push(comp);
        }
        out
    }

    /// Remove directed edges into members of `x` and bidirected edges incident to them.
    pub fn mutilate(&self, x: VarSet) -> Self {
        let directed: Vec<_> = self
            .directed
            .iter()
            .copied()
            .filter(|&(_, c)| !x.contains(c))
            .collect();
        let bidirected: Vec<_> = self
            .bidirected
            .iter()
            .copied()
            .filter(|&(a, b)| !x.contains(a) && !x.contains(b))
            .collect();
        CausalDiagram::new(self.names.clone(), directed, bidirected)
            .expect("edge removal preserves validity")
    }

    /// Mutilation by variable names.
    pub fn mutilate_named(&self, names: &[&str]) -> Result<Self, GraphError> {
        Ok(self.mutilate(self.var_set(names)?))
    }

    /// Ancestors of `vs` (inclusive).
    pub fn ancestors(&self, vs: VarSet) -> VarSet {
        self.ancestors_within(vs, self.all())
    }

    /// Ancestors of `vs` in the subgraph induced by `within` (inclusive).
    pub fn ancestors_within(&self, vs: VarSet, within: VarSet) -> VarSet {
        self.reach(vs.intersection(within), within, &self.parents)
    }

    /// Descendants of `vs` (inclusive).
    pub fn descendants(&self, vs: VarSet) -> VarSet {
        self.reach(vs, self.all(), &self.children)
    }

    fn reach(&self, start: VarSet, within: VarSet, adj: &[VarSet]) -> VarSet {
        let mut out = start;
        let mut stack = start.to_vec();
        while let Some(v) = stack.pop() {
            for u in adj[v].intersection(within).iter() {
                if !out.contains(u) {
                    out.insert(u);
                    stack.push(u);
                }
            }
        }
        out
    }

    /// Complete Markovian DAG over the same variables in declaration order:
    /// every variable has all earlier variables as parents, no bidirected edges.
    pub fn complete_markovian(names: Vec<String>) -> Result<Self, GraphError> {
        let n = names.len();
        let directed: Vec<_> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        CausalDiagram::new(names, directed, [])
    }

    /// Stable hex digest of the diagram text.
    pub fn digest(&self) -> String {
        crate::util::short_hash(self.to_text().as_bytes())
    }
}

impl Serialize for CausalDiagram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for CausalDiagram {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        CausalDiagram::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn check_name(line: usize, name: &str) -> Result<(), GraphError> {
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(GraphError::Syntax {
            line,
            message: format!("invalid variable name {name:?}"),
        })
    }
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    index: HashMap<String, VarId>,
    directed: BTreeSet<(VarId, VarId)>,
    bidirected: BTreeSet<(VarId, VarId)>,
    overflow: bool,
}

impl Builder {
    fn declare(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self.names.len();
        if v >= MAX_VARS {
            self.overflow = true;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), v);
        v
    }

    fn add_edge(&mut self, line: usize, a: &str, b: &str, bidirected: bool) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop { line, var: a.to_string() });
        }
        let (ia, ib) = (self.declare(a), self.declare(b));
        let fresh = if bidirected {
            self.bidirected.insert((ia.min(ib), ia.max(ib)))
        } else {
            self.directed.insert((ia, ib))
        };
        if !fresh {
            let arrow = if bidirected { "<->" } else { "->" };
            return Err(GraphError::DuplicateEdge {
                line,
                edge: format!("{a} {arrow} {b}"),
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<CausalDiagram, GraphError> {
        if self.overflow {
            return Err(GraphError::TooManyVariables);
        }
        let n = self.names.len();
        let mut parents = vec![VarSet::EMPTY; n];
        let mut children = vec![VarSet::EMPTY; n];
        let mut spouses = vec![VarSet::EMPTY; n];
        for &(a, b) in &self.directed {
            parents[b].insert(a);
            children[a].insert(b);
        }
        for &(a, b) in &self.bidirected {
            spouses[a].insert(b);
            spouses[b].insert(a);
        }
        if let Some(cycle) = find_cycle(&children) {
            return Err(GraphError::Cycle(
                cycle.into_iter().map(|v| self.names[v].clone()).collect(),
            ));
        }
        Ok(CausalDiagram {
            names: self.names,
            index: self.index,
            directed: self.directed,
            bidirected: self.bidirected,
            parents,
            children,
            spouses,
        })
    }
}

/// Returns one directed cycle (first vertex repeated at the end), if any.
fn find_cycle(children: &[VarSet]) -> Option<Vec<VarId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let n = children.len();
    let mut mark = vec![Mark::White; n];
    let mut path: Vec<VarId> = Vec::new();

    fn visit(
        v: VarId,
        children: &[VarSet],
        mark: &mut [Mark],
        path: &mut Vec<VarId>,
    ) -> Option<Vec<VarId>> {
        mark[v] = Mark::Grey;
        path.push(v);
        for c in children[v].iter() {
            match mark[c] {
                Mark::Grey => {
                    let start = path.iter().position(|&p| p == c).unwrap();
                    let mut cycle = path[start..].to_vec();
                    cycle.push(c);
                    return Some(cycle);
                }
                Mark::White => {
                    if let Some(cyc) = visit(c, children, mark, path) {
                        return Some(cyc);
                    }
                }
                Mark::Black => {}
            }
        }
        path.pop();
        mark[v] = Mark::Black;
        None
    }

    for v in 0..n {
        if mark[v] == Mark::White {
            if let Some(c) = visit(v, children, &mut mark, &mut path) {
                return Some(c);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(g: &CausalDiagram, names: &[&str]) -> VarSet {
        g.var_set(names).unwrap()
    }

    #[test]
    fn parse_minimal() {
        let g = CausalDiagram::parse("X -> Y").unwrap();
        assert_eq!(g.names(), &["X", "Y"]);
        assert_eq!(g.directed_edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(g.bidirected_edges().count(), 0);
    }

    #[test]
    fn parse_bow_with_comments() {
        let g = CausalDiagram::parse("# diet and blood pressure\nD -> B\nD <-> B  # confounded\n\n").unwrap();
        assert_eq!(g.names(), &["D", "B"]);
        assert!(g.has_directed(0, 1));
        assert!(g.has_bidirected(1, 0));
    }

    #[test]
    fn parse_rejects_cycle() {
        let err = CausalDiagram::parse("X -> Y\nY -> X").unwrap_err();
        match err {
            GraphError::Cycle(c) => {
                assert_eq!(c.first(), c.last());
                assert!(c.contains(&"X".to_string()) && c.contains(&"Y".to_string()));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(
            CausalDiagram::parse("X -> Y\nX => Y").unwrap_err(),
            GraphError::Syntax {
                line: 2,
                message: "expected `A -> B`, `A <-> B` or `node A`, got \"X => Y\"".into()
            }
        );
        assert!(matches!(
            CausalDiagram::parse("A <-> B\nB <-> A").unwrap_err(),
            GraphError::DuplicateEdge { line: 2, .. }
        ));
        assert!(matches!(
            CausalDiagram::parse("A -> A").unwrap_err(),
            GraphError::SelfLoop { line: 1, .. }
        ));
        assert!(matches!(
            CausalDiagram::parse("A -> 1B").unwrap_err(),
            GraphError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn explicit_nodes_keep_declaration_order() {
        let g = CausalDiagram::parse("node A\nnode B").unwrap();
        assert_eq!(g.topological_order(), vec![0, 1]);
        let g = CausalDiagram::parse("node Y\nX -> Y").unwrap();
        assert_eq!(g.names(), &["Y", "X"]);
        assert_eq!(g.topological_order(), vec![1, 0]);
    }

    #[test]
    fn topological_order_of_fixtures() {
        let bow = fixtures::bow();
        assert_eq!(bow.topological_order(), vec![bow.var("X").unwrap(), bow.var("Y").unwrap()]);
        let napkin = fixtures::napkin();
        let order: Vec<&str> = napkin.topological_order().iter().map(|&v| napkin.name(v)).collect();
        let pos = |n: &str| order.iter().position(|&o| o == n).unwrap();
        assert!(pos("W") < pos("R") && pos("R") < pos("X") && pos("X") < pos("Y"));
    }

    #[test]
    fn c2_components_examples() {
        let bow = fixtures::bow();
        assert_eq!(bow.c2_components(), vec![set(&bow, &["X", "Y"])]);
        let chain = CausalDiagram::parse("Z -> X\nX -> Y").unwrap();
        assert_eq!(chain.c2_components().len(), 3);
        let tri = CausalDiagram::parse("X <-> Y\nY <-> Z\nX <-> Z").unwrap();
        assert_eq!(tri.c2_components(), vec![tri.all()]);
        let path = CausalDiagram::parse("X <-> Y\nY <-> Z").unwrap();
        assert_eq!(
            path.c2_components(),
            vec![set(&path, &["X", "Y"]), set(&path, &["Y", "Z"])]
        );
        assert_eq!(path.c_components(), vec![path.all()]);
    }

    #[test]
    fn c_components_examples() {
        let bow = fixtures::bow();
        assert_eq!(bow.c_components(), vec![bow.all()]);
        let backdoor = fixtures::backdoor();
        assert_eq!(backdoor.c_components().len(), 3);
    }

    #[test]
    fn mutilation_examples() {
        let bow = fixtures::bow();
        let m = bow.mutilate(set(&bow, &["X"]));
        assert_eq!(m.directed_edges().count(), 1);
        assert_eq!(m.bidirected_edges().count(), 0);
        assert_eq!(bow.mutilate(VarSet::EMPTY), bow);
        let bd = fixtures::backdoor();
        let m = bd.mutilate_named(&["X"]).unwrap();
        let edges: Vec<_> = m.directed_edges().map(|(a, b)| (m.name(a).to_string(), m.name(b).to_string())).collect();
        assert_eq!(edges, vec![("Z".to_string(), "Y".to_string()), ("X".to_string(), "Y".to_string())]);
        assert!(bd.mutilate_named(&["Q"]).is_err());
    }

    #[test]
    fn reachability_examples() {
        let bd = fixtures::backdoor();
        assert_eq!(bd.descendants(set(&bd, &["X"])), set(&bd, &["X", "Y"]));
        assert_eq!(bd.ancestors(set(&bd, &["Z"])), set(&bd, &["Z"]));
        let chain = CausalDiagram::parse("Z -> X\nX -> Y").unwrap();
        assert_eq!(chain.ancestors(set(&chain, &["Y"])), chain.all());
    }

    #[test]
    fn text_round_trip() {
        for (_, g) in fixtures::all_named() {
            assert_eq!(CausalDiagram::parse(&g.to_text()).unwrap(), g);
        }
    }

    #[test]
    fn complete_markovian_has_all_forward_edges() {
        let g = CausalDiagram::complete_markovian(vec!["A".into(), "B".into(), "C".into()]).unwrap();
        assert_eq!(g.directed_edges().count(), 3);
        assert!(g.is_markovian());
    }
}
