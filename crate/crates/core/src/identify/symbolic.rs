//! Closed-form identification of `P(y | do(x))` by c-component
//! factorization (the recursive ID procedure).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{CausalDiagram, VarId, VarSet};
use crate::scm::{DistributionTable, ScmError};

/// An expression over observational probabilities. Variables are free unless
/// bound by an enclosing [`Expr::Sum`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    /// `P(vars | given)`; an empty `vars` stands for the constant 1.
    Prob { vars: VarSet, given: VarSet },
    Product(Vec<Expr>),
    Sum { over: VarSet, body: Box<Expr> },
    Fraction(Box<Expr>, Box<Expr>),
}

/// A closed-form estimand together with the variable names it refers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimand {
    pub names: Vec<String>,
    pub expr: Expr,
    /// Free variables the value does not depend on; held at 0 unless bound.
    pub arbitrary: VarSet,
}

/// Result of symbolic identification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Identification {
    Identified(Estimand),
    /// A hedge was found: two nested sets of variables forming a single
    /// c-component, the larger with the treatment inside.
    NotIdentifiable { hedge: Vec<String>, inner: Vec<String> },
}

impl Identification {
    pub fn is_identified(&self) -> bool {
        matches!(self, Identification::Identified(_))
    }

    pub fn estimand(&self) -> Option<&Estimand> {
        match self {
            Identification::Identified(e) => Some(e),
            Identification::NotIdentifiable { .. } => None,
        }
    }
}

fn prob(vars: VarSet, given: VarSet) -> Expr {
    Expr::Prob { vars, given }
}

fn sum(over: VarSet, body: Expr) -> Expr {
    if over.is_empty() {
        return body;
    }
    match body {
        Expr::Prob { vars, given } if over.is_subset(vars) => prob(vars.difference(over), given),
        Expr::Sum { over: inner, body } if inner.intersection(over).is_empty() => sum(over.union(inner), *body),
        body => Expr::Sum { over, body: Box::new(body) },
    }
}

fn product(parts: Vec<Expr>) -> Expr {
    let mut flat = Vec::new();
    for p in parts {
        match p {
            Expr::Product(inner) => flat.extend(inner),
            Expr::Prob { vars, .. } if vars.is_empty() => {}
            p => flat.push(p),
        }
    }
    match flat.len() {
        0 => prob(VarSet::EMPTY, VarSet::EMPTY),
        1 => flat.pop().expect("one factor"),
        _ => Expr::Product(flat),
    }
}

fn fraction(num: Expr, den: Expr) -> Expr {
    match (&num, &den) {
        (Expr::Prob { vars: a, given: ga }, Expr::Prob { vars: b, given: gb }) if ga == gb && b.is_subset(*a) => {
            prob(a.difference(*b), ga.union(*b))
        }
        (_, Expr::Prob { vars, .. }) if vars.is_empty() => num,
        _ => Expr::Fraction(Box::new(num), Box::new(den)),
    }
}

/// A distribution over `scope`, possibly with other variables held fixed.
#[derive(Clone, Debug)]
struct Dist {
    scope: VarSet,
    expr: Expr,
}

impl Dist {
    fn marginal(&self, keep: VarSet) -> Expr {
        sum(self.scope.difference(keep), self.expr.clone())
    }

    fn conditional(&self, target: VarSet, given: VarSet) -> Expr {
        let given = given.intersection(self.scope);
        fraction(self.marginal(target.union(given)), self.marginal(given))
    }
}

struct Hedge {
    outer: VarSet,
    inner: VarSet,
}

struct Identifier<'g> {
    g: &'g CausalDiagram,
    order: Vec<VarId>,
    arbitrary: std::cell::Cell<VarSet>,
}

impl Identifier<'_> {
    /// Members of `set` before `v` in the topological order.
    fn predecessors(&self, v: VarId, set: VarSet) -> VarSet {
        let mut out = VarSet::EMPTY;
        for &w in &self.order {
            if w == v {
                break;
            }
            if set.contains(w) {
                out.insert(w);
            }
        }
        out
    }

    /// `Π_{V_i ∈ s} P(v_i | v_π^(i-1))` over `p`, predecessors taken within `scope`.
    fn factorize(&self, s: VarSet, p: &Dist) -> Expr {
        let mut factors = Vec::new();
        for &v in self.order.iter().filter(|&&v| s.contains(v)) {
            factors.push(p.conditional(VarSet::singleton(v), self.predecessors(v, p.scope)));
        }
        product(factors)
    }

    fn id(&self, y: VarSet, x: VarSet, p: Dist) -> Result<Expr, Hedge> {
        let v = p.scope;
        if x.is_empty() {
            return Ok(p.marginal(y));
        }
        let an = self.g.ancestors_within(y, v);
        if an != v {
            let q = Dist { scope: an, expr: p.marginal(an) };
            return self.id(y, x.intersection(an), q);
        }
        let w = v.difference(x).difference(self.g.mutilate(x).ancestors_within(y, v));
        if !w.is_empty() {
            self.arbitrary.set(self.arbitrary.get().union(w));
            return self.id(y, x.union(w), p);
        }
        let rest = v.difference(x);
        let comps = self.g.c_components_within(rest);
        if comps.len() > 1 {
            let parts = comps
                .iter()
                .map(|&s| self.id(s, v.difference(s), p.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(sum(rest.difference(y), product(parts)));
        }
        let s = comps[0];
        let whole = self.g.c_components_within(v);
        if whole.len() == 1 {
            return Err(Hedge { outer: v, inner: s });
        }
        if whole.contains(&s) {
            return Ok(sum(s.difference(y), self.factorize(s, &p)));
        }
        let big = *whole.iter().find(|c| s.is_subset(**c)).expect("c-components of a subset nest");
        let q = Dist { scope: big, expr: self.factorize(big, &p) };
        self.id(y, x.intersection(big), q)
    }
}

/// Identify `P(y | do(x))` from `P(V)` in `g`.
pub fn symbolic_id(g: &CausalDiagram, y: VarSet, x: VarSet) -> Identification {
    let ident = Identifier { g, order: g.topological_order(), arbitrary: Default::default() };
    let p = Dist { scope: g.all(), expr: prob(g.all(), VarSet::EMPTY) };
    let names = |s: VarSet| s.iter().map(|v| g.name(v).to_string()).collect();
    match ident.id(y, x, p) {
        Ok(expr) => Identification::Identified(Estimand {
            names: g.names().to_vec(),
            expr,
            arbitrary: ident.arbitrary.get().difference(x).difference(y),
        }),
        Err(h) => Identification::NotIdentifiable { hedge: names(h.outer), inner: names(h.inner) },
    }
}

fn sorted_names(names: &[String], s: VarSet) -> Vec<&str> {
    let mut v: Vec<&str> = s.iter().map(|i| names[i].as_str()).collect();
    v.sort_unstable();
    v
}

impl Estimand {
    fn render(&self, e: &Expr) -> String {
        match e {
            Expr::Prob { vars, .. } if vars.is_empty() => "1".into(),
            Expr::Prob { vars, given } if given.is_empty() => format!("P({})", sorted_names(&self.names, *vars).join(",")),
            Expr::Prob { vars, given } => format!(
                "P({}|{})",
                sorted_names(&self.names, *vars).join(","),
                sorted_names(&self.names, *given).join(",")
            ),
            Expr::Product(parts) => {
                let mut s: Vec<String> = parts.iter().map(|p| self.render(p)).collect();
                s.sort();
                s.join(" * ")
            }
            Expr::Sum { over, body } => {
                format!("sum_{{{}}} ({})", sorted_names(&self.names, *over).join(","), self.render(body))
            }
            Expr::Fraction(a, b) => format!("[{}] / [{}]", self.render(a), self.render(b)),
        }
    }

    /// Value for the free variables bound by `values` (named by graph index).
    pub fn evaluate(&self, table: &DistributionTable, values: &[(VarId, u8)]) -> Result<f64, ScmError> {
        let columns = self
            .names
            .iter()
            .map(|n| table.var_index(n).ok_or_else(|| ScmError::UnknownVariable(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut env: Vec<Option<u8>> = (0..self.names.len()).map(|v| self.arbitrary.contains(v).then_some(0)).collect();
        for &(v, b) in values {
            if v >= env.len() || b > 1 {
                return Err(ScmError::InvalidArgument(format!("bad binding ({v}, {b})")));
            }
            env[v] = Some(b);
        }
        self.eval(&self.expr, table, &columns, &mut env)
    }

    fn event(&self, s: VarSet, columns: &[usize], env: &[Option<u8>]) -> Result<Vec<(VarId, u8)>, ScmError> {
        s.iter()
            .map(|v| {
                env[v]
                    .map(|b| (columns[v], b))
                    .ok_or_else(|| ScmError::InvalidArgument(format!("variable {} is unbound", self.names[v])))
            })
            .collect()
    }

    fn eval(&self, e: &Expr, table: &DistributionTable, columns: &[usize], env: &mut [Option<u8>]) -> Result<f64, ScmError> {
        match e {
            Expr::Prob { vars, given } => {
                let target = self.event(*vars, columns, env)?;
                if given.is_empty() {
                    return Ok(table.marginal(&target));
                }
                let cond = self.event(*given, columns, env)?;
                table.conditional(&target, &cond)
            }
            Expr::Product(parts) => {
                let mut acc = 1.0;
                for p in parts {
                    acc *= self.eval(p, table, columns, env)?;
                }
                Ok(acc)
            }
            Expr::Sum { over, body } => {
                let vars = over.to_vec();
                let saved: Vec<Option<u8>> = vars.iter().map(|&v| env[v]).collect();
                let mut total = 0.0;
                for bits in 0..1usize << vars.len() {
                    for (i, &v) in vars.iter().enumerate() {
                        env[v] = Some(((bits >> i) & 1) as u8);
                    }
                    total += self.eval(body, table, columns, env)?;
                }
                for (&v, s) in vars.iter().zip(saved) {
                    env[v] = s;
                }
                Ok(total)
            }
            Expr::Fraction(a, b) => {
                let den = self.eval(b, table, columns, env)?;
                if den <= 0.0 {
                    let bound: Vec<String> = env
                        .iter()
                        .enumerate()
                        .filter_map(|(v, b)| b.map(|b| format!("{}={b}", self.names[v])))
                        .collect();
                    return Err(ScmError::Positivity(format!("{} at {}", self.render(b), bound.join(", "))));
                }
                Ok(self.eval(a, table, columns, env)? / den)
            }
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&self.expr))
    }
}
