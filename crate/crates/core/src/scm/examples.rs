//! Worked diet / blood-pressure models, converted to canonical form.

use std::collections::HashMap;

use super::{num_functions, CanonicalScm, NoiseBlock, ScmError, Selector};
use crate::graph::{fixtures, CausalDiagram, VarId};

/// Canonical form of an SCM given by independent binary exogenous variables
/// and explicit mechanisms `f(v, u, parent_values)`.
///
/// The selector distribution must factor over the confounded cliques of
/// `graph`, and no variable may sit in more than one clique.
pub fn from_mechanisms(
    graph: &CausalDiagram,
    u_probs: &[f64],
    f: impl Fn(VarId, &[u8], &[u8]) -> u8,
) -> Result<CanonicalScm, ScmError> {
    let n = graph.num_vars();
    let parents: Vec<Vec<VarId>> = (0..n).map(|v| graph.parents(v).to_vec()).collect();
    let mut joint: HashMap<Vec<usize>, f64> = HashMap::new();
    let nu = u_probs.len();
    for us in 0..1usize << nu {
        let u: Vec<u8> = (0..nu).map(|i| ((us >> i) & 1) as u8).collect();
        let p: f64 = u.iter().zip(u_probs).map(|(&b, &q)| if b == 1 { q } else { 1.0 - q }).product();
        let r: Vec<usize> = (0..n)
            .map(|v| {
                let k = parents[v].len();
                (0..1usize << k)
                    .map(|pa| {
                        let vals: Vec<u8> = (0..k).map(|j| ((pa >> (k - 1 - j)) & 1) as u8).collect();
                        (f(v, &u, &vals) as usize) << pa
                    })
                    .sum()
            })
            .collect();
        *joint.entry(r).or_default() += p;
    }
    let cliques: Vec<Vec<VarId>> = graph.c2_components().into_iter().filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect();
    let mut in_clique = vec![false; n];
    for c in &cliques {
        for &v in c {
            if in_clique[v] {
                return Err(ScmError::InvalidArgument("variable in several confounded cliques".into()));
            }
            in_clique[v] = true;
        }
    }
    let size = |v: VarId| num_functions(parents[v].len()) as usize;
    let blocks: Vec<NoiseBlock> = cliques
        .iter()
        .map(|c| {
            let mut probs = vec![0.0; c.iter().map(|&v| size(v)).product()];
            for (r, p) in &joint {
                let mut s = 0;
                let mut stride = 1;
                for &v in c {
                    s += r[v] * stride;
                    stride *= size(v);
                }
                probs[s] += p;
            }
            NoiseBlock { members: c.clone(), probs }
        })
        .collect();
    let selectors: Vec<Selector> = (0..n)
        .map(|v| {
            if in_clique[v] {
                Selector::Block
            } else {
                let mut t = vec![0.0; size(v)];
                for (r, p) in &joint {
                    t[r[v]] += p;
                }
                Selector::Free(t)
            }
        })
        .collect();
    let m = CanonicalScm::from_parts(graph.clone(), blocks, selectors)?;
    let l3 = |r: &[usize]| -> f64 {
        let mut p = 1.0;
        for b in m.blocks() {
            let mut s = 0;
            let mut stride = 1;
            for &v in &b.members {
                s += r[v] * stride;
                stride *= size(v);
            }
            p *= b.probs[s];
        }
        for (v, sel) in m.selectors().iter().enumerate() {
            if let Selector::Free(t) = sel {
                p *= t[r[v]];
            }
        }
        p
    };
    for (r, &p) in &joint {
        if (l3(r) - p).abs() > 1e-12 {
            return Err(ScmError::InvalidArgument("exogenous noise does not factor over the confounded cliques".into()));
        }
    }
    Ok(m)
}

fn not(b: u8) -> u8 {
    1 - b
}

/// Diet `D` and blood pressure `B` sharing a confounder.
pub fn diet() -> CanonicalScm {
    // u = [U_D, U_DB, U_B1, U_B2]
    from_mechanisms(&fixtures::diet(), &[0.25; 4], |v, u, pa| match v {
        0 => not(u[0]) & not(u[1]),
        _ => ((not(pa[0]) ^ u[2]) | u[1]) ^ u[3],
    })
    .expect("diet model is canonical")
}

/// The diet model with sodium `S` mediating the effect of diet on blood pressure.
pub fn diet_sodium() -> CanonicalScm {
    // u = [U_D, U_DB, U_S, U_B]
    from_mechanisms(&fixtures::diet_sodium(), &[0.25; 4], |v, u, pa| match v {
        0 => not(u[0]) & not(u[1]),
        1 => not(pa[0]) ^ u[2],
        _ => (pa[0] | u[1]) ^ u[3],
    })
    .expect("diet-sodium model is canonical")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{tv_from_table, CounterfactualClause};
    use approx::assert_abs_diff_eq;

    #[test]
    fn diet_selector_masses() {
        let m = diet();
        let b = &m.blocks()[0];
        assert_eq!(b.members, vec![0, 1]);
        // state = r_D + 2 r_B; B's function index 2 is "B = D", 1 is "B = not D"
        let expect = [(0, 0, 16.0), (0, 2, 18.0), (0, 1, 30.0), (0, 3, 48.0), (1, 2, 54.0), (1, 1, 90.0)];
        let mut total = 0.0;
        for &(rd, rb, mass) in &expect {
            assert_abs_diff_eq!(b.probs[rd + 2 * rb], mass / 256.0, epsilon = 1e-15);
            total += mass / 256.0;
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn diet_three_layers() {
        let m = diet();
        let l1 = m.valuate_l1().unwrap();
        assert_abs_diff_eq!(l1.marginal(&[(0, 1), (1, 1)]), 54.0 / 256.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l1.conditional(&[(1, 1)], &[(0, 1)]).unwrap(), 0.375, epsilon = 1e-12);
        let l2 = m.valuate_l2(&[(0, 1)]).unwrap();
        assert_abs_diff_eq!(l2.marginal(&[(1, 1)]), 0.46875, epsilon = 1e-12);
        let num = m
            .valuate_l3(&[
                CounterfactualClause { intervention: vec![(0, 1)], values: vec![(1, 1)] },
                CounterfactualClause { intervention: vec![], values: vec![(0, 0), (1, 1)] },
            ])
            .unwrap();
        assert_abs_diff_eq!(num / l1.marginal(&[(0, 0), (1, 1)]), 48.0 / 78.0, epsilon = 1e-12);
        let p0 = m.valuate_l2(&[(0, 0)]).unwrap().marginal(&[(1, 1)]);
        assert_abs_diff_eq!(m.ate(0, 1).unwrap(), 0.46875 - p0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.tv(0, 1).unwrap(), tv_from_table(&l1, 0, 1).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn diet_sodium_tables() {
        let m = diet_sodium();
        let l1 = m.valuate_l1().unwrap();
        // packed bit order: D, S, B
        let expect = [13.0, 81.0, 21.0, 9.0, 15.0, 27.0, 63.0, 27.0];
        for (a, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(l1.prob(a), e / 256.0, epsilon = 1e-12);
        }
        let l2 = m.valuate_l2(&[(0, 1)]).unwrap();
        assert_abs_diff_eq!(l2.marginal(&[(2, 1)]), 15.0 / 32.0, epsilon = 1e-12);
    }

    #[test]
    fn sampling_matches_table() {
        let m = diet();
        let n = 100_000;
        let d = m.sample(n, 3, &[]).unwrap();
        let freq = d.counts()[0b11] as f64 / n as f64;
        let p = 54.0 / 256.0;
        assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }
}
