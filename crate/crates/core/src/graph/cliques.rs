use super::VarSet;

/// Bron–Kerbosch with pivoting over an undirected adjacency list.
///
/// Every vertex ends up in at least one clique; isolated vertices are
/// reported as singletons.
pub(crate) fn maximal_cliques(adj: &[VarSet]) -> Vec<VarSet> {
    let mut out = Vec::new();
    let all = VarSet::full(adj.len());
    expand(adj, VarSet::EMPTY, all, VarSet::EMPTY, &mut out);
    out
}

fn expand(adj: &[VarSet], r: VarSet, p: VarSet, x: VarSet, out: &mut Vec<VarSet>) {
    if p.is_empty() {
        if x.is_empty() {
            out.push(r);
        }
        return;
    }
    // Pivot on the vertex of P ∪ X with the most neighbours in P.
    let pivot = p
        .union(x)
        .iter()
        .max_by_key(|&u| (adj[u].intersection(p).len(), std::cmp::Reverse(u)))
        .expect("P is non-empty");
    let mut p = p;
    let mut x = x;
    for v in p.difference(adj[pivot]).iter() {
        expand(adj, r.with(v), p.intersection(adj[v]), x.intersection(adj[v]), out);
        p.remove(v);
        x.insert(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(adj: &[VarSet]) -> Vec<VarSet> {
        let n = adj.len();
        let is_clique = |s: u64| {
            let s = VarSet::from_bits(s);
            s.iter().all(|a| s.iter().all(|b| a == b || adj[a].contains(b)))
        };
        let cliques: Vec<u64> = (1u64..(1 << n)).filter(|&s| is_clique(s)).collect();
        let mut out: Vec<VarSet> = cliques
            .iter()
            .filter(|&&s| !cliques.iter().any(|&t| t != s && t & s == s))
            .map(|&s| VarSet::from_bits(s))
            .collect();
        out.sort_by_key(|c| c.to_vec());
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..8, edges in proptest::collection::vec((0usize..8, 0usize..8), 0..20)) {
            let mut adj = vec![VarSet::EMPTY; n];
            for (a, b) in edges {
                let (a, b) = (a % n, b % n);
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            let mut got = maximal_cliques(&adj);
            got.sort_by_key(|c| c.to_vec());
            prop_assert_eq!(got, brute_force(&adj));
        }
    }
}
