use super::{bit, consistent, eval_function, CanonicalScm, NoiseBlock, ScmError, Selector};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::VarId;

/// Settings for [`widen_ate_tv_gap`].
#[derive(Clone, Debug)]
pub struct WidenConfig {
    pub threshold: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
}

impl Default for WidenConfig {
    fn default() -> Self {
        WidenConfig { threshold: 0.05, learning_rate: 0.1, max_steps: 5000 }
    }
}

impl From<AutodiffError> for ScmError {
    fn from(e: AutodiffError) -> Self {
        ScmError::InvalidArgument(e.to_string())
    }
}

/// Logits for every trainable table of a model.
struct Logits {
    blocks: Vec<Tensor>,
    /// Per variable: `[1, m]` for free selectors, `[rows, m]` for mixed ones.
    selectors: Vec<Option<Tensor>>,
}

fn logits_of(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&x| x.max(1e-300).ln()).collect()
}

fn softmax_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = *t.shape().last().unwrap();
    t.data()
        .chunks(cols)
        .map(|row| {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Constant structure shared by every gradient step.
struct Layout {
    n: usize,
    /// Joint block states, mixed radix with the first block least significant.
    states: usize,
    block_index: Vec<Vec<usize>>,
    /// Per variable: the `[m, A]` indicator `h_r(pa(a)) == a_V`.
    response: Vec<Tensor>,
    /// Per block-selected variable: `[S, A]` indicator of its induced response.
    block_response: Vec<Option<Tensor>>,
    /// Per mixed variable: selector row for each joint block state.
    mixed_rows: Vec<Option<Vec<usize>>>,
}

impl Layout {
    fn new(m: &CanonicalScm) -> Layout {
        let n = m.num_vars();
        let na = 1usize << n;
        let states: usize = m.blocks.iter().map(|b| b.probs.len()).product();
        let mut per_state = vec![vec![0usize; m.blocks.len()]; states];
        for (s, st) in per_state.iter_mut().enumerate() {
            let mut rest = s;
            for (b, block) in m.blocks.iter().enumerate() {
                st[b] = rest % block.probs.len();
                rest /= block.probs.len();
            }
        }
        let block_index = (0..m.blocks.len()).map(|b| per_state.iter().map(|st| st[b]).collect()).collect();
        let hit = |v: VarId, r: usize, a: usize| (eval_function(r as u64, m.pa_index(v, a)) == bit(a, v)) as u8 as f64;
        let response = (0..n)
            .map(|v| {
                let k = m.sizes[v] as usize;
                let data = (0..k).flat_map(|r| (0..na).map(move |a| (r, a))).map(|(r, a)| hit(v, r, a)).collect();
                Tensor::matrix(k, na, data).unwrap()
            })
            .collect();
        let block_response = (0..n)
            .map(|v| match m.selectors[v] {
                Selector::Block => {
                    let (b, stride) = m.memberships[v][0];
                    let mut data = Vec::with_capacity(states * na);
                    for st in &per_state {
                        let r = m.coord(v, stride, st[b]);
                        data.extend((0..na).map(|a| hit(v, r, a)));
                    }
                    Some(Tensor::matrix(states, na, data).unwrap())
                }
                _ => None,
            })
            .collect();
        let mixed_rows = (0..n)
            .map(|v| match m.selectors[v] {
                Selector::Mixed(_) => Some(per_state.iter().map(|st| m.mixed_row(v, st)).collect()),
                _ => None,
            })
            .collect();
        Layout { n, states, block_index, response, block_response, mixed_rows }
    }
}

/// `P(v | do(x))` for every packed `v`, as a `[1, A]` tape value.
fn interventional<'t>(
    tape: &'t Tape,
    layout: &Layout,
    blocks: &[Var<'t>],
    selectors: &[Option<Var<'t>>],
    x: &[(VarId, u8)],
) -> Result<Var<'t>, ScmError> {
    let na = 1usize << layout.n;
    let s = layout.states;
    let mut weight = tape.constant(Tensor::full(vec![s], 1.0));
    for (b, logits) in blocks.iter().enumerate() {
        let p = logits.softmax()?.gather(layout.block_index[b].clone(), vec![s])?;
        weight = weight.mul(p)?;
    }
    let mask: Vec<f64> = (0..na).map(|a| consistent(a, x) as u8 as f64).collect();
    let mut prod = tape.constant(Tensor::matrix(1, na, mask)?);
    let intervened = |v: VarId| x.iter().any(|&(w, _)| w == v);
    for v in (0..layout.n).filter(|&v| !intervened(v)) {
        let q = if let Some(c) = &layout.block_response[v] {
            tape.constant(c.clone())
        } else {
            let table = selectors[v].expect("trainable selector").softmax()?;
            let resp = tape.constant(layout.response[v].clone());
            match &layout.mixed_rows[v] {
                None => table.matmul(resp)?,
                Some(rows) => {
                    let k = layout.response[v].shape()[0];
                    let idx = rows.iter().flat_map(|&r| (0..k).map(move |j| r * k + j)).collect();
                    table.gather(idx, vec![s, k])?.matmul(resp)?
                }
            }
        };
        prod = q.mul(prod)?;
    }
    // prod is [S, A] or [1, A]; summing over block states weights each row
    if prod.shape()[0] == 1 {
        Ok(prod.mul(weight.sum()?)?)
    } else {
        Ok(weight.reshape(vec![1, s])?.matmul(prod)?)
    }
}

fn event_mass<'t>(tape: &'t Tape, p: Var<'t>, n: usize, event: &[(VarId, u8)]) -> Result<Var<'t>, ScmError> {
    let ind: Vec<f64> = (0..1usize << n).map(|a| consistent(a, event) as u8 as f64).collect();
    Ok(p.matmul(tape.constant(Tensor::matrix(1 << n, 1, ind)?))?.reshape(vec![])?)
}

/// ATE and TV of the model described by `logits`, on one tape.
fn ate_tv<'t>(
    tape: &'t Tape,
    layout: &Layout,
    logits: &Logits,
    x: VarId,
    y: VarId,
) -> Result<(Var<'t>, Var<'t>, Vec<Var<'t>>, Vec<Option<Var<'t>>>), ScmError> {
    let blocks: Vec<Var<'t>> = logits.blocks.iter().map(|t| tape.var(t.clone())).collect();
    let selectors: Vec<Option<Var<'t>>> = logits.selectors.iter().map(|t| t.as_ref().map(|t| tape.var(t.clone()))).collect();
    let n = layout.n;
    let p1 = interventional(tape, layout, &blocks, &selectors, &[(x, 1)])?;
    let p0 = interventional(tape, layout, &blocks, &selectors, &[(x, 0)])?;
    let ate = event_mass(tape, p1, n, &[(y, 1)])?.sub(event_mass(tape, p0, n, &[(y, 1)])?)?;
    let l1 = interventional(tape, layout, &blocks, &selectors, &[])?;
    let cond = |xv: u8| -> Result<Var<'t>, ScmError> {
        let joint = event_mass(tape, l1, n, &[(y, 1), (x, xv)])?;
        let px = event_mass(tape, l1, n, &[(x, xv)])?;
        Ok(joint.div(px)?)
    };
    let tv = cond(1)?.sub(cond(0)?)?;
    Ok((ate, tv, blocks, selectors))
}

fn rebuild(m: &CanonicalScm, logits: &Logits) -> Result<CanonicalScm, ScmError> {
    let blocks = m
        .blocks
        .iter()
        .zip(&logits.blocks)
        .map(|(b, t)| NoiseBlock { members: b.members.clone(), probs: softmax_rows(t).remove(0) })
        .collect();
    let selectors = m
        .selectors
        .iter()
        .zip(&logits.selectors)
        .map(|(s, t)| match (s, t) {
            (Selector::Free(_), Some(t)) => Selector::Free(softmax_rows(t).remove(0)),
            (Selector::Mixed(_), Some(t)) => Selector::Mixed(softmax_rows(t)),
            (other, _) => other.clone(),
        })
        .collect();
    CanonicalScm::from_parts(m.graph.clone(), blocks, selectors)
}

/// Push `|ATE - TV|` of `m` up to `cfg.threshold` by gradient ascent on table logits.
///
/// Returns the new model and the number of steps taken.
pub fn widen_ate_tv_gap(m: &CanonicalScm, x: VarId, y: VarId, cfg: &WidenConfig) -> Result<(CanonicalScm, usize), ScmError> {
    m.guard()?;
    if x == y || x >= m.num_vars() || y >= m.num_vars() {
        return Err(ScmError::InvalidArgument("treatment and outcome must be distinct variables".into()));
    }
    let gap0 = m.ate(x, y)? - m.tv(x, y)?;
    if gap0.abs() >= cfg.threshold {
        return Ok((m.clone(), 0));
    }
    let direction = if gap0 >= 0.0 { 1.0 } else { -1.0 };
    let layout = Layout::new(m);
    let mut logits = Logits {
        blocks: m.blocks.iter().map(|b| Tensor::vector(logits_of(&b.probs))).collect(),
        selectors: m
            .selectors
            .iter()
            .map(|s| match s {
                Selector::Free(p) => Some(Tensor::matrix(1, p.len(), logits_of(p)).unwrap()),
                Selector::Mixed(rows) => {
                    let k = rows[0].len();
                    Some(Tensor::matrix(rows.len(), k, rows.iter().flat_map(|r| logits_of(r)).collect()).unwrap())
                }
                Selector::Block => None,
            })
            .collect(),
    };
    let mut gap = gap0;
    for step in 1..=cfg.max_steps {
        let tape = Tape::new();
        let (ate, tv, blocks, selectors) = ate_tv(&tape, &layout, &logits, x, y)?;
        let objective = ate.sub(tv)?.scale(direction)?;
        let grads = tape.backward(objective)?;
        let ascend = |t: &mut Tensor, g: &Tensor| {
            for (w, d) in t.data_mut().iter_mut().zip(g.data()) {
                *w += cfg.learning_rate * d;
            }
        };
        for (t, v) in logits.blocks.iter_mut().zip(&blocks) {
            ascend(t, &grads.wrt(*v));
        }
        for (t, v) in logits.selectors.iter_mut().zip(&selectors) {
            if let (Some(t), Some(v)) = (t, v) {
                ascend(t, &grads.wrt(*v));
            }
        }
        let widened = rebuild(m, &logits)?;
        gap = widened.ate(x, y)? - widened.tv(x, y)?;
        if gap.abs() >= cfg.threshold {
            return Ok((widened, step));
        }
    }
    Err(ScmError::WideningFailed { steps: cfg.max_steps, gap, threshold: cfg.threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tape_valuator_matches_exact() {
        for f in fixtures::BENCHMARK.iter() {
            let g = f.diagram();
            let m = CanonicalScm::random(&g, 21).unwrap();
            let layout = Layout::new(&m);
            let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
            let logits = Logits {
                blocks: m.blocks.iter().map(|b| Tensor::vector(logits_of(&b.probs))).collect(),
                selectors: m
                    .selectors
                    .iter()
                    .map(|s| match s {
                        Selector::Free(p) => Some(Tensor::matrix(1, p.len(), logits_of(p)).unwrap()),
                        Selector::Mixed(rows) => Some(
                            Tensor::matrix(rows.len(), rows[0].len(), rows.iter().flat_map(|r| logits_of(r)).collect()).unwrap(),
                        ),
                        Selector::Block => None,
                    })
                    .collect(),
            };
            let tape = Tape::new();
            let (ate, tv, _, _) = ate_tv(&tape, &layout, &logits, x, y).unwrap();
            assert_abs_diff_eq!(ate.item(), m.ate(x, y).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(tv.item(), m.tv(x, y).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn widening_reaches_threshold() {
        for name in ["backdoor", "frontdoor", "napkin", "bow"] {
            let g = fixtures::by_name(name).unwrap().diagram();
            let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
            let m = CanonicalScm::random(&g, 3).unwrap();
            let (w, _) = widen_ate_tv_gap(&m, x, y, &WidenConfig::default()).unwrap();
            assert!((w.ate(x, y).unwrap() - w.tv(x, y).unwrap()).abs() >= 0.05, "{name}");
        }
    }

    #[test]
    fn wide_models_are_returned_as_is() {
        let g = fixtures::bow();
        let cfg = WidenConfig { threshold: 1e-9, ..Default::default() };
        let m = CanonicalScm::random(&g, 5).unwrap();
        let (w, steps) = widen_ate_tv_gap(&m, 0, 1, &cfg).unwrap();
        assert!(steps <= 1);
        if steps == 0 {
            assert_eq!(w, m);
        }
    }

    #[test]
    fn m_graph_cannot_be_widened() {
        let g = fixtures::m_graph();
        let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
        let m = CanonicalScm::random(&g, 1).unwrap();
        let cfg = WidenConfig { max_steps: 20, ..Default::default() };
        assert!(matches!(widen_ate_tv_gap(&m, x, y, &cfg), Err(ScmError::WideningFailed { .. })));
    }
}
