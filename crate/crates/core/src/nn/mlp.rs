use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::{gemm, Gradients, Tape, Tensor, Var};
use crate::util;

/// Hidden widths used when none are given.
pub const DEFAULT_HIDDEN: [usize; 4] = [32; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Dense layer: `x W + b` with `W` shaped `[in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Feedforward network producing one logit per input row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// An [`Mlp`]'s parameters bound to a tape.
pub struct BoundMlp<'t> {
    params: Vec<(Var<'t>, Var<'t>)>,
}

impl Mlp {
    /// He-initialized network `input_dim -> hidden... -> 1`, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Mlp, NnError> {
        if input_dim == 0 {
            return Err(NnError::Shape("input dimension must be at least 1".into()));
        }
        let mut rng = util::rng(seed);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Layer { weights: Tensor::matrix(fan_in, fan_out, data).unwrap(), bias: Tensor::zeros(vec![fan_out]) }
            })
            .collect();
        Ok(Mlp { layers, activation: Activation::Relu })
    }

    /// Network whose weights and biases are all zero.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Mlp, NnError> {
        let mut m = Mlp::new(input_dim, hidden, 0)?;
        for t in m.params_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.shape()[0]
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weights.shape()[1]));
        w
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Weights and biases, layer by layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            params: self.layers.iter().map(|l| (tape.var(l.weights.clone()), tape.var(l.bias.clone()))).collect(),
        }
    }

    /// Logits for `rows` inputs stored row-major in `x`, without a tape.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<Vec<f64>, NnError> {
        let d = self.input_dim();
        if x.len() != rows * d {
            return Err(NnError::Shape(format!("{} values for {rows} rows of width {d}", x.len())));
        }
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (k, n) = (l.weights.shape()[0], l.weights.shape()[1]);
            let mut out = vec![0.0; rows * n];
            for row in out.chunks_mut(n) {
                row.copy_from_slice(l.bias.data());
            }
            gemm(rows, k, n, &h, false, l.weights.data(), false, 1.0, &mut out);
            if i != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        Ok(h)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Mlp, NnError> {
        let m: Mlp = serde_json::from_str(s).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let w = m.widths();
        for (l, pair) in m.layers.iter().zip(w.windows(2)) {
            if l.weights.shape() != [pair[0], pair[1]] || l.bias.shape() != [pair[1]] {
                return Err(NnError::Checkpoint("inconsistent layer shapes".into()));
            }
        }
        Ok(m)
    }
}

impl<'t> BoundMlp<'t> {
    /// Logits `[rows, 1]` for an input of shape `[rows, input_dim]`.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>, NnError> {
        let mut h = x;
        let last = self.params.len() - 1;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            h = h.linear(w, b, i != last)?;
        }
        Ok(h)
    }

    /// Gradients in the order of [`Mlp::params`].
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.params.iter().flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;

    #[test]
    fn default_architecture() {
        let m = Mlp::new(3, &DEFAULT_HIDDEN, 1).unwrap();
        assert_eq!(m.widths(), vec![3, 32, 32, 32, 32, 1]);
        assert_eq!(Mlp::new(3, &DEFAULT_HIDDEN, 1).unwrap(), m);
        assert!(Mlp::new(0, &[], 1).is_err());
    }

    #[test]
    fn zero_hidden_is_affine() {
        let mut m = Mlp::new(2, &[], 1).unwrap();
        m.layers[0].weights = Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap();
        m.layers[0].bias = Tensor::vector(vec![0.5]);
        assert_eq!(m.forward(&[1.0, 3.0, -1.0, 0.0], 2).unwrap(), vec![-0.5, -1.5]);
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let m = Mlp::zeros(4, &DEFAULT_HIDDEN).unwrap();
        assert!(m.forward(&[1.0; 12], 3).unwrap().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn hand_computed_single_unit() {
        // h = relu(1.5 x1 - 2 x2 + 0.5), out = -3 h + 1
        let m = Mlp {
            layers: vec![
                Layer { weights: Tensor::matrix(2, 1, vec![1.5, -2.0]).unwrap(), bias: Tensor::vector(vec![0.5]) },
                Layer { weights: Tensor::matrix(1, 1, vec![-3.0]).unwrap(), bias: Tensor::vector(vec![1.0]) },
            ],
            activation: Activation::Relu,
        };
        let x = [1.0, 0.25, 0.0, 1.0];
        assert_eq!(m.forward(&x, 2).unwrap(), vec![-3.0 * 1.5 + 1.0, 1.0]);
        let tape = Tape::new();
        let b = m.bind(&tape);
        let out = b.forward(tape.constant(Tensor::matrix(2, 2, x.to_vec()).unwrap())).unwrap();
        assert_eq!(out.value().data(), &[-3.5, 1.0]);
        assert_eq!(out.shape(), vec![2, 1]);
    }

    #[test]
    fn tape_forward_matches_plain() {
        let m = Mlp::new(3, &[8, 8], 4).unwrap();
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin()).collect();
        let tape = Tape::new();
        let out = m.bind(&tape).forward(tape.constant(Tensor::matrix(5, 3, x.clone()).unwrap())).unwrap();
        let plain = m.forward(&x, 5).unwrap();
        for (a, b) in out.value().data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let m = Mlp::new(3, &[6, 5, 4], 9).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
        let inputs: Vec<Tensor> = m.params().into_iter().cloned().collect();
        let err = check_gradients(
            |t, v| {
                let mut h = t.constant(Tensor::matrix(4, 3, x.clone())?);
                for (i, pair) in v.chunks(2).enumerate() {
                    h = h.matmul(pair[0])?.add(pair[1])?;
                    h = if i + 1 < v.len() / 2 { h.relu()? } else { h.log_sigmoid()? };
                }
                h.sum()
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_is_lossless() {
        let m = Mlp::new(5, &DEFAULT_HIDDEN, 77).unwrap();
        assert_eq!(Mlp::from_json(&m.to_json()).unwrap(), m);
        assert!(Mlp::from_json("{}").is_err());
    }
}
