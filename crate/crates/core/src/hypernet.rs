//! Shared two-network skeleton: FC1 maps covariates to a representation and
//! a propensity logit, FC2 maps the (possibly noised) representation and
//! the treatment to a head whose meaning depends on the model.

use idens_autodiff::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::sigmoid;

const PROPENSITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypernet {
    pub fc1: Mlp,
    pub fc2: Mlp,
    pub d_r: usize,
}

pub(crate) struct HyperVars {
    pub logit: Var,
    /// `[R + noise, A]`, the input of FC2.
    pub features: Var,
    pub head: Var,
}

pub(crate) struct HyperValues {
    pub features: Tensor,
    pub head: Tensor,
}

impl Hypernet {
    pub fn new(d_x: usize, d_r: usize, hidden: usize, head_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            fc1: Mlp::new(&[d_x, hidden, d_r + 1], Activation::Elu, &mut rng),
            fc2: Mlp::new(&[d_r + 1, hidden, head_dim], Activation::Elu, &mut rng),
            d_r,
        }
    }

    /// FC1 emits `d_r + 1` values (representation and logit) and FC2 reads
    /// `d_r + 1` features (representation and treatment).
    pub fn is_consistent(&self) -> bool {
        self.fc1.output_dim() == self.d_r + 1 && self.fc2.input_dim() == self.d_r + 1
    }

    pub fn head_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.fc1
            .params()
            .into_iter()
            .chain(self.fc2.params())
            .cloned()
            .collect()
    }

    pub fn set_params(&mut self, params: &[Tensor]) {
        let k = self.fc1.param_count();
        for (dst, src) in self.fc1.params_mut().into_iter().zip(&params[..k]) {
            *dst = src.clone();
        }
        for (dst, src) in self.fc2.params_mut().into_iter().zip(&params[k..]) {
            *dst = src.clone();
        }
    }

    /// Clean forward pass for `x: [n, d_X]` and per-row treatment `a`.
    pub(crate) fn forward(&self, x: &Tensor, a: &[f64]) -> HyperValues {
        let out = self.fc1.forward(x);
        let r = out.slice_cols(0, self.d_r);
        let features = Tensor::concat_cols(&[&r, &Tensor::column(a.to_vec())]);
        let head = self.fc2.forward(&features);
        HyperValues { features, head }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        let out = self.fc1.forward(&Tensor::row(x.to_vec()));
        clamp_propensity(sigmoid(out.get(0, self.d_r)))
    }

    /// Recorded forward pass; `r_noise` (same shape as R) is added to the
    /// representation before FC2 only, the logit uses the clean R.
    pub(crate) fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: &Tensor,
        a: &[f64],
        r_noise: Option<Tensor>,
    ) -> HyperVars {
        let k = self.fc1.param_count();
        let v1 = MlpVars::from_slice(&vars[..k]);
        let v2 = MlpVars::from_slice(&vars[k..]);
        let xv = g.constant(x.clone());
        let out = self.fc1.forward_graph(g, &v1, xv);
        let r = g.slice_cols(out, 0, self.d_r);
        let logit = g.slice_cols(out, self.d_r, self.d_r + 1);
        let r = match r_noise {
            Some(noise) => {
                let nv = g.constant(noise);
                g.add(r, nv)
            }
            None => r,
        };
        let av = g.constant(Tensor::column(a.to_vec()));
        let features = g.concat_cols(&[r, av]);
        let head = self.fc2.forward_graph(g, &v2, features);
        HyperVars {
            logit,
            features,
            head,
        }
    }
}

pub(crate) fn clamp_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_EPS, 1.0 - PROPENSITY_EPS)
}

/// Per-row binary cross-entropy `-log sigmoid(s * logit)`, `s = 2A - 1`.
pub(crate) fn bce_graph(g: &mut Graph, logit: Var, a: &[u8]) -> Var {
    let signs = Tensor::column(a.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect());
    let sv = g.constant(signs);
    let signed = g.mul(logit, sv);
    let ls = g.log_sigmoid(signed);
    g.neg(ls)
}

pub(crate) fn treatment_column(a: &[u8]) -> Vec<f64> {
    a.iter().map(|&v| f64::from(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fc1_gives_half() {
        let mut h = Hypernet::new(3, 4, 5, 2, 0);
        h.fc1.zero_output_layer();
        assert_eq!(h.propensity(&[0.3, -1.0, 2.0]), 0.5);
    }

    #[test]
    fn graph_matches_plain() {
        let h = Hypernet::new(2, 3, 6, 4, 1);
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-1.0, 3.0]]);
        let a = [0.0, 1.0];
        let plain = h.forward(&x, &a);
        let mut g = Graph::new();
        let vars: Vec<Var> = h.params().into_iter().map(|p| g.param(p)).collect();
        let out = h.forward_graph(&mut g, &vars, &x, &a, None);
        assert_eq!(g.value(out.head).values(), plain.head.values());
        for i in 0..2 {
            let p = crate::numeric::sigmoid(g.value(out.logit).get(i, 0));
            assert!((p - h.propensity(x.row_slice(i))).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_logits_give_small_bce() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::column(vec![40.0, -40.0]));
        let b = bce_graph(&mut g, l, &[1, 0]);
        assert!(g.value(b).values().iter().all(|&v| v < 1e-15));
    }
}
