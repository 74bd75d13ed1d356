use idens_autodiff::{Graph, Tensor, Var};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NeuralHyperparams;
use crate::conditional::ConditionalModel;
use crate::data::{Arm, ObservationalDataset};
use crate::error::{invalid, Result};
use crate::hypernet::{bce_graph, treatment_column, Hypernet};
use crate::nuisance::{add_tensors, noise_tensor, NoiseRegConfig};
use crate::numeric::{derive_seed, log_sum_exp, LN_SQRT_2PI};
use crate::train::{run_loop, sample_batch, LoopConfig, OptimizerKind};

/// Per `(x, a)` mixture of `n_c` diagonal normals. The head is laid out as
/// `[logits (n_c) | means (d_y blocks of n_c) | log-scales (d_y blocks)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnModel {
    pub hypernet: Hypernet,
    pub n_components: usize,
    pub d_y: usize,
}

pub(crate) struct Mixture {
    pub log_weights: Vec<f64>,
    /// `means[d][c]`
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl Mixture {
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let comps: Vec<f64> = (0..self.log_weights.len())
            .map(|c| {
                self.log_weights[c]
                    + y.iter()
                        .enumerate()
                        .map(|(d, &v)| {
                            crate::numeric::normal_log_pdf(v, self.means[d][c], self.scales[d][c])
                        })
                        .sum::<f64>()
            })
            .collect();
        log_sum_exp(&comps)
    }
}

impl MdnModel {
    pub fn new(d_x: usize, d_y: usize, hp: &NeuralHyperparams, seed: u64) -> Result<Self> {
        if hp.n_components == 0 {
            return Err(invalid("a mixture needs at least one component"));
        }
        let head = hp.n_components * (1 + 2 * d_y);
        Ok(Self {
            hypernet: Hypernet::new(d_x, hp.d_r, hp.hidden, head, seed),
            n_components: hp.n_components,
            d_y,
        })
    }

    pub(crate) fn mixture(&self, x: &[f64], arm: Arm) -> Mixture {
        let head = self
            .hypernet
            .forward(&Tensor::row(x.to_vec()), &[arm.index() as f64])
            .head;
        Self::mixture_from_head(head.values(), self.n_components, self.d_y)
    }

    pub(crate) fn mixture_from_head(h: &[f64], c: usize, d_y: usize) -> Mixture {
        let lse = log_sum_exp(&h[..c]);
        Mixture {
            log_weights: h[..c].iter().map(|v| v - lse).collect(),
            means: (0..d_y)
                .map(|d| h[c * (1 + d)..c * (2 + d)].to_vec())
                .collect(),
            scales: (0..d_y)
                .map(|d| {
                    h[c * (1 + d_y + d)..c * (2 + d_y + d)]
                        .iter()
                        .map(|s| s.exp())
                        .collect()
                })
                .collect(),
        }
    }

    fn log_prob_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: &Tensor,
        a: &[u8],
        y: &Tensor,
        r_noise: Option<Tensor>,
    ) -> (Var, Var) {
        let c = self.n_components;
        let out = self
            .hypernet
            .forward_graph(g, vars, x, &treatment_column(a), r_noise);
        let logits = g.slice_cols(out.head, 0, c);
        let lse = g.logsumexp_rows(logits);
        let mut comp = g.sub(logits, lse);
        for d in 0..self.d_y {
            let mu = g.slice_cols(out.head, c * (1 + d), c * (2 + d));
            let ls = g.slice_cols(out.head, c * (1 + self.d_y + d), c * (2 + self.d_y + d));
            let yd = g.constant(y.slice_cols(d, d + 1));
            let diff = g.sub(mu, yd);
            let neg_ls = g.neg(ls);
            let inv = g.exp(neg_ls);
            let z = g.mul(diff, inv);
            let sq = g.square(z);
            let half = g.scale(sq, -0.5);
            let t = g.sub(half, ls);
            let t = g.add_scalar(t, -LN_SQRT_2PI);
            comp = g.add(comp, t);
        }
        (g.logsumexp_rows(comp), out.logit)
    }
}

/// Negative log-likelihood fit with noise regularization and the propensity
/// head, SGD with momentum.
pub fn fit_mdn(
    data: &ObservationalDataset,
    hp: &NeuralHyperparams,
    noise: &NoiseRegConfig,
    seed: u64,
) -> Result<MdnModel> {
    if data.is_empty() {
        return Err(invalid("cannot fit an MDN on an empty dataset"));
    }
    noise.validate()?;
    let mut model = MdnModel::new(data.dx(), data.dy(), hp, derive_seed(seed, 0))?;
    let template = model.clone();
    let mut params = model.hypernet.params();
    let cfg = LoopConfig {
        n_iter: hp.n_iter,
        batch_size: hp.batch_size,
        lr: hp.lr,
        optimizer: OptimizerKind::SgdMomentum,
    };
    run_loop(
        "MDN training",
        &mut params,
        &cfg,
        derive_seed(seed, 1),
        |g, vars, rng| {
            let batch = data.subset(&sample_batch(data.len(), hp.batch_size, rng));
            let n = batch.len();
            let r_noise =
                (noise.sigma_x2 > 0.0).then(|| noise_tensor(rng, [n, hp.d_r], noise.sigma_x2));
            let y = if noise.sigma_y2 > 0.0 {
                add_tensors(
                    batch.y(),
                    &noise_tensor(rng, batch.y().shape(), noise.sigma_y2),
                )
            } else {
                batch.y().clone()
            };
            let (lp, logit) = template.log_prob_graph(g, vars, batch.x(), batch.a(), &y, r_noise);
            let nll = g.neg(lp);
            let bce = bce_graph(g, logit, batch.a());
            let bce = g.scale(bce, hp.alpha);
            let total = g.add(nll, bce);
            Ok(g.mean(total))
        },
        |_| Ok(()),
    )?;
    model.hypernet.set_params(&params);
    Ok(model)
}

impl ConditionalModel for MdnModel {
    fn outcome_dim(&self) -> usize {
        self.d_y
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.hypernet.propensity(x)
    }

    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        let m = self.mixture(x, arm);
        (0..ys.rows())
            .map(|i| m.log_density(ys.row_slice(i)))
            .collect()
    }

    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let m = self.mixture(x, arm);
        let mut v = Vec::with_capacity(n * self.d_y);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = m.log_weights.len() - 1;
            for (k, lw) in m.log_weights.iter().enumerate() {
                acc += lw.exp();
                if u < acc {
                    c = k;
                    break;
                }
            }
            for d in 0..self.d_y {
                v.push(m.means[d][c] + m.scales[d][c] * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Tensor::new([n, self.d_y], v)
    }

    /// Mean of the highest-weight component.
    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        let m = self.mixture(x, arm);
        let c = (0..m.log_weights.len())
            .max_by(|&i, &j| m.log_weights[i].total_cmp(&m.log_weights[j]))
            .unwrap_or(0);
        (0..self.d_y).map(|d| m.means[d][c]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{scm_sample, ScmConfig};
    use crate::numeric::{linspace, normal_log_pdf, trapezoid};
    use proptest::prelude::*;

    #[test]
    fn symmetric_pair_at_zero_is_phi_one() {
        // logits equal, means -1 and 1, log-scales 0
        let m = MdnModel::mixture_from_head(&[0.3, 0.3, -1.0, 1.0, 0.0, 0.0], 2, 1);
        assert!((m.log_density(&[0.0]).exp() - 0.241_970_725).abs() < 1e-9);
    }

    #[test]
    fn single_component_is_normal() {
        let m = MdnModel::mixture_from_head(&[5.0, 0.7, 0.4], 1, 1);
        assert!((m.log_density(&[1.3]) - normal_log_pdf(1.3, 0.7, 0.4f64.exp())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 1..10)) {
            let c = logits.len();
            let mut h = logits.clone();
            h.extend(vec![0.0; 2 * c]);
            let m = MdnModel::mixture_from_head(&h, c, 1);
            let s: f64 = m.log_weights.iter().map(|w| w.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_matches_plain_and_normalizes() {
        let hp = NeuralHyperparams {
            n_components: 3,
            ..Default::default()
        };
        let m = MdnModel::new(1, 1, &hp, 5).unwrap();
        let data = scm_sample(&ScmConfig {
            b: 1.0,
            n: 6,
            seed: 1,
        })
        .unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = m
            .hypernet
            .params()
            .into_iter()
            .map(|p| g.param(p))
            .collect();
        let (lp, _) = m.log_prob_graph(&mut g, &vars, data.x(), data.a(), data.y(), None);
        for i in 0..data.len() {
            let plain = m.cond_log_prob(data.x().row_slice(i), data.arm(i), data.y().row_slice(i));
            assert!((g.value(lp).get(i, 0) - plain).abs() < 1e-12);
        }
        let ys = linspace(-30.0, 30.0, 20_001);
        let d: Vec<f64> = m
            .cond_log_prob_many(&[0.2], Arm::Control, &Tensor::column(ys.clone()))
            .into_iter()
            .map(f64::exp)
            .collect();
        assert!((trapezoid(&d, ys[1] - ys[0]) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_dimensional_graph_matches_plain() {
        let hp = NeuralHyperparams {
            n_components: 2,
            ..Default::default()
        };
        let m = MdnModel::new(2, 2, &hp, 5).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-1.0, 0.5]]);
        let y = Tensor::from_rows(&[vec![0.3, -0.2], vec![1.0, 1.5]]);
        let mut g = Graph::new();
        let vars: Vec<Var> = m
            .hypernet
            .params()
            .into_iter()
            .map(|p| g.param(p))
            .collect();
        let (lp, _) = m.log_prob_graph(&mut g, &vars, &x, &[0, 1], &y, None);
        for i in 0..2 {
            let arm = Arm::from_index(i).unwrap();
            let plain = m.cond_log_prob(x.row_slice(i), arm, y.row_slice(i));
            assert!((g.value(lp).get(i, 0) - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn training_reduces_nll() {
        let data = scm_sample(&ScmConfig {
            b: 1.0,
            n: 300,
            seed: 3,
        })
        .unwrap();
        let (data, _) = crate::data::standardize(&data).unwrap();
        let hp = NeuralHyperparams {
            n_iter: 300,
            ..Default::default()
        };
        let init = MdnModel::new(1, 1, &hp, derive_seed(7, 0)).unwrap();
        let fitted = fit_mdn(&data, &hp, &NoiseRegConfig::none(), 7).unwrap();
        let nll = |m: &MdnModel| {
            -(0..data.len())
                .map(|i| m.cond_log_prob(data.x().row_slice(i), data.arm(i), data.y().row_slice(i)))
                .sum::<f64>()
        };
        assert!(nll(&fitted) < nll(&init));
    }
}
