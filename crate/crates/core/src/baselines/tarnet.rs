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
use crate::numeric::{derive_seed, LN_SQRT_2PI};
use crate::train::{run_loop, sample_batch, LoopConfig, OptimizerKind};

pub const MIN_SIGMA: f64 = 1e-3;

/// Conditional normal `N(mu(x, a), sigma^2 I)` with a single global scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarNetStarModel {
    pub hypernet: Hypernet,
    pub log_sigma: f64,
}

impl TarNetStarModel {
    pub fn new(d_x: usize, d_y: usize, hp: &NeuralHyperparams, seed: u64) -> Self {
        Self {
            hypernet: Hypernet::new(d_x, hp.d_r, hp.hidden, d_y, seed),
            log_sigma: 0.0,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp().max(MIN_SIGMA)
    }

    pub fn mean(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        self.hypernet
            .forward(&Tensor::row(x.to_vec()), &[arm.index() as f64])
            .head
            .into_values()
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.hypernet.params();
        p.push(Tensor::scalar(self.log_sigma));
        p
    }

    fn set_params(&mut self, p: &[Tensor]) {
        let k = self.hypernet.param_count();
        self.hypernet.set_params(&p[..k]);
        self.log_sigma = p[k].item();
    }

    /// Recorded per-row log-likelihood and propensity logits.
    fn log_prob_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: &Tensor,
        a: &[u8],
        y: &Tensor,
        r_noise: Option<Tensor>,
    ) -> (Var, Var) {
        let k = self.hypernet.param_count();
        let out = self
            .hypernet
            .forward_graph(g, &vars[..k], x, &treatment_column(a), r_noise);
        let e = g.exp(vars[k]);
        let sigma = g.clamp_min(e, MIN_SIGMA);
        let yv = g.constant(y.clone());
        let diff = g.sub(out.head, yv);
        let z = g.div(diff, sigma);
        let sq = g.square(z);
        let half = g.scale(sq, -0.5);
        let quad = g.row_sum(half);
        let ls = g.log(sigma);
        let norm = g.add_scalar(ls, LN_SQRT_2PI);
        let norm = g.scale(norm, y.cols() as f64);
        (g.sub(quad, norm), out.logit)
    }
}

/// Joint maximum-likelihood fit of `mu` and `sigma` with the propensity
/// head, SGD with momentum and noise regularization.
pub fn fit_tarnet_star(
    data: &ObservationalDataset,
    hp: &NeuralHyperparams,
    noise: &NoiseRegConfig,
    seed: u64,
) -> Result<TarNetStarModel> {
    if data.is_empty() {
        return Err(invalid("cannot fit TARNet* on an empty dataset"));
    }
    noise.validate()?;
    let mut model = TarNetStarModel::new(data.dx(), data.dy(), hp, derive_seed(seed, 0));
    let template = model.clone();
    let mut params = model.params();
    let cfg = LoopConfig {
        n_iter: hp.n_iter,
        batch_size: hp.batch_size,
        lr: hp.lr,
        optimizer: OptimizerKind::SgdMomentum,
    };
    run_loop(
        "TARNet* training",
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
    model.set_params(&params);
    Ok(model)
}

impl ConditionalModel for TarNetStarModel {
    fn outcome_dim(&self) -> usize {
        self.hypernet.head_dim()
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.hypernet.propensity(x)
    }

    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        let mu = self.mean(x, arm);
        let s = self.sigma();
        (0..ys.rows())
            .map(|i| {
                ys.row_slice(i)
                    .iter()
                    .zip(&mu)
                    .map(|(y, m)| crate::numeric::normal_log_pdf(*y, *m, s))
                    .sum()
            })
            .collect()
    }

    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let mu = self.mean(x, arm);
        let s = self.sigma();
        let mut v = Vec::with_capacity(n * mu.len());
        for _ in 0..n {
            for m in &mu {
                v.push(m + s * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Tensor::new([n, mu.len()], v)
    }

    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        self.mean(x, arm)
    }
}
