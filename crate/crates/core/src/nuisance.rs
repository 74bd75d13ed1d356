//! Stage 1: hypernetwork-conditioned spline flow for `P(Y | X, A)` with a
//! propensity head, trained with noise regularization.

use idens_autodiff::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditional::ConditionalModel;
use crate::data::{Arm, ObservationalDataset};
use crate::error::{invalid, Result};
use crate::flow::graph_ops::{spline_inverse, std_normal_log_pdf};
use crate::flow::{spline_bound, RqSpline, RqSplineParams};
use crate::hypernet::{bce_graph, clamp_propensity, treatment_column, Hypernet};
use crate::numeric::{derive_seed, sigmoid, LN_SQRT_2PI};
use crate::train::{run_loop, sample_batch, LoopConfig, OptimizerKind};

/// Variances of the Gaussian noise added to the representation (`sigma_x2`)
/// and to the outcome (`sigma_y2`) during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseRegConfig {
    pub sigma_x2: f64,
    pub sigma_y2: f64,
}

impl NoiseRegConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_x2 >= 0.0 && self.sigma_y2 >= 0.0 {
            Ok(())
        } else {
            Err(invalid("noise variances must be non-negative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceHyperparams {
    pub n_knots: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub n_iter: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub d_r: usize,
}

impl Default for NuisanceHyperparams {
    fn default() -> Self {
        Self {
            n_knots: 10,
            lr: 0.005,
            batch_size: 32,
            n_iter: 5000,
            alpha: 1.0,
            hidden: 10,
            d_r: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModel {
    pub hypernet: Hypernet,
    /// Second-dimension conditioner for two-dimensional outcomes: maps
    /// `[R, A, y1]` to the spline for `y2`.
    pub conditioner: Option<Mlp>,
    pub n_bins: usize,
    pub bounds: Vec<f64>,
}

impl NuisanceModel {
    /// Initial model whose conditional flows are all the identity.
    pub fn new(d_x: usize, bounds: Vec<f64>, hp: &NuisanceHyperparams, seed: u64) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(invalid(
                "nuisance flows support one- or two-dimensional outcomes",
            ));
        }
        for &b in &bounds {
            RqSplineParams::identity(hp.n_knots, b).validate()?;
        }
        let p = RqSplineParams::theta_len(hp.n_knots);
        let mut hypernet = Hypernet::new(d_x, hp.d_r, hp.hidden, p, seed);
        hypernet.fc2.zero_output_layer();
        let conditioner = (bounds.len() == 2).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let mut m = Mlp::new(&[hp.d_r + 2, hp.hidden, p], Activation::Elu, &mut rng);
            m.zero_output_layer();
            m
        });
        Ok(Self {
            hypernet,
            conditioner,
            n_bins: hp.n_knots,
            bounds,
        })
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.hypernet.params();
        if let Some(c) = &self.conditioner {
            p.extend(c.params().into_iter().cloned());
        }
        p
    }

    pub fn set_params(&mut self, params: &[Tensor]) {
        let k = self.hypernet.param_count();
        self.hypernet.set_params(&params[..k]);
        if let Some(c) = &mut self.conditioner {
            for (dst, src) in c.params_mut().into_iter().zip(&params[k..]) {
                *dst = src.clone();
            }
        }
    }

    fn spline(&self, theta: &[f64], dim: usize) -> RqSpline {
        RqSplineParams::from_theta(theta, self.n_bins, self.bounds[dim])
            .build()
            .expect("network outputs are finite and bounds validated at construction")
    }

    fn second_spline(&self, features: &[f64], y1: f64) -> RqSpline {
        let c = self.conditioner.as_ref().expect("two-dimensional model");
        let mut input = features.to_vec();
        input.push(y1);
        let theta = c.forward(&Tensor::row(input));
        self.spline(theta.values(), 1)
    }

    /// Recorded per-row log-density of `y` given `(x, a)`, plus the
    /// propensity logits. `r_noise` perturbs the representation fed to FC2.
    pub(crate) fn log_prob_graph(
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
        let y1 = g.constant(y.slice_cols(0, 1));
        let (z1, ld1) = spline_inverse(g, y1, out.head, self.n_bins, self.bounds[0]);
        let base1 = std_normal_log_pdf(g, z1);
        let mut lp = g.add(base1, ld1);
        if let Some(c) = &self.conditioner {
            let mv = MlpVars::from_slice(&vars[k..]);
            let cin = g.concat_cols(&[out.features, y1]);
            let theta2 = c.forward_graph(g, &mv, cin);
            let y2 = g.constant(y.slice_cols(1, 2));
            let (z2, ld2) = spline_inverse(g, y2, theta2, self.n_bins, self.bounds[1]);
            let base2 = std_normal_log_pdf(g, z2);
            let lp2 = g.add(base2, ld2);
            lp = g.add(lp, lp2);
        }
        (lp, out.logit)
    }

    /// Mean conditional negative log-likelihood over `data`.
    pub fn mean_nll(&self, data: &ObservationalDataset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| -self.cond_log_prob(data.x().row_slice(i), data.arm(i), data.y().row_slice(i)))
            .sum();
        total / data.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        for &b in &m.bounds {
            RqSplineParams::identity(m.n_bins, b).validate()?;
        }
        let theta = RqSplineParams::theta_len(m.n_bins);
        let conditioner_ok = match &m.conditioner {
            Some(c) => {
                m.bounds.len() == 2
                    && c.input_dim() == m.hypernet.d_r + 2
                    && c.output_dim() == theta
            }
            None => m.bounds.len() == 1,
        };
        if !m.hypernet.is_consistent()
            || m.hypernet.head_dim() != theta
            || !conditioner_ok
            || m.params().iter().any(|t| !t.is_finite())
        {
            return Err(invalid("nuisance checkpoint is internally inconsistent"));
        }
        Ok(m)
    }
}

pub(crate) fn noise_tensor(rng: &mut impl Rng, shape: [usize; 2], var: f64) -> Tensor {
    let sd = var.sqrt();
    Tensor::new(
        shape,
        (0..shape[0] * shape[1])
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

pub(crate) fn add_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(
        a.shape(),
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x + y)
            .collect(),
    )
}

/// Records `mean[-log p(y + xi_y | x, a) + alpha * BCE]` for `batch`, with
/// fresh noise from `rng` (no draws when both variances are zero).
fn loss_graph(
    model: &NuisanceModel,
    g: &mut Graph,
    vars: &[Var],
    batch: &ObservationalDataset,
    noise: &NoiseRegConfig,
    alpha: f64,
    rng: &mut impl Rng,
) -> Var {
    let n = batch.len();
    let r_noise =
        (noise.sigma_x2 > 0.0).then(|| noise_tensor(rng, [n, model.hypernet.d_r], noise.sigma_x2));
    let y = if noise.sigma_y2 > 0.0 {
        add_tensors(
            batch.y(),
            &noise_tensor(rng, batch.y().shape(), noise.sigma_y2),
        )
    } else {
        batch.y().clone()
    };
    let (lp, logit) = model.log_prob_graph(g, vars, batch.x(), batch.a(), &y, r_noise);
    let nll = g.neg(lp);
    let total = if alpha != 0.0 {
        let bce = bce_graph(g, logit, batch.a());
        let w = g.scale(bce, alpha);
        g.add(nll, w)
    } else {
        nll
    };
    g.mean(total)
}

pub fn nuisance_loss(
    model: &NuisanceModel,
    batch: &ObservationalDataset,
    noise: &NoiseRegConfig,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("nuisance loss needs a nonempty batch"));
    }
    noise.validate()?;
    let mut g = Graph::new();
    let vars: Vec<Var> = model.params().into_iter().map(|p| g.constant(p)).collect();
    let l = loss_graph(model, &mut g, &vars, batch, noise, alpha, rng);
    Ok(g.value(l).item())
}

fn bounds_from(data: &ObservationalDataset) -> Vec<f64> {
    data.outcome_range()
        .into_iter()
        .map(|(lo, hi)| spline_bound(lo, hi))
        .collect()
}

/// Stage-1 fit: `hp.n_iter` SGD-momentum steps on uniformly drawn
/// minibatches. A pure function of its arguments.
pub fn train_nuisance(
    data: &ObservationalDataset,
    hp: &NuisanceHyperparams,
    noise: &NoiseRegConfig,
    seed: u64,
) -> Result<NuisanceModel> {
    train_nuisance_traced(data, hp, noise, seed).map(|(m, _)| m)
}

/// As [`train_nuisance`], also returning the per-iteration losses.
pub fn train_nuisance_traced(
    data: &ObservationalDataset,
    hp: &NuisanceHyperparams,
    noise: &NoiseRegConfig,
    seed: u64,
) -> Result<(NuisanceModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    noise.validate()?;
    let mut model = NuisanceModel::new(data.dx(), bounds_from(data), hp, derive_seed(seed, 0))?;
    let cfg = LoopConfig {
        n_iter: hp.n_iter,
        batch_size: hp.batch_size,
        lr: hp.lr,
        optimizer: OptimizerKind::SgdMomentum,
    };
    let mut params = model.params();
    let template = model.clone();
    let trace = run_loop(
        "nuisance training",
        &mut params,
        &cfg,
        derive_seed(seed, 1),
        |g, vars, rng| {
            let idx = sample_batch(data.len(), hp.batch_size, rng);
            let batch = data.subset(&idx);
            Ok(loss_graph(&template, g, vars, &batch, noise, hp.alpha, rng))
        },
        |_| Ok(()),
    )?;
    model.set_params(&params);
    Ok((model, trace))
}

impl ConditionalModel for NuisanceModel {
    fn outcome_dim(&self) -> usize {
        self.bounds.len()
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        self.hypernet.propensity(x)
    }

    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        assert_eq!(ys.cols(), self.outcome_dim(), "outcome dimension mismatch");
        let out = self
            .hypernet
            .forward(&Tensor::row(x.to_vec()), &[arm.index() as f64]);
        let s1 = self.spline(out.head.values(), 0);
        (0..ys.rows())
            .map(|i| {
                let y1 = ys.get(i, 0);
                let (z1, ld1) = s1.inverse(y1).expect("finite outcomes");
                let mut lp = -0.5 * z1 * z1 - LN_SQRT_2PI + ld1;
                if self.conditioner.is_some() {
                    let s2 = self.second_spline(out.features.values(), y1);
                    let (z2, ld2) = s2.inverse(ys.get(i, 1)).expect("finite outcomes");
                    lp += -0.5 * z2 * z2 - LN_SQRT_2PI + ld2;
                }
                lp
            })
            .collect()
    }

    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let out = self
            .hypernet
            .forward(&Tensor::row(x.to_vec()), &[arm.index() as f64]);
        let s1 = self.spline(out.head.values(), 0);
        let d = self.outcome_dim();
        let mut v = Vec::with_capacity(n * d);
        for _ in 0..n {
            let y1 = s1
                .forward(rng.sample(StandardNormal))
                .expect("finite draw")
                .0;
            v.push(y1);
            if d == 2 {
                let s2 = self.second_spline(out.features.values(), y1);
                v.push(
                    s2.forward(rng.sample(StandardNormal))
                        .expect("finite draw")
                        .0,
                );
            }
        }
        Tensor::new([n, d], v)
    }

    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        let out = self
            .hypernet
            .forward(&Tensor::row(x.to_vec()), &[arm.index() as f64]);
        let y1 = self
            .spline(out.head.values(), 0)
            .forward(0.0)
            .expect("finite")
            .0;
        let mut m = vec![y1];
        if self.conditioner.is_some() {
            let s2 = self.second_spline(out.features.values(), y1);
            m.push(s2.forward(0.0).expect("finite").0);
        }
        m
    }
}

/// Propensity from raw logits, clamped strictly inside (0, 1).
pub fn propensity_from_logit(logit: f64) -> f64 {
    clamp_propensity(sigmoid(logit))
}
