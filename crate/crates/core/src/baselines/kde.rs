use idens_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, ObservationalDataset};
use crate::error::{invalid, Result};
use crate::hypernet::{bce_graph, treatment_column, Hypernet};
use crate::metrics::median_bandwidth;
use crate::numeric::derive_seed;
use crate::target::BiasCorrConfig;
use crate::train::{run_loop, sample_batch, LoopConfig, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeHyperparams {
    pub lr: f64,
    pub batch_size: usize,
    pub n_iter: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub d_r: usize,
}

impl Default for KdeHyperparams {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch_size: 64,
            n_iter: 10_000,
            alpha: 1.0,
            hidden: 10,
            d_r: 10,
        }
    }
}

/// Normalized Gaussian kernel `N(y; c, h^2 I)` from the squared distance.
pub fn kde_kernel(dist2: f64, h: f64, d: usize) -> f64 {
    (2.0 * std::f64::consts::PI * h * h).powf(-0.5 * d as f64) * (-0.5 * dist2 / (h * h)).exp()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Raw A-IPTW kernel estimate at the rows of `ys`:
/// `mean_i [w_i (T_y(Y_i) - T_y(mu_i)) + T_y(mu_i)]`. May be negative.
pub fn kde_aiptw_raw(
    ys: &Tensor,
    obs_y: &Tensor,
    mu_hat: &Tensor,
    weights: &[f64],
    h: f64,
) -> Vec<f64> {
    let n = obs_y.rows() as f64;
    let d = ys.cols();
    (0..ys.rows())
        .map(|k| {
            let y = ys.row_slice(k);
            (0..obs_y.rows())
                .map(|i| {
                    let plug = kde_kernel(dist2(mu_hat.row_slice(i), y), h, d);
                    let w = weights[i];
                    if w == 0.0 {
                        plug
                    } else {
                        w * (kde_kernel(dist2(obs_y.row_slice(i), y), h, d) - plug) + plug
                    }
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Regression network for `E(Y | X, A)` with a propensity head, plus the
/// stored training sample the estimator averages over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub hypernet: Hypernet,
    pub alpha: f64,
    /// Per-arm bandwidth from the median heuristic on the arm's outcomes.
    pub bandwidths: [f64; 2],
    pub clip: BiasCorrConfig,
    pub obs_y: Tensor,
    /// Per arm: `E(Y | X_i, arm)` for the training rows.
    pub mu_hat: [Tensor; 2],
    pub weights: [Vec<f64>; 2],
}

impl KdeModel {
    pub fn predict_mean(&self, x: &Tensor, arm: Arm) -> Tensor {
        self.hypernet
            .forward(x, &vec![arm.index() as f64; x.rows()])
            .head
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        self.hypernet.propensity(x)
    }

    fn loss_graph(&self, g: &mut Graph, vars: &[Var], batch: &ObservationalDataset) -> Var {
        let out =
            self.hypernet
                .forward_graph(g, vars, batch.x(), &treatment_column(batch.a()), None);
        let yv = g.constant(batch.y().clone());
        let diff = g.sub(out.head, yv);
        let sq = g.square(diff);
        let mse = g.row_sum(sq);
        let bce = bce_graph(g, out.logit, batch.a());
        let bce = g.scale(bce, self.alpha);
        let total = g.add(mse, bce);
        g.mean(total)
    }

    /// `MSE + alpha * BCE` on `data`, the tuning criterion.
    pub fn validation_loss(&self, data: &ObservationalDataset) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .hypernet
            .params()
            .into_iter()
            .map(|p| g.constant(p))
            .collect();
        let l = self.loss_graph(&mut g, &vars, data);
        g.value(l).item()
    }

    /// Raw estimate at the rows of `ys`; errors when no unit of `arm`
    /// passes the propensity clip.
    pub fn density_raw(&self, arm: Arm, ys: &Tensor) -> Result<Vec<f64>> {
        let w = &self.weights[arm.index()];
        if w.iter().all(|&v| v == 0.0) {
            return Err(invalid(format!(
                "no unit of arm {arm} passes the propensity clip"
            )));
        }
        Ok(kde_aiptw_raw(
            ys,
            &self.obs_y,
            &self.mu_hat[arm.index()],
            w,
            self.bandwidths[arm.index()],
        ))
    }
}

/// Adam fit of the regression and propensity heads, then bandwidths and the
/// per-unit quantities of the estimator on the training sample.
pub fn fit_kde(
    data: &ObservationalDataset,
    hp: &KdeHyperparams,
    clip: &BiasCorrConfig,
    seed: u64,
) -> Result<KdeModel> {
    clip.validate()?;
    let mut bandwidths = [0.0; 2];
    for arm in Arm::BOTH {
        let ya = data.factual(arm);
        if ya.rows() < 2 {
            return Err(invalid(format!(
                "arm {arm} has fewer than two units for the median heuristic"
            )));
        }
        let bw = median_bandwidth(&ya)?;
        if bw.degenerate {
            return Err(invalid(format!(
                "arm {arm} outcomes are constant; bandwidth is zero"
            )));
        }
        bandwidths[arm.index()] = bw.h;
    }
    let hypernet = Hypernet::new(
        data.dx(),
        hp.d_r,
        hp.hidden,
        data.dy(),
        derive_seed(seed, 0),
    );
    let mut model = KdeModel {
        hypernet,
        alpha: hp.alpha,
        bandwidths,
        clip: *clip,
        obs_y: data.y().clone(),
        mu_hat: [Tensor::zeros([0, 0]), Tensor::zeros([0, 0])],
        weights: [Vec::new(), Vec::new()],
    };
    let template = model.clone();
    let mut params = model.hypernet.params();
    let cfg = LoopConfig {
        n_iter: hp.n_iter,
        batch_size: hp.batch_size,
        lr: hp.lr,
        optimizer: OptimizerKind::Adam,
    };
    run_loop(
        "KDE regression training",
        &mut params,
        &cfg,
        derive_seed(seed, 1),
        |g, vars, rng| {
            let batch = data.subset(&sample_batch(data.len(), hp.batch_size, rng));
            Ok(template.loss_graph(g, vars, &batch))
        },
        |_| Ok(()),
    )?;
    model.hypernet.set_params(&params);
    for arm in Arm::BOTH {
        model.mu_hat[arm.index()] = model.predict_mean(data.x(), arm);
        model.weights[arm.index()] = (0..data.len())
            .map(|i| {
                let p = model.propensity(data.x().row_slice(i));
                let pa = if arm == Arm::Treated { p } else { 1.0 - p };
                clip.weight(data.arm(i) == arm, pa)
            })
            .collect();
    }
    Ok(model)
}
