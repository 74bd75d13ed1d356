//! Stage 2: one unconditional flow per arm, fitted to the bias-corrected
//! cross-entropy objective with the stage-1 nuisance model held fixed.

use idens_autodiff::{Ema, Graph, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::ConditionalModel;
use crate::data::{Arm, ObservationalDataset, StandardizationParams};
use crate::error::{invalid, CoreError, Result};
use crate::flow::{spline_bound, FlowModel};
use crate::numeric::{derive_seed, linspace};
use crate::train::{run_loop, sample_batch, LoopConfig, OptimizerKind};

/// Equidistant rectangle-rule grid on `[y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub y_min: f64,
    pub y_max: f64,
    pub k: usize,
}

impl QuadratureGrid {
    pub fn new(y_min: f64, y_max: f64, k: usize) -> Result<Self> {
        if k < 2 || !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(invalid(format!(
                "invalid quadrature grid [{y_min}, {y_max}] with {k} points"
            )));
        }
        Ok(Self { y_min, y_max, k })
    }

    /// Grid spanning the observed range of the first outcome column.
    pub fn from_outcomes(data: &ObservationalDataset, k: usize) -> Result<Self> {
        let (lo, hi) = data.outcome_range()[0];
        Self::new(lo, hi, k)
    }

    pub fn step(&self) -> f64 {
        (self.y_max - self.y_min) / (self.k - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        linspace(self.y_min, self.y_max, self.k)
    }
}

/// How the cross-entropy integral over `y` is approximated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrossEntropyRule {
    /// Rectangle rule on a grid (one-dimensional outcomes).
    Grid(QuadratureGrid),
    /// `draws` samples from the nuisance conditionals, seeded.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrConfig {
    /// Units with `pi_a(x) < clip` are excluded from the correction.
    pub clip: f64,
    pub enabled: bool,
}

impl Default for BiasCorrConfig {
    fn default() -> Self {
        Self {
            clip: 0.05,
            enabled: true,
        }
    }
}

impl BiasCorrConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip > 0.0 && self.clip < 0.5 {
            Ok(())
        } else {
            Err(invalid(format!(
                "propensity clip {} outside (0, 0.5)",
                self.clip
            )))
        }
    }

    /// `1(A = arm and pi_arm >= clip) / pi_arm`, zero when disabled.
    pub fn weight(&self, treated_in_arm: bool, pi_arm: f64) -> f64 {
        if self.enabled && treated_in_arm && pi_arm >= self.clip {
            1.0 / pi_arm
        } else {
            0.0
        }
    }
}

/// Anything that can score outcome points with a log-density.
pub trait LogDensity {
    fn log_density_many(&self, ys: &Tensor) -> Result<Vec<f64>>;
}

impl LogDensity for FlowModel {
    fn log_density_many(&self, ys: &Tensor) -> Result<Vec<f64>> {
        self.log_prob_many(ys)
    }
}

impl<F: Fn(&[f64]) -> f64> LogDensity for F {
    fn log_density_many(&self, ys: &Tensor) -> Result<Vec<f64>> {
        Ok((0..ys.rows()).map(|i| self(ys.row_slice(i))).collect())
    }
}

fn grid_conditionals(
    nuisance: &dyn ConditionalModel,
    x: &[f64],
    arm: Arm,
    pts: &Tensor,
) -> Vec<f64> {
    nuisance
        .cond_log_prob_many(x, arm, pts)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Conditional cross-entropy `L_CCE(x) = -E_{P(Y | x, arm)} log g(Y)`.
pub fn cce_loss(
    g: &dyn LogDensity,
    nuisance: &dyn ConditionalModel,
    x: &[f64],
    rule: &CrossEntropyRule,
    arm: Arm,
) -> Result<f64> {
    match rule {
        CrossEntropyRule::Grid(grid) => {
            let pts = Tensor::column(grid.points());
            let lg = g.log_density_many(&pts)?;
            let p = grid_conditionals(nuisance, x, arm, &pts);
            Ok(-grid.step() * lg.iter().zip(&p).map(|(l, q)| l * q).sum::<f64>())
        }
        CrossEntropyRule::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let ys = nuisance.cond_sample(x, arm, *draws, &mut rng);
            let lg = g.log_density_many(&ys)?;
            Ok(-lg.iter().sum::<f64>() / *draws as f64)
        }
    }
}

/// Cross-entropy against the batch mixture of conditionals,
/// `L_CE = -E log g(Y)` with `Y ~ mean_i P(. | X_i, arm)`.
pub fn ce_loss(
    g: &dyn LogDensity,
    nuisance: &dyn ConditionalModel,
    batch: &ObservationalDataset,
    rule: &CrossEntropyRule,
    arm: Arm,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("cross-entropy needs a nonempty batch"));
    }
    let n = batch.len();
    match rule {
        CrossEntropyRule::Grid(grid) => {
            let pts = Tensor::column(grid.points());
            let lg = g.log_density_many(&pts)?;
            let mut w = vec![0.0; grid.k];
            for i in 0..n {
                for (wj, p) in w.iter_mut().zip(grid_conditionals(
                    nuisance,
                    batch.x().row_slice(i),
                    arm,
                    &pts,
                )) {
                    *wj += p / n as f64;
                }
            }
            Ok(-grid.step() * lg.iter().zip(&w).map(|(l, q)| l * q).sum::<f64>())
        }
        CrossEntropyRule::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let ys = mixture_draws(nuisance, batch, arm, *draws, &mut rng);
            let lg = g.log_density_many(&ys)?;
            Ok(-lg.iter().sum::<f64>() / *draws as f64)
        }
    }
}

fn mixture_draws(
    nuisance: &dyn ConditionalModel,
    batch: &ObservationalDataset,
    arm: Arm,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let d = nuisance.outcome_dim();
    let mut v = Vec::with_capacity(draws * d);
    for _ in 0..draws {
        let i = rng.random_range(0..batch.len());
        v.extend_from_slice(
            nuisance
                .cond_sample(batch.x().row_slice(i), arm, 1, rng)
                .values(),
        );
    }
    Tensor::new([draws, d], v)
}

/// Per-unit correction terms
/// `1(A_i = arm, pi >= clip) / pi * (-log g(Y_i) - L_CCE(X_i))`.
pub fn correction_terms(
    g: &dyn LogDensity,
    nuisance: &dyn ConditionalModel,
    batch: &ObservationalDataset,
    rule: &CrossEntropyRule,
    arm: Arm,
    cfg: &BiasCorrConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lg_y = g.log_density_many(batch.y())?;
    (0..batch.len())
        .map(|i| {
            let x = batch.x().row_slice(i);
            let w = cfg.weight(batch.arm(i) == arm, nuisance.arm_propensity(x, arm));
            if w == 0.0 {
                return Ok(0.0);
            }
            let rule_i = match rule {
                CrossEntropyRule::MonteCarlo { draws, seed } => CrossEntropyRule::MonteCarlo {
                    draws: *draws,
                    seed: derive_seed(*seed, i as u64 + 1),
                },
                r => *r,
            };
            Ok(w * (-lg_y[i] - cce_loss(g, nuisance, x, &rule_i, arm)?))
        })
        .collect()
}

/// `L_T = L_CE + mean_i correction_i`.
pub fn bias_corrected_loss(
    g: &dyn LogDensity,
    nuisance: &dyn ConditionalModel,
    batch: &ObservationalDataset,
    rule: &CrossEntropyRule,
    arm: Arm,
    cfg: &BiasCorrConfig,
) -> Result<f64> {
    let ce = ce_loss(g, nuisance, batch, rule, arm)?;
    let corr = correction_terms(g, nuisance, batch, rule, arm, cfg)?;
    Ok(ce + corr.iter().sum::<f64>() / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetHyperparams {
    pub n_knots: usize,
    pub n_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub n_iter: usize,
    pub ema: f64,
    /// Grid size (one-dimensional) or Monte-Carlo draws (two-dimensional).
    pub k: usize,
    /// Hidden width of the autoregressive conditioner (two-dimensional).
    pub hidden: usize,
}

impl Default for TargetHyperparams {
    fn default() -> Self {
        Self {
            n_knots: 5,
            n_layers: 1,
            lr: 0.005,
            batch_size: 64,
            n_iter: 4000,
            ema: 0.995,
            k: 100,
            hidden: 10,
        }
    }
}

/// Fitted interventional densities `g(.; beta_0)`, `g(.; beta_1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFlowPair {
    pub flows: [FlowModel; 2],
    /// Maps original outcomes to the units the flows live in.
    pub standardization: StandardizationParams,
    pub grid: Option<QuadratureGrid>,
    pub bias_correction: BiasCorrConfig,
}

impl TargetFlowPair {
    pub fn with_standardization(mut self, params: StandardizationParams) -> Self {
        self.standardization = params;
        self
    }

    pub fn flow(&self, arm: Arm) -> &FlowModel {
        &self.flows[arm.index()]
    }

    /// Log-densities in original outcome units for the rows of `ys`.
    pub fn log_prob_many(&self, arm: Arm, ys: &Tensor) -> Result<Vec<f64>> {
        let z = self.standardization.forward(ys);
        let shift = self.standardization.log_scale();
        Ok(self
            .flow(arm)
            .log_prob_many(&z)?
            .into_iter()
            .map(|v| v - shift)
            .collect())
    }

    pub fn inf_log_prob(&self, a: usize, y: &[f64]) -> Result<f64> {
        let arm = Arm::from_index(a)?;
        Ok(self.log_prob_many(arm, &Tensor::row(y.to_vec()))?[0])
    }

    /// Draws in original outcome units.
    pub fn inf_sample(&self, a: usize, n: usize, seed: u64) -> Result<Tensor> {
        let arm = Arm::from_index(a)?;
        Ok(self
            .standardization
            .inverse(&self.flow(arm).sample(n, seed)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        for f in &p.flows {
            f.validate()?;
        }
        let st = &p.standardization;
        let dim = p.flows[0].dim();
        if p.flows[1].dim() != dim
            || st.mean.len() != dim
            || st.scale.len() != dim
            || !st.mean.iter().all(|m| m.is_finite())
            || !st.scale.iter().all(|s| *s > 0.0 && s.is_finite())
        {
            return Err(invalid("target checkpoint is internally inconsistent"));
        }
        if let Some(g) = &p.grid {
            QuadratureGrid::new(g.y_min, g.y_max, g.k)?;
        }
        p.bias_correction.validate()?;
        Ok(p)
    }
}

/// Frozen nuisance quantities on the training sample.
struct Precomputed {
    /// Per arm: `[n, K]` conditional densities on the grid (1-D only).
    grid_dens: Vec<Tensor>,
    /// Per arm and unit: correction weight.
    weights: [Vec<f64>; 2],
}

fn precompute(
    nuisance: &dyn ConditionalModel,
    data: &ObservationalDataset,
    grid: Option<&QuadratureGrid>,
    cfg: &BiasCorrConfig,
) -> Precomputed {
    let n = data.len();
    let mut grid_dens = Vec::new();
    if let Some(grid) = grid {
        let pts = Tensor::column(grid.points());
        for arm in Arm::BOTH {
            let mut v = Vec::with_capacity(n * grid.k);
            for i in 0..n {
                v.extend(grid_conditionals(
                    nuisance,
                    data.x().row_slice(i),
                    arm,
                    &pts,
                ));
            }
            grid_dens.push(Tensor::new([n, grid.k], v));
        }
    }
    let weights = Arm::BOTH.map(|arm| {
        (0..n)
            .map(|i| {
                cfg.weight(
                    data.arm(i) == arm,
                    nuisance.arm_propensity(data.x().row_slice(i), arm),
                )
            })
            .collect()
    });
    Precomputed { grid_dens, weights }
}

/// Records `L_T` for one arm as a weighted sum of log-densities, using
/// `sum_i w_i L_CCE(X_i) = -h sum_j (sum_i w_i P_ij) log g(y_j)`.
#[allow(clippy::too_many_arguments)]
fn arm_objective(
    g: &mut Graph,
    flow: &FlowModel,
    vars: &[Var],
    nuisance: &dyn ConditionalModel,
    data: &ObservationalDataset,
    pre: &Precomputed,
    grid: Option<&QuadratureGrid>,
    k: usize,
    arm: Arm,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Var {
    let b = idx.len() as f64;
    let wts: Vec<f64> = idx.iter().map(|&i| pre.weights[arm.index()][i]).collect();
    let (pts, coef) = match grid {
        Some(grid) => {
            let dens = &pre.grid_dens[arm.index()];
            let h = grid.step();
            let mut coef = vec![0.0; grid.k];
            for (&i, &w) in idx.iter().zip(&wts) {
                for (c, &p) in coef.iter_mut().zip(dens.row_slice(i)) {
                    *c += -h * p * (1.0 - w) / b;
                }
            }
            (Tensor::column(grid.points()), coef)
        }
        None => {
            let batch = data.subset(idx);
            let ce = mixture_draws(nuisance, &batch, arm, k, rng);
            let d = ce.cols();
            let mut pts = ce.into_values();
            let mut coef = vec![-1.0 / k as f64; k];
            for (&i, &w) in idx.iter().zip(&wts) {
                if w == 0.0 {
                    continue;
                }
                let s =
                    nuisance.cond_sample(data.x().row_slice(i), arm, k, rng as &mut dyn RngCore);
                pts.extend_from_slice(s.values());
                coef.extend(std::iter::repeat_n(w / (b * k as f64), k));
            }
            let m = pts.len() / d;
            (Tensor::new([m, d], pts), coef)
        }
    };
    let lg = flow.log_prob_graph(g, vars, &pts);
    let cv = g.constant(Tensor::row(coef));
    let mut total = g.matmul(cv, lg);
    if wts.iter().any(|&w| w != 0.0) {
        let ys = data.y().select_rows(idx);
        let lg_y = flow.log_prob_graph(g, vars, &ys);
        let wy = g.constant(Tensor::row(wts.iter().map(|w| -w / b).collect()));
        let corr = g.matmul(wy, lg_y);
        total = g.add(total, corr);
    }
    total
}

/// As [`train_target`], also returning per-iteration losses per arm.
pub fn train_target_traced(
    nuisance: &dyn ConditionalModel,
    data: &ObservationalDataset,
    hp: &TargetHyperparams,
    cfg: &BiasCorrConfig,
    seed: u64,
) -> Result<(TargetFlowPair, Vec<[f64; 2]>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("cannot train target flows on an empty dataset"));
    }
    if data.dy() != nuisance.outcome_dim() {
        return Err(invalid("nuisance and data outcome dimensions differ"));
    }
    let ranges = data.outcome_range();
    let (template, grid) = match data.dy() {
        1 => {
            let grid = QuadratureGrid::new(ranges[0].0, ranges[0].1, hp.k)?;
            let b = spline_bound(ranges[0].0, ranges[0].1);
            (FlowModel::spline(hp.n_knots, b, hp.n_layers), Some(grid))
        }
        2 => {
            let bounds = [
                spline_bound(ranges[0].0, ranges[0].1),
                spline_bound(ranges[1].0, ranges[1].1),
            ];
            (
                FlowModel::autoregressive(hp.n_knots, bounds, hp.hidden, derive_seed(seed, 3)),
                None,
            )
        }
        d => return Err(CoreError::Unsupported(format!("{d}-dimensional outcomes"))),
    };
    template.validate()?;
    let pre = precompute(nuisance, data, grid.as_ref(), cfg);
    let per_arm = template.params().len();
    let mut params: Vec<Tensor> = template
        .params()
        .into_iter()
        .chain(template.params())
        .collect();
    let mut ema = Ema::new(hp.ema, params.clone())?;
    let loop_cfg = LoopConfig {
        n_iter: hp.n_iter,
        batch_size: hp.batch_size,
        lr: hp.lr,
        optimizer: OptimizerKind::Adam,
    };
    let mut trace = Vec::with_capacity(hp.n_iter);
    let mut iteration = 0usize;
    run_loop(
        "target training",
        &mut params,
        &loop_cfg,
        derive_seed(seed, 4),
        |g, vars, rng| {
            let idx = sample_batch(data.len(), hp.batch_size, rng);
            let mut losses = [0.0; 2];
            let mut parts = Vec::with_capacity(2);
            for arm in Arm::BOTH {
                let v = &vars[arm.index() * per_arm..(arm.index() + 1) * per_arm];
                let l = arm_objective(
                    g,
                    &template,
                    v,
                    nuisance,
                    data,
                    &pre,
                    grid.as_ref(),
                    hp.k,
                    arm,
                    &idx,
                    rng,
                );
                losses[arm.index()] = g.value(l).item();
                if !losses[arm.index()].is_finite() {
                    return Err(CoreError::Diverged {
                        stage: format!("target flow for arm {arm}"),
                        iteration,
                    });
                }
                parts.push(l);
            }
            trace.push(losses);
            iteration += 1;
            Ok(g.add(parts[0], parts[1]))
        },
        |p| {
            let refs: Vec<&Tensor> = p.iter().collect();
            ema.update(&refs).map_err(CoreError::from)
        },
    )?;
    let smoothed = ema.into_smoothed();
    let mut flows = [template.clone(), template];
    for arm in Arm::BOTH {
        flows[arm.index()]
            .set_params(&smoothed[arm.index() * per_arm..(arm.index() + 1) * per_arm]);
    }
    let pair = TargetFlowPair {
        flows,
        standardization: StandardizationParams::identity(data.dy()),
        grid,
        bias_correction: *cfg,
    };
    Ok((pair, trace))
}

/// Stage-2 fit: both arms share each minibatch; Adam steps on `L_T`; the
/// returned flows carry the EMA of the iterates.
pub fn train_target(
    nuisance: &dyn ConditionalModel,
    data: &ObservationalDataset,
    hp: &TargetHyperparams,
    cfg: &BiasCorrConfig,
    seed: u64,
) -> Result<TargetFlowPair> {
    train_target_traced(nuisance, data, hp, cfg, seed).map(|(p, _)| p)
}
