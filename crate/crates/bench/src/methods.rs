//! Fitting each method family on a standardized training split and
//! evaluating the resulting interventional densities.

use std::collections::BTreeMap;

use idens_autodiff::Tensor;
use idens_core::baselines::{
    fit_dkme, fit_kde, fit_mdn, fit_tarnet_star, plugin_density, ts_fit, DkmeModel, GridNormalizer,
    KdeHyperparams, KdeModel, MdnModel, NeuralHyperparams, TarNetStarModel, TsModel,
};
use idens_core::conditional::ConditionalModel;
use idens_core::data::{Arm, ObservationalDataset};
use idens_core::nuisance::{train_nuisance, NoiseRegConfig, NuisanceHyperparams, NuisanceModel};
use idens_core::numeric::derive_seed;
use idens_core::target::{train_target, BiasCorrConfig, TargetFlowPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Family, Method, TrainingSpec};
use crate::error::{BenchError, Result};

/// One point of a hyperparameter grid.
pub type Candidate = BTreeMap<String, f64>;

fn get(c: &Candidate, key: &str, default: f64) -> f64 {
    c.get(key).copied().unwrap_or(default)
}

fn get_usize(c: &Candidate, key: &str, default: usize) -> Result<usize> {
    let v = get(c, key, default as f64);
    if v < 1.0 || v.fract() != 0.0 {
        return Err(BenchError::Config(format!(
            "`{key}` must be a positive integer, got {v}"
        )));
    }
    Ok(v as usize)
}

pub fn noise_of(c: &Candidate) -> NoiseRegConfig {
    NoiseRegConfig {
        sigma_x2: get(c, "sigma_x2", 0.0),
        sigma_y2: get(c, "sigma_y2", 0.0),
    }
}

pub fn nuisance_hp(c: &Candidate, t: &TrainingSpec) -> Result<NuisanceHyperparams> {
    Ok(NuisanceHyperparams {
        n_knots: get_usize(c, "n_knots", 10)?,
        lr: get(c, "lr", 0.005),
        batch_size: get_usize(c, "batch_size", 32)?,
        n_iter: t.nuisance_iters,
        alpha: t.alpha,
        hidden: t.hidden,
        d_r: t.d_r,
    })
}

pub fn neural_hp(c: &Candidate, t: &TrainingSpec) -> Result<NeuralHyperparams> {
    Ok(NeuralHyperparams {
        lr: get(c, "lr", 0.005),
        batch_size: get_usize(c, "batch_size", 32)?,
        n_iter: t.baseline_iters,
        alpha: t.alpha,
        hidden: t.hidden,
        d_r: t.d_r,
        n_components: get_usize(c, "n_components", 5)?,
    })
}

pub fn kde_hp(c: &Candidate, t: &TrainingSpec) -> Result<KdeHyperparams> {
    Ok(KdeHyperparams {
        lr: get(c, "lr", 0.005),
        batch_size: get_usize(c, "batch_size", 64)?,
        n_iter: t.kde_iters,
        alpha: t.alpha,
        hidden: t.hidden,
        d_r: t.d_r,
    })
}

pub fn dkme_hp(c: &Candidate) -> (f64, f64) {
    (get(c, "sigma_k", 1.0), get(c, "eps", 1.0))
}

/// `-(1/n) sum_i log p(Y_i | X_i, A_i)`.
pub fn conditional_nll(model: &dyn ConditionalModel, data: &ObservationalDataset) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| -model.cond_log_prob(data.x().row_slice(i), data.arm(i), data.y().row_slice(i)))
        .sum();
    total / data.len() as f64
}

fn clip_cfg(t: &TrainingSpec) -> BiasCorrConfig {
    BiasCorrConfig {
        clip: t.clip,
        enabled: true,
    }
}

pub fn ts_dim(t: &TrainingSpec, dy: usize) -> usize {
    t.ts_dim.unwrap_or(if dy == 1 { 10 } else { 5 })
}

/// Grid-normalized raw estimator, one normalizer per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized<M> {
    pub model: M,
    pub normalizers: [GridNormalizer; 2],
}

fn normalize<M>(
    model: M,
    ranges: &[(f64, f64)],
    raw: impl Fn(&M, Arm, &Tensor) -> idens_core::Result<Vec<f64>>,
) -> Result<Normalized<M>> {
    let n0 = GridNormalizer::fit(|ys| raw(&model, Arm::Control, ys), ranges)?;
    let n1 = GridNormalizer::fit(|ys| raw(&model, Arm::Treated, ys), ranges)?;
    Ok(Normalized {
        model,
        normalizers: [n0, n1],
    })
}

fn kde_raw(m: &KdeModel, arm: Arm, ys: &Tensor) -> idens_core::Result<Vec<f64>> {
    m.density_raw(arm, ys)
}

fn dkme_raw(m: &DkmeModel, arm: Arm, ys: &Tensor) -> idens_core::Result<Vec<f64>> {
    Ok(m.density_raw(arm, ys))
}

fn ts_raw(m: &TsModel, arm: Arm, ys: &Tensor) -> idens_core::Result<Vec<f64>> {
    Ok(m.density_raw(arm, ys))
}

/// Fitted models of one family, in standardized outcome units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum FamilyFit {
    Flow {
        nuisance: NuisanceModel,
        infs: Option<TargetFlowPair>,
        infs_no_bias: Option<TargetFlowPair>,
        ts: Option<Normalized<TsModel>>,
    },
    Tarnet(TarNetStarModel),
    Mdn(MdnModel),
    Kde(Normalized<KdeModel>),
    Dkme(Normalized<DkmeModel>),
}

impl FamilyFit {
    pub fn family(&self) -> Family {
        match self {
            FamilyFit::Flow { .. } => Family::Flow,
            FamilyFit::Tarnet(_) => Family::Tarnet,
            FamilyFit::Mdn(_) => Family::Mdn,
            FamilyFit::Kde(_) => Family::Kde,
            FamilyFit::Dkme(_) => Family::Dkme,
        }
    }
}

/// Fits `family` on `train` (standardized) for the requested `methods`.
pub fn fit_family(
    family: Family,
    methods: &[Method],
    hp: &Candidate,
    t: &TrainingSpec,
    train: &ObservationalDataset,
    seed: u64,
) -> Result<FamilyFit> {
    let ranges = train.outcome_range();
    Ok(match family {
        Family::Flow => {
            let nuisance = train_nuisance(
                train,
                &nuisance_hp(hp, t)?,
                &noise_of(hp),
                derive_seed(seed, 0),
            )?;
            let wants = |m| methods.contains(&m);
            let infs = if wants(Method::Infs) {
                Some(train_target(
                    &nuisance,
                    train,
                    &t.target,
                    &clip_cfg(t),
                    derive_seed(seed, 1),
                )?)
            } else {
                None
            };
            let infs_no_bias = if wants(Method::InfsNoBias) {
                let cfg = BiasCorrConfig {
                    clip: t.clip,
                    enabled: false,
                };
                Some(train_target(
                    &nuisance,
                    train,
                    &t.target,
                    &cfg,
                    derive_seed(seed, 2),
                )?)
            } else {
                None
            };
            let ts = if wants(Method::CnfTs) {
                let m = ts_fit(
                    &nuisance,
                    train,
                    ts_dim(t, train.dy()),
                    &clip_cfg(t),
                    derive_seed(seed, 3),
                )?;
                Some(normalize(m, &ranges, ts_raw)?)
            } else {
                None
            };
            FamilyFit::Flow {
                nuisance,
                infs,
                infs_no_bias,
                ts,
            }
        }
        Family::Tarnet => FamilyFit::Tarnet(fit_tarnet_star(
            train,
            &neural_hp(hp, t)?,
            &noise_of(hp),
            seed,
        )?),
        Family::Mdn => FamilyFit::Mdn(fit_mdn(train, &neural_hp(hp, t)?, &noise_of(hp), seed)?),
        Family::Kde => {
            let m = fit_kde(train, &kde_hp(hp, t)?, &clip_cfg(t), seed)?;
            FamilyFit::Kde(normalize(m, &ranges, kde_raw)?)
        }
        Family::Dkme => {
            let (sigma_k, eps) = dkme_hp(hp);
            FamilyFit::Dkme(normalize(
                fit_dkme(train, sigma_k, eps)?,
                &ranges,
                dkme_raw,
            )?)
        }
    })
}

fn missing(method: Method) -> BenchError {
    BenchError::Contract(format!("no fitted model for method `{method}`"))
}

fn ln_all(d: Vec<f64>) -> Vec<f64> {
    d.into_iter()
        .map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Estimated interventional density for one method, in standardized units.
pub struct Estimate<'a> {
    pub method: Method,
    pub fit: &'a FamilyFit,
    /// Training covariates, the reference distribution of plug-in estimates.
    pub reference: &'a Tensor,
}

impl Estimate<'_> {
    fn conditional(&self) -> Option<&dyn ConditionalModel> {
        match (self.method, self.fit) {
            (Method::CnfPlugin, FamilyFit::Flow { nuisance, .. }) => Some(nuisance),
            (Method::TarnetStar, FamilyFit::Tarnet(m)) => Some(m),
            (Method::Mdn, FamilyFit::Mdn(m)) => Some(m),
            _ => None,
        }
    }

    fn target(&self) -> Option<&TargetFlowPair> {
        match (self.method, self.fit) {
            (Method::Infs, FamilyFit::Flow { infs, .. }) => infs.as_ref(),
            (Method::InfsNoBias, FamilyFit::Flow { infs_no_bias, .. }) => infs_no_bias.as_ref(),
            _ => None,
        }
    }

    pub fn log_density(&self, arm: Arm, ys: &Tensor) -> Result<Vec<f64>> {
        if let Some(pair) = self.target() {
            return Ok(pair.log_prob_many(arm, ys)?);
        }
        if let Some(model) = self.conditional() {
            return Ok(ln_all(plugin_density(model, self.reference, arm, ys)?));
        }
        let a = arm.index();
        let raw = match (self.method, self.fit) {
            (Method::CnfTs, FamilyFit::Flow { ts: Some(n), .. }) => {
                n.normalizers[a].apply(n.model.density_raw(arm, ys))
            }
            (Method::Kde, FamilyFit::Kde(n)) => {
                n.normalizers[a].apply(n.model.density_raw(arm, ys)?)
            }
            (Method::Dkme, FamilyFit::Dkme(n)) => {
                n.normalizers[a].apply(n.model.density_raw(arm, ys))
            }
            (m, _) => return Err(missing(m)),
        };
        Ok(ln_all(raw))
    }

    /// `n` draws, or `None` for estimators without a sampler.
    pub fn sample(&self, arm: Arm, n: usize, seed: u64) -> Result<Option<Tensor>> {
        if let Some(pair) = self.target() {
            return Ok(Some(pair.inf_sample(arm.index(), n, seed)?));
        }
        if let Some(model) = self.conditional() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = model.outcome_dim();
            let mut values = Vec::with_capacity(n * d);
            for _ in 0..n {
                let i = rng.random_range(0..self.reference.rows());
                let draw = model.cond_sample(self.reference.row_slice(i), arm, 1, &mut rng);
                values.extend_from_slice(draw.values());
            }
            return Ok(Some(Tensor::new([n, d], values)));
        }
        if self.method.can_sample() {
            return Err(missing(self.method));
        }
        Ok(None)
    }
}
