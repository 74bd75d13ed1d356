//! The benchmark protocol: split, standardize on train, tune on the first
//! split, fit, evaluate per arm in and out of sample.

use std::collections::BTreeMap;
use std::time::Instant;

use idens_autodiff::Tensor;
use idens_core::data::{
    load_csv, moons_sample, scm_sample, split_indices, Arm, MoonsConfig, ObservationalDataset,
    ScmConfig, StandardizationParams,
};
use idens_core::metrics::{avg_log_prob, empirical_wasserstein};
use idens_core::numeric::{derive_seed, linspace};
use idens_core::target::QuadratureGrid;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Family, Method};
use crate::error::{BenchError, Result};
use crate::methods::{fit_family, Estimate, FamilyFit};
use crate::results::{EvalTarget, ResultRow};
use crate::tune::{tune_hyperparams, TuneOutcome};

/// Chosen hyperparameters per family.
pub type Tuned = BTreeMap<Family, TuneOutcome>;

/// Materializes the configured data source. Synthetic sources are drawn
/// from a seed derived from the experiment seed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<ObservationalDataset> {
    let seed = derive_seed(cfg.seed, 0);
    Ok(match &cfg.data {
        DataSource::Scm { b, n } => scm_sample(&ScmConfig { b: *b, n: *n, seed })?,
        DataSource::Moons { sigma, n } => moons_sample(&MoonsConfig::new(*sigma, *n, seed))?,
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
    })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: ObservationalDataset,
    pub dataset_id: String,
    pub methods: Vec<Method>,
    pub families: Vec<Family>,
    pub wasserstein: bool,
}

/// Validates everything that can fail before training starts.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let methods = cfg.parsed_methods()?;
    let k = (1.0 / (1.0 - cfg.split.train_fraction)).round() as usize;
    if cfg.split.folds > k {
        return Err(BenchError::Config(format!(
            "{} folds requested but a train fraction of {} gives only {k}",
            cfg.split.folds, cfg.split.train_fraction
        )));
    }
    let dataset = load_dataset(cfg)?;
    let wasserstein = match cfg.output.wasserstein {
        Some(true) if dataset.y_cf().is_none() => {
            return Err(BenchError::Config(
                "Wasserstein distances need counterfactual outcomes, which the dataset lacks"
                    .into(),
            ))
        }
        Some(w) => w,
        None => dataset.y_cf().is_some(),
    };
    let mut families: Vec<Family> = methods.iter().map(|m| m.family()).collect();
    families.sort();
    families.dedup();
    Ok(Prepared {
        dataset,
        dataset_id: cfg.data.id(),
        methods,
        families,
        wasserstein,
    })
}

/// One train/test split with outcomes standardized on the training side.
pub struct FoldData {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub standardization: StandardizationParams,
    pub train_raw: ObservationalDataset,
    pub test_raw: ObservationalDataset,
    pub train: ObservationalDataset,
}

pub fn fold_data(cfg: &ExperimentConfig, p: &Prepared, fold: usize) -> Result<FoldData> {
    let (train_indices, test_indices) = split_indices(
        p.dataset.len(),
        cfg.split.train_fraction,
        fold,
        cfg.split_seed(),
    )?;
    let train_raw = p.dataset.subset(&train_indices);
    let test_raw = p.dataset.subset(&test_indices);
    let standardization = StandardizationParams::fit(train_raw.y())?;
    let train = standardization.apply(&train_raw);
    Ok(FoldData {
        train_indices,
        test_indices,
        standardization,
        train_raw,
        test_raw,
        train,
    })
}

fn fold_seed(cfg: &ExperimentConfig, fold: usize) -> u64 {
    derive_seed(cfg.seed, 1000 + fold as u64)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Contract(format!("thread pool: {e}")))
}

/// Tunes every needed family on the training side of the first split.
pub fn tune_all(cfg: &ExperimentConfig, p: &Prepared, jobs: usize) -> Result<Tuned> {
    let fd = fold_data(cfg, p, 0)?;
    let seed = derive_seed(cfg.seed, 1);
    let outcomes: Vec<Result<TuneOutcome>> = pool(jobs)?.install(|| {
        p.families
            .par_iter()
            .map(|&family| {
                let mut grid = cfg.grid(family);
                if !cfg.tuning.enabled {
                    // First value of each key.
                    grid.values_mut().for_each(|v| v.truncate(1));
                }
                tune_hyperparams(
                    family,
                    &fd.train,
                    &grid,
                    cfg.tuning.budget,
                    cfg.tuning.cv_folds,
                    &cfg.training,
                    derive_seed(seed, family as u64),
                )
            })
            .collect()
    });
    outcomes
        .into_iter()
        .map(|o| o.map(|t| (t.family, t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedFit {
    pub fit: FamilyFit,
    pub fit_secs: f64,
}

/// Everything needed to evaluate one fold without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCheckpoint {
    pub dataset_id: String,
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub standardization: StandardizationParams,
    pub fits: Vec<TimedFit>,
}

impl FoldCheckpoint {
    pub fn fit(&self, family: Family) -> Option<&TimedFit> {
        self.fits.iter().find(|f| f.fit.family() == family)
    }
}

pub fn train_fold(
    cfg: &ExperimentConfig,
    p: &Prepared,
    tuned: &Tuned,
    fold: usize,
) -> Result<FoldCheckpoint> {
    let fd = fold_data(cfg, p, fold)?;
    let mut fits = Vec::with_capacity(p.families.len());
    for &family in &p.families {
        let hp = tuned.get(&family).ok_or_else(|| {
            BenchError::Contract(format!("no tuned hyperparameters for `{}`", family.name()))
        })?;
        let t0 = Instant::now();
        let fit = fit_family(
            family,
            &p.methods,
            &hp.chosen,
            &cfg.training,
            &fd.train,
            derive_seed(fold_seed(cfg, fold), 1 + family as u64),
        )?;
        fits.push(TimedFit {
            fit,
            fit_secs: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(FoldCheckpoint {
        dataset_id: p.dataset_id.clone(),
        fold,
        train_indices: fd.train_indices,
        test_indices: fd.test_indices,
        standardization: fd.standardization,
        fits,
    })
}

/// A density evaluated on a plotting grid, in original outcome units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDump {
    pub method: Method,
    pub arm: u8,
    pub fold: usize,
    pub points: Tensor,
    pub density: Vec<f64>,
}

fn dump_grid(train: &ObservationalDataset) -> Tensor {
    let ranges = train.outcome_range();
    match ranges.as_slice() {
        [(lo, hi)] => Tensor::column(linspace(lo - 1.0, hi + 1.0, 200)),
        _ => {
            let a = linspace(ranges[0].0 - 1.0, ranges[0].1 + 1.0, 40);
            let b = linspace(ranges[1].0 - 1.0, ranges[1].1 + 1.0, 40);
            Tensor::from_rows(
                &a.iter()
                    .flat_map(|&u| b.iter().map(move |&v| vec![u, v]))
                    .collect::<Vec<_>>(),
            )
        }
    }
}

pub struct FoldEvaluation {
    pub rows: Vec<ResultRow>,
    pub dumps: Vec<DensityDump>,
}

fn eval_sample(data: &ObservationalDataset, arm: Arm) -> (Tensor, EvalTarget) {
    match data.interventional(arm) {
        Some(t) => (t, EvalTarget::Interventional),
        None => (data.factual(arm), EvalTarget::Factual),
    }
}

pub fn evaluate_fold(
    cfg: &ExperimentConfig,
    p: &Prepared,
    ckpt: &FoldCheckpoint,
) -> Result<FoldEvaluation> {
    let train_raw = p.dataset.subset(&ckpt.train_indices);
    let test_raw = p.dataset.subset(&ckpt.test_indices);
    let st = &ckpt.standardization;
    let train = st.apply(&train_raw);
    let seed = fold_seed(cfg, ckpt.fold);
    let mut rows = Vec::new();
    let mut dumps = Vec::new();
    for (mi, &method) in p.methods.iter().enumerate() {
        let fitted = ckpt
            .fit(method.family())
            .ok_or_else(|| BenchError::Contract(format!("checkpoint has no fit for `{method}`")))?;
        let est = Estimate {
            method,
            fit: &fitted.fit,
            reference: train.x(),
        };
        for arm in Arm::BOTH {
            let t0 = Instant::now();
            let lp = |ys: &Tensor| -> idens_core::Result<Vec<f64>> {
                let lps = est.log_density(arm, &st.forward(ys)).map_err(|e| match e {
                    BenchError::Core(c) => c,
                    other => idens_core::CoreError::InvalidInput(other.to_string()),
                })?;
                Ok(lps
                    .into_iter()
                    .map(|v| st.to_original_log_density(v))
                    .collect())
            };
            let (s_in, target) = eval_sample(&train_raw, arm);
            let (s_out, _) = eval_sample(&test_raw, arm);
            let log_prob_in = avg_log_prob(lp, &s_in)?.value;
            let log_prob_out = avg_log_prob(lp, &s_out)?.value;
            let (mut w_in, mut w_out) = (None, None);
            if p.wasserstein && p.dataset.dy() == 1 {
                let sample_seed = derive_seed(seed, 100 + 2 * mi as u64 + arm.index() as u64);
                if let Some(draws) = est.sample(arm, s_in.rows().max(s_out.rows()), sample_seed)? {
                    let draws = st.inverse(&draws);
                    w_in = Some(empirical_wasserstein(draws.values(), s_in.values())?);
                    w_out = Some(empirical_wasserstein(draws.values(), s_out.values())?);
                }
            }
            if cfg.output.dump_densities {
                let points = st.inverse(&dump_grid(&train));
                let density = lp(&points)?.into_iter().map(f64::exp).collect();
                dumps.push(DensityDump {
                    method,
                    arm: arm.index() as u8,
                    fold: ckpt.fold,
                    points,
                    density,
                });
            }
            rows.push(ResultRow {
                dataset: p.dataset_id.clone(),
                method,
                arm: arm.index() as u8,
                fold: ckpt.fold,
                target,
                log_prob_in,
                log_prob_out,
                wasserstein_in: w_in,
                wasserstein_out: w_out,
                wall_clock_secs: Some(fitted.fit_secs + t0.elapsed().as_secs_f64()),
            });
        }
    }
    Ok(FoldEvaluation { rows, dumps })
}

/// Quantities that must come from the training split only, as carried by
/// the fitted models of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub standardization: StandardizationParams,
    pub nuisance_bounds: Option<Vec<f64>>,
    pub target_grid: Option<QuadratureGrid>,
    pub kde_bandwidths: Option<[f64; 2]>,
    pub normalizer_ranges: Vec<Vec<(f64, f64)>>,
}

pub fn audit(ckpt: &FoldCheckpoint) -> FoldAudit {
    let mut a = FoldAudit {
        fold: ckpt.fold,
        train_indices: ckpt.train_indices.clone(),
        standardization: ckpt.standardization.clone(),
        nuisance_bounds: None,
        target_grid: None,
        kde_bandwidths: None,
        normalizer_ranges: Vec::new(),
    };
    for f in &ckpt.fits {
        match &f.fit {
            FamilyFit::Flow {
                nuisance,
                infs,
                infs_no_bias,
                ts,
            } => {
                a.nuisance_bounds = Some(nuisance.bounds.clone());
                a.target_grid = infs.as_ref().or(infs_no_bias.as_ref()).and_then(|p| p.grid);
                if let Some(n) = ts {
                    a.normalizer_ranges.push(n.normalizers[0].ranges.clone());
                }
            }
            FamilyFit::Kde(n) => {
                a.kde_bandwidths = Some(n.model.bandwidths);
                a.normalizer_ranges.push(n.normalizers[0].ranges.clone());
            }
            FamilyFit::Dkme(n) => a.normalizer_ranges.push(n.normalizers[0].ranges.clone()),
            FamilyFit::Tarnet(_) | FamilyFit::Mdn(_) => {}
        }
    }
    a
}

pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub tuned: Tuned,
    pub audits: Vec<FoldAudit>,
    pub dumps: Vec<DensityDump>,
}

/// Full protocol. Folds run on `jobs` worker threads; rows come back ordered
/// by fold, then configured method order, then arm.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    let p = prepare(cfg)?;
    let tuned = tune_all(cfg, &p, jobs)?;
    let per_fold: Vec<Result<(FoldEvaluation, FoldAudit)>> = pool(jobs)?.install(|| {
        (0..cfg.split.folds)
            .into_par_iter()
            .map(|fold| {
                let ckpt = train_fold(cfg, &p, &tuned, fold)?;
                Ok((evaluate_fold(cfg, &p, &ckpt)?, audit(&ckpt)))
            })
            .collect()
    });
    let mut out = ExperimentOutput {
        rows: Vec::new(),
        tuned,
        audits: Vec::new(),
        dumps: Vec::new(),
    };
    for r in per_fold {
        let (ev, au) = r?;
        out.rows.extend(ev.rows);
        out.dumps.extend(ev.dumps);
        out.audits.push(au);
    }
    Ok(out)
}
