//! Hyperparameter selection by k-fold cross-validation on a training split.

use idens_core::baselines::{dkme_ridge_mse, fit_kde, fit_mdn, fit_tarnet_star};
use idens_core::data::{kfold_indices, ObservationalDataset};
use idens_core::nuisance::train_nuisance;
use idens_core::numeric::derive_seed;
use idens_core::target::BiasCorrConfig;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Family, Grid, TrainingSpec};
use crate::error::{BenchError, Result};
use crate::methods::{
    conditional_nll, dkme_hp, kde_hp, neural_hp, noise_of, nuisance_hp, Candidate,
};

/// Cartesian product of `grid`, keys in sorted order, last key fastest.
pub fn candidates(grid: &Grid) -> Vec<Candidate> {
    let mut out = vec![Candidate::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v);
                    c
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: Candidate,
    /// Mean validation criterion; `None` if any fold failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub family: Family,
    pub chosen: Candidate,
    /// Empty when the grid had a single point and nothing was trained.
    pub scores: Vec<CandidateScore>,
}

/// Validation criterion of one candidate trained on `train`.
fn score(
    family: Family,
    c: &Candidate,
    t: &TrainingSpec,
    train: &ObservationalDataset,
    valid: &ObservationalDataset,
    seed: u64,
) -> Result<f64> {
    let clip = BiasCorrConfig {
        clip: t.clip,
        enabled: true,
    };
    Ok(match family {
        Family::Flow => {
            train_nuisance(train, &nuisance_hp(c, t)?, &noise_of(c), seed)?.mean_nll(valid)
        }
        Family::Tarnet => conditional_nll(
            &fit_tarnet_star(train, &neural_hp(c, t)?, &noise_of(c), seed)?,
            valid,
        ),
        Family::Mdn => conditional_nll(
            &fit_mdn(train, &neural_hp(c, t)?, &noise_of(c), seed)?,
            valid,
        ),
        Family::Kde => fit_kde(train, &kde_hp(c, t)?, &clip, seed)?.validation_loss(valid),
        Family::Dkme => {
            let (sigma_k, eps) = dkme_hp(c);
            dkme_ridge_mse(train, valid, sigma_k, eps)?
        }
    })
}

/// Picks the candidate with the lowest mean criterion over `cv_folds`
/// folds of `train`. Neural families search a seeded random subset of at
/// most `budget` candidates; kernel families search the full grid. Ties go
/// to the earlier candidate.
pub fn tune_hyperparams(
    family: Family,
    train: &ObservationalDataset,
    grid: &Grid,
    budget: usize,
    cv_folds: usize,
    t: &TrainingSpec,
    seed: u64,
) -> Result<TuneOutcome> {
    let all = candidates(grid);
    if all.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(BenchError::Config(format!(
            "grid for `{}` is empty",
            family.name()
        )));
    }
    if all.len() == 1 {
        return Ok(TuneOutcome {
            family,
            chosen: all.into_iter().next().unwrap_or_default(),
            scores: Vec::new(),
        });
    }
    let pool = if family.exhaustive() || budget >= all.len() {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let mut idx = sample(&mut rng, all.len(), budget).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i].clone()).collect()
    };
    let folds = kfold_indices(train.len(), cv_folds, derive_seed(seed, 1))?;
    let splits: Vec<(ObservationalDataset, ObservationalDataset)> = folds
        .iter()
        .enumerate()
        .map(|(k, valid)| {
            let rest: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            (train.subset(&rest), train.subset(valid))
        })
        .collect();

    let mut scores = Vec::with_capacity(pool.len());
    for c in pool {
        let mut total = 0.0;
        let mut error = None;
        for (k, (tr, va)) in splits.iter().enumerate() {
            match score(family, &c, t, tr, va, derive_seed(seed, 10 + k as u64)) {
                Ok(v) if v.is_finite() => total += v,
                Ok(v) => {
                    error = Some(format!("cv fold {k}: criterion {v}"));
                    break;
                }
                Err(e) => {
                    error = Some(format!("cv fold {k}: {e}"));
                    break;
                }
            }
        }
        let score = error.is_none().then(|| total / splits.len() as f64);
        scores.push(CandidateScore {
            params: c,
            score,
            error,
        });
    }
    let best = scores.iter().filter_map(|s| s.score.map(|v| (v, s))).fold(
        None::<(f64, &CandidateScore)>,
        |acc, (v, s)| match acc {
            Some((bv, _)) if bv <= v => acc,
            _ => Some((v, s)),
        },
    );
    match best {
        Some((_, s)) => Ok(TuneOutcome {
            family,
            chosen: s.params.clone(),
            scores,
        }),
        None => Err(BenchError::TuningFailed {
            family: family.name().into(),
            failures: scores
                .iter()
                .map(|s| format!("{:?}: {}", s.params, s.error.as_deref().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join("; "),
        }),
    }
}
