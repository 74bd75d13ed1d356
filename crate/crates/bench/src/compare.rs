//! Cross-method summary of result rows.
//!
//! Aggregation: every `(dataset, arm, fold)` group counts once, whatever the
//! number of folds per dataset. Within a group the method(s) with the
//! highest out-sample log-probability are credited, ties crediting every
//! tied method, so shares sum to more than one only when ties occur. A
//! method's share is its credited groups over all groups. Means and sample
//! standard deviations run over a method's rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{BenchError, Result};
use crate::results::ResultRow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; zero for a single value.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub best_groups: usize,
    pub best_share: f64,
    pub log_prob_in: Option<MeanSd>,
    pub log_prob_out: Option<MeanSd>,
    pub wasserstein_out: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: usize,
    pub methods: Vec<MethodSummary>,
}

pub fn compare_methods(rows: &[ResultRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(BenchError::Contract("no result rows to compare".into()));
    }
    let mut groups: BTreeMap<(&str, u8, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.as_str(), r.arm, r.fold))
            .or_default()
            .push(r);
    }
    let mut credited: BTreeMap<Method, usize> = BTreeMap::new();
    for members in groups.values() {
        let best = members
            .iter()
            .map(|r| r.log_prob_out)
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max);
        for r in members {
            if r.log_prob_out == best {
                *credited.entry(r.method).or_default() += 1;
            }
        }
    }
    let mut by_method: BTreeMap<Method, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method).or_default().push(r);
    }
    let finite = |v: Vec<f64>| -> Option<MeanSd> {
        MeanSd::of(&v.into_iter().filter(|x| x.is_finite()).collect::<Vec<_>>())
    };
    let methods = by_method
        .into_iter()
        .map(|(method, rs)| {
            let best_groups = credited.get(&method).copied().unwrap_or(0);
            MethodSummary {
                method,
                best_groups,
                best_share: best_groups as f64 / groups.len() as f64,
                log_prob_in: finite(rs.iter().map(|r| r.log_prob_in).collect()),
                log_prob_out: finite(rs.iter().map(|r| r.log_prob_out).collect()),
                wasserstein_out: finite(rs.iter().filter_map(|r| r.wasserstein_out).collect()),
            }
        })
        .collect();
    Ok(Summary {
        groups: groups.len(),
        methods,
    })
}
