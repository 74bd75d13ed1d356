use idens_autodiff::Tensor;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kde::kde_kernel;
use crate::data::{Arm, ObservationalDataset};
use crate::error::{invalid, CoreError, Result};
use crate::metrics::median_bandwidth;

/// `k(x, x') = exp(-|x - x'|^2 / sigma_k)` between the rows of `a` and `b`.
pub fn gaussian_kernel_matrix(a: &Tensor, b: &Tensor, sigma_k: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        let d: f64 = a
            .row_slice(i)
            .iter()
            .zip(b.row_slice(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (-d / sigma_k).exp()
    })
}

/// Solves `(K + lambda I) X = rhs` by Cholesky, falling back to LU.
fn regularized_solve(mut k: DMatrix<f64>, lambda: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for i in 0..k.nrows() {
        k[(i, i)] += lambda;
    }
    if let Some(ch) = k.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    k.lu()
        .solve(rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| CoreError::Singular("regularized kernel system".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkmeArm {
    pub y: Tensor,
    pub beta: Vec<f64>,
    /// Outcome-kernel bandwidth.
    pub h: f64,
}

/// Conditional kernel mean embedding averaged over the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkmeModel {
    pub sigma_k: f64,
    pub eps: f64,
    pub arms: [DkmeArm; 2],
}

impl DkmeModel {
    /// `sum_i beta_i N(y; Y_i, h^2 I)`; may be negative.
    pub fn density_raw(&self, arm: Arm, ys: &Tensor) -> Vec<f64> {
        let a = &self.arms[arm.index()];
        let d = ys.cols();
        (0..ys.rows())
            .map(|k| {
                let y = ys.row_slice(k);
                a.beta
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let d2: f64 =
                            a.y.row_slice(i)
                                .iter()
                                .zip(y)
                                .map(|(p, q)| (p - q) * (p - q))
                                .sum();
                        b * kde_kernel(d2, a.h, d)
                    })
                    .sum()
            })
            .collect()
    }
}

fn check(sigma_k: f64, eps: f64) -> Result<()> {
    if sigma_k > 0.0 && eps > 0.0 && sigma_k.is_finite() && eps.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "DKME needs positive sigma_k and eps, got {sigma_k} and {eps}"
        )))
    }
}

/// `beta^a = (K^a + n_a eps I)^{-1} K~^a 1_n` with `1_n = (1/n, .., 1/n)`.
pub fn dkme_weights(x_arm: &Tensor, x_all: &Tensor, sigma_k: f64, eps: f64) -> Result<Vec<f64>> {
    check(sigma_k, eps)?;
    let na = x_arm.rows();
    if na == 0 {
        return Err(invalid("DKME arm subsample is empty"));
    }
    let k = gaussian_kernel_matrix(x_arm, x_arm, sigma_k);
    let kt = gaussian_kernel_matrix(x_arm, x_all, sigma_k);
    let ones = DVector::from_element(x_all.rows(), 1.0 / x_all.rows() as f64);
    let rhs = DMatrix::from_column_slice(na, 1, (kt * ones).as_slice());
    Ok(regularized_solve(k, na as f64 * eps, &rhs)?
        .iter()
        .copied()
        .collect())
}

pub fn fit_dkme(data: &ObservationalDataset, sigma_k: f64, eps: f64) -> Result<DkmeModel> {
    let arm = |a: Arm| -> Result<DkmeArm> {
        let idx = data.arm_indices(a);
        let sub = data.subset(&idx);
        let beta = dkme_weights(sub.x(), data.x(), sigma_k, eps)?;
        let h = if sub.len() >= 2 {
            median_bandwidth(sub.y())?.h
        } else {
            0.0
        };
        if !(h > 0.0) {
            return Err(invalid(format!("arm {a} outcome bandwidth is degenerate")));
        }
        Ok(DkmeArm {
            y: sub.y().clone(),
            beta,
            h,
        })
    };
    Ok(DkmeModel {
        sigma_k,
        eps,
        arms: [arm(Arm::Control)?, arm(Arm::Treated)?],
    })
}

/// Held-out MSE of per-arm kernel ridge regression of `Y` on `X`, the
/// tuning criterion for `(sigma_k, eps)`.
pub fn dkme_ridge_mse(
    train: &ObservationalDataset,
    valid: &ObservationalDataset,
    sigma_k: f64,
    eps: f64,
) -> Result<f64> {
    check(sigma_k, eps)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for arm in Arm::BOTH {
        let tr = train.subset(&train.arm_indices(arm));
        let va = valid.subset(&valid.arm_indices(arm));
        if tr.is_empty() || va.is_empty() {
            continue;
        }
        let k = gaussian_kernel_matrix(tr.x(), tr.x(), sigma_k);
        let y = DMatrix::from_row_slice(tr.len(), tr.dy(), tr.y().values());
        let coef = regularized_solve(k, tr.len() as f64 * eps, &y)?;
        let pred = gaussian_kernel_matrix(va.x(), tr.x(), sigma_k) * coef;
        for i in 0..va.len() {
            for j in 0..va.dy() {
                total += (pred[(i, j)] - va.y().get(i, j)).powi(2);
            }
        }
        count += va.len();
    }
    if count == 0 {
        return Err(invalid("ridge validation has no scorable units"));
    }
    Ok(total / count as f64)
}
