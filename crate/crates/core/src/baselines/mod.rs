//! Comparison estimators. Plug-in models (TARNet*, MDN, CNF) average a
//! conditional density over covariates; KDE, DKME and the truncated series
//! are not proper densities and are clipped and renormalized for reporting.

mod dkme;
mod kde;
mod mdn;
mod tarnet;
mod ts;

use idens_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::conditional::ConditionalModel;
use crate::data::Arm;
use crate::error::{invalid, Result};
use crate::numeric::linspace;

pub use dkme::{
    dkme_ridge_mse, dkme_weights, fit_dkme, gaussian_kernel_matrix, DkmeArm, DkmeModel,
};
pub use kde::{fit_kde, kde_aiptw_raw, kde_kernel, KdeHyperparams, KdeModel};
pub use mdn::{fit_mdn, MdnModel};
pub use tarnet::{fit_tarnet_star, TarNetStarModel, MIN_SIGMA};
pub use ts::{cosine_basis, ts_fit, TsModel};

/// Shared settings of the neural plug-in baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralHyperparams {
    pub lr: f64,
    pub batch_size: usize,
    pub n_iter: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub d_r: usize,
    /// Mixture components (MDN only).
    pub n_components: usize,
}

impl Default for NeuralHyperparams {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch_size: 32,
            n_iter: 5000,
            alpha: 1.0,
            hidden: 10,
            d_r: 10,
            n_components: 5,
        }
    }
}

/// `mean_i p(y | X_i, arm)` for every row of `ys`.
pub fn plugin_density(
    model: &dyn ConditionalModel,
    reference: &Tensor,
    arm: Arm,
    ys: &Tensor,
) -> Result<Vec<f64>> {
    if reference.rows() == 0 {
        return Err(invalid("plug-in density needs at least one covariate row"));
    }
    let mut acc = vec![0.0; ys.rows()];
    for i in 0..reference.rows() {
        for (a, lp) in acc
            .iter_mut()
            .zip(model.cond_log_prob_many(reference.row_slice(i), arm, ys))
        {
            *a += lp.exp();
        }
    }
    let n = reference.rows() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Clips a raw density estimate at zero and divides by its mass on a grid
/// over `[lo - 1, hi + 1]` in each outcome dimension (1000 points in 1-D,
/// 100 x 100 in 2-D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNormalizer {
    pub ranges: Vec<(f64, f64)>,
    pub mass: f64,
}

impl GridNormalizer {
    pub const POINTS_1D: usize = 1000;
    pub const POINTS_2D: usize = 100;

    /// Reporting grid and cell volume for the training outcome `ranges`.
    pub fn grid(ranges: &[(f64, f64)]) -> Result<(Tensor, f64)> {
        match ranges {
            [(lo, hi)] => {
                let pts = linspace(lo - 1.0, hi + 1.0, Self::POINTS_1D);
                let step = pts[1] - pts[0];
                Ok((Tensor::column(pts), step))
            }
            [(lo1, hi1), (lo2, hi2)] => {
                let a = linspace(lo1 - 1.0, hi1 + 1.0, Self::POINTS_2D);
                let b = linspace(lo2 - 1.0, hi2 + 1.0, Self::POINTS_2D);
                let mut v = Vec::with_capacity(2 * a.len() * b.len());
                for &p in &a {
                    for &q in &b {
                        v.extend([p, q]);
                    }
                }
                Ok((
                    Tensor::new([a.len() * b.len(), 2], v),
                    (a[1] - a[0]) * (b[1] - b[0]),
                ))
            }
            _ => Err(invalid(
                "reporting grid supports one or two outcome dimensions",
            )),
        }
    }

    /// Rectangle-rule mass of the clipped raw density (trapezoid in 1-D).
    pub fn fit(raw: impl Fn(&Tensor) -> Result<Vec<f64>>, ranges: &[(f64, f64)]) -> Result<Self> {
        let (pts, cell) = Self::grid(ranges)?;
        let vals: Vec<f64> = raw(&pts)?.into_iter().map(|v| v.max(0.0)).collect();
        let mass = if ranges.len() == 1 {
            crate::numeric::trapezoid(&vals, cell)
        } else {
            vals.iter().sum::<f64>() * cell
        };
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(invalid(format!(
                "clipped density has mass {mass} on the reporting grid"
            )));
        }
        Ok(Self {
            ranges: ranges.to_vec(),
            mass,
        })
    }

    pub fn apply(&self, raw: Vec<f64>) -> Vec<f64> {
        raw.into_iter().map(|v| v.max(0.0) / self.mass).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{normal_log_pdf, normal_pdf, trapezoid};
    use rand::RngCore;

    /// Normal conditionals with means read from the first covariate.
    struct RowNormal;
    impl ConditionalModel for RowNormal {
        fn outcome_dim(&self) -> usize {
            1
        }
        fn propensity(&self, _x: &[f64]) -> f64 {
            0.5
        }
        fn cond_log_prob_many(&self, x: &[f64], _arm: Arm, ys: &Tensor) -> Vec<f64> {
            ys.values()
                .iter()
                .map(|&y| normal_log_pdf(y, x[0], x[1]))
                .collect()
        }
        fn cond_sample(&self, _x: &[f64], _arm: Arm, _n: usize, _rng: &mut dyn RngCore) -> Tensor {
            unimplemented!()
        }
        fn cond_median(&self, x: &[f64], _arm: Arm) -> Vec<f64> {
            vec![x[0]]
        }
    }

    #[test]
    fn plugin_hand_mixture() {
        let reference = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![-2.0, 2.0]]);
        let got = plugin_density(
            &RowNormal,
            &reference,
            Arm::Treated,
            &Tensor::column(vec![0.3]),
        )
        .unwrap()[0];
        let expect =
            (normal_pdf(0.3, 0.0, 1.0) + normal_pdf(0.3, 1.0, 0.5) + normal_pdf(0.3, -2.0, 2.0))
                / 3.0;
        assert!((got - expect).abs() < 1e-15);
        let single = Tensor::from_rows(&[vec![1.0, 0.5]]);
        let one = plugin_density(
            &RowNormal,
            &single,
            Arm::Control,
            &Tensor::column(vec![0.3]),
        )
        .unwrap()[0];
        assert!((one - normal_pdf(0.3, 1.0, 0.5)).abs() < 1e-15);
        assert!(plugin_density(&RowNormal, &Tensor::zeros([0, 2]), Arm::Control, &single).is_err());
    }

    #[test]
    fn plugin_normalizes() {
        let reference = Tensor::from_rows(&[vec![0.0, 1.0], vec![3.0, 0.5], vec![-2.0, 2.0]]);
        let ys = linspace(-20.0, 20.0, 8001);
        let d = plugin_density(
            &RowNormal,
            &reference,
            Arm::Treated,
            &Tensor::column(ys.clone()),
        )
        .unwrap();
        assert!((trapezoid(&d, ys[1] - ys[0]) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn normalizer_clips_and_rescales() {
        // raw = 2 on [0, 1], -1 elsewhere; clipped mass on [-1, 2] is ~2
        let raw = |y: &Tensor| {
            Ok(y.values()
                .iter()
                .map(|&v| if (0.0..=1.0).contains(&v) { 2.0 } else { -1.0 })
                .collect())
        };
        let n = GridNormalizer::fit(raw, &[(0.0, 1.0)]).unwrap();
        assert!((n.mass - 2.0).abs() < 0.01);
        let (pts, step) = GridNormalizer::grid(&[(0.0, 1.0)]).unwrap();
        let vals = n.apply(raw(&pts).unwrap());
        assert!(vals.iter().all(|&v| v >= 0.0));
        assert!((trapezoid(&vals, step) - 1.0).abs() < 1e-12);
        assert!(GridNormalizer::fit(|y: &Tensor| Ok(vec![-1.0; y.rows()]), &[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn two_dimensional_grid() {
        let (pts, cell) = GridNormalizer::grid(&[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(pts.shape(), [10_000, 2]);
        assert!((cell - (3.0 / 99.0) * (4.0 / 99.0)).abs() < 1e-15);
    }
}
