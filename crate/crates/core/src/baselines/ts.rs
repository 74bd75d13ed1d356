use idens_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::ConditionalModel;
use crate::data::{Arm, ObservationalDataset};
use crate::error::{invalid, CoreError, Result};
use crate::numeric::{derive_seed, linspace};
use crate::target::BiasCorrConfig;

/// `b_j(u) = sqrt(2) cos(pi j u)`; `b_0 = 1`.
pub fn cosine_basis(j: usize, u: f64) -> f64 {
    if j == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (std::f64::consts::PI * j as f64 * u).cos()
    }
}

/// `g(u) = 1 + sum_j beta_j b_j(u)` on rescaled outcomes `u in [0, 1]^d`.
/// In two dimensions the basis is the tensor product of `{1, b_1..b_d}` with
/// the constant pair excluded; `beta` is `(d+1) x (d+1)`, row-major, with the
/// `(0, 0)` entry zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsModel {
    pub d: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub beta: [Vec<f64>; 2],
}

impl TsModel {
    pub const GRID: usize = 100;
    pub const MC_DRAWS: usize = 100;

    fn rescale(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((v, l), h)| ((v - l) / (h - l)).clamp(0.0, 1.0))
            .collect()
    }

    fn basis(d: usize, u: &[f64]) -> Vec<f64> {
        match u {
            [u] => (1..=d).map(|j| cosine_basis(j, *u)).collect(),
            [u1, u2] => {
                let mut v = Vec::with_capacity((d + 1) * (d + 1));
                for j in 0..=d {
                    for k in 0..=d {
                        v.push(if j == 0 && k == 0 {
                            0.0
                        } else {
                            cosine_basis(j, *u1) * cosine_basis(k, *u2)
                        });
                    }
                }
                v
            }
            _ => unreachable!("dimension checked at fit time"),
        }
    }

    /// Series value on the rescaled scale.
    pub fn series(&self, arm: Arm, u: &[f64]) -> f64 {
        let b = Self::basis(self.d, u);
        1.0 + b
            .iter()
            .zip(&self.beta[arm.index()])
            .map(|(x, y)| x * y)
            .sum::<f64>()
    }

    /// Raw density in the units of the fitted data; outcomes outside the
    /// training range use the nearest endpoint of `[0, 1]`.
    pub fn density_raw(&self, arm: Arm, ys: &Tensor) -> Vec<f64> {
        let jac: f64 = self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product();
        (0..ys.rows())
            .map(|i| self.series(arm, &self.rescale(ys.row_slice(i))) / jac)
            .collect()
    }
}

/// One-step corrected projection onto the cosine basis, with `E[b(U) | x, a]`
/// taken from `nuisance` by grid quadrature (1-D) or Monte Carlo (2-D).
pub fn ts_fit(
    nuisance: &dyn ConditionalModel,
    data: &ObservationalDataset,
    d: usize,
    cfg: &BiasCorrConfig,
    seed: u64,
) -> Result<TsModel> {
    cfg.validate()?;
    if d == 0 {
        return Err(invalid("basis dimensionality must be at least 1"));
    }
    if data.dy() > 2 {
        return Err(CoreError::Unsupported(format!(
            "{}-dimensional outcomes",
            data.dy()
        )));
    }
    let ranges = data.outcome_range();
    let mut model = TsModel {
        d,
        lo: ranges.iter().map(|r| r.0).collect(),
        hi: ranges.iter().map(|r| r.1).collect(),
        beta: [Vec::new(), Vec::new()],
    };
    if model.lo.iter().zip(&model.hi).any(|(l, h)| !(h > l)) {
        return Err(invalid("outcomes are constant; cannot rescale to [0, 1]"));
    }
    let n_basis = if data.dy() == 1 { d } else { (d + 1) * (d + 1) };
    let grid = linspace(model.lo[0], model.hi[0], TsModel::GRID);
    let step = grid[1] - grid[0];
    let grid_t = Tensor::column(grid.clone());
    let grid_basis: Vec<Vec<f64>> = grid
        .iter()
        .map(|&y| TsModel::basis(d, &model.rescale(&[y])))
        .collect();
    for arm in Arm::BOTH {
        let mut beta = vec![0.0; n_basis];
        for i in 0..data.len() {
            let x = data.x().row_slice(i);
            let mu: Vec<f64> = if data.dy() == 1 {
                let p: Vec<f64> = nuisance
                    .cond_log_prob_many(x, arm, &grid_t)
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                (0..n_basis)
                    .map(|j| {
                        step * grid_basis
                            .iter()
                            .zip(&p)
                            .map(|(b, q)| b[j] * q)
                            .sum::<f64>()
                    })
                    .collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    (arm.index() * data.len() + i) as u64,
                ));
                let s = nuisance.cond_sample(x, arm, TsModel::MC_DRAWS, &mut rng);
                let mut m = vec![0.0; n_basis];
                for k in 0..s.rows() {
                    for (mj, b) in m
                        .iter_mut()
                        .zip(TsModel::basis(d, &model.rescale(s.row_slice(k))))
                    {
                        *mj += b / s.rows() as f64;
                    }
                }
                m
            };
            let w = cfg.weight(data.arm(i) == arm, nuisance.arm_propensity(x, arm));
            let bu = if w != 0.0 {
                TsModel::basis(d, &model.rescale(data.y().row_slice(i)))
            } else {
                Vec::new()
            };
            for j in 0..n_basis {
                let corr = if w != 0.0 { w * (bu[j] - mu[j]) } else { 0.0 };
                beta[j] += (corr + mu[j]) / data.len() as f64;
            }
        }
        model.beta[arm.index()] = beta;
    }
    Ok(model)
}
