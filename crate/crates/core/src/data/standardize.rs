use idens_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::ObservationalDataset;
use crate::error::{invalid, Result};

/// Per-dimension outcome mean and scale, fitted on factual outcomes with the
/// population (divide-by-n) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizationParams {
    pub fn identity(dy: usize) -> Self {
        Self {
            mean: vec![0.0; dy],
            scale: vec![1.0; dy],
        }
    }

    pub fn fit(y: &Tensor) -> Result<Self> {
        let n = y.rows();
        if n < 2 {
            return Err(invalid("standardization needs at least two rows"));
        }
        let mut mean = vec![0.0; y.cols()];
        let mut scale = vec![0.0; y.cols()];
        for j in 0..y.cols() {
            let m = (0..n).map(|i| y.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (y.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
            if !(var > 0.0) || !var.is_finite() {
                return Err(invalid(format!("outcome dimension {j} has zero variance")));
            }
            mean[j] = m;
            scale[j] = var.sqrt();
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, y: &Tensor) -> Tensor {
        self.map(y, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, z: &Tensor) -> Tensor {
        self.map(z, |v, m, s| v * s + m)
    }

    pub fn forward_point(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn map(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        assert_eq!(t.cols(), self.dim(), "outcome dimension mismatch");
        let d = self.dim();
        let values = t
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.mean[k % d], self.scale[k % d]))
            .collect();
        Tensor::new(t.shape(), values)
    }

    /// `sum_j ln s_j`; a standardized log-density minus this is the
    /// log-density in original units.
    pub fn log_scale(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }

    pub fn to_original_log_density(&self, log_p_std: f64) -> f64 {
        log_p_std - self.log_scale()
    }

    /// Applies these parameters to factual and counterfactual outcomes.
    pub fn apply(&self, dataset: &ObservationalDataset) -> ObservationalDataset {
        dataset.replace_outcomes(
            self.forward(dataset.y()),
            dataset.y_cf().map(|t| self.forward(t)),
        )
    }
}

/// Fits on the factual outcomes of `dataset` and applies the map to both
/// factual and counterfactual outcomes.
pub fn standardize(
    dataset: &ObservationalDataset,
) -> Result<(ObservationalDataset, StandardizationParams)> {
    let params = StandardizationParams::fit(dataset.y())?;
    Ok((params.apply(dataset), params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(y: Vec<f64>) -> ObservationalDataset {
        let n = y.len();
        ObservationalDataset::new(
            Tensor::zeros([n, 1]),
            vec![0; n],
            Tensor::column(y.clone()),
            Some(Tensor::column(y.iter().map(|v| v + 1.0).collect())),
        )
        .unwrap()
    }

    #[test]
    fn two_point_population_convention() {
        // mean 2, population variance ((1-2)^2 + (3-2)^2) / 2 = 1
        let (std, p) = standardize(&ds(vec![1.0, 3.0])).unwrap();
        assert_eq!(p.mean, vec![2.0]);
        assert_eq!(p.scale, vec![1.0]);
        assert_eq!(std.y().values(), &[-1.0, 1.0]);
        // counterfactuals share the factual parameters
        assert_eq!(std.y_cf().unwrap().values(), &[0.0, 2.0]);
    }

    #[test]
    fn round_trip() {
        let y = vec![0.3, -7.1, 12.0, 5.5, 5.5];
        let (std, p) = standardize(&ds(y.clone())).unwrap();
        let back = p.inverse(std.y());
        for (a, b) in back.values().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = std.y().values().iter().sum::<f64>() / 5.0;
        let v = std.y().values().iter().map(|v| v * v).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-14 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_correction() {
        let p = StandardizationParams {
            mean: vec![0.0],
            scale: vec![2.0],
        };
        assert!((p.to_original_log_density(-1.0) - (-1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_and_single_row_rejected() {
        assert!(standardize(&ds(vec![4.0, 4.0, 4.0])).is_err());
        assert!(standardize(&ds(vec![4.0])).is_err());
    }
}
