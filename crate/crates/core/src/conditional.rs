//! Interface to fitted nuisance functions: propensity score and conditional
//! outcome density.

use idens_autodiff::Tensor;
use rand::RngCore;

use crate::data::Arm;

pub trait ConditionalModel: Send + Sync {
    fn outcome_dim(&self) -> usize;

    /// `pi_1(x)`, strictly inside `(0, 1)`.
    fn propensity(&self, x: &[f64]) -> f64;

    /// `pi_arm(x)`.
    fn arm_propensity(&self, x: &[f64], arm: Arm) -> f64 {
        let p = self.propensity(x);
        match arm {
            Arm::Treated => p,
            Arm::Control => 1.0 - p,
        }
    }

    /// Log-densities of the rows of `ys` (`[m, d_Y]`) given `x` and `arm`.
    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64>;

    fn cond_log_prob(&self, x: &[f64], arm: Arm, y: &[f64]) -> f64 {
        self.cond_log_prob_many(x, arm, &Tensor::row(y.to_vec()))[0]
    }

    /// `n` draws as an `[n, d_Y]` tensor.
    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor;

    /// A central point of the conditional distribution; for the flow models
    /// this is the image of the base median.
    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64>;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn outcome_dim(&self) -> usize {
        (**self).outcome_dim()
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        (**self).propensity(x)
    }
    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        (**self).cond_log_prob_many(x, arm, ys)
    }
    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        (**self).cond_sample(x, arm, n, rng)
    }
    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        (**self).cond_median(x, arm)
    }
}

/// Replaces the propensity of `inner` with a constant.
pub struct ConstantPropensity<M> {
    pub inner: M,
    pub value: f64,
}

impl<M: ConditionalModel> ConditionalModel for ConstantPropensity<M> {
    fn outcome_dim(&self) -> usize {
        self.inner.outcome_dim()
    }
    fn propensity(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        self.inner.cond_log_prob_many(x, arm, ys)
    }
    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        self.inner.cond_sample(x, arm, n, rng)
    }
    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        self.inner.cond_median(x, arm)
    }
}

/// Stretches every conditional density of `inner` by `factor` around its
/// median: `p_w(y) = p(m + (y - m) / k) / k^d`.
pub struct WidenedConditional<M> {
    pub inner: M,
    pub factor: f64,
}

impl<M: ConditionalModel> ConditionalModel for WidenedConditional<M> {
    fn outcome_dim(&self) -> usize {
        self.inner.outcome_dim()
    }
    fn propensity(&self, x: &[f64]) -> f64 {
        self.inner.propensity(x)
    }
    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        let m = self.inner.cond_median(x, arm);
        let d = m.len();
        let k = self.factor;
        let shrunk = Tensor::new(
            ys.shape(),
            ys.values()
                .iter()
                .enumerate()
                .map(|(i, &y)| m[i % d] + (y - m[i % d]) / k)
                .collect(),
        );
        let correction = d as f64 * k.ln();
        self.inner
            .cond_log_prob_many(x, arm, &shrunk)
            .into_iter()
            .map(|lp| lp - correction)
            .collect()
    }
    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let m = self.inner.cond_median(x, arm);
        let d = m.len();
        let s = self.inner.cond_sample(x, arm, n, rng);
        s.map_indexed(|i, v| m[i % d] + self.factor * (v - m[i % d]))
    }
    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        self.inner.cond_median(x, arm)
    }
}

trait MapIndexed {
    fn map_indexed(&self, f: impl Fn(usize, f64) -> f64) -> Tensor;
}

impl MapIndexed for Tensor {
    fn map_indexed(&self, f: impl Fn(usize, f64) -> f64) -> Tensor {
        Tensor::new(
            self.shape(),
            self.values()
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i, v))
                .collect(),
        )
    }
}
