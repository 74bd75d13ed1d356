use idens_autodiff::Tensor;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Arm, ObservationalDataset};
use crate::conditional::ConditionalModel;
use crate::error::{invalid, Result};
use crate::numeric::{adaptive_simpson, normal_log_pdf, normal_pdf, sigmoid};

/// One-covariate structural model with a covariate shift `b` between the
/// two mixture components of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub b: f64,
    pub n: usize,
    pub seed: u64,
}

pub const ORACLE_TOL: f64 = 1e-6;
const ORACLE_PANELS: usize = 64;

/// `E[Y[a] | X = x]`.
pub fn scm_mean_outcome(x: f64, arm: Arm) -> f64 {
    match arm {
        Arm::Treated => x * x - 1.82 * x + 2.0,
        Arm::Control => 2.18 * x + 1.5,
    }
}

/// `pi(x) = N(x; 0, 1) / (N(x; 0, 1) + N(x; b, 1))`, evaluated as a logistic
/// function of the log-ratio `b^2/2 - b x`.
pub fn scm_propensity(x: f64, b: f64) -> f64 {
    sigmoid(0.5 * b * b - b * x)
}

fn covariate_density(x: f64, b: f64) -> f64 {
    0.5 * normal_pdf(x, 0.0, 1.0) + 0.5 * normal_pdf(x, b, 1.0)
}

/// Ground-truth interventional density `P(Y[a] = y)` by adaptive Simpson over
/// `x`, six standard deviations beyond both mixture means. The integrand in
/// `x` is as narrow as `1 / 2.18`, hence the fixed initial panels.
pub fn scm_oracle_density(y: f64, arm: Arm, b: f64) -> Result<f64> {
    if !y.is_finite() || !b.is_finite() {
        return Err(invalid("oracle density needs finite y and b"));
    }
    let lo = b.min(0.0) - 6.0;
    let hi = b.max(0.0) + 6.0;
    let f = |x: f64| normal_pdf(y, scm_mean_outcome(x, arm), 1.0) * covariate_density(x, b);
    adaptive_simpson(&f, lo, hi, ORACLE_TOL, ORACLE_PANELS)
}

pub fn scm_sample(cfg: &ScmConfig) -> Result<ObservationalDataset> {
    if cfg.n == 0 {
        return Err(invalid("SCM sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y_cf = Vec::with_capacity(n);
    for _ in 0..n {
        let shift = if rng.random_bool(0.5) { cfg.b } else { 0.0 };
        let xi = shift + rng.sample::<f64, _>(StandardNormal);
        // U_A ~ Logistic(0, 1) by inversion; A = 1 iff -U_A < logit(pi).
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let u_a = (u / (1.0 - u)).ln();
        let logit = 0.5 * cfg.b * cfg.b - cfg.b * xi;
        let treated = -u_a < logit;
        let u_y: f64 = rng.sample(StandardNormal);
        let y1 = scm_mean_outcome(xi, Arm::Treated) + u_y;
        let y0 = scm_mean_outcome(xi, Arm::Control) + u_y;
        x.push(xi);
        a.push(u8::from(treated));
        if treated {
            y.push(y1);
            y_cf.push(y0);
        } else {
            y.push(y0);
            y_cf.push(y1);
        }
    }
    ObservationalDataset::new(
        Tensor::column(x),
        a,
        Tensor::column(y),
        Some(Tensor::column(y_cf)),
    )
}

/// True nuisance functions of the SCM, in original outcome units.
#[derive(Debug, Clone, Copy)]
pub struct ScmOracle {
    pub b: f64,
}

impl ConditionalModel for ScmOracle {
    fn outcome_dim(&self) -> usize {
        1
    }

    fn propensity(&self, x: &[f64]) -> f64 {
        scm_propensity(x[0], self.b)
    }

    fn cond_log_prob_many(&self, x: &[f64], arm: Arm, ys: &Tensor) -> Vec<f64> {
        let mu = scm_mean_outcome(x[0], arm);
        ys.values()
            .iter()
            .map(|&y| normal_log_pdf(y, mu, 1.0))
            .collect()
    }

    fn cond_sample(&self, x: &[f64], arm: Arm, n: usize, rng: &mut dyn RngCore) -> Tensor {
        let mu = scm_mean_outcome(x[0], arm);
        Tensor::column(
            (0..n)
                .map(|_| mu + rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    fn cond_median(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        vec![scm_mean_outcome(x[0], arm)]
    }
}
