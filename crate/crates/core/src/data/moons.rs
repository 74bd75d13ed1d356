use std::f64::consts::{FRAC_PI_4, PI};

use idens_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ObservationalDataset;
use crate::error::{invalid, Result};

/// Two interleaving half-circles; membership of the lower (inner) half-circle
/// is the treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoonsConfig {
    /// Gaussian noise added to the half-circle coordinates.
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
    /// Standard deviation of the per-unit perturbation `eps`, shared by the
    /// rotation angle and the additive outcome shift.
    #[serde(default = "default_outcome_sd")]
    pub outcome_sd: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
}

fn default_outcome_sd() -> f64 {
    0.1
}

fn default_alpha0() -> f64 {
    FRAC_PI_4
}

fn default_alpha1() -> f64 {
    -FRAC_PI_4
}

impl MoonsConfig {
    pub fn new(sigma: f64, n: usize, seed: u64) -> Self {
        Self {
            sigma,
            n,
            seed,
            outcome_sd: default_outcome_sd(),
            alpha0: default_alpha0(),
            alpha1: default_alpha1(),
        }
    }
}

pub fn rotation(alpha: f64, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = alpha.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn half_circle(i: usize, m: usize) -> f64 {
    if m <= 1 {
        0.0
    } else {
        PI * i as f64 / (m - 1) as f64
    }
}

pub fn moons_sample(cfg: &MoonsConfig) -> Result<ObservationalDataset> {
    if !(cfg.sigma >= 0.0) || !(cfg.outcome_sd >= 0.0) {
        return Err(invalid("moons noise levels must be non-negative"));
    }
    if cfg.n == 0 {
        return Err(invalid("moons sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_outer = cfg.n / 2;
    let n_inner = cfg.n - n_outer;
    let mut points: Vec<([f64; 2], u8)> = Vec::with_capacity(cfg.n);
    for i in 0..n_outer {
        let t = half_circle(i, n_outer);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = half_circle(i, n_inner);
        points.push(([1.0 - t.cos(), 1.0 - t.sin() - 0.5], 1));
    }
    points.shuffle(&mut rng);

    let mut x = Vec::with_capacity(2 * cfg.n);
    let mut a = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(2 * cfg.n);
    let mut y_cf = Vec::with_capacity(2 * cfg.n);
    for (p, label) in points {
        let xi = [
            p[0] + cfg.sigma * rng.sample::<f64, _>(StandardNormal),
            p[1] + cfg.sigma * rng.sample::<f64, _>(StandardNormal),
        ];
        let eps = cfg.outcome_sd * rng.sample::<f64, _>(StandardNormal);
        let outcome = |alpha: f64| {
            let r = rotation(alpha + eps, xi);
            [r[0] + eps, r[1] + eps]
        };
        let y1 = outcome(cfg.alpha1);
        let y0 = outcome(cfg.alpha0);
        let (fact, cf) = if label == 1 { (y1, y0) } else { (y0, y1) };
        x.extend_from_slice(&xi);
        a.push(label);
        y.extend_from_slice(&fact);
        y_cf.extend_from_slice(&cf);
    }
    ObservationalDataset::new(
        Tensor::new([cfg.n, 2], x),
        a,
        Tensor::new([cfg.n, 2], y),
        Some(Tensor::new([cfg.n, 2], y_cf)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;

    #[test]
    fn outcome_is_two_dimensional() {
        let d = moons_sample(&MoonsConfig::new(0.75, 101, 1)).unwrap();
        assert_eq!((d.len(), d.dx(), d.dy()), (101, 2, 2));
        assert_eq!(d.arm_indices(Arm::Treated).len(), 51);
    }

    #[test]
    fn noiseless_outcomes_are_rotations() {
        let mut cfg = MoonsConfig::new(0.3, 200, 4);
        cfg.outcome_sd = 0.0;
        let d = moons_sample(&cfg).unwrap();
        for arm in Arm::BOTH {
            let y = d.interventional(arm).unwrap();
            for i in 0..d.len() {
                let xn = d.x().row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                let yn = y.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((xn - yn).abs() < 1e-12);
            }
        }
        let y1 = d.interventional(Arm::Treated).unwrap();
        let r = rotation(-FRAC_PI_4, [d.x().get(0, 0), d.x().get(0, 1)]);
        assert!((y1.get(0, 0) - r[0]).abs() < 1e-15 && (y1.get(0, 1) - r[1]).abs() < 1e-15);
    }

    #[test]
    fn seeded_draws_are_bitwise_identical() {
        let cfg = MoonsConfig::new(0.75, 300, 77);
        assert_eq!(moons_sample(&cfg).unwrap(), moons_sample(&cfg).unwrap());
        let other = MoonsConfig::new(0.75, 300, 78);
        assert_ne!(moons_sample(&cfg).unwrap(), moons_sample(&other).unwrap());
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(moons_sample(&MoonsConfig::new(-0.1, 10, 0)).is_err());
    }
}
