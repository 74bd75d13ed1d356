//! Scalar helpers shared across modules: normal densities, quadrature.

use crate::error::{CoreError, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln()
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    normal_log_pdf(x, mean, sd).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `n` equidistant points on `[lo, hi]`, both ends included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i + 1 == n { hi } else { lo + h * i as f64 })
                .collect()
        }
    }
}

pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

const SIMPSON_MAX_DEPTH: u32 = 48;
const SIMPSON_MAX_EVALS: usize = 1 << 20;

struct Simpson<'a> {
    f: &'a dyn Fn(f64) -> f64,
    evals: usize,
    residual: f64,
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`, started from
/// `panels` equal subintervals so that narrow features are not missed by the
/// first coarse estimate.
///
/// Fails with the accumulated residual estimate when some subinterval hits
/// the recursion or evaluation limit without meeting its share of the
/// tolerance.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> Result<f64> {
    let panels = panels.max(1);
    let mut state = Simpson {
        f,
        evals: 0,
        residual: 0.0,
    };
    let width = (b - a) / panels as f64;
    let share = tol / panels as f64;
    let mut value = 0.0;
    let mut left = a;
    let mut f_left = f(a);
    for p in 0..panels {
        let right = if p + 1 == panels {
            b
        } else {
            a + width * (p + 1) as f64
        };
        let f_right = f(right);
        let fm = f(0.5 * (left + right));
        state.evals += 2;
        let whole = (right - left) / 6.0 * (f_left + 4.0 * fm + f_right);
        value += state.step(
            [left, right],
            [f_left, fm, f_right],
            whole,
            share,
            SIMPSON_MAX_DEPTH,
        );
        left = right;
        f_left = f_right;
    }
    if state.residual > 0.0 || !value.is_finite() {
        return Err(CoreError::Quadrature {
            residual: if value.is_finite() {
                state.residual
            } else {
                f64::INFINITY
            },
        });
    }
    Ok(value)
}

impl Simpson<'_> {
    fn step(
        &mut self,
        [a, b]: [f64; 2],
        [fa, fm, fb]: [f64; 3],
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let flm = (self.f)(0.5 * (a + m));
        let frm = (self.f)(0.5 * (m + b));
        self.evals += 2;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        if depth == 0 || self.evals >= SIMPSON_MAX_EVALS {
            self.residual += delta.abs() / 15.0;
            return left + right + delta / 15.0;
        }
        self.step([a, m], [fa, flm, fm], left, 0.5 * tol, depth - 1)
            + self.step([m, b], [fm, frm, fb], right, 0.5 * tol, depth - 1)
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-task.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_constants() {
        assert!((normal_log_pdf(0.0, 0.0, 1.0) + 0.918_938_533).abs() < 1e-9);
        assert!((normal_pdf(1.0, 0.0, 1.0) - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn simpson_polynomial_and_gaussian() {
        let v = adaptive_simpson(&|x| x * x * x - x, 0.0, 2.0, 1e-10, 1).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        let g = adaptive_simpson(&|x| normal_pdf(x, 0.0, 1.0), -8.0, 8.0, 1e-10, 4).unwrap();
        assert!((g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simpson_reports_non_convergence() {
        let err = adaptive_simpson(&|x| (1.0 / x).sin() / x, 1e-12, 1.0, 1e-14, 1).unwrap_err();
        assert!(matches!(err, CoreError::Quadrature { .. }));
    }

    #[test]
    fn trapezoid_linear_exact() {
        let xs = linspace(0.0, 1.0, 11);
        let v: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&v, 0.1) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
