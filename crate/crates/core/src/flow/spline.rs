use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::softplus;

/// Lower bound on every normalized bin width and height (as a fraction of
/// the interval length `2B`).
pub const MIN_BIN: f64 = 1e-3;
/// Floor added to every interior knot derivative.
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Shift applied before the softplus so that a raw derivative of 0 maps to
/// exactly 1: `ln(e^{1 - MIN_DERIVATIVE} - 1)`.
pub fn derivative_offset() -> f64 {
    (1.0 - MIN_DERIVATIVE).exp_m1().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Unconstrained parameters of a rational-quadratic spline on `[-B, B]`
/// with `K` bins: `K` widths, `K` heights and `K - 1` interior derivatives.
/// All zeros is the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqSplineParams {
    pub raw_widths: Vec<f64>,
    pub raw_heights: Vec<f64>,
    pub raw_derivatives: Vec<f64>,
    pub bound: f64,
}

impl RqSplineParams {
    pub fn identity(n_bins: usize, bound: f64) -> Self {
        Self {
            raw_widths: vec![0.0; n_bins],
            raw_heights: vec![0.0; n_bins],
            raw_derivatives: vec![0.0; n_bins.saturating_sub(1)],
            bound,
        }
    }

    /// Length of the flat `[widths | heights | derivatives]` layout.
    pub fn theta_len(n_bins: usize) -> usize {
        3 * n_bins - 1
    }

    pub fn from_theta(theta: &[f64], n_bins: usize, bound: f64) -> Self {
        assert_eq!(
            theta.len(),
            Self::theta_len(n_bins),
            "spline parameter length"
        );
        Self {
            raw_widths: theta[..n_bins].to_vec(),
            raw_heights: theta[n_bins..2 * n_bins].to_vec(),
            raw_derivatives: theta[2 * n_bins..].to_vec(),
            bound,
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.raw_widths.clone();
        t.extend_from_slice(&self.raw_heights);
        t.extend_from_slice(&self.raw_derivatives);
        t
    }

    pub fn n_bins(&self) -> usize {
        self.raw_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_bins();
        if k < 2 {
            return Err(invalid("a spline needs at least two bins"));
        }
        if (k as f64) * MIN_BIN >= 1.0 {
            return Err(invalid(format!("{k} bins violate the minimum bin size")));
        }
        if self.raw_heights.len() != k || self.raw_derivatives.len() != k - 1 {
            return Err(invalid("spline parameter arrays have inconsistent lengths"));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(invalid(format!(
                "spline bound {} must be positive",
                self.bound
            )));
        }
        let all = self
            .raw_widths
            .iter()
            .chain(&self.raw_heights)
            .chain(&self.raw_derivatives);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("spline parameters must be finite"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<RqSpline> {
        self.validate()?;
        Ok(RqSpline::from_params(self))
    }
}

fn knot_positions(raw: &[f64], bound: f64) -> Vec<f64> {
    let k = raw.len();
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut knots = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    knots.push(-bound);
    for v in e {
        let frac = MIN_BIN + (1.0 - k as f64 * MIN_BIN) * (v / z);
        acc += 2.0 * bound * frac;
        knots.push(acc - bound);
    }
    knots
}

/// Constrained knots of a rational-quadratic spline.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
    bound: f64,
}

struct Bin {
    xk: f64,
    yk: f64,
    w: f64,
    h: f64,
    s: f64,
    d0: f64,
    d1: f64,
}

impl Bin {
    fn log_slope(&self, xi: f64) -> f64 {
        let om = 1.0 - xi;
        let c = self.d1 + self.d0 - 2.0 * self.s;
        let denom = self.s + c * xi * om;
        let numer =
            self.s * self.s * (self.d1 * xi * xi + 2.0 * self.s * xi * om + self.d0 * om * om);
        numer.ln() - 2.0 * denom.ln()
    }
}

impl RqSpline {
    fn from_params(p: &RqSplineParams) -> Self {
        let off = derivative_offset();
        let mut ds = Vec::with_capacity(p.n_bins() + 1);
        ds.push(1.0);
        ds.extend(
            p.raw_derivatives
                .iter()
                .map(|&r| MIN_DERIVATIVE + softplus(r + off)),
        );
        ds.push(1.0);
        Self {
            xs: knot_positions(&p.raw_widths, p.bound),
            ys: knot_positions(&p.raw_heights, p.bound),
            ds,
            bound: p.bound,
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn knots_x(&self) -> &[f64] {
        &self.xs
    }

    pub fn knots_y(&self) -> &[f64] {
        &self.ys
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.ds
    }

    fn inside(&self, v: f64) -> bool {
        (-self.bound..=self.bound).contains(&v)
    }

    fn bin(&self, knots: &[f64], v: f64) -> Bin {
        let k_max = self.xs.len() - 2;
        let k = knots[1..=k_max].partition_point(|&q| q <= v);
        let w = self.xs[k + 1] - self.xs[k];
        let h = self.ys[k + 1] - self.ys[k];
        Bin {
            xk: self.xs[k],
            yk: self.ys[k],
            w,
            h,
            s: h / w,
            d0: self.ds[k],
            d1: self.ds[k + 1],
        }
    }

    /// `(f(x), ln f'(x))`, identity outside `[-B, B]`.
    pub fn forward(&self, x: f64) -> Result<(f64, f64)> {
        if !x.is_finite() {
            return Err(invalid("spline input must be finite"));
        }
        if !self.inside(x) {
            return Ok((x, 0.0));
        }
        let b = self.bin(&self.xs, x);
        let xi = (x - b.xk) / b.w;
        let om = 1.0 - xi;
        let denom = b.s + (b.d1 + b.d0 - 2.0 * b.s) * xi * om;
        let y = b.yk + b.h * (b.s * xi * xi + b.d0 * xi * om) / denom;
        Ok((y, b.log_slope(xi)))
    }

    /// `(f^{-1}(y), ln (f^{-1})'(y))` from the per-bin quadratic.
    pub fn inverse(&self, y: f64) -> Result<(f64, f64)> {
        if !y.is_finite() {
            return Err(invalid("spline input must be finite"));
        }
        if !self.inside(y) {
            return Ok((y, 0.0));
        }
        let b = self.bin(&self.ys, y);
        let dy = y - b.yk;
        let c_mix = b.d1 + b.d0 - 2.0 * b.s;
        let qa = b.h * (b.s - b.d0) + dy * c_mix;
        let qb = b.h * b.d0 - dy * c_mix;
        let qc = -b.s * dy;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let xi = 2.0 * qc / (-qb - disc.sqrt());
        Ok((b.xk + xi * b.w, -b.log_slope(xi)))
    }

    pub fn apply(&self, v: f64, direction: Direction) -> Result<(f64, f64)> {
        match direction {
            Direction::Forward => self.forward(v),
            Direction::Inverse => self.inverse(v),
        }
    }
}

pub fn rq_spline_apply(
    params: &RqSplineParams,
    x: f64,
    direction: Direction,
) -> Result<(f64, f64)> {
    params.build()?.apply(x, direction)
}
