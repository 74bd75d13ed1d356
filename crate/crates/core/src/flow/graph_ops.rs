//! Spline inverse composed from differentiable graph primitives. The knot
//! maps mirror [`super::spline`] operation for operation.

use idens_autodiff::{Graph, Tensor, Var};

use super::spline::{derivative_offset, MIN_BIN, MIN_DERIVATIVE};

pub(crate) struct KnotVars {
    xs: Var,
    ys: Var,
    ds: Var,
}

fn knot_positions(g: &mut Graph, raw: Var, bound: f64) -> Var {
    let k = g.value(raw).cols() as f64;
    let p = g.softmax_rows(raw);
    let p = g.scale(p, 1.0 - k * MIN_BIN);
    let p = g.add_scalar(p, MIN_BIN);
    let w = g.scale(p, 2.0 * bound);
    let c = g.cumsum_pad(w);
    g.add_scalar(c, -bound)
}

/// Knots from a `[m, 3K - 1]` parameter block.
pub(crate) fn knots(g: &mut Graph, theta: Var, n_bins: usize, bound: f64) -> KnotVars {
    let m = g.value(theta).rows();
    let rw = g.slice_cols(theta, 0, n_bins);
    let rh = g.slice_cols(theta, n_bins, 2 * n_bins);
    let rd = g.slice_cols(theta, 2 * n_bins, 3 * n_bins - 1);
    let xs = knot_positions(g, rw, bound);
    let ys = knot_positions(g, rh, bound);
    let rd = g.add_scalar(rd, derivative_offset());
    let d = g.softplus(rd);
    let d = g.add_scalar(d, MIN_DERIVATIVE);
    let ones = g.constant(Tensor::full([m, 1], 1.0));
    let ds = g.concat_cols(&[ones, d, ones]);
    KnotVars { xs, ys, ds }
}

/// `(z, ln |dz/dy|)` for the inverse spline applied to `y: [n, 1]`, with
/// `theta` either shared (`[1, P]`) or per row (`[n, P]`).
pub(crate) fn spline_inverse(
    g: &mut Graph,
    y: Var,
    theta: Var,
    n_bins: usize,
    bound: f64,
) -> (Var, Var) {
    let kv = knots(g, theta, n_bins, bound);
    let n = g.value(y).rows();
    let yv: Vec<f64> = g.value(y).values().to_vec();
    let ys_val = g.value(kv.ys).clone();
    let shared = ys_val.rows() == 1;
    let mut inside = Vec::with_capacity(n);
    let mut bin = Vec::with_capacity(n);
    for (i, &v) in yv.iter().enumerate() {
        let row = ys_val.row_slice(if shared { 0 } else { i });
        inside.push((-bound..=bound).contains(&v));
        bin.push(row[1..n_bins].partition_point(|&q| q <= v));
    }
    let next: Vec<usize> = bin.iter().map(|k| k + 1).collect();

    let xk = g.gather(kv.xs, bin.clone());
    let xk1 = g.gather(kv.xs, next.clone());
    let yk = g.gather(kv.ys, bin.clone());
    let yk1 = g.gather(kv.ys, next.clone());
    let d0 = g.gather(kv.ds, bin);
    let d1 = g.gather(kv.ds, next);

    let w = g.sub(xk1, xk);
    let h = g.sub(yk1, yk);
    let s = g.div(h, w);
    // Rows outside the bound are evaluated at the bin's left knot, which is
    // finite and discarded by the final select.
    let y_safe = g.select(inside.clone(), y, yk);
    let dy = g.sub(y_safe, yk);

    let two_s = g.scale(s, 2.0);
    let dsum = g.add(d1, d0);
    let c_mix = g.sub(dsum, two_s);
    let s_minus_d0 = g.sub(s, d0);
    let qa_l = g.mul(h, s_minus_d0);
    let qa_r = g.mul(dy, c_mix);
    let qa = g.add(qa_l, qa_r);
    let qb_l = g.mul(h, d0);
    let qb = g.sub(qb_l, qa_r);
    let s_dy = g.mul(s, dy);
    let qc = g.neg(s_dy);

    let qb2 = g.square(qb);
    let ac = g.mul(qa, qc);
    let ac4 = g.scale(ac, 4.0);
    let disc = g.sub(qb2, ac4);
    let disc = g.clamp_min(disc, 0.0);
    let root = g.sqrt(disc);
    let neg_b = g.neg(qb);
    let denom_q = g.sub(neg_b, root);
    let two_c = g.scale(qc, 2.0);
    let xi = g.div(two_c, denom_q);

    let xi_w = g.mul(xi, w);
    let z_in = g.add(xk, xi_w);

    // ln f'(xi) = 2 ln s + ln(d1 xi^2 + 2 s xi (1 - xi) + d0 (1 - xi)^2)
    //             - 2 ln(s + c_mix xi (1 - xi))
    let neg_xi = g.neg(xi);
    let om = g.add_scalar(neg_xi, 1.0);
    let xi_om = g.mul(xi, om);
    let xi2 = g.square(xi);
    let om2 = g.square(om);
    let t1 = g.mul(d1, xi2);
    let t2a = g.mul(two_s, xi_om);
    let t3 = g.mul(d0, om2);
    let t12 = g.add(t1, t2a);
    let inner = g.add(t12, t3);
    let cx = g.mul(c_mix, xi_om);
    let denom = g.add(s, cx);
    let ln_s = g.log(s);
    let ln_inner = g.log(inner);
    let ln_denom = g.log(denom);
    let a1 = g.scale(ln_s, 2.0);
    let a2 = g.add(a1, ln_inner);
    let a3 = g.scale(ln_denom, -2.0);
    let log_slope = g.add(a2, a3);
    let ld_in = g.neg(log_slope);

    let zero = g.constant(Tensor::zeros([n, 1]));
    let z = g.select(inside.clone(), z_in, y);
    let ld = g.select(inside, ld_in, zero);
    (z, ld)
}

/// Standard-normal log-density of each entry of a column.
pub(crate) fn std_normal_log_pdf(g: &mut Graph, z: Var) -> Var {
    let sq = g.square(z);
    let half = g.scale(sq, -0.5);
    g.add_scalar(half, -crate::numeric::LN_SQRT_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::spline::RqSplineParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_inverse_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let k = 6;
            let bound = 3.0;
            let theta: Vec<f64> = (0..3 * k - 1)
                .map(|_| rng.random_range(-2.5..2.5))
                .collect();
            let spline = RqSplineParams::from_theta(&theta, k, bound)
                .build()
                .unwrap();
            let ys: Vec<f64> = (0..40).map(|_| rng.random_range(-4.0..4.0)).collect();
            let mut g = Graph::new();
            let t = g.param(Tensor::row(theta.clone()));
            let yv = g.constant(Tensor::column(ys.clone()));
            let (z, ld) = spline_inverse(&mut g, yv, t, k, bound);
            for (i, &y) in ys.iter().enumerate() {
                let (pz, pld) = spline.inverse(y).unwrap();
                assert!((g.value(z).values()[i] - pz).abs() < 1e-12);
                assert!((g.value(ld).values()[i] - pld).abs() < 1e-12);
            }
        }
    }
}
