//! Randomized flow invariant measurements, shared with the acceptance run.
//! Each check returns its worst observed error.

use idens_autodiff::{Graph, Tensor, Var};
use idens_core::flow::{FlowModel, RqSplineParams, Transform};
use idens_core::numeric::{adaptive_simpson, linspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const INSTANCES: usize = 100;

fn random_params(rng: &mut ChaCha8Rng) -> RqSplineParams {
    let k = rng.random_range(2..=16);
    let bound = rng.random_range(1.0..10.0);
    let normal = Normal::new(0.0, 1.5).unwrap();
    let theta: Vec<f64> = (0..RqSplineParams::theta_len(k))
        .map(|_| normal.sample(rng))
        .collect();
    RqSplineParams::from_theta(&theta, k, bound)
}

fn random_flow(rng: &mut ChaCha8Rng) -> FlowModel {
    let sp = random_params(rng);
    FlowModel::Univariate {
        layers: vec![
            Transform::Spline(sp),
            Transform::Affine {
                shift: rng.random_range(-2.0..2.0),
                log_scale: rng.random_range(-0.5..0.5),
            },
        ],
    }
}

/// Worst round-trip error and worst `|log det f + log det f^-1|`.
pub fn inversion_and_log_det(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_rt, mut worst_ld) = (0.0f64, 0.0f64);
    for _ in 0..INSTANCES {
        let p = random_params(&mut rng);
        let s = p.build().unwrap();
        let b = p.bound;
        for _ in 0..50 {
            let x = rng.random_range(-1.3 * b..1.3 * b);
            let (y, ld_f) = s.forward(x).unwrap();
            let (x2, ld_i) = s.inverse(y).unwrap();
            worst_rt = worst_rt.max((x - x2).abs());
            worst_ld = worst_ld.max((ld_f + ld_i).abs());
        }
    }
    (worst_rt, worst_ld)
}

/// Adaptive Simpson on each interval between the images of the spline knots,
/// where the density is smooth, plus the two tails.
fn piecewise_mass(f: &FlowModel) -> f64 {
    let FlowModel::Univariate { layers } = f else {
        unreachable!()
    };
    let (Transform::Spline(sp), Transform::Affine { shift, log_scale }) = (&layers[0], &layers[1])
    else {
        unreachable!()
    };
    let mut cuts = vec![-80.0];
    cuts.extend(
        sp.build()
            .unwrap()
            .knots_y()
            .iter()
            .map(|k| shift + log_scale.exp() * k),
    );
    cuts.push(80.0);
    cuts.windows(2)
        .map(|w| {
            let density = |y: f64| f.log_prob(&[y]).unwrap().exp();
            adaptive_simpson(&density, w[0], w[1], 1e-8, 16).unwrap()
        })
        .sum()
}

/// Worst `|mass - 1|` over random univariate flows.
pub fn univariate_mass_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..INSTANCES)
        .map(|_| (piecewise_mass(&random_flow(&mut rng)) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Worst `|mass - 1|` over perturbed two-dimensional autoregressive flows,
/// by a rectangle rule on `[-12, 12]^2`.
pub fn autoregressive_mass_error(seed: u64, instances: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = linspace(-12.0, 12.0, 801);
    let h = axis[1] - axis[0];
    let mut pts = Vec::with_capacity(2 * axis.len() * axis.len());
    for &a in &axis {
        for &b in &axis {
            pts.extend([a, b]);
        }
    }
    let grid = Tensor::new([axis.len() * axis.len(), 2], pts);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut f = FlowModel::autoregressive(5, [4.0, 4.0], 8, i);
        // perturb every parameter so the conditioner is not the identity
        let params: Vec<Tensor> = f
            .params()
            .into_iter()
            .map(|t| {
                Tensor::new(
                    t.shape(),
                    t.values()
                        .iter()
                        .map(|v| v + rng.random_range(-0.3..0.3))
                        .collect(),
                )
            })
            .collect();
        f.set_params(&params);
        let lp = f.log_prob_many(&grid).unwrap();
        let mass: f64 = lp.iter().map(|v| v.exp()).sum::<f64>() * h * h;
        worst = worst.max((mass - 1.0).abs());
    }
    worst
}

/// Central differences of the summed log-density against reverse mode.
fn gradient_error(f: &FlowModel, ys: &Tensor) -> f64 {
    let params = f.params();
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let lp = f.log_prob_graph(&mut g, &vars, ys);
    let s = g.sum(lp);
    let grads = g.backward(s).unwrap().collect(&vars);
    let total = |p: &[Tensor]| {
        let mut m = f.clone();
        m.set_params(p);
        m.log_prob_many(ys).unwrap().iter().sum::<f64>()
    };
    let step = 1e-6;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let mut plus = params.clone();
            plus[k].values_mut()[i] += step;
            let mut minus = params.clone();
            minus[k].values_mut()[i] -= step;
            let num = (total(&plus) - total(&minus)) / (2.0 * step);
            let ana = grads[k].values()[i];
            diff = diff.max((num - ana).abs());
            scale = scale.max(num.abs()).max(ana.abs());
        }
    }
    diff / scale.max(1e-8)
}

/// Worst relative gradient error over random univariate flows and one
/// perturbed autoregressive flow. Test points avoid spline knots, where the
/// density is not differentiable in the parameters.
pub fn gradient_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let f = random_flow(&mut rng);
        let ys = Tensor::column((0..8).map(|_| rng.random_range(-8.0..8.0)).collect());
        worst = worst.max(gradient_error(&f, &ys));
    }
    let mut ar = FlowModel::autoregressive(4, [3.0, 3.0], 6, 9);
    let params: Vec<Tensor> = ar
        .params()
        .into_iter()
        .map(|t| t.map(|v| v + 0.3 * v.signum() + 0.1))
        .collect();
    ar.set_params(&params);
    let ys = Tensor::from_rows(&[vec![0.23, -1.1], vec![1.37, 0.71], vec![-2.11, 2.46]]);
    worst.max(gradient_error(&ar, &ys))
}
