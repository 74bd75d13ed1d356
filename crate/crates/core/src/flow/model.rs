use idens_autodiff::{Activation, Graph, Mlp, MlpVars, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph_ops::{spline_inverse, std_normal_log_pdf};
use super::spline::{RqSpline, RqSplineParams};
use crate::error::{invalid, Result};
use crate::numeric::LN_SQRT_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Spline(RqSplineParams),
    /// `y = shift + exp(log_scale) * z`.
    Affine {
        shift: f64,
        log_scale: f64,
    },
}

impl Transform {
    fn validate(&self) -> Result<()> {
        match self {
            Transform::Spline(p) => p.validate(),
            Transform::Affine { shift, log_scale } => {
                if shift.is_finite() && log_scale.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("affine layer parameters must be finite"))
                }
            }
        }
    }

    fn param(&self) -> Tensor {
        match self {
            Transform::Spline(p) => Tensor::row(p.theta()),
            Transform::Affine { shift, log_scale } => Tensor::row(vec![*shift, *log_scale]),
        }
    }

    fn set_param(&mut self, t: &Tensor) {
        match self {
            Transform::Spline(p) => {
                *p = RqSplineParams::from_theta(t.values(), p.n_bins(), p.bound)
            }
            Transform::Affine { shift, log_scale } => {
                *shift = t.values()[0];
                *log_scale = t.values()[1];
            }
        }
    }
}

enum Built {
    Spline(RqSpline),
    Affine(f64, f64),
}

impl Built {
    fn new(t: &Transform) -> Result<Self> {
        t.validate()?;
        Ok(match t {
            Transform::Spline(p) => Built::Spline(p.build()?),
            Transform::Affine { shift, log_scale } => Built::Affine(*shift, *log_scale),
        })
    }

    fn forward(&self, z: f64) -> Result<f64> {
        Ok(match self {
            Built::Spline(s) => s.forward(z)?.0,
            Built::Affine(c, ls) => c + ls.exp() * z,
        })
    }

    fn inverse(&self, y: f64) -> Result<(f64, f64)> {
        match self {
            Built::Spline(s) => s.inverse(y),
            Built::Affine(c, ls) => Ok(((y - c) * (-ls).exp(), -ls)),
        }
    }
}

/// A normalizing flow with standard-normal base. Two-dimensional outcomes
/// use an autoregressive factorization `p(y1) p(y2 | y1)`, where the spline
/// for `y2` is produced by a conditioner network fed with `y1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FlowModel {
    Univariate {
        layers: Vec<Transform>,
    },
    Autoregressive {
        first: Vec<Transform>,
        conditioner: Mlp,
        n_bins: usize,
        bound: f64,
    },
}

impl FlowModel {
    pub fn identity() -> Self {
        FlowModel::Univariate { layers: vec![] }
    }

    pub fn shift(c: f64) -> Self {
        FlowModel::Univariate {
            layers: vec![Transform::Affine {
                shift: c,
                log_scale: 0.0,
            }],
        }
    }

    /// `n_layers` identity-initialized splines.
    pub fn spline(n_bins: usize, bound: f64, n_layers: usize) -> Self {
        FlowModel::Univariate {
            layers: (0..n_layers)
                .map(|_| Transform::Spline(RqSplineParams::identity(n_bins, bound)))
                .collect(),
        }
    }

    /// Identity-initialized two-dimensional flow; `bounds` per dimension.
    pub fn autoregressive(n_bins: usize, bounds: [f64; 2], hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conditioner = Mlp::new(
            &[1, hidden, RqSplineParams::theta_len(n_bins)],
            Activation::Elu,
            &mut rng,
        );
        conditioner.zero_output_layer();
        FlowModel::Autoregressive {
            first: vec![Transform::Spline(RqSplineParams::identity(
                n_bins, bounds[0],
            ))],
            conditioner,
            n_bins,
            bound: bounds[1],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowModel::Univariate { .. } => 1,
            FlowModel::Autoregressive { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowModel::Univariate { layers } => layers.iter().try_for_each(Transform::validate),
            FlowModel::Autoregressive {
                first,
                conditioner,
                n_bins,
                bound,
            } => {
                first.iter().try_for_each(Transform::validate)?;
                RqSplineParams::identity(*n_bins, *bound).validate()?;
                if conditioner.input_dim() != 1
                    || conditioner.output_dim() != RqSplineParams::theta_len(*n_bins)
                {
                    return Err(invalid(
                        "conditioner shape does not match the second spline",
                    ));
                }
                if conditioner.params().iter().any(|t| !t.is_finite()) {
                    return Err(invalid("conditioner weights must be finite"));
                }
                Ok(())
            }
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<Tensor> {
        match self {
            FlowModel::Univariate { layers } => layers.iter().map(Transform::param).collect(),
            FlowModel::Autoregressive {
                first, conditioner, ..
            } => first
                .iter()
                .map(Transform::param)
                .chain(conditioner.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn set_params(&mut self, params: &[Tensor]) {
        match self {
            FlowModel::Univariate { layers } => {
                assert_eq!(params.len(), layers.len(), "flow parameter count");
                for (l, p) in layers.iter_mut().zip(params) {
                    l.set_param(p);
                }
            }
            FlowModel::Autoregressive {
                first, conditioner, ..
            } => {
                assert_eq!(
                    params.len(),
                    first.len() + conditioner.param_count(),
                    "flow parameter count"
                );
                for (l, p) in first.iter_mut().zip(params) {
                    l.set_param(p);
                }
                for (dst, src) in conditioner
                    .params_mut()
                    .into_iter()
                    .zip(&params[first.len()..])
                {
                    *dst = src.clone();
                }
            }
        }
    }

    fn built(layers: &[Transform]) -> Result<Vec<Built>> {
        layers.iter().map(Built::new).collect()
    }

    fn invert_1d(built: &[Built], y: f64) -> Result<f64> {
        let mut v = y;
        let mut ld = 0.0;
        for b in built.iter().rev() {
            let (z, l) = b.inverse(v)?;
            v = z;
            ld += l;
        }
        Ok(-0.5 * v * v - LN_SQRT_2PI + ld)
    }

    fn push_1d(built: &[Built], z: f64) -> Result<f64> {
        built.iter().try_fold(z, |v, b| b.forward(v))
    }

    fn second_spline(conditioner: &Mlp, n_bins: usize, bound: f64, y1: f64) -> Result<RqSpline> {
        let theta = conditioner.forward(&Tensor::scalar(y1));
        RqSplineParams::from_theta(theta.values(), n_bins, bound).build()
    }

    /// Log-density at each row of `ys` (`[m, dim]`).
    pub fn log_prob_many(&self, ys: &Tensor) -> Result<Vec<f64>> {
        if ys.cols() != self.dim() {
            return Err(invalid(format!(
                "expected {}-dimensional points, got {}",
                self.dim(),
                ys.cols()
            )));
        }
        match self {
            FlowModel::Univariate { layers } => {
                let built = Self::built(layers)?;
                ys.values()
                    .iter()
                    .map(|&y| Self::invert_1d(&built, y))
                    .collect()
            }
            FlowModel::Autoregressive {
                first,
                conditioner,
                n_bins,
                bound,
            } => {
                let built = Self::built(first)?;
                (0..ys.rows())
                    .map(|i| {
                        let (y1, y2) = (ys.get(i, 0), ys.get(i, 1));
                        let lp1 = Self::invert_1d(&built, y1)?;
                        let (z2, ld2) =
                            Self::second_spline(conditioner, *n_bins, *bound, y1)?.inverse(y2)?;
                        Ok(lp1 - 0.5 * z2 * z2 - LN_SQRT_2PI + ld2)
                    })
                    .collect()
            }
        }
    }

    pub fn log_prob(&self, y: &[f64]) -> Result<f64> {
        Ok(self.log_prob_many(&Tensor::row(y.to_vec()))?[0])
    }

    /// Pushes base points `z` (`[m, dim]`) through the generative direction.
    pub fn push_forward(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.dim() {
            return Err(invalid("base points have the wrong dimension"));
        }
        match self {
            FlowModel::Univariate { layers } => {
                let built = Self::built(layers)?;
                let v = z
                    .values()
                    .iter()
                    .map(|&v| Self::push_1d(&built, v))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Tensor::new(z.shape(), v))
            }
            FlowModel::Autoregressive {
                first,
                conditioner,
                n_bins,
                bound,
            } => {
                let built = Self::built(first)?;
                let mut out = Vec::with_capacity(z.len());
                for i in 0..z.rows() {
                    let y1 = Self::push_1d(&built, z.get(i, 0))?;
                    let y2 = Self::second_spline(conditioner, *n_bins, *bound, y1)?
                        .forward(z.get(i, 1))?
                        .0;
                    out.push(y1);
                    out.push(y2);
                }
                Ok(Tensor::new(z.shape(), out))
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let z = Tensor::new(
            [n, d],
            (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
        );
        self.push_forward(&z)
    }

    /// Image of the base median.
    pub fn median(&self) -> Result<Vec<f64>> {
        Ok(self
            .push_forward(&Tensor::zeros([1, self.dim()]))?
            .into_values())
    }

    /// Recorded log-density of the rows of `ys`, driven by the parameter
    /// handles `vars` (same order as [`FlowModel::params`]). Returns `[m, 1]`.
    pub fn log_prob_graph(&self, g: &mut Graph, vars: &[Var], ys: &Tensor) -> Var {
        match self {
            FlowModel::Univariate { layers } => {
                let y = g.constant(ys.clone());
                graph_invert_1d(g, layers, vars, y)
            }
            FlowModel::Autoregressive {
                first,
                conditioner,
                n_bins,
                bound,
            } => {
                let y1t = ys.slice_cols(0, 1);
                let y1 = g.constant(y1t.clone());
                let y2 = g.constant(ys.slice_cols(1, 2));
                let lp1 = graph_invert_1d(g, first, &vars[..first.len()], y1);
                let mv = MlpVars::from_slice(&vars[first.len()..]);
                let theta = conditioner.forward_graph(g, &mv, y1);
                let (z2, ld2) = spline_inverse(g, y2, theta, *n_bins, *bound);
                let base2 = std_normal_log_pdf(g, z2);
                let lp2 = g.add(base2, ld2);
                g.add(lp1, lp2)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }
}

fn graph_invert_1d(g: &mut Graph, layers: &[Transform], vars: &[Var], y: Var) -> Var {
    let n = g.value(y).rows();
    let mut v = y;
    let mut ld = g.constant(Tensor::zeros([n, 1]));
    for (layer, &p) in layers.iter().zip(vars).rev() {
        let (z, l) = match layer {
            Transform::Spline(sp) => spline_inverse(g, v, p, sp.n_bins(), sp.bound),
            Transform::Affine { .. } => {
                let shift = g.slice_cols(p, 0, 1);
                let ls = g.slice_cols(p, 1, 2);
                let centered = g.sub(v, shift);
                let nls = g.neg(ls);
                let inv_scale = g.exp(nls);
                let z = g.mul(centered, inv_scale);
                let zeros = g.constant(Tensor::zeros([n, 1]));
                let l = g.add(zeros, nls);
                (z, l)
            }
        };
        v = z;
        ld = g.add(ld, l);
    }
    let base = std_normal_log_pdf(g, v);
    g.add(base, ld)
}
