use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    fn apply_graph(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Linear => x,
        }
    }
}

/// Affine layer `x W + b` with `W: [in, out]` and `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialisation on `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        Self {
            weight: Tensor::new([fan_in, fan_out], draw(fan_in * fan_out)),
            bias: Tensor::new([1, fan_out], draw(fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros([fan_in, fan_out]),
            bias: Tensor::zeros([1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Fully connected network; hidden layers use `activation`, the output layer
/// is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Deserialize)]
struct RawMlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl TryFrom<RawMlp> for Mlp {
    type Error = String;

    fn try_from(raw: RawMlp) -> Result<Self, String> {
        let m = Mlp {
            layers: raw.layers,
            activation: raw.activation,
        };
        if m.is_well_formed() {
            Ok(m)
        } else {
            Err("MLP layers have inconsistent shapes".into())
        }
    }
}

/// Graph handles for the parameters of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Rebuilds handles from a flat `[w0, b0, w1, b1, ..]` slice, the order
    /// used by [`Mlp::params`].
    pub fn from_slice(vars: &[Var]) -> Self {
        assert!(
            vars.len().is_multiple_of(2),
            "MLP parameter handles come in pairs"
        );
        Self {
            layers: vars.chunks(2).map(|p| (p[0], p[1])).collect(),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(
            dims.len() >= 2,
            "an MLP needs at least an input and output size"
        );
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Self {
        for w in layers.windows(2) {
            assert_eq!(
                w[0].fan_out(),
                w[1].fan_in(),
                "incompatible consecutive layers"
            );
        }
        Self { layers, activation }
    }

    /// At least one layer, `[1, out]` biases and chained widths.
    pub fn is_well_formed(&self) -> bool {
        !self.layers.is_empty()
            && self
                .layers
                .iter()
                .all(|l| l.bias.shape() == [1, l.fan_out()] && l.fan_in() > 0 && l.fan_out() > 0)
            && self
                .layers
                .windows(2)
                .all(|w| w[0].fan_out() == w[1].fan_in())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// Zeroes the output layer so the network emits exactly its (zero) bias.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            *last = Linear::zeros(last.fan_in(), last.fan_out());
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
            .collect();
        MlpVars { layers }
    }

    /// Recorded forward pass; `x` is `[n, in]`.
    pub fn forward_graph(&self, g: &mut Graph, vars: &MlpVars, x: Var) -> Var {
        assert_eq!(
            g.value(x).cols(),
            self.input_dim(),
            "MLP input width does not match first layer"
        );
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = g.matmul(h, w);
            h = g.add(z, b);
            if i < last {
                h = self.activation.apply_graph(g, h);
            }
        }
        h
    }

    /// Plain forward pass without recording.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            x.cols(),
            self.input_dim(),
            "MLP input width does not match first layer"
        );
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&l.weight);
            let out = l.fan_out();
            for (k, v) in z.values_mut().iter_mut().enumerate() {
                *v += l.bias.values()[k % out];
                if i < last {
                    *v = self.activation.apply(*v);
                }
            }
            h = z;
        }
        h
    }
}
