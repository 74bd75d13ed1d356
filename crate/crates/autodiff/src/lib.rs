//! Reverse-mode automatic differentiation over dense, row-major `f64`
//! matrices, together with the parameter-update rules used by the training
//! loops (SGD with momentum, Adam, and exponential moving averages).
//!
//! A [`Graph`] records a computation eagerly: every operation computes its
//! value immediately and stores the node on a tape. [`Graph::backward`]
//! walks the tape in reverse to accumulate gradients.
//!
//! ```
//! use idens_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod error;
mod graph;
mod nn;
mod optim;
mod tensor;

pub use error::AutodiffError;
pub use graph::{Gradients, Graph, Var};
pub use nn::{Activation, Linear, Mlp, MlpVars};
pub use optim::{Adam, Ema, Optimizer, Sgd};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, AutodiffError>;
