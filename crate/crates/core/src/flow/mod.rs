//! Rational-quadratic spline flows over a standard-normal base.
//!
//! Checkpoints are plain JSON. A univariate flow looks like
//!
//! ```json
//! {"type": "univariate",
//!  "layers": [{"kind": "spline", "raw_widths": [..], "raw_heights": [..],
//!              "raw_derivatives": [..], "bound": 7.5},
//!             {"kind": "affine", "shift": 0.0, "log_scale": 0.0}]}
//! ```
//!
//! and layers are listed in generative order (base to data).

pub(crate) mod graph_ops;
mod model;
mod spline;

pub use model::{FlowModel, Transform};
pub use spline::{
    derivative_offset, rq_spline_apply, Direction, RqSpline, RqSplineParams, MIN_BIN,
    MIN_DERIVATIVE,
};

/// `B = y_max - y_min + 5` for standardized outcomes.
pub fn spline_bound(y_min: f64, y_max: f64) -> f64 {
    y_max - y_min + 5.0
}
