//! Randomized invariants of the spline flows: inversion, log-determinant
//! antisymmetry, normalization and parameter gradients.

#[path = "support/flow_checks.rs"]
mod flow_checks;

use flow_checks::*;

#[test]
fn inversion_and_log_det_antisymmetry() {
    let (rt, ld) = inversion_and_log_det(1);
    assert!(rt <= 1e-8, "round trip error {rt}");
    assert!(ld <= 1e-10, "log-det antisymmetry error {ld}");
}

#[test]
fn univariate_densities_normalize() {
    let err = univariate_mass_error(2);
    assert!(err < 1e-3, "mass error {err}");
}

#[test]
fn autoregressive_densities_normalize() {
    let err = autoregressive_mass_error(3, 10);
    assert!(err < 1e-3, "mass error {err}");
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let err = gradient_relative_error(4);
    assert!(err < 1e-4, "relative gradient error {err}");
}
