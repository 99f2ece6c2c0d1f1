//! Numerical verification of the stability argument: constant estimation,
//! admissible-ε bounds, the leading expansion term and simulation checks.

mod bounds;
mod certify;
mod constants;
mod sampling;
mod sigma;

pub use bounds::{
    bounds_at, check_monotonicity, eps0_closed_form, eps2_closed_form, eps3_closed_form, epsilon_bounds,
    intermediates, kappa_sigma_sum, ultimate_bound, EpsilonBounds, Gamma1Coeffs, Intermediates, LambdaChoice,
};
pub use certify::{
    certify_set_stability, contraction_check, first_increase_above_floor, fit_decay_rate, CertificationReport,
    ContractionReport, DeltaResult, FloorSource, RateFit, TrajectoryFailure,
};
pub use constants::{estimate_constants, ProofConstants, MIN_SAMPLES};
pub use sampling::{initial_conditions, region_samples, Halton, SamplePoint};
pub use sigma::{sigma1, sigma1_bound};
