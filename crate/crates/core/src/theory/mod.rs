//! Numerical checks of the self-supervision theory on a small Gaussian
//! testbed with closed-form posterior means.

mod report;
mod verify;
mod world;

pub use report::VerificationReport;
pub use verify::{
    k_formula, lookup_loss, oracle_model, theorem1_deviation, train_lookup, verify_k_formula, verify_theorem1,
    verify_unbiasedness, verify_variance_halving, ErrorCoupling, LookupTrainer, Theorem1Run, BIAS_Z_TOLERANCE,
    CHECKPOINTS, K_TOLERANCE, MIN_KEY_PROBABILITY, MONOTONE_WINDOW, THEOREM_TOLERANCE, VARIANCE_TOLERANCE,
};
pub use world::{bayes_posterior_mean, circulant_covariance, posterior_affine, GaussianWorld, MAX_DIM};
