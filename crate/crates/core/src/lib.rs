//! Maximum likelihood estimation for the multivariate wrapped normal
//! distribution on the p-torus.
//!
//! A sample of angle vectors `y_i ∈ [0, 2π)^p` is modelled as
//! `y_i = x_i mod 2π` with `x_i ~ N_p(μ, Σ)`. The density is a sum over the
//! unobserved wrapping coefficients, truncated to the lattice `{-J, …, J}^p`.
//! Three estimators are provided: an EM algorithm, a classification EM, and
//! direct numerical maximization. Samples with an extra linear block are
//! handled in [`mixed`], and [`simulate`] runs Monte Carlo comparisons.
//!
//! ```
//! use rand::SeedableRng;
//! use wntorus::{fit_em, initial_params, sample_wn, EmControl, LatticeConfig, WnParams};
//!
//! let truth = WnParams::isotropic(&[1.0, 6.0], 0.6).unwrap();
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let sample = sample_wn(&truth, 200, &mut rng).unwrap();
//! let init = initial_params(&sample).unwrap();
//! let fit = fit_em(&sample, &init, LatticeConfig::default(), EmControl::default()).unwrap();
//! assert!(fit.converged);
//! assert!(fit.loglik() >= fit.loglik_trace[0]);
//! ```

pub mod cem;
pub mod circular;
pub mod direct;
pub mod em;
mod error;
mod linalg;
pub mod mixed;
pub mod model;
pub mod simulate;

pub use cem::{classification_log_likelihood, classify, fit_cem, CemFitResult, WrappingCoefficients};
pub use circular::{
    angle_separation, circular_correlation, circular_mean, initial_estimate, initial_params, mean_resultant_length,
    wrap_angle, Angle, AngleVector, TorusSample,
};
pub use direct::{fit_direct, OptimizerControl, OptimizerMethod};
pub use em::{fit_em, Convergence, EmControl, FitResult, StopReason};
pub use error::{Result, WnError};
pub use mixed::{fit_mixed_cem, fit_mixed_em, MixedFitResult, MixedParams, MixedSample};
pub use model::{log_likelihood, wrapped_log_density, LatticeConfig, WnParams};
pub use simulate::{
    random_correlation, run_experiment, sample_wn, scatter_divergence, wilks_lambda, CorrelationSpec,
    ExperimentConfig, Method,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/circular.md")]
    mod circular {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/em.md")]
    mod em {}
    #[doc = include_str!("../../../book/src/cem.md")]
    mod cem {}
    #[doc = include_str!("../../../book/src/direct.md")]
    mod direct {}
    #[doc = include_str!("../../../book/src/mixed.md")]
    mod mixed {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
