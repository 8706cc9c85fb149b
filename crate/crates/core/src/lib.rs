//! Exponential moments of multitype Poissonian Galton-Watson trees, Poisson
//! clusters and linear Hawkes processes.
//!
//! The central object is the Laplace exponent `L(u)`: for a tree `T^m`
//! rooted at type `m` with Poisson offspring of means `H`,
//! `e^{L(u)_m} = E[e^{u · card(T^m)}]`, and `L(u)` is the smallest fixed
//! point of `x ↦ u + H(e^x - 1)`.
//!
//! ```
//! use gwtk::{solve_l, NonNegMatrix, SolverConfig};
//!
//! let h = NonNegMatrix::new(vec![vec![0.5]]).unwrap();
//! let l = solve_l(&h, &[0.08929862091991508], &SolverConfig::default()).unwrap();
//! assert!((l.value().unwrap()[0] - 0.2).abs() < 1e-12);
//! ```
//!
//! * [`spectral`]: spectral radius, growth certificates `|||Aⁿ||| ≤ K rⁿ`.
//! * [`laplace`]: the fixed-point solver and the closed-form bounds on `L`.
//! * [`domain`]: where `L` is finite.
//! * [`tails`]: generation tails `R_n(u)`.
//! * [`kernel`], [`grid`]: interaction kernels, cluster-tail decay, bivariate
//!   convolution.
//! * [`hawkes`]: moment bounds for Hawkes counts.
//! * [`oracle`]: Monte-Carlo estimates of all of the above.

pub mod domain;
pub mod error;
pub mod grid;
pub mod hawkes;
pub mod kernel;
pub mod laplace;
pub mod matrix;
pub mod oracle;
pub mod spectral;
pub mod tails;

pub use domain::{boundary_from_y, classify, ray_critical, reduce_types, DomainConfig, DomainStatus};
pub use error::{Error, Result};
pub use grid::{biconvolve, convolve_check, grid_norms, psi_series_grid, Grid, GridKernel};
pub use hawkes::{hawkes_moment_bound, hawkes_moment_bound_explicit, HawkesParams};
pub use kernel::{
    cluster_bound_compact, cluster_bound_exponential, cluster_bound_power, residual_integral, KernelSpec,
};
pub use laplace::{closed_form_bound, solve_l, LaplaceExponent, SolverConfig};
pub use matrix::NonNegMatrix;
pub use oracle::{empirical_cluster_tail, empirical_laplace, empirical_tail, sample_hawkes, EstimatorReport};
pub use spectral::{certify_growth, spectral_radius, t0, GrowthCertificate};
pub use tails::{tail_sequence, tail_table};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/laplace.md")]
    mod laplace {}
    #[doc = include_str!("../../../book/src/domain.md")]
    mod domain {}
    #[doc = include_str!("../../../book/src/tails.md")]
    mod tails {}
    #[doc = include_str!("../../../book/src/clusters.md")]
    mod clusters {}
    #[doc = include_str!("../../../book/src/hawkes.md")]
    mod hawkes {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    mod monte_carlo {}
}
