//! Trigonometric-score maximum likelihood estimation for alpha-stable laws.
//!
//! The crate implements
//! - the stable characteristic function in the continuous parametrization
//!   and its analytic gradients ([`stable_model`]),
//! - the projected trigonometric score machinery: moment vector, derivative
//!   matrix, covariance matrix and approximate information ([`trig_projection`]),
//! - exact samplers for stable variates and stable Ornstein-Uhlenbeck paths
//!   ([`sampling`]),
//! - TML and explicit-GMM fitting for i.i.d. samples ([`estimators`]),
//! - the conditional (TCML) estimator for discretely observed stable OU
//!   processes ([`ou_model`]),
//! - a Monte Carlo replication harness with CSV reports ([`experiments`]).

pub mod estimators;
pub mod experiments;
pub mod numkit;
pub mod ou_model;
pub mod sampling;
pub(crate) mod scoring;
pub mod stable_model;
pub mod trig_projection;

pub use stable_model::StableParams;
