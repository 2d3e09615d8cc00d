//! Joint modeling of irregularly sampled multivariate signals and censored
//! event times, with uncertainty-aware abstaining event prediction.
//!
//! The longitudinal side is a sparse variational linear model of
//! coregionalization (shared plus signal-specific Matérn-1/2 latent
//! processes, Student-t noise). The event side is a landmark hazard driven by
//! an exponentially weighted integral of the latent signal history, whose
//! Gaussian posterior induces a distribution over the event probability.
//! [`policy`] turns that distribution into accept/reject/abstain decisions.

pub mod error;
pub mod evalharness;
pub mod numeric;
pub mod pipeline;
pub mod kernels;
pub mod longitudinal;
pub mod survival;
pub mod policy;
pub mod config;
pub mod data;
pub mod inference;
pub mod rng;
pub mod simdata;

#[cfg(test)]
#[path = "../tests/common/quad.rs"]
pub(crate) mod quad;
