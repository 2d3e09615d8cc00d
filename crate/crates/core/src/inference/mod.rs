//! Variational objective, local quasi-Newton solves, the global minibatch
//! AdaGrad loop, checkpoints and landmark prediction.

pub mod checkpoint;
pub mod elbo;
pub mod fit;
pub mod lbfgs;
pub mod params;
pub mod predict;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::longitudinal::NoiseModel;

pub use checkpoint::Checkpoint;
pub use elbo::{kl_inducing, objective, objective_with_gradient, ElboSettings, ObjectiveTerms};
pub use fit::{fit_global, fit_global_from, fit_local, AdaGrad, GlobalFit, LocalFit};
pub use params::GlobalParams;
pub use predict::{predict_dist, Prediction};

/// Number of landmarks per individual.
pub const SCHEDULE_POINTS: usize = 5;
/// Span covered by the landmarks, minutes.
pub const SCHEDULE_SPAN: f64 = 2880.0;
/// Gap between the last landmark and the end of follow-up, minutes.
pub const SCHEDULE_GAP: f64 = 15.0;

/// Landmarks: 5 equally spaced points over the 2880 minutes ending 15 minutes
/// before `end_time`, negative points dropped.
pub fn grid_schedule(end_time: f64) -> Result<Vec<f64>> {
    if !(end_time > 0.0) || !end_time.is_finite() {
        return invalid(format!("end time must be positive, got {end_time}"));
    }
    let hi = end_time - SCHEDULE_GAP;
    let lo = hi - SCHEDULE_SPAN;
    let mut out: Vec<f64> = (0..SCHEDULE_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (SCHEDULE_POINTS - 1) as f64)
        .filter(|&t| t >= 0.0)
        .collect();
    out.dedup();
    Ok(out)
}

/// Landmarks of an individual whose follow-up ends at `end_time`. Follow-up
/// that ends at admission has none.
pub fn landmarks(end_time: f64) -> Result<Vec<f64>> {
    if end_time == 0.0 {
        return Ok(Vec::new());
    }
    grid_schedule(end_time)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_global_iters: usize,
    pub minibatch: usize,
    pub n_mc: usize,
    pub local_max_iters: usize,
    pub gh_nodes: usize,
    pub m_inducing: usize,
    pub r_shared: usize,
    /// Stop when the largest relative change of a global coordinate in one
    /// update, `|Δθ| / max(|θ|, 1)`, falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub noise_model: NoiseModel,
    /// Gradient tolerance of the local solves.
    pub local_gtol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            max_global_iters: 1500,
            minibatch: 2,
            n_mc: 1000,
            local_max_iters: 500,
            gh_nodes: 20,
            m_inducing: 20,
            r_shared: 2,
            rel_tol: 1e-4,
            seed: 0,
            noise_model: NoiseModel::StudentT,
            local_gtol: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid("lr must be positive");
        }
        if self.minibatch == 0 || self.n_mc == 0 || self.local_max_iters == 0 || self.m_inducing == 0 {
            return invalid("minibatch, n_mc, local_max_iters and m_inducing must be positive");
        }
        if self.gh_nodes < 5 {
            return invalid("gh_nodes must be at least 5");
        }
        if !(self.rel_tol >= 0.0) || !(self.local_gtol > 0.0) {
            return invalid("tolerances must be positive");
        }
        Ok(())
    }

    pub fn elbo_settings(&self) -> ElboSettings {
        ElboSettings { gh_nodes: self.gh_nodes, noise_model: self.noise_model }
    }
}
