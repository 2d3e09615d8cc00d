//! Landmark prediction: refit the local state on data up to `t` and map the
//! history feature to the event-probability distribution.

use super::fit::{fit_local_terms, init_local};
use super::{GlobalParams, ObjectiveTerms, TrainConfig};
use crate::data::IndividualRecord;
use crate::error::Result;
use crate::longitudinal::{block_lengthscales, predict_latent, LocalState};
use crate::policy::EventProbDist;
use crate::survival::{fbar_distribution, horizon_constant, HistoryFeatureDist};

#[derive(Debug, Clone)]
pub struct Prediction {
    pub t: f64,
    pub dist: EventProbDist,
    pub fbar: HistoryFeatureDist,
    pub local: LocalState,
}

/// Starts from `init`, taking weights from `prev` and inducing means from
/// `prev`'s posterior at the new inducing inputs.
fn warm_start(prev: &LocalState, mut init: LocalState, global: &GlobalParams) -> LocalState {
    if prev.blocks.len() != init.blocks.len() || prev.m_inducing() != init.m_inducing() || prev.n_signals() != init.n_signals() {
        return init;
    }
    init.weights = prev.weights.clone();
    let ls = block_lengthscales(&global.links, prev);
    for (j, b) in init.blocks.iter_mut().enumerate() {
        if prev.blocks[j].z == b.z {
            *b = prev.blocks[j].clone();
        } else if let Ok(p) = predict_latent(&prev.blocks[j], ls[j], &b.z) {
            b.m = p.mean;
        }
    }
    init
}

/// Event-probability distribution at landmark `t` for horizon `delta`, using
/// only observations and covariates up to `t`.
pub fn predict_dist(
    global: &GlobalParams,
    record: &IndividualRecord,
    t: f64,
    delta: f64,
    cfg: &TrainConfig,
    warm: Option<&LocalState>,
) -> Result<Prediction> {
    let past = record.truncated(t);
    let mut init = init_local(&past, cfg, t.max(1.0));
    if let Some(prev) = warm {
        init = warm_start(prev, init, global);
    }
    let terms = ObjectiveTerms::longitudinal(&past, Some(t));
    let fit = fit_local_terms(global, &terms, init, cfg, &[])?;
    let ls = block_lengthscales(&global.links, &fit.local);
    let fbar = fbar_distribution(&fit.local, &global.hazard, &ls, t)?;
    let x = record.covariates_at(t);
    let dist = EventProbDist::new(
        global.hazard.linear_predictor(&x) + fbar.mu,
        fbar.var.sqrt(),
        horizon_constant(global.hazard.a, delta),
    )?;
    Ok(Prediction { t, dist, fbar, local: fit.local })
}

/// Predictions at increasing landmarks, each warm-started from the previous.
pub fn predict_schedule(
    global: &GlobalParams,
    record: &IndividualRecord,
    times: &[f64],
    delta: f64,
    cfg: &TrainConfig,
) -> Result<Vec<Prediction>> {
    let mut out: Vec<Prediction> = Vec::with_capacity(times.len());
    for &t in times {
        let p = predict_dist(global, record, t, delta, cfg, out.last().map(|p| &p.local))?;
        out.push(p);
    }
    Ok(out)
}
