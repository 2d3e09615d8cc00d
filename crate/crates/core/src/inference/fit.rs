//! Local solves per individual and the global stochastic loop.

use log::{debug, warn};
use rand::seq::index::sample;
use rayon::prelude::*;

use super::elbo::{block_kernel_cache, evaluate, evaluate_cached, Grad, ObjectiveTerms};
use super::lbfgs::{minimize, LbfgsOptions};
use super::params::{local_from_vec, local_to_vec, GlobalParams, LocalLayout};
use super::{landmarks, TrainConfig};
use crate::data::IndividualRecord;
use crate::error::{Error, Result};
use crate::longitudinal::LocalState;
use crate::rng::substream;
use crate::survival::{antithetic_normals, EventKind};

/// Initial history rate, per minute (a memory of roughly 8 hours).
pub const INIT_HISTORY_RATE: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct LocalFit {
    pub local: LocalState,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Frozen Monte-Carlo draws for one individual and round.
pub fn mc_noise(cfg: &TrainConfig, id: u64, round: u64) -> Vec<f64> {
    let index = id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ round;
    antithetic_normals(cfg.n_mc, &mut substream(cfg.seed, "mc", index))
}

/// Initial local state for `record` with observations up to `horizon`.
pub fn init_local(record: &IndividualRecord, cfg: &TrainConfig, fallback_t_max: f64) -> LocalState {
    let mut rng = substream(cfg.seed, "init", record.id);
    LocalState::init(&record.series, cfg.r_shared, cfg.m_inducing, fallback_t_max, &mut rng)
}

/// Coordinates of the loadings and noise scale of each signal without
/// observations. Only the event term reaches them, and with no prior on the
/// weights that direction is unbounded, so they keep their starting values.
fn frozen_coordinates(init: &LocalState, terms: &ObjectiveTerms) -> Vec<usize> {
    let lay = LocalLayout::of(init);
    let mut out = Vec::new();
    for d in terms.unobserved_signals() {
        out.extend((0..lay.r).map(|r| lay.w(d, r)));
        out.push(lay.kappa(d));
        out.push(lay.noise(d));
    }
    out
}

/// Maximizes the objective over the local parameters with the global
/// parameters fixed, starting from `init`.
pub fn fit_local_terms(
    global: &GlobalParams,
    terms: &ObjectiveTerms,
    init: LocalState,
    cfg: &TrainConfig,
    noise: &[f64],
) -> Result<LocalFit> {
    let settings = cfg.elbo_settings();
    let template = init.clone();
    let kernels = block_kernel_cache(global, &init, terms, false)?;
    let frozen = frozen_coordinates(&init, terms);
    let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let local = local_from_vec(&template, x);
        match evaluate_cached(global, &local, terms, &settings, noise, Grad::Local, &kernels) {
            Ok((v, Some((gl, _)))) => {
                let mut g: Vec<f64> = gl.into_iter().map(|g| -g).collect();
                frozen.iter().for_each(|&k| g[k] = 0.0);
                Ok((-v, g))
            }
            Ok((_, None)) => Ok((f64::NAN, vec![0.0; x.len()])),
            Err(Error::IllConditioned { .. }) => Ok((f64::NAN, vec![0.0; x.len()])),
            Err(e) => Err(e),
        }
    };
    let opts = LbfgsOptions { max_iters: cfg.local_max_iters, gtol: cfg.local_gtol, ftol: 1e-10, memory: 10 };
    let res = minimize(obj, local_to_vec(&init), &opts)?;
    if !res.f.is_finite() {
        return Err(Error::Numerical("local objective is not finite at the starting point".into()));
    }
    debug!("local solve: {} iterations, {} evaluations, converged {}", res.iters, res.evals, res.converged);
    Ok(LocalFit { local: local_from_vec(&template, &res.x), objective: -res.f, iters: res.iters, converged: res.converged })
}

/// Fits the local parameters of one individual on the summed landmark
/// objective over `grid`.
pub fn fit_local(global: &GlobalParams, record: &IndividualRecord, grid: &[f64], cfg: &TrainConfig) -> Result<LocalState> {
    let terms = ObjectiveTerms::training(record, grid)?;
    let end = record.event.map_or(1.0, |e| e.t_left);
    let noise = mc_noise(cfg, record.id, 0);
    Ok(fit_local_terms(global, &terms, init_local(record, cfg, end), cfg, &noise)?.local)
}

/// AdaGrad ascent: `θ += lr·g / (√G + eps)` with `G` the running sum of
/// squared gradients.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    pub sum_sq: Vec<f64>,
}

impl AdaGrad {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self { lr, eps: 1e-8, sum_sq: vec![0.0; dim] }
    }

    /// Applies one ascent step and returns the largest relative change.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> f64 {
        let mut rel = 0.0f64;
        for ((t, g), s) in theta.iter_mut().zip(grad).zip(self.sum_sq.iter_mut()) {
            *s += g * g;
            let delta = self.lr * g / (s.sqrt() + self.eps);
            rel = rel.max(delta.abs() / t.abs().max(1.0));
            *t += delta;
        }
        rel
    }
}

/// Iterations per window of the stopping rule.
pub const STOP_WINDOW: usize = 50;

/// Stopping rule for noisy iterates: the mean parameter vector of each
/// window of [`STOP_WINDOW`] iterations is compared with the previous
/// window's, and the largest relative component change per iteration is
/// tested against the tolerance.
#[derive(Debug, Clone)]
pub struct WindowedChange {
    sum: Vec<f64>,
    count: usize,
    prev_mean: Option<Vec<f64>>,
}

impl WindowedChange {
    pub fn new(dim: usize) -> Self {
        Self { sum: vec![0.0; dim], count: 0, prev_mean: None }
    }

    /// Records an iterate; returns the drift when a window closes.
    pub fn push(&mut self, theta: &[f64]) -> Option<f64> {
        for (s, t) in self.sum.iter_mut().zip(theta) {
            *s += t;
        }
        self.count += 1;
        if self.count < STOP_WINDOW {
            return None;
        }
        let mean: Vec<f64> = self.sum.iter().map(|s| s / STOP_WINDOW as f64).collect();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.count = 0;
        let drift = self.prev_mean.as_ref().map(|p| {
            p.iter().zip(&mean).map(|(a, b)| (b - a).abs() / a.abs().max(1.0)).fold(0.0, f64::max) / STOP_WINDOW as f64
        });
        self.prev_mean = Some(mean);
        drift
    }
}

/// Sum of per-individual gradients rescaled from the minibatch to the population.
pub fn minibatch_gradient(population: usize, grads: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if grads.is_empty() {
        return out;
    }
    let scale = population as f64 / grads.len() as f64;
    for g in grads {
        for (o, v) in out.iter_mut().zip(g) {
            *o += scale * v;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub global: GlobalParams,
    /// Final local state per individual of the population (`None` when the
    /// individual has no usable landmark or its solve diverged).
    pub locals: Vec<Option<LocalState>>,
    /// Global vector after every update.
    pub trajectory: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub skipped: usize,
}

/// Baseline log-rate from the crude event rate of the population.
pub fn crude_log_rate(population: &[IndividualRecord]) -> f64 {
    let mut events = 0.0f64;
    let mut exposure = 0.0f64;
    for r in population {
        if let Some(e) = r.event {
            exposure += e.t_left.max(1.0);
            if e.kind != EventKind::RightCensored {
                events += 1.0;
            }
        }
    }
    (events.max(0.5) / exposure.max(1.0)).ln()
}

fn check_population(population: &[IndividualRecord], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if population.is_empty() {
        return Err(Error::Validation("training population is empty".into()));
    }
    if cfg.minibatch > population.len() {
        return Err(Error::Validation(format!(
            "minibatch {} exceeds the population size {}",
            cfg.minibatch,
            population.len()
        )));
    }
    let d = population[0].series.len();
    let p = population[0].covariates.len();
    for r in population {
        if r.event.is_none() {
            return Err(Error::Validation(format!("individual {} has no event record", r.id)));
        }
        if r.series.len() != d || r.covariates.len() != p {
            return Err(Error::Validation(format!("individual {} has inconsistent dimensions", r.id)));
        }
    }
    if d == 0 {
        return Err(Error::Validation("records have no signals".into()));
    }
    Ok(())
}

pub fn fit_global(population: &[IndividualRecord], cfg: &TrainConfig) -> Result<GlobalFit> {
    check_population(population, cfg)?;
    let init = GlobalParams::init(
        population[0].series.len(),
        cfg.r_shared,
        population[0].covariates.len(),
        crude_log_rate(population),
        INIT_HISTORY_RATE,
    );
    fit_global_from(population, cfg, init)
}

struct Contribution {
    index: usize,
    local: Option<LocalState>,
    grad: Option<Vec<f64>>,
}

fn contribute(
    global: &GlobalParams,
    record: &IndividualRecord,
    grid: &[f64],
    cfg: &TrainConfig,
    warm: Option<&LocalState>,
    round: u64,
) -> Result<(LocalState, Vec<f64>)> {
    let terms = ObjectiveTerms::training(record, grid)?;
    let noise = mc_noise(cfg, record.id, round);
    let init = warm.cloned().unwrap_or_else(|| init_local(record, cfg, record.event.map_or(1.0, |e| e.t_left)));
    let fit = fit_local_terms(global, &terms, init, cfg, &noise)?;
    match evaluate(global, &fit.local, &terms, &cfg.elbo_settings(), &noise, Grad::Both)? {
        (v, Some((_, g))) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Ok((fit.local, g)),
        _ => Err(Error::Numerical("non-finite objective after the local solve".into())),
    }
}

pub fn fit_global_from(population: &[IndividualRecord], cfg: &TrainConfig, init: GlobalParams) -> Result<GlobalFit> {
    check_population(population, cfg)?;
    init.validate()?;
    let grids: Vec<Vec<f64>> = population
        .iter()
        .map(|r| landmarks(r.event.expect("checked").t_left))
        .collect::<Result<_>>()?;
    let usable: Vec<usize> = (0..population.len()).filter(|&i| !grids[i].is_empty()).collect();
    if usable.len() < population.len() {
        warn!("{} individuals have no landmark before their event and are not used", population.len() - usable.len());
    }
    if usable.len() < cfg.minibatch {
        return Err(Error::Validation("too few individuals with usable landmarks for the minibatch".into()));
    }
    let mut global = init;
    let mut theta = global.to_vec();
    let mut opt = AdaGrad::new(cfg.lr, theta.len());
    let mut stop = WindowedChange::new(theta.len());
    let mut locals: Vec<Option<LocalState>> = vec![None; population.len()];
    let mut trajectory = Vec::new();
    let mut batch_rng = substream(cfg.seed, "batch", 0);
    let mut converged = false;
    let mut skipped = 0;
    let mut iterations = 0;
    for iter in 0..cfg.max_global_iters {
        let batch: Vec<usize> = sample(&mut batch_rng, usable.len(), cfg.minibatch).into_iter().map(|k| usable[k]).collect();
        let snapshot = &global;
        let results: Vec<Contribution> = batch
            .par_iter()
            .map(|&i| match contribute(snapshot, &population[i], &grids[i], cfg, locals[i].as_ref(), iter as u64 + 1) {
                Ok((l, g)) => Contribution { index: i, local: Some(l), grad: Some(g) },
                Err(e) => {
                    warn!("individual {}: local solve failed ({e}); reset and skipped this round", population[i].id);
                    Contribution { index: i, local: None, grad: None }
                }
            })
            .collect();
        let mut grads = Vec::with_capacity(results.len());
        for c in results {
            match c.grad {
                Some(g) => grads.push(g),
                None => skipped += 1,
            }
            locals[c.index] = c.local;
        }
        let g = minibatch_gradient(usable.len(), &grads, theta.len());
            let rel = opt.step(&mut theta, &g);
        global = global.with_vec(&theta);
        trajectory.push(theta.clone());
        iterations = iter + 1;
        debug!("global iteration {iterations}: max relative change {rel:.3e}");
        if stop.push(&theta).is_some_and(|d| d < cfg.rel_tol) {
            converged = true;
            break;
        }
    }
    let finals: Vec<Option<LocalState>> = population
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            if grids[i].is_empty() {
                return None;
            }
            let terms = ObjectiveTerms::training(r, &grids[i]).ok()?;
            let noise = mc_noise(cfg, r.id, 0);
            let init = locals[i].clone().unwrap_or_else(|| init_local(r, cfg, r.event.map_or(1.0, |e| e.t_left)));
            match fit_local_terms(&global, &terms, init, cfg, &noise) {
                Ok(f) => Some(f.local),
                Err(e) => {
                    warn!("individual {}: final local solve failed ({e})", r.id);
                    None
                }
            }
        })
        .collect();
    Ok(GlobalFit { global, locals: finals, trajectory, iterations, converged, skipped })
}
