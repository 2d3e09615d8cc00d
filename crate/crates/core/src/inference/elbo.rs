//! Per-individual variational objective and its gradient with respect to the
//! unconstrained local and global parameter vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{GlobalLayout, GlobalParams, LocalLayout, A_SCALE};
use crate::data::IndividualRecord;
use crate::error::{invalid, Result};
use crate::kernels::{cross_cov_with_grad, matern12_dl, matern12_unchecked, variance_with_grad};
use crate::longitudinal::{block_lengthscales, expected_point_loglik, kzz_factor, InducingBlock, KzzFactor, LocalState, NoiseModel};
use crate::numeric::{Dual, GaussHermite};
use crate::survival::{expected_t2e_with_grad, CovariateVector, EventKind, EventRecord, HistoryFeatureDist, MIN_LANDMARK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboSettings {
    pub gh_nodes: usize,
    pub noise_model: NoiseModel,
}

impl Default for ElboSettings {
    fn default() -> Self {
        Self { gh_nodes: 20, noise_model: NoiseModel::StudentT }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SignalTerms {
    times: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct GridTerm {
    t: f64,
    x: CovariateVector,
}

/// The data entering one individual's objective: weighted observations,
/// landmark grid points with their covariates, and the event record.
///
/// The objective at a landmark `t` is the expected log-likelihood of the
/// observations up to `t`, plus the expected event log-likelihood from `t`,
/// minus the KL divergence. Summing over landmarks weights each observation
/// by the number of landmarks at or after it and the KL term by the number
/// of landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    signals: Vec<SignalTerms>,
    grid: Vec<GridTerm>,
    event: Option<EventRecord>,
    kl_weight: f64,
}

impl ObjectiveTerms {
    /// Sum of landmark objectives over `grid`.
    pub fn training(record: &IndividualRecord, grid: &[f64]) -> Result<Self> {
        let event = record.event.ok_or_else(|| crate::error::Error::Validation(format!("individual {} has no event record", record.id)))?;
        if grid.is_empty() {
            return invalid(format!("individual {} has an empty landmark grid", record.id));
        }
        if let Some(&t) = grid.iter().find(|&&t| !(t >= 0.0) || t > event.t_left) {
            return invalid(format!("landmark {t} lies outside [0, {}]", event.t_left));
        }
        let signals = record
            .series
            .iter()
            .map(|s| {
                let mut out = SignalTerms { times: vec![], values: vec![], weights: vec![] };
                for (&t, &y) in s.times.iter().zip(&s.values) {
                    let w = grid.iter().filter(|&&g| g >= t).count();
                    if w > 0 {
                        out.times.push(t);
                        out.values.push(y);
                        out.weights.push(w as f64);
                    }
                }
                out
            })
            .collect();
        let kl_weight = grid.len() as f64;
        let grid = grid.iter().map(|&t| GridTerm { t, x: record.covariates_at(t) }).collect();
        Ok(Self { signals, grid, event: Some(event), kl_weight })
    }

    /// Objective at a single landmark.
    pub fn at_landmark(record: &IndividualRecord, t: f64) -> Result<Self> {
        Self::training(record, &[t])
    }

    /// Longitudinal part only: observations up to `horizon` (all if `None`),
    /// no event term, KL counted once.
    pub fn longitudinal(record: &IndividualRecord, horizon: Option<f64>) -> Self {
        let h = horizon.unwrap_or(f64::INFINITY);
        let signals = record
            .series
            .iter()
            .map(|s| {
                let n = s.times.partition_point(|&t| t <= h);
                SignalTerms { times: s.times[..n].to_vec(), values: s.values[..n].to_vec(), weights: vec![1.0; n] }
            })
            .collect();
        Self { signals, grid: vec![], event: None, kl_weight: 1.0 }
    }

    /// Whether the objective averages over Monte-Carlo draws.
    pub fn needs_noise(&self) -> bool {
        !self.grid.is_empty() && self.event.is_some_and(|e| e.kind == EventKind::IntervalCensored)
    }

    pub fn n_observations(&self) -> usize {
        self.signals.iter().map(|s| s.times.len()).sum()
    }

    /// Signals without any observation in the objective.
    pub fn unobserved_signals(&self) -> Vec<usize> {
        (0..self.signals.len()).filter(|&d| self.signals[d].times.is_empty()).collect()
    }
}

/// `KL(N(m, S) ‖ N(0, K_ZZ))`.
pub fn kl_inducing(block: &InducingBlock, kzz: &KzzFactor) -> f64 {
    let m = block.m.len() as f64;
    let s = block.s();
    let trace = kzz.inv.component_mul(&s).sum();
    let maha = block.m.dot(&(&kzz.inv * &block.m));
    let logdet_s = 2.0 * block.s_chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    0.5 * (trace + maha - m + kzz.log_det() - logdet_s)
}

/// Kernel quantities of one latent block over its observation rows followed
/// by the landmark rows. They depend on the inducing locations, the
/// length-scale and the history rate only, so a local solve builds them once.
pub(crate) struct BlockKernels {
    l: f64,
    kf: KzzFactor,
    n_obs: usize,
    krow: DMatrix<f64>,
    /// `∂K̄/∂c`, `∂K̄/∂l` on the landmark rows.
    dkbar: Option<(DMatrix<f64>, DMatrix<f64>)>,
    ivar: Vec<Dual<2>>,
    /// `K_XZ K_ZZ⁻¹`.
    a: DMatrix<f64>,
}

fn block_kernels(z: &[f64], l: f64, c: f64, obs: &[f64], grid: &[f64], with_dkbar: bool) -> Result<BlockKernels> {
    let kf = kzz_factor(z, l)?;
    let mz = z.len();
    let (n_obs, n_grid) = (obs.len(), grid.len());
    let mut krow = DMatrix::zeros(n_obs + n_grid, mz);
    for (i, &t) in obs.iter().enumerate() {
        for (k, &zk) in z.iter().enumerate() {
            krow[(i, k)] = matern12_unchecked(t, zk, l);
        }
    }
    let mut dkbar = with_dkbar.then(|| (DMatrix::zeros(n_grid, mz), DMatrix::zeros(n_grid, mz)));
    let mut ivar = Vec::with_capacity(n_grid);
    for (g, &t) in grid.iter().enumerate() {
        for (k, &zk) in z.iter().enumerate() {
            let v = cross_cov_with_grad(c, l, t, zk);
            krow[(n_obs + g, k)] = v.v;
            if let Some((dc, dl)) = dkbar.as_mut() {
                dc[(g, k)] = v.d[0];
                dl[(g, k)] = v.d[1];
            }
        }
        ivar.push(variance_with_grad(c, l, t));
    }
    let a = &krow * &kf.inv;
    Ok(BlockKernels { l, kf, n_obs, krow, dkbar, ivar, a })
}

/// Marginal means and variances of one block on its rows.
struct BlockMoments {
    al: DMatrix<f64>,
    mean: DVector<f64>,
    var: DVector<f64>,
}

fn block_moments(block: &InducingBlock, bk: &BlockKernels) -> BlockMoments {
    let mean = &bk.a * &block.m;
    let al = &bk.a * &block.s_chol;
    let var = DVector::from_fn(bk.krow.nrows(), |i, _| {
        let knn = if i < bk.n_obs { 1.0 } else { bk.ivar[i - bk.n_obs].v };
        knn - bk.a.row(i).dot(&bk.krow.row(i)) + al.row(i).norm_squared()
    });
    BlockMoments { al, mean, var }
}

/// Gradients with respect to one block's variational parameters, its
/// length-scale and the history rate.
struct BlockGrad {
    dm: DVector<f64>,
    dl_chol: DMatrix<f64>,
    dlength: f64,
    dc: f64,
}

fn block_backward(
    block: &InducingBlock,
    bk: &BlockKernels,
    bm: &BlockMoments,
    obs: &[f64],
    dmean: &DVector<f64>,
    dvar: &DVector<f64>,
    kl_weight: f64,
    with_kernel_grad: bool,
) -> BlockGrad {
    let kinv = &bk.kf.inv;
    let lc = &block.s_chol;
    let rows = bk.krow.nrows();
    let mz = block.size();
    let mut dvar_al = bm.al.clone();
    for i in 0..rows {
        dvar_al.row_mut(i).scale_mut(dvar[i]);
    }
    let mut dl_chol = bk.a.transpose() * &dvar_al * 2.0;
    let mut dm = bk.a.transpose() * dmean;
    let alpha = kinv * &block.m;
    dm.axpy(-kl_weight, &alpha, 1.0);
    let mut kl_l = kinv * lc;
    for i in 0..mz {
        kl_l[(i, i)] -= 1.0 / lc[(i, i)];
    }
    dl_chol -= kl_l * kl_weight;
    if !with_kernel_grad {
        return BlockGrad { dm, dl_chol, dlength: 0.0, dc: 0.0 };
    }

    let a_s = &bm.al * lc.transpose();
    let mut da = dmean * block.m.transpose();
    for i in 0..rows {
        let dv = dvar[i];
        if dv != 0.0 {
            for k in 0..mz {
                da[(i, k)] += dv * (2.0 * a_s[(i, k)] - bk.krow[(i, k)]);
            }
        }
    }
    let mut dkrow = &da * kinv;
    for i in 0..rows {
        for k in 0..mz {
            dkrow[(i, k)] -= dvar[i] * bk.a[(i, k)];
        }
    }
    let mut dkzz = -(bk.a.transpose() * &da) * kinv;
    let s = lc * lc.transpose();
    let sk = kinv * s * kinv;
    let kl_k = (kinv - sk - &alpha * alpha.transpose()) * 0.5;
    dkzz -= kl_k * kl_weight;

    let l = bk.l;
    let mut dlength = 0.0;
    for (i, &t) in obs.iter().enumerate() {
        for (k, &z) in block.z.iter().enumerate() {
            dlength += dkrow[(i, k)] * matern12_dl(t, z, l);
        }
    }
    for (p, &zp) in block.z.iter().enumerate() {
        for (q, &zq) in block.z.iter().enumerate() {
            dlength += dkzz[(p, q)] * matern12_dl(zp, zq, l);
        }
    }
    let mut dc = 0.0;
    if let Some((dkc, dkl)) = &bk.dkbar {
        for g in 0..bk.ivar.len() {
            let i = bk.n_obs + g;
            for k in 0..mz {
                dc += dkrow[(i, k)] * dkc[(g, k)];
                dlength += dkrow[(i, k)] * dkl[(g, k)];
            }
            dc += dvar[i] * bk.ivar[g].d[0];
            dlength += dvar[i] * bk.ivar[g].d[1];
        }
    }
    BlockGrad { dm, dl_chol, dlength, dc }
}

/// Which gradients `evaluate` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Grad {
    None,
    /// Local parameters only; the global vector comes back empty.
    Local,
    Both,
}

fn check_dims(global: &GlobalParams, local: &LocalState, terms: &ObjectiveTerms) -> Result<()> {
    let (r, dn) = (local.r_shared(), local.n_signals());
    if terms.signals.len() != dn || global.n_signals() != dn || global.r_shared != r || global.links.len() != local.blocks.len() {
        return invalid("global parameters, local state and data disagree in dimensions");
    }
    if terms.grid.iter().any(|g| g.x.x.len() != global.n_covariates()) {
        return invalid("covariate dimension disagrees with the hazard coefficients");
    }
    Ok(())
}

/// Observation times of every signal stacked in order, with the offset of
/// each signal. Shared blocks see all of them.
fn stacked_times(terms: &ObjectiveTerms) -> (Vec<usize>, Vec<f64>) {
    let mut offs = Vec::with_capacity(terms.signals.len());
    let mut all = Vec::new();
    for s in &terms.signals {
        offs.push(all.len());
        all.extend(&s.times);
    }
    (offs, all)
}

/// Kernel quantities of every block. Valid for any local state sharing the
/// inducing locations and spans of `local`.
pub(crate) fn block_kernel_cache(
    global: &GlobalParams,
    local: &LocalState,
    terms: &ObjectiveTerms,
    with_kernel_grad: bool,
) -> Result<Vec<BlockKernels>> {
    check_dims(global, local, terms)?;
    let r = local.r_shared();
    let ls = block_lengthscales(&global.links, local);
    let (_, all_obs) = stacked_times(terms);
    let grid_t: Vec<f64> = terms.grid.iter().map(|g| g.t.max(MIN_LANDMARK)).collect();
    (0..local.blocks.len())
        .map(|j| {
            let obs = if j < r { &all_obs[..] } else { &terms.signals[j - r].times[..] };
            block_kernels(&local.blocks[j].z, ls[j], global.hazard.c, obs, &grid_t, with_kernel_grad)
        })
        .collect()
}

/// Value and optional gradients `(local, global)` of the objective.
pub(crate) fn evaluate(
    global: &GlobalParams,
    local: &LocalState,
    terms: &ObjectiveTerms,
    settings: &ElboSettings,
    noise: &[f64],
    grad: Grad,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
    let kernels = block_kernel_cache(global, local, terms, grad == Grad::Both)?;
    evaluate_cached(global, local, terms, settings, noise, grad, &kernels)
}

/// `evaluate` with kernel quantities from `block_kernel_cache`. Global
/// gradients need a cache built with kernel gradients.
pub(crate) fn evaluate_cached(
    global: &GlobalParams,
    local: &LocalState,
    terms: &ObjectiveTerms,
    settings: &ElboSettings,
    noise: &[f64],
    grad: Grad,
    kernels: &[BlockKernels],
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
    check_dims(global, local, terms)?;
    if settings.gh_nodes < 5 {
        return invalid("Gauss-Hermite rule needs at least 5 nodes");
    }
    if kernels.len() != local.blocks.len() || (grad == Grad::Both && kernels.iter().any(|k| k.dkbar.is_none() && !k.ivar.is_empty())) {
        return invalid("kernel cache does not match the local state");
    }
    let r = local.r_shared();
    let dn = local.n_signals();
    let want_grad = grad != Grad::None;
    let want_global = grad == Grad::Both;
    let hz = &global.hazard;
    let (offs, all_obs) = stacked_times(terms);
    let obs_of = |j: usize| -> &[f64] { if j < r { &all_obs } else { &terms.signals[j - r].times } };
    let moments: Vec<BlockMoments> = local.blocks.iter().zip(kernels).map(|(b, k)| block_moments(b, k)).collect();
    let blocks = &moments;

    let llay = LocalLayout::of(local);
    let glay: GlobalLayout = global.layout();
    let mut dmean: Vec<DVector<f64>> = blocks.iter().map(|b| DVector::zeros(b.mean.len())).collect();
    let mut dvar = dmean.clone();
    let mut dlocal = vec![0.0; if want_grad { llay.len() } else { 0 }];
    let mut dglobal = vec![0.0; if want_global { glay.len() } else { 0 }];
    let mut dsigma = vec![0.0; dn];
    let w = &local.weights.w;
    let kappa = &local.weights.kappa;
    let sigma = &local.weights.noise_scale;
    let gh = GaussHermite::cached(settings.gh_nodes);
    let mut value = 0.0;

    for d in 0..dn {
        let s = &terms.signals[d];
        let bj = r + d;
        for n in 0..s.times.len() {
            let row = offs[d] + n;
            let mut mu = kappa[d] * blocks[bj].mean[n];
            let mut v = kappa[d] * kappa[d] * blocks[bj].var[n];
            for k in 0..r {
                mu += w[(d, k)] * blocks[k].mean[row];
                v += w[(d, k)] * w[(d, k)] * blocks[k].var[row];
            }
            let p = expected_point_loglik(settings.noise_model, gh, s.values[n], mu, v, sigma[d]);
            let wt = s.weights[n];
            value += wt * p.value;
            if want_grad {
                let (dm, dv) = (wt * p.d_mean, wt * p.d_var);
                dmean[bj][n] += kappa[d] * dm;
                dvar[bj][n] += kappa[d] * kappa[d] * dv;
                dlocal[llay.kappa(d)] += dm * blocks[bj].mean[n] + 2.0 * kappa[d] * dv * blocks[bj].var[n];
                for k in 0..r {
                    dmean[k][row] += w[(d, k)] * dm;
                    dvar[k][row] += w[(d, k)] * w[(d, k)] * dv;
                    dlocal[llay.w(d, k)] += dm * blocks[k].mean[row] + 2.0 * w[(d, k)] * dv * blocks[k].var[row];
                }
                dsigma[d] += wt * p.d_scale;
            }
        }
    }

    if let (Some(event), false) = (terms.event, terms.grid.is_empty()) {
        let alpha = &hz.alpha;
        let omega: Vec<f64> = (0..r).map(|k| (0..dn).map(|d| w[(d, k)] * alpha[d]).sum()).collect();
        let kp: Vec<f64> = (0..dn).map(|d| kappa[d] * alpha[d]).collect();
        for (g, gt) in terms.grid.iter().enumerate() {
            let coef = |j: usize| if j < r { omega[j] } else { kp[j - r] };
            let mut mu = 0.0;
            let mut var = 0.0;
            for (j, b) in blocks.iter().enumerate() {
                let row = kernels[j].n_obs + g;
                mu += coef(j) * b.mean[row];
                var += coef(j) * coef(j) * b.var[row];
            }
            let fd = HistoryFeatureDist { mu, var: var.max(0.0) };
            let eta = hz.linear_predictor(&gt.x);
            let t2e = expected_t2e_with_grad(eta, hz.a, &fd, &event, gt.t, noise)?;
            value += t2e.value;
            if want_grad {
                let dvar_eff = if var >= 0.0 { t2e.d_var } else { 0.0 };
                let mut dcoef = vec![0.0; r + dn];
                for (j, b) in blocks.iter().enumerate() {
                    let row = kernels[j].n_obs + g;
                    dmean[j][row] += coef(j) * t2e.d_mu;
                    dvar[j][row] += coef(j) * coef(j) * dvar_eff;
                    dcoef[j] = t2e.d_mu * b.mean[row] + 2.0 * coef(j) * dvar_eff * b.var[row];
                }
                for d in 0..dn {
                    for k in 0..r {
                        dlocal[llay.w(d, k)] += dcoef[k] * alpha[d];
                    }
                    dlocal[llay.kappa(d)] += dcoef[r + d] * alpha[d];
                }
                if !want_global {
                    continue;
                }
                for d in 0..dn {
                    for k in 0..r {
                        dglobal[glay.alpha(d)] += dcoef[k] * w[(d, k)];
                    }
                    dglobal[glay.alpha(d)] += dcoef[r + d] * kappa[d];
                }
                dglobal[glay.b()] += t2e.d_eta;
                for (p, xp) in gt.x.x.iter().enumerate() {
                    dglobal[glay.gamma(p)] += t2e.d_eta * xp;
                }
                dglobal[glay.a()] += t2e.d_a / A_SCALE;
            }
        }
    }

    for (block, k) in local.blocks.iter().zip(kernels) {
        value -= terms.kl_weight * kl_inducing(block, &k.kf);
    }
    if !value.is_finite() {
        return Ok((value, None));
    }
    if !want_grad {
        return Ok((value, None));
    }

    let mut dc = 0.0;
    for (j, b) in blocks.iter().enumerate() {
        let block = &local.blocks[j];
        let bg = block_backward(block, &kernels[j], b, obs_of(j), &dmean[j], &dvar[j], terms.kl_weight, want_global);
        let base = llay.block(j);
        for i in 0..llay.m {
            dlocal[base + i] += bg.dm[i];
            for k in 0..=i {
                let mut g = bg.dl_chol[(i, k)];
                if i == k {
                    g *= -(-block.s_chol[(i, i)]).exp_m1();
                }
                dlocal[llay.chol(j, i, k)] += g;
            }
        }
        if want_global {
            let span = if j < r { local.t_max } else { local.signal_t_max[j - r] };
            let (gb, gb0) = global.links[j].gradient(span);
            dglobal[glay.beta(j)] += bg.dlength * gb;
            dglobal[glay.beta(j) + 1] += bg.dlength * gb0;
            dc += bg.dc;
        }
    }
    if want_global {
        dglobal[glay.c()] += dc * -(-hz.c).exp_m1();
    }
    for d in 0..dn {
        dlocal[llay.noise(d)] += dsigma[d] * -(-sigma[d]).exp_m1();
    }
    Ok((value, Some((dlocal, dglobal))))
}

/// Objective value.
pub fn objective(
    global: &GlobalParams,
    local: &LocalState,
    terms: &ObjectiveTerms,
    settings: &ElboSettings,
    noise: &[f64],
) -> Result<f64> {
    Ok(evaluate(global, local, terms, settings, noise, Grad::None)?.0)
}

/// Objective value with gradients in the unconstrained local and global
/// vector layouts.
pub fn objective_with_gradient(
    global: &GlobalParams,
    local: &LocalState,
    terms: &ObjectiveTerms,
    settings: &ElboSettings,
    noise: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    match evaluate(global, local, terms, settings, noise, Grad::Both)? {
        (v, Some((l, g))) => Ok((v, l, g)),
        (v, None) => Err(crate::error::Error::Numerical(format!("objective is not finite ({v})"))),
    }
}
