//! Dynamic hazard `λ(s;t) = exp(b + a(s-t) + γᵀx_t + f̄(t))`, event
//! probabilities, censored likelihoods and their expectations under the
//! Gaussian distribution of the history feature `f̄`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{cross_cov_generic, variance_generic};
use crate::longitudinal::{kzz_factor, LocalState};
use crate::numeric::{growth_integral, log1mexp, Dual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Observed,
    RightCensored,
    IntervalCensored,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Observed => "observed",
            EventKind::RightCensored => "right",
            EventKind::IntervalCensored => "interval",
        }
    }
}

/// Event time information. `t_left` is the event time for observed events,
/// the censoring time for right censoring and the lower bracket otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub t_left: f64,
    pub t_right: Option<f64>,
}

impl EventRecord {
    pub fn observed(t: f64) -> Result<Self> {
        Self::new(EventKind::Observed, t, None)
    }

    pub fn right_censored(t_left: f64) -> Result<Self> {
        Self::new(EventKind::RightCensored, t_left, None)
    }

    pub fn interval_censored(t_left: f64, t_right: f64) -> Result<Self> {
        Self::new(EventKind::IntervalCensored, t_left, Some(t_right))
    }

    pub fn new(kind: EventKind, t_left: f64, t_right: Option<f64>) -> Result<Self> {
        if !(t_left >= 0.0) || !t_left.is_finite() {
            return invalid(format!("event time must be finite and nonnegative, got {t_left}"));
        }
        match (kind, t_right) {
            (EventKind::IntervalCensored, Some(r)) if r.is_finite() && r > t_left => {}
            (EventKind::IntervalCensored, _) => {
                return invalid("interval censoring needs t_right > t_left");
            }
            (_, Some(_)) => return invalid("only interval-censored records carry t_right"),
            _ => {}
        }
        Ok(Self { kind, t_left, t_right })
    }

    pub fn t_event(&self) -> Option<f64> {
        (self.kind == EventKind::Observed).then_some(self.t_left)
    }

    /// Time at which follow-up ends: the event, the censoring time or the
    /// start of the censoring bracket.
    pub fn end_time(&self) -> f64 {
        self.t_left
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub a: f64,
    pub b: f64,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub c: f64,
}

impl HazardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return invalid(format!("history rate c must be positive, got {}", self.c));
        }
        let all = [self.a, self.b].into_iter().chain(self.gamma.iter().copied()).chain(self.alpha.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return invalid("hazard parameters must be finite");
        }
        Ok(())
    }

    /// `b + γᵀx`.
    pub fn linear_predictor(&self, x: &CovariateVector) -> f64 {
        self.b + self.gamma.iter().zip(&x.x).map(|(g, v)| g * v).sum::<f64>()
    }
}

/// Gaussian distribution of the weighted history feature `f̄(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryFeatureDist {
    pub mu: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateVector {
    pub x: Vec<f64>,
}

impl CovariateVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("covariates must be finite");
        }
        Ok(Self { x })
    }
}

fn check_covariates(params: &HazardParams, x: &CovariateVector) -> Result<()> {
    if x.x.len() != params.gamma.len() {
        return invalid(format!(
            "{} covariates supplied for {} coefficients",
            x.x.len(),
            params.gamma.len()
        ));
    }
    Ok(())
}

/// Landmarks are floored at this time (minutes) when integrating the latent
/// history, where the weight over `[0, t]` would otherwise degenerate.
pub const MIN_LANDMARK: f64 = 1e-3;

/// Horizon constant `k = (1 - e^{aΔ})/a ≤ 0` so that `H = 1 - exp(k e^{log λ(t;t)})`.
pub fn horizon_constant(a: f64, delta: f64) -> f64 {
    -growth_integral(a, delta)
}

/// Mean and variance of `f̄(t) = Σ_d α_d f̄_d(t)` under the variational posterior.
pub fn fbar_distribution(
    local: &LocalState,
    params: &HazardParams,
    lengthscales: &[f64],
    t: f64,
) -> Result<HistoryFeatureDist> {
    if !(t >= 0.0) || !t.is_finite() {
        return invalid(format!("prediction time must be nonnegative, got {t}"));
    }
    let t = t.max(MIN_LANDMARK);
    params.validate()?;
    let r = local.r_shared();
    let d = local.n_signals();
    if params.alpha.len() != d || lengthscales.len() != r + d {
        return invalid("hazard or length-scale dimensions disagree with the local state");
    }
    let mut mu = 0.0;
    let mut var = 0.0;
    for (j, block) in local.blocks.iter().enumerate() {
        let coef = if j < r {
            (0..d).map(|k| local.weights.w[(k, j)] * params.alpha[k]).sum::<f64>()
        } else {
            local.weights.kappa[j - r] * params.alpha[j - r]
        };
        if coef == 0.0 {
            continue;
        }
        let l = lengthscales[j];
        let f = kzz_factor(&block.z, l)?;
        let kbar = DVector::from_iterator(
            block.size(),
            block.z.iter().map(|&z| cross_cov_generic(params.c, l, t, z)),
        );
        let a = &f.inv * &kbar;
        let m = a.dot(&block.m);
        let sa = block.s_chol.transpose() * &a;
        let v = variance_generic(params.c, l, t) - kbar.dot(&a) + sa.norm_squared();
        mu += coef * m;
        var += coef * coef * v;
    }
    Ok(HistoryFeatureDist { mu, var: var.max(0.0) })
}

/// `λ(s;t)`.
pub fn hazard_at(params: &HazardParams, x: &CovariateVector, fbar: f64, s: f64, t: f64) -> Result<f64> {
    check_covariates(params, x)?;
    if s < t {
        return invalid(format!("hazard evaluated at s={s} before the landmark t={t}"));
    }
    Ok((params.linear_predictor(x) + params.a * (s - t) + fbar).exp())
}

/// `Λ(t, s) = ∫_t^s λ(u;t) du`.
pub fn cumulative_hazard(params: &HazardParams, x: &CovariateVector, fbar: f64, t: f64, s: f64) -> Result<f64> {
    check_covariates(params, x)?;
    if s < t {
        return invalid(format!("cumulative hazard needs s >= t, got s={s}, t={t}"));
    }
    Ok((params.linear_predictor(x) + fbar).exp() * growth_integral(params.a, s - t))
}

/// `H = 1 - exp(-Λ(t, t+Δ))`.
pub fn event_probability(params: &HazardParams, x: &CovariateVector, fbar: f64, t: f64, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return invalid(format!("horizon must be nonnegative, got {delta}"));
    }
    let big = cumulative_hazard(params, x, fbar, t, t + delta)?;
    Ok(-(-big).exp_m1())
}

fn check_record(record: &EventRecord, t: f64) -> Result<()> {
    if record.t_left < t {
        return invalid(format!(
            "event/censoring time {} precedes the landmark {t}",
            record.t_left
        ));
    }
    Ok(())
}

/// Log-likelihood of the event data given a realization of `f̄(t)`, with
/// survival measured from the landmark `t`.
pub fn censored_loglik(
    params: &HazardParams,
    x: &CovariateVector,
    fbar: f64,
    record: &EventRecord,
    t: f64,
) -> Result<f64> {
    check_covariates(params, x)?;
    check_record(record, t)?;
    let eta = params.linear_predictor(x) + fbar;
    let a = params.a;
    let ul = record.t_left - t;
    let surv = -eta.exp() * growth_integral(a, ul);
    Ok(match record.kind {
        EventKind::Observed => eta + a * ul + surv,
        EventKind::RightCensored => surv,
        EventKind::IntervalCensored => {
            let tr = record.t_right.expect("validated interval record");
            let gap = (eta + a * ul).exp() * growth_integral(a, tr - record.t_left);
            surv + log1mexp(gap)
        }
    })
}

/// `n` standard normal draws, the second half the negation of the first.
pub fn antithetic_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let half = n.div_ceil(2);
    let mut out: Vec<f64> = (0..half).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..n - half {
        out.push(-out[i]);
    }
    out
}

/// Expected event log-likelihood with its partial derivatives. `d_eta` is the
/// derivative with respect to `b + γᵀx`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct T2eLoglik {
    pub value: f64,
    pub d_eta: f64,
    pub d_a: f64,
    pub d_mu: f64,
    pub d_var: f64,
}

/// `E_{f̄ ~ N(μ, σ²)}` of [`censored_loglik`]. The survival and log-hazard
/// parts use the lognormal mean; the interval part averages over `noise`.
pub fn expected_t2e_loglik(
    params: &HazardParams,
    x: &CovariateVector,
    fd: &HistoryFeatureDist,
    record: &EventRecord,
    t: f64,
    noise: &[f64],
) -> Result<f64> {
    check_covariates(params, x)?;
    Ok(expected_t2e_with_grad(params.linear_predictor(x), params.a, fd, record, t, noise)?.value)
}

pub(crate) fn expected_t2e_with_grad(
    eta: f64,
    a: f64,
    fd: &HistoryFeatureDist,
    record: &EventRecord,
    t: f64,
    noise: &[f64],
) -> Result<T2eLoglik> {
    check_record(record, t)?;
    let var = fd.var.max(0.0);
    let ul = record.t_left - t;
    let g = growth_integral(Dual::<1>::var(a, 0), ul);
    let mean_rate = (eta + fd.mu + 0.5 * var).exp();
    let surv = -g.v * mean_rate;
    let mut out = T2eLoglik {
        value: surv,
        d_eta: surv,
        d_a: -g.d[0] * mean_rate,
        d_mu: surv,
        d_var: 0.5 * surv,
    };
    match record.kind {
        EventKind::RightCensored => {}
        EventKind::Observed => {
            out.value += eta + a * ul + fd.mu;
            out.d_eta += 1.0;
            out.d_mu += 1.0;
            out.d_a += ul;
        }
        EventKind::IntervalCensored => {
            if noise.is_empty() {
                return invalid("interval censoring needs at least one Monte-Carlo draw");
            }
            let width = record.t_right.expect("validated interval record") - record.t_left;
            let gw = growth_integral(Dual::<1>::var(a, 0), width);
            let base = eta + a * ul + fd.mu + gw.v.ln();
            let da_base = ul + gw.d[0] / gw.v;
            let sigma = var.sqrt();
            let inv_n = 1.0 / noise.len() as f64;
            let (mut val, mut dx, mut dvar) = (0.0, 0.0, 0.0);
            for &e in noise {
                let lam = (base + sigma * e).exp();
                let em1 = lam.exp_m1();
                // derivative of log(1 - e^{-Λ}) with respect to log Λ
                let phi = lam / em1;
                val += log1mexp(lam);
                dx += phi;
                if sigma > 1e-7 {
                    dvar += phi * e / (2.0 * sigma);
                } else {
                    // second derivative in log Λ
                    let d2 = if lam < 1e-8 { -0.5 * lam } else { lam * (em1 - lam * lam.exp()) / (em1 * em1) };
                    dvar += 0.5 * d2;
                }
            }
            out.value += val * inv_n;
            out.d_eta += dx * inv_n;
            out.d_mu += dx * inv_n;
            out.d_a += dx * inv_n * da_base;
            out.d_var += dvar * inv_n;
        }
    }
    Ok(out)
}
