//! Matérn-1/2 kernel, the duration-dependent length-scale link, and the
//! closed-form covariances of the exponentially weighted history integral
//! `∫₀ᵗ ρ_c(t';t) g(t') dt'` of a unit-variance Matérn-1/2 process.
//!
//! All times are in minutes. The kernel variance is fixed at 1; amplitudes
//! live in the LMC weights.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::{decay_integral, sigmoid, Dual, Real};

/// `exp(-½|t - t2| / l)`.
pub fn matern12(t: f64, t2: f64, l: f64) -> Result<f64> {
    if !(l > 0.0) || !l.is_finite() {
        return invalid(format!("length-scale must be positive, got {l}"));
    }
    Ok(matern12_unchecked(t, t2, l))
}

#[inline]
pub(crate) fn matern12_unchecked(t: f64, t2: f64, l: f64) -> f64 {
    (-0.5 * (t - t2).abs() / l).exp()
}

/// Derivative of [`matern12`] with respect to the length-scale.
#[inline]
pub(crate) fn matern12_dl(t: f64, t2: f64, l: f64) -> f64 {
    let r = (t - t2).abs();
    (-0.5 * r / l).exp() * 0.5 * r / (l * l)
}

/// Maps `beta·log(t_max) + beta0` through `lo + hi·sigmoid(·)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleLink {
    pub beta: f64,
    pub beta0: f64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    0.1
}

fn default_hi() -> f64 {
    15000.0
}

impl LengthScaleLink {
    pub fn new(beta: f64, beta0: f64) -> Self {
        Self { beta, beta0, lo: default_lo(), hi: default_hi() }
    }

    /// Initial link for the long-range shared latent function.
    pub fn long_range() -> Self {
        Self::new(1.0, -12.0)
    }

    /// Initial link for short-range latent functions.
    pub fn short_range() -> Self {
        Self::new(1e-5, -5.0)
    }

    fn argument(&self, t_max: f64) -> f64 {
        self.beta * t_max.ln() + self.beta0
    }

    /// Length-scale for an observation window ending at `t_max`.
    /// `t_max` must be positive; see [`map_lengthscale`] for the checked form.
    pub fn lengthscale(&self, t_max: f64) -> f64 {
        self.lo + self.hi * sigmoid(self.argument(t_max))
    }

    /// `(∂l/∂beta, ∂l/∂beta0)`.
    pub fn gradient(&self, t_max: f64) -> (f64, f64) {
        let s = sigmoid(self.argument(t_max));
        let dx = self.hi * s * (1.0 - s);
        (dx * t_max.ln(), dx)
    }
}

pub fn map_lengthscale(link: &LengthScaleLink, t_max: f64) -> Result<f64> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return invalid(format!("observation duration must be positive, got {t_max}"));
    }
    Ok(link.lengthscale(t_max))
}

/// Normalized exponential weight `ρ_c(t'; t)` over `[0, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryWeight {
    pub c: f64,
    pub t: f64,
}

impl HistoryWeight {
    pub fn new(c: f64, t: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return invalid(format!("history rate must be non-negative, got {c}"));
        }
        if !(t > 0.0) || !t.is_finite() {
            return invalid(format!("prediction time must be positive, got {t}"));
        }
        Ok(Self { c, t })
    }

    /// `c' = c / (1 - exp(-c t))`, equal to `1/t` at `c = 0`.
    pub fn normalizer(&self) -> f64 {
        1.0 / decay_integral(self.c, self.t)
    }

    pub fn rho(&self, t_prime: f64) -> Result<f64> {
        if !(0.0..=self.t).contains(&t_prime) {
            return invalid(format!("t' = {t_prime} outside [0, {}]", self.t));
        }
        Ok(self.normalizer() * (-self.c * (self.t - t_prime)).exp())
    }
}

/// `(e^{-p u} - e^{-q u}) / (q - p)` for `u ≥ 0`, finite at `p = q`.
fn exp_gap<T: Real>(p: T, q: T, u: f64) -> T {
    if p.val() <= q.val() {
        (p * (-u)).exp() * decay_integral(q - p, u)
    } else {
        (q * (-u)).exp() * decay_integral(p - q, u)
    }
}

/// Generic form of [`integrated_cross_cov`] in the history rate and length-scale.
pub(crate) fn cross_cov_generic<T: Real>(c: T, l: T, t: f64, z: f64) -> T {
    let theta = l.recip() * 0.5;
    let cp = decay_integral(c, t).recip();
    if z <= t {
        let u = t - z;
        let z = z.max(0.0);
        // mass on [0, z] plus mass on [z, t]
        let left = (c * (-u)).exp() * decay_integral(c + theta, z);
        let right = exp_gap(theta, c, u);
        cp * (left + right)
    } else {
        let v = z - t;
        cp * (theta * (-v)).exp() * decay_integral(c + theta, t)
    }
}

/// Generic form of [`integrated_variance`].
pub(crate) fn variance_generic<T: Real>(c: T, l: T, t: f64) -> T {
    let theta = l.recip() * 0.5;
    let cp = decay_integral(c, t).recip();
    let two_c = c * 2.0;
    let inner = decay_integral(two_c, t) - exp_gap(c + theta, two_c, t);
    cp * cp * (c + theta).recip() * inner * 2.0
}

fn check_lengthscale(l: f64) -> Result<()> {
    if !(l > 0.0) || !l.is_finite() {
        return invalid(format!("length-scale must be positive, got {l}"));
    }
    Ok(())
}

/// `Cov(∫₀ᵗ ρ_c(t';t) g(t') dt', g(z))` for a unit Matérn-1/2 process `g`.
pub fn integrated_cross_cov(w: &HistoryWeight, l: f64, z: f64) -> Result<f64> {
    check_lengthscale(l)?;
    Ok(cross_cov_generic(w.c, l, w.t, z))
}

/// `Var(∫₀ᵗ ρ_c(t';t) g(t') dt')` for a unit Matérn-1/2 process `g`.
pub fn integrated_variance(w: &HistoryWeight, l: f64) -> Result<f64> {
    check_lengthscale(l)?;
    Ok(variance_generic(w.c, l, w.t))
}

/// Cross-covariance with partial derivatives `[∂/∂c, ∂/∂l]`.
pub(crate) fn cross_cov_with_grad(c: f64, l: f64, t: f64, z: f64) -> Dual<2> {
    cross_cov_generic(Dual::var(c, 0), Dual::var(l, 1), t, z)
}

/// Integrated variance with partial derivatives `[∂/∂c, ∂/∂l]`.
pub(crate) fn variance_with_grad(c: f64, l: f64, t: f64) -> Dual<2> {
    variance_generic(Dual::var(c, 0), Dual::var(l, 1), t)
}
