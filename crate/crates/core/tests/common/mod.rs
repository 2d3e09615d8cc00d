//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod quad;

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use survgp::kernels::LengthScaleLink;

/// One line per acceptance criterion on stderr, which the test harness does
/// not capture.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id:>2} [{verdict}] {name}: {detail}");
}

/// `exp(-½|s - z| / l)`.
pub fn matern12(s: f64, z: f64, l: f64) -> f64 {
    (-0.5 * (s - z).abs() / l).exp()
}

/// `c e^{-c(t - s)} / (1 - e^{-ct})` on `[0, t]`.
pub fn history_weight(c: f64, t: f64, s: f64) -> f64 {
    if c == 0.0 {
        1.0 / t
    } else {
        c * (-c * (t - s)).exp() / -(-c * t).exp_m1()
    }
}

/// Lower-triangular Cholesky factor, panicking when `a` is not positive definite.
pub fn cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().cholesky().expect("positive definite").l()
}

/// Sample quantile by nearest rank of the sorted draws.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Random lower-triangular factor with diagonal in `diag` and off-diagonal
/// entries in `(-off, off)`.
pub fn random_chol<R: Rng>(rng: &mut R, n: usize, diag: (f64, f64), off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, k| {
        if i == k {
            rng.random_range(diag.0..diag.1)
        } else if k < i {
            rng.random_range(-off..off)
        } else {
            0.0
        }
    })
}

/// A link whose length-scale is `l` for every span: with `beta = 0` the
/// mapping is `lo + hi·sigmoid(beta0)`.
pub fn constant_link(l: f64) -> LengthScaleLink {
    let base = LengthScaleLink::new(0.0, 0.0);
    let p = (l - base.lo) / base.hi;
    LengthScaleLink::new(0.0, (p / (1.0 - p)).ln())
}
