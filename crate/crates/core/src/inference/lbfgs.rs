//! Limited-memory BFGS minimization with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when `max |g_i| < gtol · max(1, |f|)`.
    pub gtol: f64,
    /// Stop when the decrease over an iteration is below `ftol · max(1, |f|)`.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 500, memory: 10, gtol: 1e-6, ftol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient. Non-finite values
/// are treated as failed trial steps; accepted iterates never increase `f`.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let gmax = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !fx.is_finite() {
        return Ok(LbfgsResult { x, f: fx, iters: 0, evals, converged: false });
    }
    for iter in 0..opts.max_iters {
        if gmax(&g) < opts.gtol * fx.abs().max(1.0) {
            return Ok(LbfgsResult { x, f: fx, iters: iter, evals, converged: true });
        }
        // two-loop recursion
        let mut q: Vec<f64> = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist.back().map_or_else(
            || 1.0 / gmax(&g).max(1.0),
            |(s, y, _)| dot(s, y) / dot(y, y),
        );
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v / gmax(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fnew, gnew) = f(&xn)?;
            evals += 1;
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Ok(LbfgsResult { x, f: fx, iters: iter, evals, converged: false });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if decrease < opts.ftol * fx.abs().max(1.0) {
            return Ok(LbfgsResult { x, f: fx, iters: iter + 1, evals, converged: true });
        }
    }
    Ok(LbfgsResult { x, f: fx, iters: opts.max_iters, evals, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Ok((v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
        };
        let opts = LbfgsOptions { max_iters: 1000, ftol: 0.0, gtol: 1e-10, ..Default::default() };
        let r = minimize(f, vec![-1.2, 1.0], &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_trial_points() {
        // log barrier: undefined for x <= 0, minimum at x = 1
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = if x[0] > 0.0 { x[0] - x[0].ln() } else { f64::NAN };
            Ok((v, vec![1.0 - 1.0 / x[0]]))
        };
        let r = minimize(f, vec![30.0], &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn quadratic_is_exact_in_few_iterations() {
        let diag = [1.0, 10.0, 100.0, 0.5];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = x.iter().zip(&diag).map(|(xi, d)| 0.5 * d * xi * xi).sum();
            Ok((v, x.iter().zip(&diag).map(|(xi, d)| d * xi).collect()))
        };
        let r = minimize(f, vec![1.0; 4], &LbfgsOptions { gtol: 1e-9, ftol: 0.0, ..Default::default() }).unwrap();
        assert!(r.converged && r.iters < 30);
        assert!(r.x.iter().all(|v| v.abs() < 1e-8));
    }
}
