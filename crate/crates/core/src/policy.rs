//! Distribution of the event probability `H = 1 - exp(k e^{f̄})` for Gaussian
//! `f̄`, its quantiles, and the quantile-risk accept/reject/abstain rule.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::numeric::GaussHermite;

/// `f̄ + b + γᵀx ~ N(loc, scale²)`, with `H = 1 - exp(k·exp(f̄ + b + γᵀx))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbDist {
    pub loc: f64,
    pub scale: f64,
    pub k: f64,
}

impl EventProbDist {
    pub fn new(loc: f64, scale: f64, k: f64) -> Result<Self> {
        if !loc.is_finite() || !scale.is_finite() || !k.is_finite() {
            return invalid("distribution parameters must be finite");
        }
        if scale < 0.0 {
            return invalid(format!("scale must be nonnegative, got {scale}"));
        }
        if k > 0.0 {
            return invalid(format!("horizon constant must be nonpositive, got {k}"));
        }
        Ok(Self { loc, scale, k })
    }

    /// `H` at a given value of the Gaussian variable.
    pub fn transform(&self, v: f64) -> f64 {
        -(self.k * v.exp()).exp_m1()
    }

    /// `H` at the location (the uncertainty-discarded point estimate).
    pub fn point(&self) -> f64 {
        self.transform(self.loc)
    }
}

/// Relative costs: `l1 = L01/L10`, `l2 = La/L10`, and the risk quantile `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub l1: f64,
    pub l2: f64,
    pub q: f64,
}

impl CostSpec {
    pub fn new(l1: f64, l2: f64, q: f64) -> Result<Self> {
        if !(l1 > 0.0) || !l1.is_finite() || !(l2 > 0.0) || !l2.is_finite() {
            return invalid(format!("costs must be positive, got L1={l1}, L2={l2}"));
        }
        if !(q > 0.5 && q < 1.0) {
            return invalid(format!("risk quantile must lie in (0.5, 1), got {q}"));
        }
        Ok(Self { l1, l2, q })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Negative,
    Positive,
    Abstain,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Negative => "0",
            Verdict::Positive => "1",
            Verdict::Abstain => "a",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "0" => Some(Verdict::Negative),
            "1" => Some(Verdict::Positive),
            "a" => Some(Verdict::Abstain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    /// `h^{(1-q)}`
    pub h_lo: f64,
    /// `h^{(q)}`
    pub h_hi: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
}

impl Decision {
    /// Re-applies the threshold rule to the stored quantities.
    pub fn is_consistent(&self) -> bool {
        let expect = if self.h_hi <= self.tau_lo {
            Verdict::Negative
        } else if self.h_hi >= self.tau_hi {
            Verdict::Positive
        } else {
            Verdict::Abstain
        };
        expect == self.verdict
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Density of `H` on `(0, 1)`.
pub fn ph_density(dist: &EventProbDist, h: f64) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return invalid(format!("density is supported on (0, 1), got {h}"));
    }
    if !(dist.scale > 0.0) || !(dist.k < 0.0) {
        return invalid("density needs scale > 0 and k < 0");
    }
    let l = (-h).ln_1p();
    let v = (l / dist.k).ln();
    let z = (v - dist.loc) / dist.scale;
    let normal = (-0.5 * z * z).exp() / (dist.scale * (2.0 * std::f64::consts::PI).sqrt());
    Ok(normal / ((h - 1.0) * l))
}

/// `P(H ≤ h)`.
pub fn ph_cdf(dist: &EventProbDist, h: f64) -> f64 {
    if h <= 0.0 {
        return if dist.point() <= 0.0 { 1.0 } else { 0.0 };
    }
    if h >= 1.0 {
        return 1.0;
    }
    if dist.k == 0.0 {
        return 1.0;
    }
    let v = ((-h).ln_1p() / dist.k).ln();
    if dist.scale == 0.0 {
        return if dist.loc <= v { 1.0 } else { 0.0 };
    }
    standard_normal().cdf((v - dist.loc) / dist.scale)
}

/// `h^{(q)} = 1 - exp(k·exp(v^{(q)}))`, `v^{(q)}` the Gaussian `q`-quantile.
pub fn quantile(dist: &EventProbDist, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("quantile level must lie in (0, 1), got {q}"));
    }
    let v = if dist.scale == 0.0 {
        dist.loc
    } else {
        dist.loc + dist.scale * standard_normal().inverse_cdf(q)
    };
    Ok(dist.transform(v))
}

/// `q`-quantile of the loss of `verdict` in units of `L10`.
pub fn risk_quantile(dist: &EventProbDist, costs: &CostSpec, verdict: Verdict) -> f64 {
    let h_hi = quantile(dist, costs.q).expect("validated quantile level");
    let h_lo = quantile(dist, 1.0 - costs.q).expect("validated quantile level");
    risk_from_quantiles(h_lo, h_hi, costs, verdict)
}

fn risk_from_quantiles(h_lo: f64, h_hi: f64, costs: &CostSpec, verdict: Verdict) -> f64 {
    match verdict {
        Verdict::Negative => h_hi,
        Verdict::Positive => (1.0 - h_lo) * costs.l1,
        Verdict::Abstain => costs.l2,
    }
}

fn apply_thresholds(h_lo: f64, h_hi: f64, tau_lo: f64, tau_hi: f64) -> Decision {
    let verdict = if h_hi <= tau_lo {
        Verdict::Negative
    } else if h_hi >= tau_hi {
        Verdict::Positive
    } else {
        Verdict::Abstain
    };
    Decision { verdict, h_lo, h_hi, tau_lo, tau_hi }
}

/// Minimizes the `q`-quantile risk. A zero-scale distribution is a point
/// mass and is decided by [`point_decide`].
pub fn robust_decide(dist: &EventProbDist, costs: &CostSpec) -> Decision {
    if dist.scale == 0.0 {
        return point_decide(dist.point(), costs).expect("point value lies in [0, 1]");
    }
    let h_hi = quantile(dist, costs.q).expect("validated quantile level");
    let h_lo = quantile(dist, 1.0 - costs.q).expect("validated quantile level");
    let cq = h_hi - h_lo;
    let (l1, l2) = (costs.l1, costs.l2);
    let balance = (l1 * (1.0 + cq)) / (1.0 + l1);
    let tau_lo = balance.min(l2);
    let tau_hi = balance.max(1.0 + cq - l2 / l1);
    apply_thresholds(h_lo, h_hi, tau_lo, tau_hi)
}

/// Expected-risk rule for a known event probability `h0`.
pub fn point_decide(h0: f64, costs: &CostSpec) -> Result<Decision> {
    if !(0.0..=1.0).contains(&h0) {
        return invalid(format!("probability must lie in [0, 1], got {h0}"));
    }
    let (l1, l2) = (costs.l1, costs.l2);
    let balance = l1 / (1.0 + l1);
    let tau_lo = l2.min(balance);
    let tau_hi = (1.0 - l2 / l1).max(balance);
    Ok(apply_thresholds(h0, h0, tau_lo, tau_hi))
}

/// `E[H]` by Gauss-Hermite quadrature over the Gaussian variable.
pub fn expected_event_probability(dist: &EventProbDist, n_nodes: usize) -> Result<f64> {
    if n_nodes < 10 {
        return invalid("expected event probability needs at least 10 nodes");
    }
    let gh = GaussHermite::cached(n_nodes);
    let v = gh.expect(dist.loc, dist.scale * dist.scale, |f| dist.transform(f));
    Ok(v.clamp(0.0, 1.0))
}

/// Verdict minimizing the quantile risk by direct comparison, ties resolved
/// negative, then positive, then abstain.
pub fn brute_force_verdict(dist: &EventProbDist, costs: &CostSpec) -> Verdict {
    let r0 = risk_quantile(dist, costs, Verdict::Negative);
    let r1 = risk_quantile(dist, costs, Verdict::Positive);
    let ra = risk_quantile(dist, costs, Verdict::Abstain);
    if r0 <= r1 && r0 <= ra {
        Verdict::Negative
    } else if r1 <= ra {
        Verdict::Positive
    } else {
        Verdict::Abstain
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn costs(l1: f64, l2: f64, q: f64) -> CostSpec {
        CostSpec::new(l1, l2, q).unwrap()
    }

    #[test]
    fn validation() {
        assert!(EventProbDist::new(0.0, -1.0, -1.0).is_err());
        assert!(EventProbDist::new(0.0, 1.0, 0.5).is_err());
        assert!(CostSpec::new(1.0, 0.4, 0.5).is_err());
        assert!(CostSpec::new(0.0, 0.4, 0.9).is_err());
        assert!(CostSpec::new(1.0, 0.4, 0.9).is_ok());
        let d = EventProbDist::new(0.0, 1.0, -1.0).unwrap();
        assert!(ph_density(&d, 0.0).is_err());
        assert!(ph_density(&d, 1.0).is_err());
        assert!(quantile(&d, 1.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let d = EventProbDist::new(-3.0, 0.5, -10.0).unwrap();
        let total = integrate(|h| ph_density(&d, h).unwrap(), 1e-12, 1.0 - 1e-12, 1e-10);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn density_matches_sampled_distribution() {
        let d = EventProbDist::new(-1.0, 0.8, -2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let mut s: Vec<f64> = (0..n)
            .map(|_| d.transform(d.loc + d.scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        s.sort_by(|a, b| a.total_cmp(b));
        for &h in &[0.1, 0.3, 0.5, 0.7] {
            let f = integrate(|x| ph_density(&d, x).unwrap(), 1e-14, h, 1e-11);
            let emp = s.partition_point(|&x| x <= h) as f64 / n as f64;
            assert!((f - emp).abs() < 0.005, "{h}: {f} vs {emp}");
            assert!((f - ph_cdf(&d, h)).abs() < 1e-8);
        }
    }

    #[test]
    fn vanishing_horizon_concentrates_at_zero() {
        let d = EventProbDist::new(0.0, 1.0, -1e-6).unwrap();
        assert!(1.0 - ph_cdf(&d, 0.01) < 1e-3);
    }

    #[test]
    fn quantile_cases() {
        let point = EventProbDist::new(-2.0, 0.0, -3.0).unwrap();
        let want = 1.0 - (-3.0 * (-2.0f64).exp()).exp();
        for q in [0.1, 0.5, 0.9] {
            assert!((quantile(&point, q).unwrap() - want).abs() < 1e-15);
        }
        let d = EventProbDist::new(0.0, 2.0, -1.0).unwrap();
        assert!((quantile(&d, 0.5).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-12);
        let d = EventProbDist::new(-0.5, 1.0, -1.0).unwrap();
        let mut prev = 0.0;
        for i in 1..100 {
            let h = quantile(&d, i as f64 / 100.0).unwrap();
            assert!(h >= prev && h > 0.0 && h < 1.0);
            prev = h;
        }
    }

    #[test]
    fn risks() {
        let d = EventProbDist::new(-1.0, 0.7, -1.5).unwrap();
        let c = costs(2.0, 0.3, 0.8);
        assert_eq!(risk_quantile(&d, &c, Verdict::Abstain), 0.3);
        let p = EventProbDist::new(-1.0, 0.0, -1.5).unwrap();
        assert!((risk_quantile(&p, &c, Verdict::Negative) - p.point()).abs() < 1e-15);
        assert!(risk_quantile(&d, &c, Verdict::Positive) >= 0.0);
    }

    #[test]
    fn positive_risk_is_quantile_of_complement() {
        let d = EventProbDist::new(-0.5, 0.9, -1.2).unwrap();
        let c = costs(1.5, 0.5, 0.85);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 400_000;
        let mut loss: Vec<f64> = (0..n)
            .map(|_| (1.0 - d.transform(d.loc + d.scale * rng.sample::<f64, _>(StandardNormal))) * c.l1)
            .collect();
        loss.sort_by(|a, b| a.total_cmp(b));
        let emp = loss[(c.q * n as f64) as usize];
        assert!((risk_quantile(&d, &c, Verdict::Positive) - emp).abs() < 0.005);
    }

    #[test]
    fn figure_cases() {
        let c = costs(1.0, 0.4, 0.9);
        // wide distribution entirely above 0.6
        let d = EventProbDist::new(0.6, 0.15, -1.0).unwrap();
        let dec = robust_decide(&d, &c);
        assert!(dec.h_lo >= 0.6);
        assert_eq!(dec.verdict, Verdict::Positive);
        let d = EventProbDist::new(-2.5, 0.3, -1.0).unwrap();
        let dec = robust_decide(&d, &c);
        assert!(dec.h_hi <= 0.4);
        assert_eq!(dec.verdict, Verdict::Negative);
    }

    #[test]
    fn point_rule_cases() {
        let c = costs(1.0, 0.6, 0.9);
        let d = point_decide(0.3, &c).unwrap();
        assert_eq!((d.tau_lo, d.tau_hi), (0.5, 0.5));
        for i in 0..=100 {
            assert_ne!(point_decide(i as f64 / 100.0, &c).unwrap().verdict, Verdict::Abstain);
        }
        let c = costs(1.0, 0.4, 0.9);
        let d = point_decide(0.5, &c).unwrap();
        assert_eq!(d.verdict, Verdict::Abstain);
        assert!((d.tau_lo - 0.4).abs() < 1e-15 && (d.tau_hi - 0.6).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = costs(rng.random_range(0.01..10.0), rng.random_range(0.01..2.0), 0.9);
            assert_eq!(point_decide(0.0, &c).unwrap().verdict, Verdict::Negative);
        }
        assert!(point_decide(1.5, &c).is_err());
    }

    #[test]
    fn robust_rule_is_quantile_risk_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20_000 {
            let d = EventProbDist::new(
                rng.random_range(-6.0..2.0),
                rng.random_range(0.0..2.5),
                -rng.random_range(0.01..20.0),
            )
            .unwrap();
            let c = costs(rng.random_range(0.05..8.0), rng.random_range(0.01..1.5), rng.random_range(0.51..0.99));
            let dec = robust_decide(&d, &c);
            assert!(dec.is_consistent());
            assert_eq!(dec.verdict, brute_force_verdict(&d, &c));
        }
    }

    #[test]
    fn zero_scale_reduces_to_point_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            let h0: f64 = rng.random_range(0.0..1.0);
            let c = costs(rng.random_range(0.05..8.0), rng.random_range(0.01..1.5), rng.random_range(0.51..0.99));
            // with zero quantile width the robust thresholds coincide with the point thresholds
            let (l1, l2) = (c.l1, c.l2);
            let balance = (l1 * (1.0 + 0.0)) / (1.0 + l1);
            let robust = apply_thresholds(h0, h0, balance.min(l2), balance.max(1.0 + 0.0 - l2 / l1));
            assert_eq!(robust, point_decide(h0, &c).unwrap());
        }
    }

    #[test]
    fn abstention_width() {
        let c = costs(1.5, 0.3, 0.9);
        // fixed quantile width; scan the upper quantile
        let cq = 0.1;
        let (l1, l2) = (c.l1, c.l2);
        let balance = l1 * (1.0 + cq) / (1.0 + l1);
        let (lo, hi) = (balance.min(l2), balance.max(1.0 + cq - l2 / l1));
        let n = 100_000;
        let mut count = 0;
        for i in 0..=n {
            let h = i as f64 / n as f64;
            if apply_thresholds(h - cq, h, lo, hi).verdict == Verdict::Abstain {
                count += 1;
            }
        }
        let want = (1.0 + cq - l2 * (1.0 + l1) / l1).max(0.0);
        assert!((count as f64 / n as f64 - want).abs() < 2e-5);
    }

    #[test]
    fn larger_abstention_cost_never_creates_abstention() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5000 {
            let d = EventProbDist::new(rng.random_range(-5.0..1.0), rng.random_range(0.0..2.0), -rng.random_range(0.1..5.0)).unwrap();
            let (l1, q) = (rng.random_range(0.1..5.0), rng.random_range(0.55..0.95));
            let l2a = rng.random_range(0.01..1.0);
            let l2b = l2a + rng.random_range(0.0..1.0);
            let a = robust_decide(&d, &costs(l1, l2a, q)).verdict;
            let b = robust_decide(&d, &costs(l1, l2b, q)).verdict;
            if a != Verdict::Abstain {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn expected_probability() {
        let p = EventProbDist::new(-1.0, 0.0, -2.0).unwrap();
        assert!((expected_event_probability(&p, 20).unwrap() - p.point()).abs() < 1e-14);
        assert!(expected_event_probability(&p, 9).is_err());
        let d = EventProbDist::new(-1.5, 0.6, -3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let h = d.transform(d.loc + d.scale * rng.sample::<f64, _>(StandardNormal));
            s += h;
            s2 += h * h;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((expected_event_probability(&d, 40).unwrap() - mean).abs() < 3.0 * se);
    }
}
