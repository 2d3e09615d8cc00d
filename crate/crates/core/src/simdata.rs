//! Synthetic populations drawn from the generative model: Matérn-1/2 latent
//! paths mixed per individual, Student-t observations at Poisson times,
//! event times from the history-driven hazard, and censoring.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{write_dataset, CovariateSeries, Dataset, IndividualRecord};
use crate::error::{invalid, Result};
use crate::longitudinal::{ObservationSeries, STUDENT_T_DOF};
use crate::numeric::growth_integral;
use crate::rng::substream;
use crate::survival::{EventRecord, HazardParams};

pub const TRUTH_FILE: &str = "truth.json";
/// Resolution of the simulated history feature, minutes.
pub const FINE_STEP: f64 = 1.0;
/// Resolution of latent paths kept in the ground-truth sidecar, minutes.
pub const TRUTH_STEP: usize = 10;

/// Thinning of observations for a fraction of individuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sparsify {
    /// Fraction of individuals affected.
    pub individuals: f64,
    /// Probability that a signal of an affected individual is thinned.
    pub signal_prob: f64,
    /// Probability of keeping each observation of a thinned signal.
    pub keep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_individuals: usize,
    pub d_signals: usize,
    pub r_shared: usize,
    pub hazard: HazardParams,
    /// Length-scales of the `R` shared then `D` signal-specific latents.
    pub lengthscales: Vec<f64>,
    /// Population mean of the `D × R` mixing weights.
    pub w_mean: DMatrix<f64>,
    /// Per-individual standard deviation around `w_mean`.
    pub w_sd: f64,
    pub kappa: Vec<f64>,
    pub noise_scale: Vec<f64>,
    pub obs_rate_per_hour: Vec<f64>,
    /// Range of the length of stay, minutes.
    pub duration: (f64, f64),
    pub right_frac: f64,
    pub interval_frac: f64,
    pub sparsify: Option<Sparsify>,
    pub seed: u64,
}

impl SimSpec {
    /// Reference population: 60 individuals, 3 signals, 2 shared latents,
    /// history effects of signs (+, -, 0), 20% right and 10% interval censoring.
    /// The first two signals each load on their own shared latent and the
    /// third on both, so the two history effects are identifiable.
    pub fn reference(seed: u64) -> Self {
        Self {
            n_individuals: 60,
            d_signals: 3,
            r_shared: 2,
            hazard: HazardParams { a: 0.0, b: -8.0, gamma: vec![0.5], alpha: vec![1.5, -1.5, 0.0], c: 0.002 },
            lengthscales: vec![800.0, 800.0, 300.0, 300.0, 300.0],
            w_mean: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]),
            w_sd: 0.3,
            kappa: vec![0.6, 0.6, 0.6],
            noise_scale: vec![0.3, 0.3, 0.3],
            obs_rate_per_hour: vec![1.5, 1.5, 1.5],
            duration: (1440.0, 7200.0),
            right_frac: 0.2,
            interval_frac: 0.1,
            sparsify: None,
            seed,
        }
    }

    /// Same population with `d` signals; new signals copy the last one's
    /// settings and have no history effect.
    pub fn with_signals(mut self, d: usize) -> Self {
        let resize = |v: &mut Vec<f64>, fill: f64| {
            let last = v.last().copied().unwrap_or(fill);
            v.resize(d, last);
        };
        let old = self.d_signals;
        self.hazard.alpha.resize(d, 0.0);
        resize(&mut self.kappa, 0.6);
        resize(&mut self.noise_scale, 0.3);
        resize(&mut self.obs_rate_per_hour, 1.5);
        let r = self.r_shared;
        let mut ls = self.lengthscales[..r].to_vec();
        let mut specific = self.lengthscales[r..].to_vec();
        resize(&mut specific, 100.0);
        ls.extend(specific);
        self.lengthscales = ls;
        let w = self.w_mean.clone();
        self.w_mean = DMatrix::from_fn(d, r, |i, k| w[(i.min(old.saturating_sub(1)), k)]);
        self.d_signals = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (d, r) = (self.d_signals, self.r_shared);
        if self.n_individuals == 0 || d == 0 {
            return invalid("simulation needs individuals and signals");
        }
        if self.hazard.alpha.len() != d
            || self.lengthscales.len() != r + d
            || self.w_mean.nrows() != d
            || self.w_mean.ncols() != r
            || self.kappa.len() != d
            || self.noise_scale.len() != d
            || self.obs_rate_per_hour.len() != d
        {
            return invalid("simulation parameter dimensions disagree");
        }
        self.hazard.validate()?;
        if self.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return invalid("length-scales must be positive");
        }
        if self.obs_rate_per_hour.iter().any(|r| !(*r > 0.0)) {
            return invalid("observation rates must be positive");
        }
        if self.noise_scale.iter().any(|s| !(*s >= 0.0)) || !(self.w_sd >= 0.0) {
            return invalid("noise scales and weight spread must be nonnegative");
        }
        if !(self.duration.0 > 0.0 && self.duration.1 >= self.duration.0) {
            return invalid("duration range must be positive and ordered");
        }
        if !(self.right_frac >= 0.0 && self.interval_frac >= 0.0 && self.right_frac + self.interval_frac <= 1.0) {
            return invalid("censoring fractions must be nonnegative and sum to at most 1");
        }
        if let Some(s) = &self.sparsify {
            let ok = |p: f64| (0.0..=1.0).contains(&p);
            if !(ok(s.individuals) && ok(s.signal_prob) && ok(s.keep)) {
                return invalid("sparsification probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Ground truth of one simulated individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualTruth {
    pub id: u64,
    pub w: DMatrix<f64>,
    pub covariates: Vec<f64>,
    pub stay_end: f64,
    /// Event time when it falls within the stay, before censoring.
    pub event_time: Option<f64>,
    /// History feature `Σ_d α_d f̄_d` on the 1-minute grid from 0.
    pub fbar: Vec<f64>,
    /// Latent paths (`R` shared then `D` specific) every [`TRUTH_STEP`] minutes.
    pub latents: Vec<Vec<f64>>,
    /// Noise-free signal values at the kept observation times.
    pub signal_at_obs: Vec<Vec<f64>>,
    pub sparsified: bool,
}

impl IndividualTruth {
    /// `f̄(t)` of the true path.
    pub fn fbar_at(&self, t: f64) -> f64 {
        fine_value(&self.fbar, t)
    }
}

fn fine_value(path: &[f64], t: f64) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    let i = ((t / FINE_STEP).floor().max(0.0) as usize).min(path.len() - 1);
    path[i]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub spec: SimSpec,
    pub individuals: Vec<IndividualTruth>,
}

impl SimTruth {
    /// True event probability over `(t, t + delta]` with the landmark hazard at `t`.
    pub fn risk(&self, index: usize, t: f64, delta: f64) -> f64 {
        let ind = &self.individuals[index];
        let h = &self.spec.hazard;
        let eta = h.b + h.gamma.iter().zip(&ind.covariates).map(|(g, x)| g * x).sum::<f64>() + ind.fbar_at(t);
        -(-eta.exp() * growth_integral(h.a, delta)).exp_m1()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: SimTruth,
}

/// Unit-variance Matérn-1/2 path at sorted `times`, drawn exactly by the
/// Ornstein-Uhlenbeck recursion (the sequential Cholesky factor of the Gram).
pub fn sample_latent_path<R: Rng + ?Sized>(times: &[f64], l: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev: Option<(f64, f64)> = None;
    for &t in times {
        let z: f64 = rng.sample(StandardNormal);
        let v = match prev {
            None => z,
            Some((tp, xp)) => {
                let rho = (-0.5 * (t - tp) / l).exp();
                rho * xp + (1.0 - rho * rho).max(0.0).sqrt() * z
            }
        };
        out.push(v);
        prev = Some((t, v));
    }
    out
}

/// `f̄(s) = ∫₀ˢ ρ_c(t'; s) h(t') dt'` on a uniform grid with step `step`,
/// trapezoid rule, `f̄(0) = h(0)`.
pub fn history_feature(h: &[f64], c: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    let decay = (-c * step).exp();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &v) in h.iter().enumerate() {
        if k == 0 {
            out.push(v);
            continue;
        }
        num = decay * num + 0.5 * step * (decay * h[k - 1] + v);
        den = decay * den + 0.5 * step * (decay + 1.0);
        out.push(num / den);
    }
    out
}

/// Event time for the hazard `exp(eta + a·s + f̄(s))` with `f̄` piecewise
/// constant on the fine grid (held at its last value beyond the path), by
/// inverting the cumulative hazard at an `Exp(1)` draw. `None` if the event
/// falls after `horizon`.
pub fn draw_event_time<R: Rng + ?Sized>(eta: f64, a: f64, fbar: &[f64], horizon: f64, rng: &mut R) -> Option<f64> {
    let mut remaining: f64 = rng.sample(Exp1);
    let mut s = 0.0;
    let mut k = 0usize;
    while s < horizon {
        let f = fbar.get(k).or(fbar.last()).copied().unwrap_or(0.0);
        let width = if k + 1 >= fbar.len() { horizon - s } else { FINE_STEP.min(horizon - s) };
        let scale = (eta + f + a * s).exp();
        let cell = scale * growth_integral(a, width);
        if cell >= remaining {
            let g = remaining / scale;
            let u = if a.abs() * g < 1e-12 { g } else { (a * g).ln_1p() / a };
            return Some(s + u.min(width));
        }
        remaining -= cell;
        s += width;
        k += 1;
    }
    None
}

/// Applies the censoring mechanism to an (optional) event time within a
/// stay ending at `stay_end`.
pub fn censor<R: Rng + ?Sized>(event: Option<f64>, stay_end: f64, right_frac: f64, interval_frac: f64, rng: &mut R) -> EventRecord {
    let Some(t) = event else {
        return EventRecord::right_censored(stay_end).expect("valid stay end");
    };
    let u: f64 = rng.random();
    if u < right_frac {
        EventRecord::right_censored(rng.random::<f64>() * t).expect("valid censoring time")
    } else if u < right_frac + interval_frac {
        let width = rng.random_range(60.0..=720.0);
        let left = (t - rng.random::<f64>() * width).max(0.0);
        EventRecord::interval_censored(left, left + width).expect("valid bracket")
    } else {
        EventRecord::observed(t).expect("valid event time")
    }
}

fn poisson_times<R: Rng + ?Sized>(rate_per_min: f64, end: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        t += e / rate_per_min;
        if t > end {
            return out;
        }
        out.push(t);
    }
}

/// Draws one individual.
pub fn sample_individual<R: Rng + ?Sized>(spec: &SimSpec, id: u64, rng: &mut R) -> (IndividualRecord, IndividualTruth) {
    let (d, r) = (spec.d_signals, spec.r_shared);
    let stay_end = if spec.duration.1 > spec.duration.0 {
        rng.random_range(spec.duration.0..spec.duration.1)
    } else {
        spec.duration.0
    };
    let covariates: Vec<f64> = (0..spec.hazard.gamma.len()).map(|_| rng.sample(StandardNormal)).collect();
    let w = DMatrix::from_fn(d, r, |i, k| spec.w_mean[(i, k)] + spec.w_sd * rng.sample::<f64, _>(StandardNormal));
    let obs_times: Vec<Vec<f64>> = spec.obs_rate_per_hour.iter().map(|&rate| poisson_times(rate / 60.0, stay_end, rng)).collect();

    // union of the fine grid and all observation times
    let n_fine = (stay_end / FINE_STEP).ceil() as usize + 1;
    let mut points: Vec<(f64, usize, usize)> = (0..n_fine).map(|k| (k as f64 * FINE_STEP, usize::MAX, k)).collect();
    for (sd, ts) in obs_times.iter().enumerate() {
        points.extend(ts.iter().enumerate().map(|(n, &t)| (t, sd, n)));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let times: Vec<f64> = points.iter().map(|p| p.0).collect();
    let latents: Vec<Vec<f64>> = spec.lengthscales.iter().map(|&l| sample_latent_path(&times, l, rng)).collect();

    let signal = |sd: usize, idx: usize| -> f64 {
        (0..r).map(|k| w[(sd, k)] * latents[k][idx]).sum::<f64>() + spec.kappa[sd] * latents[r + sd][idx]
    };
    let mut fine_h = vec![0.0; n_fine];
    let mut fine_lat = vec![vec![0.0; n_fine]; r + d];
    let mut at_obs: Vec<Vec<f64>> = obs_times.iter().map(|t| vec![0.0; t.len()]).collect();
    for (idx, &(_, sd, n)) in points.iter().enumerate() {
        if sd == usize::MAX {
            fine_h[n] = (0..d).map(|k| spec.hazard.alpha[k] * signal(k, idx)).sum();
            for (j, lat) in fine_lat.iter_mut().enumerate() {
                lat[n] = latents[j][idx];
            }
        } else {
            at_obs[sd][n] = signal(sd, idx);
        }
    }
    let fbar = history_feature(&fine_h, spec.hazard.c, FINE_STEP);
    let eta = spec.hazard.b + spec.hazard.gamma.iter().zip(&covariates).map(|(g, x)| g * x).sum::<f64>();
    let event_time = draw_event_time(eta, spec.hazard.a, &fbar, stay_end, rng);
    let event = censor(event_time, stay_end, spec.right_frac, spec.interval_frac, rng);
    let follow_up = event.t_left;

    let sparsified = spec.sparsify.is_some_and(|s| rng.random::<f64>() < s.individuals);
    let t_dist = StudentT::new(STUDENT_T_DOF).expect("valid degrees of freedom");
    let mut series = Vec::with_capacity(d);
    let mut signal_at_obs = Vec::with_capacity(d);
    for sd in 0..d {
        let thin = sparsified && rng.random::<f64>() < spec.sparsify.expect("set").signal_prob;
        let (mut ts, mut ys, mut fs) = (Vec::new(), Vec::new(), Vec::new());
        for (n, &t) in obs_times[sd].iter().enumerate() {
            let noise: f64 = rng.sample(t_dist);
            let keep = !thin || rng.random::<f64>() < spec.sparsify.expect("set").keep;
            if t <= follow_up && keep {
                ts.push(t);
                fs.push(at_obs[sd][n]);
                ys.push(at_obs[sd][n] + spec.noise_scale[sd] * noise);
            }
        }
        series.push(ObservationSeries::new(sd + 1, ts, ys).expect("sorted finite observations"));
        signal_at_obs.push(fs);
    }
    let record = IndividualRecord {
        id,
        series,
        covariates: covariates.iter().map(|&x| CovariateSeries { times: vec![0.0], values: vec![x] }).collect(),
        event: Some(event),
    };
    let truth = IndividualTruth {
        id,
        w,
        covariates,
        stay_end,
        event_time,
        fbar,
        latents: fine_lat.iter().map(|p| p.iter().step_by(TRUTH_STEP).copied().collect()).collect(),
        signal_at_obs,
        sparsified,
    };
    (record, truth)
}

/// Draws a population; individual `i` uses its own substream, so output is
/// a pure function of the spec.
pub fn simulate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let (records, truths): (Vec<_>, Vec<_>) = (0..spec.n_individuals)
        .map(|i| {
            let mut rng = substream(spec.seed, "simulate", i as u64);
            sample_individual(spec, i as u64 + 1, &mut rng)
        })
        .unzip();
    let covariate_names = (0..spec.hazard.gamma.len()).map(|p| format!("x{}", p + 1)).collect();
    Ok(SimOutput {
        dataset: Dataset { n_signals: spec.d_signals, covariate_names, individuals: records },
        truth: SimTruth { spec: spec.clone(), individuals: truths },
    })
}

/// Writes the dataset files and the ground-truth sidecar into `dir`.
pub fn write_simulation(dir: &Path, out: &SimOutput) -> Result<()> {
    write_dataset(dir, &out.dataset)?;
    std::fs::write(dir.join(TRUTH_FILE), serde_json::to_string(&out.truth)? + "\n")?;
    Ok(())
}
