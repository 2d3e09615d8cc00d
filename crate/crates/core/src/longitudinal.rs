//! Sparse variational LMC sub-model: shared latent processes `g_r`, signal
//! specific processes `v_d`, each summarized by `M` inducing values with a
//! Gaussian variational distribution, and the Student-t observation model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::matern12_unchecked;
use crate::numeric::GaussHermite;

/// Degrees of freedom of the observation noise.
pub const STUDENT_T_DOF: f64 = 3.0;

/// Jitter added to `K_ZZ`; escalated ×10 on failure up to [`MAX_JITTER`].
pub const BASE_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

/// Observation noise family. Student-t with 3 degrees of freedom is the model;
/// the Gaussian variant exists for exact-posterior comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    StudentT,
    Gaussian,
}

/// Observations of one signal for one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub signal_id: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(signal_id: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return invalid(format!(
                "signal {signal_id}: {} times but {} values",
                times.len(),
                values.len()
            ));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return invalid(format!("signal {signal_id}: non-finite time or value"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid(format!("signal {signal_id}: times must be strictly increasing"));
        }
        Ok(Self { signal_id, times, values })
    }

    pub fn empty(signal_id: usize) -> Self {
        Self { signal_id, times: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observations with `time <= t`.
    pub fn truncated(&self, t: f64) -> Self {
        let n = self.times.partition_point(|&x| x <= t);
        Self {
            signal_id: self.signal_id,
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }
}

/// Inducing inputs `z` with variational mean `m` and Cholesky factor of `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingBlock {
    pub z: Vec<f64>,
    pub m: DVector<f64>,
    pub s_chol: DMatrix<f64>,
}

impl InducingBlock {
    pub fn new(z: Vec<f64>, m: DVector<f64>, s_chol: DMatrix<f64>) -> Result<Self> {
        let n = z.len();
        if n == 0 || m.len() != n || s_chol.nrows() != n || s_chol.ncols() != n {
            return invalid("inducing block dimensions disagree");
        }
        if z.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("inducing inputs must be strictly increasing");
        }
        for i in 0..n {
            if !(s_chol[(i, i)] > 0.0) {
                return invalid("S factor must have a positive diagonal");
            }
            for j in i + 1..n {
                if s_chol[(i, j)] != 0.0 {
                    return invalid("S factor must be lower triangular");
                }
            }
        }
        Ok(Self { z, m, s_chol })
    }

    /// `m = 0`, `S = 0.01·I`.
    pub fn init(z: Vec<f64>) -> Self {
        let n = z.len();
        Self { z, m: DVector::zeros(n), s_chol: DMatrix::identity(n, n) * 0.1 }
    }

    /// `m` evenly spaced points covering `[0, t_max]`.
    pub fn regular_grid(m: usize, t_max: f64) -> Vec<f64> {
        match m {
            0 => Vec::new(),
            1 => vec![0.5 * t_max],
            _ => (0..m).map(|i| t_max * i as f64 / (m - 1) as f64).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.z.len()
    }

    pub fn s(&self) -> DMatrix<f64> {
        &self.s_chol * self.s_chol.transpose()
    }
}

/// Per-individual mixing weights and noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcWeights {
    /// `D × R` shared-component weights.
    pub w: DMatrix<f64>,
    pub kappa: Vec<f64>,
    pub noise_scale: Vec<f64>,
}

/// Variational state of one individual: `R` shared blocks followed by `D`
/// signal-specific blocks, all on the same inducing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub blocks: Vec<InducingBlock>,
    pub weights: LmcWeights,
    /// Last observation time over all signals (drives shared length-scales).
    pub t_max: f64,
    /// Last observation time per signal (drives signal-specific length-scales).
    pub signal_t_max: Vec<f64>,
}

impl LocalState {
    /// Initial state: zero means, `S = 0.01 I`, `w ~ U(-0.1, 0.1)`, `κ = 1`,
    /// noise scale from the sample standard deviation.
    pub fn init<R: Rng + ?Sized>(
        series: &[ObservationSeries],
        r_shared: usize,
        m_inducing: usize,
        fallback_t_max: f64,
        rng: &mut R,
    ) -> Self {
        let d = series.len();
        let (t_max, signal_t_max) = observation_spans(series, fallback_t_max);
        let z = InducingBlock::regular_grid(m_inducing, t_max);
        let blocks = (0..r_shared + d).map(|_| InducingBlock::init(z.clone())).collect();
        let w = DMatrix::from_fn(d, r_shared, |_, _| rng.random_range(-0.1..0.1));
        let noise_scale = series
            .iter()
            .map(|s| {
                if s.len() < 2 {
                    1.0
                } else {
                    let n = s.len() as f64;
                    let mean = s.values.iter().sum::<f64>() / n;
                    let var = s.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    let sd = var.sqrt();
                    if sd > 1e-6 {
                        sd
                    } else {
                        1.0
                    }
                }
            })
            .collect();
        Self {
            blocks,
            weights: LmcWeights { w, kappa: vec![1.0; d], noise_scale },
            t_max,
            signal_t_max,
        }
    }

    pub fn n_signals(&self) -> usize {
        self.weights.w.nrows()
    }

    pub fn r_shared(&self) -> usize {
        self.weights.w.ncols()
    }

    pub fn m_inducing(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.size())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_signals();
        let r = self.r_shared();
        if self.blocks.len() != r + d
            || self.weights.kappa.len() != d
            || self.weights.noise_scale.len() != d
            || self.signal_t_max.len() != d
        {
            return invalid("local state dimensions disagree");
        }
        if self.weights.noise_scale.iter().any(|s| !(*s > 0.0)) {
            return invalid("noise scales must be positive");
        }
        for b in &self.blocks {
            InducingBlock::new(b.z.clone(), b.m.clone(), b.s_chol.clone())?;
        }
        Ok(())
    }
}

/// `(t̄, t̄_d)`: last observation time overall and per signal, floored at one
/// minute, with `fallback` used when nothing has been observed.
pub fn observation_spans(series: &[ObservationSeries], fallback: f64) -> (f64, Vec<f64>) {
    let last: Vec<Option<f64>> = series.iter().map(|s| s.times.last().copied()).collect();
    let t_max = last
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let t_max = if t_max.is_finite() { t_max } else { fallback }.max(1.0);
    let per = last.iter().map(|l| l.unwrap_or(t_max).max(1.0)).collect();
    (t_max, per)
}

/// Posterior mean and covariance of one latent or one signal at query times.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Cholesky factor and inverse of `K_ZZ + jitter·I`.
#[derive(Debug, Clone)]
pub struct KzzFactor {
    pub kzz: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub inv: DMatrix<f64>,
    pub jitter: f64,
}

impl KzzFactor {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

pub fn gram(a: &[f64], b: &[f64], l: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| matern12_unchecked(a[i], b[j], l))
}

/// Factorizes the inducing Gram matrix, escalating jitter on failure.
pub fn kzz_factor(z: &[f64], l: f64) -> Result<KzzFactor> {
    if !(l > 0.0) || !l.is_finite() {
        return invalid(format!("length-scale must be positive, got {l}"));
    }
    let base = gram(z, z, l);
    let mut jitter = BASE_JITTER;
    loop {
        let mut k = base.clone();
        for i in 0..z.len() {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k.clone()) {
            let inv = chol.inverse();
            return Ok(KzzFactor { kzz: k, chol, inv, jitter });
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::IllConditioned { jitter: jitter / 10.0 });
        }
    }
}

/// Variational posterior of one latent process at `query_times`:
/// `μ = K_NZ K_ZZ⁻¹ m`, `Σ = K_NN - K_NZ K_ZZ⁻¹ (I - S K_ZZ⁻¹) K_ZN`.
pub fn predict_latent(block: &InducingBlock, l: f64, query_times: &[f64]) -> Result<SignalPosterior> {
    if query_times.iter().any(|t| !t.is_finite()) {
        return invalid("query times must be finite");
    }
    let f = kzz_factor(&block.z, l)?;
    let knz = gram(query_times, &block.z, l);
    let knn = gram(query_times, query_times, l);
    let a = &knz * &f.inv;
    let mean = &a * &block.m;
    let al = &a * &block.s_chol;
    let cov = knn - &a * knz.transpose() + &al * al.transpose();
    Ok(SignalPosterior { mean, cov })
}

/// Posterior means and marginal variances only, in `O(NM² + M³)`. The full
/// covariance of [`predict_latent`] costs `O(N²M)` by its size alone.
pub fn predict_latent_marginals(block: &InducingBlock, l: f64, query_times: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    if query_times.iter().any(|t| !t.is_finite()) {
        return invalid("query times must be finite");
    }
    let f = kzz_factor(&block.z, l)?;
    let knz = gram(query_times, &block.z, l);
    let a = &knz * &f.inv;
    let mean = &a * &block.m;
    let al = &a * &block.s_chol;
    let var = DVector::from_fn(query_times.len(), |i, _| 1.0 - a.row(i).dot(&knz.row(i)) + al.row(i).norm_squared());
    Ok((mean, var))
}

/// Length-scales of the `R + D` latent processes for one individual.
pub fn block_lengthscales(
    links: &[crate::kernels::LengthScaleLink],
    local: &LocalState,
) -> Vec<f64> {
    let r = local.r_shared();
    links
        .iter()
        .enumerate()
        .map(|(j, link)| {
            let span = if j < r { local.t_max } else { local.signal_t_max[j - r] };
            link.lengthscale(span)
        })
        .collect()
}

/// Posterior of signal `d`: `Σ_r w_dr q(g_r) + κ_d q(v_d)` with independent latents.
pub fn predict_signal(
    local: &LocalState,
    lengthscales: &[f64],
    d: usize,
    query_times: &[f64],
) -> Result<SignalPosterior> {
    let r = local.r_shared();
    if d >= local.n_signals() {
        return invalid(format!("signal index {d} out of range"));
    }
    if lengthscales.len() != local.blocks.len() {
        return invalid("one length-scale per latent block required");
    }
    let n = query_times.len();
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    let terms = (0..r)
        .map(|k| (k, local.weights.w[(d, k)]))
        .chain(std::iter::once((r + d, local.weights.kappa[d])));
    for (j, coef) in terms {
        if coef == 0.0 {
            continue;
        }
        let p = predict_latent(&local.blocks[j], lengthscales[j], query_times)?;
        mean.axpy(coef, &p.mean, 1.0);
        cov += p.cov * (coef * coef);
    }
    Ok(SignalPosterior { mean, cov })
}

/// `log Γ(2) / (Γ(3/2) √(3π))`.
const STUDENT_T3_LOGNORM: f64 = -1.000_888_849_623_509_8;

/// Log-density of the location-scale Student-t with 3 degrees of freedom.
pub fn student_t_logpdf(y: f64, f: f64, scale: f64) -> f64 {
    let r = y - f;
    STUDENT_T3_LOGNORM - scale.ln() - 2.0 * (r * r / (STUDENT_T_DOF * scale * scale)).ln_1p()
}

/// `Σ_n E_{N(μ_n, σ²_n)} log p(y_n | f)` by Gauss-Hermite quadrature.
pub fn expected_loglik_gh(
    mean: &[f64],
    var: &[f64],
    values: &[f64],
    noise_scale: f64,
    n_nodes: usize,
) -> Result<f64> {
    if n_nodes < 5 {
        return invalid("Gauss-Hermite rule needs at least 5 nodes");
    }
    if mean.len() != values.len() || var.len() != values.len() {
        return invalid("posterior and observation lengths differ");
    }
    if !(noise_scale > 0.0) {
        return invalid("noise scale must be positive");
    }
    let gh = GaussHermite::cached(n_nodes);
    Ok(values
        .iter()
        .zip(mean.iter().zip(var))
        .map(|(&y, (&m, &v))| gh.expect(m, v, |f| student_t_logpdf(y, f, noise_scale)))
        .sum())
}

/// Expected log-likelihood of one observation with its partial derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PointLoglik {
    pub value: f64,
    pub d_mean: f64,
    pub d_var: f64,
    pub d_scale: f64,
}

/// Expected log-likelihood and derivatives for one observation.
///
/// For Student-t noise this is the exact derivative of the quadrature sum.
pub(crate) fn expected_point_loglik(
    noise: NoiseModel,
    gh: &GaussHermite,
    y: f64,
    mean: f64,
    var: f64,
    scale: f64,
) -> PointLoglik {
    match noise {
        NoiseModel::Gaussian => {
            let s2 = scale * scale;
            let r = y - mean;
            let q = r * r + var;
            PointLoglik {
                value: -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - q / (2.0 * s2),
                d_mean: r / s2,
                d_var: -0.5 / s2,
                d_scale: -1.0 / scale + q / (s2 * scale),
            }
        }
        NoiseModel::StudentT => {
            let var = var.max(0.0);
            let s = (2.0 * var).sqrt();
            let three_s2 = STUDENT_T_DOF * scale * scale;
            let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
            let small = var < 1e-14;
            let mut out = PointLoglik::default();
            for (x, w) in gh.nodes.iter().zip(&gh.weights) {
                let w = w * inv_sqrt_pi;
                let f = mean + s * x;
                let r = y - f;
                let den = three_s2 + r * r;
                let h = STUDENT_T3_LOGNORM - scale.ln() - 2.0 * (r * r / three_s2).ln_1p();
                let h1 = 4.0 * r / den;
                out.value += w * h;
                out.d_mean += w * h1;
                if small {
                    out.d_var += w * 0.5 * (-4.0 * (three_s2 - r * r) / (den * den));
                } else {
                    out.d_var += w * h1 * x / s;
                }
                out.d_scale += w * (-1.0 / scale + 4.0 * r * r / (scale * den));
            }
            out
        }
    }
}
