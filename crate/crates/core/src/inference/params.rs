//! Global parameters and the unconstrained vector layouts of global and
//! local parameters used by the optimizers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::LengthScaleLink;
use crate::longitudinal::{InducingBlock, LmcWeights, LocalState};
use crate::numeric::{inv_softplus, softplus};
use crate::survival::HazardParams;

/// The baseline slope `a` is optimized as `a·A_SCALE` (per day rather than
/// per minute) so that all global coordinates have comparable magnitude.
pub const A_SCALE: f64 = 1440.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub hazard: HazardParams,
    /// `R` shared-latent links followed by `D` signal links.
    pub links: Vec<LengthScaleLink>,
    pub r_shared: usize,
}

impl GlobalParams {
    /// Zero effects, baseline log-rate `b`, history rate `c`, one long-range
    /// shared link and short-range links elsewhere.
    pub fn init(n_signals: usize, r_shared: usize, n_covariates: usize, b: f64, c: f64) -> Self {
        let links = (0..r_shared + n_signals)
            .map(|j| if j == 0 && r_shared > 0 { LengthScaleLink::long_range() } else { LengthScaleLink::short_range() })
            .collect();
        Self {
            hazard: HazardParams { a: 0.0, b, gamma: vec![0.0; n_covariates], alpha: vec![0.0; n_signals], c },
            links,
            r_shared,
        }
    }

    pub fn n_signals(&self) -> usize {
        self.hazard.alpha.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.hazard.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.hazard.validate()?;
        if self.links.len() != self.r_shared + self.n_signals() {
            return invalid("one length-scale link per latent function required");
        }
        if self.links.iter().any(|l| !l.beta.is_finite() || !l.beta0.is_finite()) {
            return invalid("length-scale links must be finite");
        }
        Ok(())
    }

    pub fn layout(&self) -> GlobalLayout {
        GlobalLayout { d: self.n_signals(), p: self.n_covariates(), j: self.links.len() }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().len());
        v.extend(&self.hazard.alpha);
        v.extend(&self.hazard.gamma);
        v.push(self.hazard.a * A_SCALE);
        v.push(self.hazard.b);
        v.push(inv_softplus(self.hazard.c));
        for l in &self.links {
            v.push(l.beta);
            v.push(l.beta0);
        }
        v
    }

    /// Same shapes as `self`, values from `v`.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        let lay = self.layout();
        assert_eq!(v.len(), lay.len(), "global vector length");
        let mut out = self.clone();
        out.hazard.alpha.copy_from_slice(&v[..lay.d]);
        out.hazard.gamma.copy_from_slice(&v[lay.gamma(0)..lay.gamma(0) + lay.p]);
        out.hazard.a = v[lay.a()] / A_SCALE;
        out.hazard.b = v[lay.b()];
        out.hazard.c = softplus(v[lay.c()]);
        for (j, l) in out.links.iter_mut().enumerate() {
            l.beta = v[lay.beta(j)];
            l.beta0 = v[lay.beta(j) + 1];
        }
        out
    }
}

/// Index map of the global vector: `α, γ, a·A_SCALE, b, softplus⁻¹(c), (β, β₀)…`.
#[derive(Debug, Clone, Copy)]
pub struct GlobalLayout {
    pub d: usize,
    pub p: usize,
    pub j: usize,
}

impl GlobalLayout {
    pub fn len(&self) -> usize {
        self.d + self.p + 3 + 2 * self.j
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn alpha(&self, d: usize) -> usize {
        d
    }
    pub fn gamma(&self, p: usize) -> usize {
        self.d + p
    }
    pub fn a(&self) -> usize {
        self.d + self.p
    }
    pub fn b(&self) -> usize {
        self.d + self.p + 1
    }
    pub fn c(&self) -> usize {
        self.d + self.p + 2
    }
    pub fn beta(&self, j: usize) -> usize {
        self.d + self.p + 3 + 2 * j
    }
}

/// Index map of the local vector: per block `m` then the lower triangle of
/// the `S` factor (row-major, diagonal as softplus⁻¹), then `w` (row-major),
/// `κ`, and softplus⁻¹ of the noise scales.
#[derive(Debug, Clone, Copy)]
pub struct LocalLayout {
    pub blocks: usize,
    pub m: usize,
    pub d: usize,
    pub r: usize,
}

impl LocalLayout {
    pub fn of(local: &LocalState) -> Self {
        Self { blocks: local.blocks.len(), m: local.m_inducing(), d: local.n_signals(), r: local.r_shared() }
    }
    pub fn block_len(&self) -> usize {
        self.m + self.m * (self.m + 1) / 2
    }
    pub fn block(&self, j: usize) -> usize {
        j * self.block_len()
    }
    /// Offset of `L[i][k]`, `k ≤ i`, within block `j`.
    pub fn chol(&self, j: usize, i: usize, k: usize) -> usize {
        self.block(j) + self.m + i * (i + 1) / 2 + k
    }
    pub fn w(&self, d: usize, r: usize) -> usize {
        self.blocks * self.block_len() + d * self.r + r
    }
    pub fn kappa(&self, d: usize) -> usize {
        self.blocks * self.block_len() + self.d * self.r + d
    }
    pub fn noise(&self, d: usize) -> usize {
        self.kappa(0) + self.d + d
    }
    pub fn len(&self) -> usize {
        self.noise(0) + self.d
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn local_to_vec(local: &LocalState) -> Vec<f64> {
    let lay = LocalLayout::of(local);
    let mut v = vec![0.0; lay.len()];
    for (j, b) in local.blocks.iter().enumerate() {
        v[lay.block(j)..lay.block(j) + lay.m].copy_from_slice(b.m.as_slice());
        for i in 0..lay.m {
            for k in 0..=i {
                let x = b.s_chol[(i, k)];
                v[lay.chol(j, i, k)] = if i == k { inv_softplus(x) } else { x };
            }
        }
    }
    for d in 0..lay.d {
        for r in 0..lay.r {
            v[lay.w(d, r)] = local.weights.w[(d, r)];
        }
        v[lay.kappa(d)] = local.weights.kappa[d];
        v[lay.noise(d)] = inv_softplus(local.weights.noise_scale[d]);
    }
    v
}

/// Same shapes and spans as `template`, values from `v`.
pub fn local_from_vec(template: &LocalState, v: &[f64]) -> LocalState {
    let lay = LocalLayout::of(template);
    assert_eq!(v.len(), lay.len(), "local vector length");
    let blocks = template
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let m = DVector::from_column_slice(&v[lay.block(j)..lay.block(j) + lay.m]);
            let mut l = DMatrix::zeros(lay.m, lay.m);
            for i in 0..lay.m {
                for k in 0..=i {
                    let x = v[lay.chol(j, i, k)];
                    l[(i, k)] = if i == k { softplus(x).max(1e-300) } else { x };
                }
            }
            InducingBlock { z: b.z.clone(), m, s_chol: l }
        })
        .collect();
    let w = DMatrix::from_fn(lay.d, lay.r, |d, r| v[lay.w(d, r)]);
    let kappa = (0..lay.d).map(|d| v[lay.kappa(d)]).collect();
    let noise_scale = (0..lay.d).map(|d| softplus(v[lay.noise(d)]).max(1e-300)).collect();
    LocalState {
        blocks,
        weights: LmcWeights { w, kappa, noise_scale },
        t_max: template.t_max,
        signal_t_max: template.signal_t_max.clone(),
    }
}
