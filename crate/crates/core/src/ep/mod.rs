//! Structured expectation propagation for VR detection.
//!
//! Module A treats the visibility bits of each sub-array as Gaussian and runs
//! an LMMSE estimator; Module B projects them back onto binary variables under
//! the lattice prior. The two exchange extrinsic messages with damping.

mod module_a;
mod module_b;

pub use module_a::lmmse_module_a;
pub use module_b::{lattice_sum_product, markov_module_b, pi_in_one, subgraph_posterior, LatticeMessages, VrPrior};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayConfig;
use crate::grid::VisibilityMap;
use crate::linalg::CMatrix;

/// Elementwise Gaussian moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussMoments {
    pub fn zeros(n: usize) -> Self {
        Self { mean: vec![0.0; n], var: vec![0.0; n] }
    }

    pub fn constant(n: usize, mean: f64, var: f64) -> Self {
        Self { mean: vec![mean; n], var: vec![var; n] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpConfig {
    /// Retain `q` when `|x̂_q|² > c_thresh / γ̂`.
    pub c_thresh: f64,
    /// Damping factor `η`.
    pub damping: f64,
    /// A↔B exchanges `I2`.
    pub iterations: usize,
    /// Sweeps of Module B per exchange.
    pub bp_sweeps: usize,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self { c_thresh: 3.0, damping: 0.5, iterations: 5, bp_sweeps: 10 }
    }
}

/// Antenna flat indices of every sub-array, indexed `kz * K_x + kx`.
pub fn subarray_partition(cfg: &ArrayConfig) -> Vec<Vec<usize>> {
    let mut sets = Vec::with_capacity(cfg.num_subarrays());
    for kz in 0..cfg.k_z {
        for kx in 0..cfg.k_x {
            let mut set = Vec::with_capacity(cfg.subarray_size());
            for iz in kz * cfg.n_z..(kz + 1) * cfg.n_z {
                for ix in kx * cfg.n_x..(kx + 1) * cfg.n_x {
                    set.push(cfg.flat_index(ix, iz));
                }
            }
            sets.push(set);
        }
    }
    sets
}

/// `Ω = {q : |x̂_q|² > c_thresh / γ̂}`
pub fn polar_filter(x_hat: &[Complex64], gamma_hat: f64, c_thresh: f64) -> Result<Vec<usize>> {
    if !(gamma_hat > 0.0) {
        return Err(Error::InvalidArgument("noise precision estimate must be positive".into()));
    }
    let eps = c_thresh / gamma_hat;
    let omega: Vec<usize> = (0..x_hat.len()).filter(|&q| x_hat[q].norm_sqr() > eps).collect();
    if omega.is_empty() {
        Err(Error::EmptySupport)
    } else {
        Ok(omega)
    }
}

/// Real-lifted per-sub-array models.
#[derive(Debug, Clone)]
pub struct SubarrayModel {
    pub omega: Vec<usize>,
    pub index_sets: Vec<Vec<usize>>,
    /// `[Re; Im]` of `A_k[:, Ω] diag(x̂_Ω)`, one `2N × |Ω|` matrix per sub-array.
    pub h_matrices: Vec<DMatrix<f64>>,
}

pub fn build_subarray_models(
    a: &CMatrix,
    x_hat: &[Complex64],
    omega: &[usize],
    index_sets: &[Vec<usize>],
) -> SubarrayModel {
    let h_matrices = index_sets
        .iter()
        .map(|set| {
            let n = set.len();
            DMatrix::from_fn(2 * n, omega.len(), |r, c| {
                let q = omega[c];
                let v = a[(set[r % n], q)] * x_hat[q];
                if r < n {
                    v.re
                } else {
                    v.im
                }
            })
        })
        .collect();
    SubarrayModel { omega: omega.to_vec(), index_sets: index_sets.to_vec(), h_matrices }
}

/// `[Re y_Ψ; Im y_Ψ]`
pub fn lift_observation(y: &[Complex64], set: &[usize]) -> DVector<f64> {
    let n = set.len();
    DVector::from_fn(2 * n, |r, _| if r < n { y[set[r]].re } else { y[set[r - n]].im })
}

/// Module B → Module A extrinsic message with the negative-variance guard and
/// damping: `a_pri ← η·ext + (1 − η)·a_pri` where valid, unchanged otherwise.
pub fn extrinsic_b_to_a(b_post: &GaussMoments, b_pri: &GaussMoments, a_pri: &GaussMoments, eta: f64) -> GaussMoments {
    let mut out = a_pri.clone();
    for i in 0..a_pri.len() {
        if b_post.var[i] >= b_pri.var[i] {
            continue;
        }
        let var = 1.0 / (1.0 / b_post.var[i] - 1.0 / b_pri.var[i]);
        let mean = var * (b_post.mean[i] / b_post.var[i] - b_pri.mean[i] / b_pri.var[i]);
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            continue;
        }
        out.mean[i] = eta * mean + (1.0 - eta) * a_pri.mean[i];
        out.var[i] = eta * var + (1.0 - eta) * a_pri.var[i];
    }
    out
}

#[derive(Debug, Clone)]
pub struct EpOutput {
    /// One mask per grid point; all-zeros outside Ω.
    pub masks: Vec<VisibilityMap>,
    pub omega: Vec<usize>,
    /// Posterior `p̂(v = 1)` indexed `[position in Ω][sub-array]`.
    pub probs: Vec<Vec<f64>>,
    /// Module A prior means after every exchange, for diagnostics.
    pub a_pri_means: Vec<Vec<f64>>,
}

/// Alternates Module A and Module B `cfg.iterations` times and returns the
/// hard decisions `v̂ = 1 ⇔ p̂ ≥ 1/2`.
pub fn run_structured_ep(
    cfg: &ArrayConfig,
    a: &CMatrix,
    x_hat: &[Complex64],
    gamma_hat: f64,
    y: &[Complex64],
    prior: &VrPrior,
    ep: &EpConfig,
) -> Result<EpOutput> {
    let omega = polar_filter(x_hat, gamma_hat, ep.c_thresh)?;
    let sets = subarray_partition(cfg);
    let model = build_subarray_models(a, x_hat, &omega, &sets);
    run_structured_ep_on(cfg, &model, gamma_hat, y, prior, ep, x_hat.len())
}

/// EP on prebuilt sub-array models.
pub fn run_structured_ep_on(
    cfg: &ArrayConfig,
    model: &SubarrayModel,
    gamma_hat: f64,
    y: &[Complex64],
    prior: &VrPrior,
    ep: &EpConfig,
    q_total: usize,
) -> Result<EpOutput> {
    let n = model.omega.len();
    let k = model.index_sets.len();
    let kappa = prior.kappa();
    let init = GaussMoments::constant(n, kappa, kappa * (1.0 - kappa));
    let mut a_pri = vec![init.clone(); k];
    let mut b_pri = vec![init; k];
    let y_lifted: Vec<DVector<f64>> = model.index_sets.iter().map(|s| lift_observation(y, s)).collect();
    let mut probs = vec![vec![kappa; k]; n];
    let mut a_pri_means = Vec::with_capacity(ep.iterations);
    for _ in 0..ep.iterations {
        for kk in 0..k {
            let (_, ext) = lmmse_module_a(&model.h_matrices[kk], &y_lifted[kk], 2.0 * gamma_hat, &a_pri[kk], &b_pri[kk])?;
            b_pri[kk] = ext;
        }
        let (b_post, p) = markov_module_b(&b_pri, prior, cfg.k_x, cfg.k_z, ep.bp_sweeps);
        probs = p;
        for kk in 0..k {
            a_pri[kk] = extrinsic_b_to_a(&b_post[kk], &b_pri[kk], &a_pri[kk], ep.damping);
        }
        a_pri_means.push(a_pri.iter().flat_map(|m| m.mean.iter().cloned()).collect());
    }
    let mut masks = vec![VisibilityMap::zeros(cfg.k_x, cfg.k_z); q_total];
    for (i, &q) in model.omega.iter().enumerate() {
        let bits = probs[i].iter().map(|&p| p >= 0.5).collect();
        masks[q] = VisibilityMap::new(cfg.k_x, cfg.k_z, bits)?;
    }
    Ok(EpOutput { masks, omega: model.omega.clone(), probs, a_pri_means })
}
