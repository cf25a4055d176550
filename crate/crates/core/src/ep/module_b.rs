//! Module B: sum-product over each grid point's `K_x × K_z` visibility lattice.

use serde::{Deserialize, Serialize};

use super::GaussMoments;
use crate::priors::Markov2DParams;

const CLAMP: f64 = 1e-12;

/// Prior placed on the visibility bits inside Module B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VrPrior {
    Markov2D(Markov2DParams),
    /// Independent Bernoulli(κ) bits.
    Iid { kappa: f64 },
}

impl VrPrior {
    pub fn kappa(&self) -> f64 {
        match self {
            VrPrior::Markov2D(p) => p.kappa,
            VrPrior::Iid { kappa } => *kappa,
        }
    }
}

fn clamp(p: f64) -> f64 {
    if p.is_nan() {
        0.5
    } else {
        p.clamp(CLAMP, 1.0 - CLAMP)
    }
}

/// Normalized `N(1; α, β) / (N(1; α, β) + N(0; α, β))`.
pub fn pi_in_one(mean: f64, var: f64) -> f64 {
    // ln N(1) − ln N(0) = (2α − 1) / (2β)
    let d = (2.0 * mean - 1.0) / (2.0 * var);
    clamp(1.0 / (1.0 + (-d).exp()))
}

/// Directional messages of one sub-graph, column-major over `(k_x, k_z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMessages {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub top: Vec<f64>,
    pub bottom: Vec<f64>,
    pub pi_out: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// Runs `i_bp` forward/backward sweeps on a lattice whose local evidence is
/// `pi1` (probability of one). Left/right messages travel along `k_z` with
/// the z-axis transitions, top/bottom along `k_x` with the x-axis ones.
pub fn lattice_sum_product(
    params: &Markov2DParams,
    k_x: usize,
    k_z: usize,
    pi1: &[f64],
    i_bp: usize,
) -> LatticeMessages {
    let n = k_x * k_z;
    debug_assert_eq!(pi1.len(), n);
    let idx = |kx: usize, kz: usize| kz * k_x + kx;
    let kappa = params.kappa;
    // local weights; the corner also carries the steady-state marginal
    let mut w1: Vec<f64> = pi1.to_vec();
    let mut w0: Vec<f64> = pi1.iter().map(|p| 1.0 - p).collect();
    w1[0] *= kappa;
    w0[0] *= 1.0 - kappa;

    let (p11x, p10x, p01x, p00x) = (params.p11_x(), params.p10_x, params.p01_x, params.p00_x());
    let (p11z, p10z, p01z, p00z) = (params.p11_z(), params.p10_z, params.p01_z, params.p00_z());

    let mut left = vec![0.5; n];
    let mut right = vec![0.5; n];
    let mut top = vec![0.5; n];
    let mut bottom = vec![0.5; n];

    let belief = |j: usize, msgs: [&[f64]; 3]| -> (f64, f64) {
        let mut b1 = w1[j];
        let mut b0 = w0[j];
        for m in msgs {
            b1 *= m[j];
            b0 *= 1.0 - m[j];
        }
        let s = b1 + b0;
        if s > 0.0 && s.is_finite() {
            (b1 / s, b0 / s)
        } else {
            (0.5, 0.5)
        }
    };

    for _ in 0..i_bp {
        for kz in 0..k_z {
            for kx in 0..k_x {
                let i = idx(kx, kz);
                if kz > 0 {
                    let j = idx(kx, kz - 1);
                    let (b1, b0) = belief(j, [&left, &top, &bottom]);
                    left[i] = clamp(p11z * b1 + p01z * b0);
                }
                if kx > 0 {
                    let j = idx(kx - 1, kz);
                    let (b1, b0) = belief(j, [&left, &right, &top]);
                    top[i] = clamp(p11x * b1 + p01x * b0);
                }
            }
        }
        for kz in (0..k_z).rev() {
            for kx in (0..k_x).rev() {
                let i = idx(kx, kz);
                if kz + 1 < k_z {
                    let j = idx(kx, kz + 1);
                    let (b1, b0) = belief(j, [&right, &top, &bottom]);
                    right[i] = clamp(
                        (p11z * b1 + p10z * b0) / ((p11z + p01z) * b1 + (p00z + p10z) * b0),
                    );
                }
                if kx + 1 < k_x {
                    let j = idx(kx + 1, kz);
                    let (b1, b0) = belief(j, [&left, &right, &bottom]);
                    bottom[i] = clamp(
                        (p11x * b1 + p10x * b0) / ((p11x + p01x) * b1 + (p00x + p10x) * b0),
                    );
                }
            }
        }
    }

    let mut pi_out = vec![0.5; n];
    let mut posterior = vec![0.5; n];
    for i in 0..n {
        let mut o1 = left[i] * right[i] * top[i] * bottom[i];
        let mut o0 = (1.0 - left[i]) * (1.0 - right[i]) * (1.0 - top[i]) * (1.0 - bottom[i]);
        if i == 0 {
            o1 *= kappa;
            o0 *= 1.0 - kappa;
        }
        pi_out[i] = clamp(o1 / (o1 + o0));
        let a = pi1[i] * pi_out[i];
        let b = (1.0 - pi1[i]) * (1.0 - pi_out[i]);
        posterior[i] = clamp(a / (a + b));
    }
    LatticeMessages { left, right, top, bottom, pi_out, posterior }
}

/// Posterior `p̂(v = 1)` of one sub-graph given its AWGN pseudo-observations
/// (column-major over the lattice).
pub fn subgraph_posterior(prior: &VrPrior, k_x: usize, k_z: usize, obs: &GaussMoments, i_bp: usize) -> Vec<f64> {
    let pi1: Vec<f64> = obs.mean.iter().zip(&obs.var).map(|(&m, &v)| pi_in_one(m, v)).collect();
    match prior {
        VrPrior::Markov2D(p) => lattice_sum_product(p, k_x, k_z, &pi1, i_bp).posterior,
        VrPrior::Iid { kappa } => pi1
            .iter()
            .map(|&p| clamp(kappa * p / (kappa * p + (1.0 - kappa) * (1.0 - p))))
            .collect(),
    }
}

/// Module B over every retained point. `b_pri[k]` holds the pseudo-observations
/// of sub-array `k` (one entry per retained point); returns the Bernoulli
/// moments `(p̂, p̂(1 − p̂))` in the same layout and the posteriors indexed
/// `[point][k]`.
pub fn markov_module_b(
    b_pri: &[GaussMoments],
    prior: &VrPrior,
    k_x: usize,
    k_z: usize,
    i_bp: usize,
) -> (Vec<GaussMoments>, Vec<Vec<f64>>) {
    let k = k_x * k_z;
    assert_eq!(b_pri.len(), k);
    let n_omega = b_pri.first().map_or(0, |m| m.mean.len());
    let mut b_post: Vec<GaussMoments> = (0..k).map(|_| GaussMoments::zeros(n_omega)).collect();
    let mut probs = Vec::with_capacity(n_omega);
    for i in 0..n_omega {
        let obs = GaussMoments {
            mean: b_pri.iter().map(|m| m.mean[i]).collect(),
            var: b_pri.iter().map(|m| m.var[i]).collect(),
        };
        let p = subgraph_posterior(prior, k_x, k_z, &obs, i_bp);
        for (kk, &pk) in p.iter().enumerate() {
            b_post[kk].mean[i] = pk;
            b_post[kk].var[i] = pk * (1.0 - pk);
        }
        probs.push(p);
    }
    (b_post, probs)
}
