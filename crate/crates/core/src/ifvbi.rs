//! Inverse-free variational Bayesian channel estimation.
//!
//! The likelihood is minorized by `G(y, x, z, γ)`, whose quadratic term in `x`
//! is `T·I`, so the Gaussian factor `q(x)` has diagonal covariance and every
//! update costs two products with `F`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{dotc, norm_sqr, SensingMatrix};
use crate::priors::HierarchicalPriorParams;
use crate::scene::rng_from;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Result of the power iteration on `F^H F`.
#[derive(Debug, Clone)]
pub struct BoundEstimate {
    /// Rayleigh quotient at the final iterate.
    pub lambda: f64,
    /// `‖F^H F v − λ v‖`
    pub residual: f64,
    /// Majorization constant `(λ + residual)(1 + tol)`.
    pub t: f64,
    pub vector: Vec<Complex64>,
    pub iterations: usize,
}

/// Power iteration for `λ_max(F^H F)`, stopping once the Rayleigh quotient
/// changes by less than `tol/100` relative. `start` warm-starts the iterate.
pub fn power_iteration(
    f: &SensingMatrix,
    tol: f64,
    max_iter: usize,
    start: Option<&[Complex64]>,
) -> Result<BoundEstimate> {
    let q = f.ncols();
    let mut v: Vec<Complex64> = match start {
        Some(s) if s.len() == q && norm_sqr(s) > 0.0 => s.to_vec(),
        _ => {
            let mut rng = rng_from(0x5eed);
            (0..q)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect()
        }
    };
    let n = norm_sqr(&v).sqrt();
    v.iter_mut().for_each(|c| *c /= n);
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let w = f.apply_adjoint(&f.apply(&v));
        let lambda = dotc(&v, &w).re;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("F^H F has no positive eigenvalue".into()));
        }
        let residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let wn = norm_sqr(&w).sqrt();
        let done = (lambda - prev).abs() <= 1e-2 * tol * lambda;
        prev = lambda;
        if done {
            return Ok(BoundEstimate {
                lambda,
                residual,
                t: (lambda + residual) * (1.0 + tol),
                vector: v,
                iterations: it,
            });
        }
        v = w.into_iter().map(|c| c / wn).collect();
    }
    Err(Error::NoConvergence { what: "power iteration", iterations: max_iter })
}

/// Majorization constant `T ≥ λ_max(F^H F)`.
pub fn compute_bound_t(f: &SensingMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    Ok(power_iteration(f, tol, max_iter, None)?.t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfvbiConfig {
    /// Inner iteration cap `I1`.
    pub max_iter: usize,
    /// Relative change in `μ` that ends the loop.
    pub tol: f64,
    pub bound_tol: f64,
    pub bound_max_iter: usize,
}

impl Default for IfvbiConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-6, bound_tol: 1e-3, bound_max_iter: 2000 }
    }
}

/// Variational state. `⟨ρ_q⟩ = rho_shape/rho_rate`, `⟨γ⟩ = gamma_shape/gamma_rate`.
#[derive(Debug, Clone)]
pub struct IfvbiState {
    pub mu: Vec<Complex64>,
    pub sigma_diag: Vec<f64>,
    pub rho_shape: Vec<f64>,
    pub rho_rate: Vec<f64>,
    pub s_prob: Vec<f64>,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub z: Vec<Complex64>,
    pub t_bound: f64,
    /// `y − F z`
    resid_z: Vec<Complex64>,
    /// `F^H (y − F z)`
    grad_z: Vec<Complex64>,
}

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

fn bernoulli_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

impl IfvbiState {
    /// Initial state: `z = F^H y`, `⟨ρ⟩` at the prior means, `s = λ`, and
    /// `⟨γ⟩ = M / ‖y − F F^H y / T‖²` clipped to `[1e-3, 1e6]`.
    pub fn initialize(
        f: &SensingMatrix,
        y: &[Complex64],
        priors: &HierarchicalPriorParams,
        t_bound: f64,
    ) -> Result<Self> {
        check_shapes(f, y, priors)?;
        let q = f.ncols();
        let m = f.nrows() as f64;
        let z = f.apply_adjoint(y);
        let scaled: Vec<Complex64> = z.iter().map(|c| c / t_bound).collect();
        let fit = f.apply(&scaled);
        let r2: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).norm_sqr()).sum();
        let gamma0 = if r2 > 0.0 { (m / r2).clamp(1e-3, 1e6) } else { 1e6 };
        let gamma_shape = priors.c + m;
        let mut st = Self {
            mu: z.clone(),
            sigma_diag: vec![0.0; q],
            rho_shape: vec![1.0; q],
            rho_rate: vec![priors.b / priors.a; q],
            s_prob: priors.lambda.clone(),
            gamma_shape,
            gamma_rate: gamma_shape / gamma0,
            z,
            t_bound,
            resid_z: Vec::new(),
            grad_z: Vec::new(),
        };
        st.sigma_diag = (0..q).map(|i| 1.0 / (gamma0 * t_bound + st.rho_mean(i))).collect();
        st.refresh(f, y);
        Ok(st)
    }

    /// Keeps `q(ρ)`, `q(s)`, `q(γ)` and `Σ` of `prev` (same `Q`) under a new
    /// operator and bound; `z` restarts at `F^H y`.
    pub fn warm_start(
        prev: &IfvbiState,
        f: &SensingMatrix,
        y: &[Complex64],
        priors: &HierarchicalPriorParams,
        t_bound: f64,
    ) -> Result<Self> {
        check_shapes(f, y, priors)?;
        if prev.mu.len() != f.ncols() {
            return Err(Error::Shape("warm-start state has a different Q".into()));
        }
        let mut st = prev.clone();
        st.t_bound = t_bound;
        st.z = f.apply_adjoint(y);
        st.refresh(f, y);
        Ok(st)
    }

    fn refresh(&mut self, f: &SensingMatrix, y: &[Complex64]) {
        let fz = f.apply(&self.z);
        self.resid_z = y.iter().zip(&fz).map(|(a, b)| a - b).collect();
        self.grad_z = f.apply_adjoint(&self.resid_z);
    }

    pub fn gamma_mean(&self) -> f64 {
        self.gamma_shape / self.gamma_rate
    }

    pub fn rho_mean(&self, q: usize) -> f64 {
        self.rho_shape[q] / self.rho_rate[q]
    }

    /// `Σ = (⟨γ⟩T I + diag⟨ρ⟩)^{-1}`, `μ = Σ⟨γ⟩(F^H(y − Fz) + T z)`.
    pub fn update_qx(&mut self) {
        let g = self.gamma_mean();
        let t = self.t_bound;
        for q in 0..self.mu.len() {
            let s = 1.0 / (g * t + self.rho_mean(q));
            self.sigma_diag[q] = s;
            self.mu[q] = (self.grad_z[q] + self.z[q] * t) * (s * g);
        }
    }

    /// `⟨g(x, z)⟩` under the current `q(x)` and `z`.
    pub fn expected_g(&self) -> f64 {
        let t = self.t_bound;
        let mut diff2 = 0.0;
        let mut cross = 0.0;
        for q in 0..self.mu.len() {
            let d = self.mu[q] - self.z[q];
            diff2 += d.norm_sqr();
            cross += (d.conj() * self.grad_z[q]).re;
        }
        norm_sqr(&self.resid_z) + t * diff2 + t * self.sigma_diag.iter().sum::<f64>() - 2.0 * cross
    }

    /// `c̃ = c + M`, `d̃ = d + ⟨g⟩`.
    pub fn update_qgamma(&mut self, priors: &HierarchicalPriorParams) -> Result<()> {
        let g = self.expected_g();
        if !(g > 0.0) {
            return Err(Error::Numeric(format!("expected majorizer {g} is not positive")));
        }
        self.gamma_shape = priors.c + self.resid_z.len() as f64;
        self.gamma_rate = priors.d + g;
        Ok(())
    }

    /// Conjugate updates of `q(ρ)` then `q(s)`; the support posterior is
    /// formed in log space.
    pub fn update_qrho_qs(&mut self, priors: &HierarchicalPriorParams) {
        let (a, b, ab, bb) = (priors.a, priors.b, priors.a_bar, priors.b_bar);
        let k1 = a * b.ln() - ln_gamma(a);
        let k0 = ab * bb.ln() - ln_gamma(ab);
        for q in 0..self.mu.len() {
            let s = self.s_prob[q];
            let shape = s * a + (1.0 - s) * ab + 1.0;
            let rate = s * b + (1.0 - s) * bb + self.mu[q].norm_sqr() + self.sigma_diag[q];
            self.rho_shape[q] = shape;
            self.rho_rate[q] = rate;
            let e_rho = shape / rate;
            let e_ln = digamma(shape) - rate.ln();
            let lam = priors.lambda[q];
            let l1 = ln_or_neg_inf(lam) + k1 + (a - 1.0) * e_ln - b * e_rho;
            let l0 = ln_or_neg_inf(1.0 - lam) + k0 + (ab - 1.0) * e_ln - bb * e_rho;
            self.s_prob[q] = if l1 == f64::NEG_INFINITY {
                0.0
            } else if l0 == f64::NEG_INFINITY {
                1.0
            } else {
                1.0 / (1.0 + (l0 - l1).exp())
            };
        }
    }

    /// `z ← μ`, then refreshes the cached residual.
    pub fn update_z(&mut self, f: &SensingMatrix, y: &[Complex64]) {
        self.z.clone_from(&self.mu);
        self.refresh(f, y);
    }

    /// Relaxed KL objective `−E[ln G] − E[ln p(x, ρ, s, γ)] − H(q)` up to
    /// nothing: every term is kept so successive values are comparable.
    pub fn surrogate(&self, priors: &HierarchicalPriorParams) -> f64 {
        let m = self.resid_z.len() as f64;
        let (gs, gr) = (self.gamma_shape, self.gamma_rate);
        let e_gamma = gs / gr;
        let e_ln_gamma = digamma(gs) - gr.ln();
        let mut total = -(m * e_ln_gamma - m * PI.ln() - e_gamma * self.expected_g());
        total -= priors.c * priors.d.ln() - ln_gamma(priors.c) + (priors.c - 1.0) * e_ln_gamma
            - priors.d * e_gamma;
        total -= gamma_entropy(gs, gr);
        let (a, b, ab, bb) = (priors.a, priors.b, priors.a_bar, priors.b_bar);
        let k1 = a * b.ln() - ln_gamma(a);
        let k0 = ab * bb.ln() - ln_gamma(ab);
        for q in 0..self.mu.len() {
            let (sh, ra) = (self.rho_shape[q], self.rho_rate[q]);
            let e_rho = sh / ra;
            let e_ln = digamma(sh) - ra.ln();
            let s = self.s_prob[q];
            let lam = priors.lambda[q];
            let second = self.mu[q].norm_sqr() + self.sigma_diag[q];
            // E ln p(x|ρ) + E ln p(ρ|s) + E ln p(s)
            let mut lp = e_ln - PI.ln() - e_rho * second;
            lp += s * (k1 + (a - 1.0) * e_ln - b * e_rho) + (1.0 - s) * (k0 + (ab - 1.0) * e_ln - bb * e_rho);
            if s > 0.0 {
                lp += s * lam.ln();
            }
            if s < 1.0 {
                lp += (1.0 - s) * (1.0 - lam).ln();
            }
            let h = 1.0 + (PI * self.sigma_diag[q]).ln() + gamma_entropy(sh, ra) + bernoulli_entropy(s);
            total -= lp + h;
        }
        total
    }
}

fn check_shapes(f: &SensingMatrix, y: &[Complex64], priors: &HierarchicalPriorParams) -> Result<()> {
    if y.len() != f.nrows() {
        return Err(Error::Shape(format!("y has {} entries, F has {} rows", y.len(), f.nrows())));
    }
    if priors.len() != f.ncols() {
        return Err(Error::Shape(format!(
            "{} support probabilities for {} columns",
            priors.len(),
            f.ncols()
        )));
    }
    priors.validate()
}

#[derive(Debug, Clone)]
pub struct IfvbiOutput {
    pub x_hat: Vec<Complex64>,
    pub gamma_hat: f64,
    pub state: IfvbiState,
    pub iterations: usize,
    pub bound: BoundEstimate,
}

/// Runs the inner loop `{q(x), q(ρ)q(s), q(γ), z}` until the relative change
/// in `μ` drops below `cfg.tol` or `cfg.max_iter` sweeps.
pub fn run_ifvbi(
    f: &SensingMatrix,
    y: &[Complex64],
    priors: &HierarchicalPriorParams,
    cfg: &IfvbiConfig,
) -> Result<IfvbiOutput> {
    run_ifvbi_from(f, y, priors, cfg, None, None)
}

/// [`run_ifvbi`] with optional warm starts for the power iteration and the
/// variational state.
pub fn run_ifvbi_from(
    f: &SensingMatrix,
    y: &[Complex64],
    priors: &HierarchicalPriorParams,
    cfg: &IfvbiConfig,
    bound_start: Option<&[Complex64]>,
    state_start: Option<&IfvbiState>,
) -> Result<IfvbiOutput> {
    if cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("I1 must be at least 1".into()));
    }
    check_shapes(f, y, priors)?;
    if norm_sqr(y) == 0.0 {
        let q = f.ncols();
        let bound = BoundEstimate { lambda: 0.0, residual: 0.0, t: 0.0, vector: vec![ZERO; q], iterations: 0 };
        let mut state = IfvbiState::initialize(f, y, priors, 1.0)?;
        state.t_bound = 0.0;
        return Ok(IfvbiOutput { x_hat: vec![ZERO; q], gamma_hat: state.gamma_mean(), state, iterations: 0, bound });
    }
    let bound = power_iteration(f, cfg.bound_tol, cfg.bound_max_iter, bound_start)?;
    let mut state = match state_start {
        Some(prev) => IfvbiState::warm_start(prev, f, y, priors, bound.t)?,
        None => IfvbiState::initialize(f, y, priors, bound.t)?,
    };
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        let old = state.mu.clone();
        state.update_qx();
        state.update_qrho_qs(priors);
        state.update_qgamma(priors)?;
        state.update_z(f, y);
        iterations += 1;
        let change: f64 = state.mu.iter().zip(&old).map(|(a, b)| (a - b).norm_sqr()).sum();
        let base = norm_sqr(&old);
        if change <= cfg.tol * cfg.tol * base || (base == 0.0 && change == 0.0) {
            break;
        }
    }
    Ok(IfvbiOutput {
        x_hat: state.mu.clone(),
        gamma_hat: state.gamma_mean(),
        state,
        iterations,
        bound,
    })
}
