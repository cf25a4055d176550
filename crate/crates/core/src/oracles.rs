//! Brute-force reference computations for small instances: dense inverses,
//! eigensolvers, quadrature and exhaustive enumeration.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::grid::VisibilityMap;
use crate::linalg::{norm_sqr, CMatrix};
use crate::priors::{gamma_logpdf, markov2d_log_prior, HierarchicalPriorParams, Markov2DParams};

/// Largest eigenvalue of `F^H F` by dense Hermitian eigendecomposition.
pub fn lambda_max(f: &CMatrix) -> f64 {
    let g = f.adjoint() * f;
    g.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `γ (γ F^H F + diag ρ)^{-1} F^H y` by a dense inverse.
pub fn exact_vbi_mean(f: &CMatrix, y: &[Complex64], gamma: f64, rho: &[f64]) -> Vec<Complex64> {
    let (mu, _) = exact_posterior(f, y, gamma, rho);
    mu
}

fn exact_posterior(f: &CMatrix, y: &[Complex64], gamma: f64, rho: &[f64]) -> (Vec<Complex64>, CMatrix) {
    let q = f.ncols();
    let mut p = f.adjoint() * f * Complex64::new(gamma, 0.0);
    for i in 0..q {
        p[(i, i)] += rho[i];
    }
    let sigma = p.try_inverse().expect("posterior precision is invertible");
    let fy = f.adjoint() * DVector::from_column_slice(y);
    let mu = &sigma * fy * Complex64::new(gamma, 0.0);
    (mu.iter().cloned().collect(), sigma)
}

/// Mean-field VBI with the exact Gaussian factor (dense `Q × Q` inverse per
/// sweep), same hyperprior updates and initialization as the inverse-free
/// estimator.
pub fn run_exact_vbi(
    f: &CMatrix,
    y: &[Complex64],
    priors: &HierarchicalPriorParams,
    max_iter: usize,
    tol: f64,
) -> Vec<Complex64> {
    let (m, q) = (f.nrows(), f.ncols());
    let yv = DVector::from_column_slice(y);
    let t = lambda_max(f) * (1.0 + 1e-3);
    let fy = f.adjoint() * &yv;
    let r0 = &yv - f * (&fy / Complex64::new(t, 0.0));
    let mut gamma = (m as f64 / r0.norm_squared()).clamp(1e-3, 1e6);
    let mut rho = vec![priors.a / priors.b; q];
    let mut s = priors.lambda.clone();
    let gram = f.adjoint() * f;
    let mut mu = vec![Complex64::new(0.0, 0.0); q];
    for _ in 0..max_iter {
        let (new_mu, sigma) = exact_posterior(f, y, gamma, &rho);
        for i in 0..q {
            let sig = sigma[(i, i)].re;
            let shape = s[i] * priors.a + (1.0 - s[i]) * priors.a_bar + 1.0;
            let rate = s[i] * priors.b + (1.0 - s[i]) * priors.b_bar + new_mu[i].norm_sqr() + sig;
            rho[i] = shape / rate;
            let e_ln = statrs::function::gamma::digamma(shape) - rate.ln();
            let l1 = priors.lambda[i].ln() + priors.a * priors.b.ln() - ln_gamma(priors.a)
                + (priors.a - 1.0) * e_ln
                - priors.b * rho[i];
            let l0 = (1.0 - priors.lambda[i]).ln() + priors.a_bar * priors.b_bar.ln() - ln_gamma(priors.a_bar)
                + (priors.a_bar - 1.0) * e_ln
                - priors.b_bar * rho[i];
            s[i] = 1.0 / (1.0 + (l0 - l1).exp());
        }
        let muv = DVector::from_column_slice(&new_mu);
        let resid = (&yv - f * &muv).norm_squared();
        let trace: f64 = (&gram * &sigma).trace().re;
        gamma = (priors.c + m as f64) / (priors.d + resid + trace);
        let change: f64 = new_mu.iter().zip(&mu).map(|(a, b)| (a - b).norm_sqr()).sum();
        let base = norm_sqr(&mu);
        mu = new_mu;
        if change <= tol * tol * base {
            break;
        }
    }
    mu
}

/// Posterior `q(s = 1)` for one coefficient with `E_ρ` evaluated by
/// trapezoidal quadrature over `ρ ~ Ga(shape, rate)` in log coordinates.
pub fn support_posterior_quadrature(priors: &HierarchicalPriorParams, q: usize, shape: f64, rate: f64) -> f64 {
    let expect = |a: f64, b: f64| {
        let (lo, hi, n) = (-40.0f64, 15.0f64, 400_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let t = lo + i as f64 * h;
            let rho = t.exp();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (gamma_logpdf(rho, shape, rate) + t).exp() * gamma_logpdf(rho, a, b);
        }
        acc * h
    };
    let lam = priors.lambda[q];
    let l1 = lam.ln() + expect(priors.a, priors.b);
    let l0 = (1.0 - lam).ln() + expect(priors.a_bar, priors.b_bar);
    1.0 / (1.0 + (l0 - l1).exp())
}

/// Posterior of `v ~ N(m, P)` observed through `y = H v + n`,
/// `n ~ N(0, R)`, by Bayes' rule on the joint Gaussian: returns the
/// conditional mean and covariance.
pub fn gaussian_conditioning(
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * prior_cov * h.transpose() + noise_cov;
    let gain = prior_cov * h.transpose() * s.try_inverse().expect("innovation covariance is invertible");
    let mean = prior_mean + &gain * (y - h * prior_mean);
    let cov = prior_cov - &gain * h * prior_cov;
    (mean, cov)
}

/// Marginals `P(v_k = 1)` under the 2D Markov factor product times the local
/// evidence `pi1`, by summing over all `2^{K_x K_z}` masks.
pub fn vr_marginals_enumeration(params: &Markov2DParams, k_x: usize, k_z: usize, pi1: &[f64]) -> Vec<f64> {
    let n = k_x * k_z;
    assert!(n <= 20, "enumeration over {n} bits is too large");
    let mut marg = vec![0.0; n];
    let mut total = 0.0;
    for code in 0..1usize << n {
        let bits: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
        let mask = VisibilityMap::new(k_x, k_z, bits.clone()).expect("bit count matches");
        let mut w = markov2d_log_prior(params, &mask).exp();
        for (b, p) in bits.iter().zip(pi1) {
            w *= if *b { *p } else { 1.0 - p };
        }
        total += w;
        for (i, b) in bits.iter().enumerate() {
            if *b {
                marg[i] += w;
            }
        }
    }
    marg.iter().map(|m| m / total).collect()
}

/// Central finite difference of `f` at `x`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditioning_scalar_case() {
        let h = DMatrix::identity(1, 1);
        let (m, c) = gaussian_conditioning(
            &h,
            &DVector::from_element(1, 2.0),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            &DMatrix::identity(1, 1),
        );
        assert!((m[0] - 1.0).abs() < 1e-15 && (c[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_of_polynomial() {
        let d = central_difference(|x| x * x * x, 2.0, 1e-4);
        assert!((d - 12.0).abs() < 1e-7);
    }
}
