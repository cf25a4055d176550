//! VR Markov prior and hierarchical sparse prior of the polar-domain gains.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::grid::VisibilityMap;

/// Transition probabilities of the 2D Markov VR model.
///
/// `p01` is `P(v = 1 | neighbour = 0)` and `p10` is `P(v = 0 | neighbour = 1)`
/// along the named axis. The x axis runs over `k_x` (rows of the mask), the
/// z axis over `k_z` (columns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Markov2DParams {
    pub p01_x: f64,
    pub p10_x: f64,
    pub p01_z: f64,
    pub p10_z: f64,
    pub kappa: f64,
}

/// Transition table along one axis: `t[prev][next]`.
pub type Transition = [[f64; 2]; 2];

impl Markov2DParams {
    /// Direct construction; every probability must lie in `[0, 1]`.
    pub fn new(p01_x: f64, p10_x: f64, p01_z: f64, p10_z: f64, kappa: f64) -> Result<Self> {
        for (name, v) in [
            ("p01_x", p01_x),
            ("p10_x", p10_x),
            ("p01_z", p01_z),
            ("p10_z", p10_z),
            ("kappa", kappa),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} is not a probability")));
            }
        }
        Ok(Self { p01_x, p10_x, p01_z, p10_z, kappa })
    }

    pub fn p11_x(&self) -> f64 {
        1.0 - self.p10_x
    }

    pub fn p00_x(&self) -> f64 {
        1.0 - self.p01_x
    }

    pub fn p11_z(&self) -> f64 {
        1.0 - self.p10_z
    }

    pub fn p00_z(&self) -> f64 {
        1.0 - self.p01_z
    }

    pub fn transition_x(&self) -> Transition {
        [[self.p00_x(), self.p01_x], [self.p10_x, self.p11_x()]]
    }

    pub fn transition_z(&self) -> Transition {
        [[self.p00_z(), self.p01_z], [self.p10_z, self.p11_z()]]
    }
}

/// Solves `p01·(1−κ) = p10·κ` on each axis.
pub fn calibrate_markov(kappa: f64, p10_x: f64, p10_z: f64) -> Result<Markov2DParams> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(invalid(format!("kappa = {kappa} must lie in (0, 1)")));
    }
    for v in [p10_x, p10_z] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(format!("p10 = {v} must lie in (0, 1)")));
        }
    }
    let ratio = kappa / (1.0 - kappa);
    let (p01_x, p01_z) = (p10_x * ratio, p10_z * ratio);
    for v in [p01_x, p01_z] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InfeasibleParameters(format!(
                "stationarity at kappa = {kappa} needs p01 = {v}"
            )));
        }
    }
    Markov2DParams::new(p01_x, p10_x, p01_z, p10_z, kappa)
}

fn ln(p: f64) -> f64 {
    if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

fn check_dims(params: &Markov2DParams, mask: &VisibilityMap) {
    let _ = params;
    debug_assert!(mask.k_x >= 1 && mask.k_z >= 1);
}

/// Log of the raster factorization of the VR prior: the corner marginal, one
/// x-transition factor for every entry with an x predecessor, and one
/// z-transition factor for every entry with a z predecessor.
///
/// This is the factor graph the VR detector runs sum-product on. Interior
/// entries carry two conditional factors, so the product is not normalized
/// on lattices with both dimensions above one; see [`raster_log_prob`] for
/// the normalized sampling law.
pub fn markov2d_log_prior(params: &Markov2DParams, mask: &VisibilityMap) -> f64 {
    check_dims(params, mask);
    let tx = params.transition_x();
    let tz = params.transition_z();
    let b = |kx, kz| mask.get(kx, kz) as usize;
    let mut lp = if mask.get(0, 0) { ln(params.kappa) } else { ln(1.0 - params.kappa) };
    for kz in 0..mask.k_z {
        for kx in 1..mask.k_x {
            lp += ln(tx[b(kx - 1, kz)][b(kx, kz)]);
        }
    }
    for kz in 1..mask.k_z {
        for kx in 0..mask.k_x {
            lp += ln(tz[b(kx, kz - 1)][b(kx, kz)]);
        }
    }
    lp
}

/// Conditional `P(v = 1)` for a raster-scan entry given its x predecessor
/// (`up`) and z predecessor (`left`), combining both factors by product and
/// renormalization.
pub fn raster_conditional_one(params: &Markov2DParams, up: Option<bool>, left: Option<bool>) -> f64 {
    let tx = params.transition_x();
    let tz = params.transition_z();
    let mut w = [1.0, 1.0];
    if up.is_none() && left.is_none() {
        return params.kappa;
    }
    if let Some(u) = up {
        w[0] *= tx[u as usize][0];
        w[1] *= tx[u as usize][1];
    }
    if let Some(l) = left {
        w[0] *= tz[l as usize][0];
        w[1] *= tz[l as usize][1];
    }
    let z = w[0] + w[1];
    if z == 0.0 {
        // contradictory neighbours under degenerate transitions
        params.kappa
    } else {
        w[1] / z
    }
}

/// Log-probability of `mask` under the raster-scan sampling law (normalized).
/// Coincides with [`markov2d_log_prior`] whenever `k_x == 1` or `k_z == 1`.
pub fn raster_log_prob(params: &Markov2DParams, mask: &VisibilityMap) -> f64 {
    let mut lp = 0.0;
    for kz in 0..mask.k_z {
        for kx in 0..mask.k_x {
            let up = (kx > 0).then(|| mask.get(kx - 1, kz));
            let left = (kz > 0).then(|| mask.get(kx, kz - 1));
            let p1 = raster_conditional_one(params, up, left);
            lp += if mask.get(kx, kz) { ln(p1) } else { ln(1.0 - p1) };
        }
    }
    lp
}

/// Parameters of the hierarchical sparse prior `s → ρ → x` and the noise
/// precision prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalPriorParams {
    /// Gamma shape/rate of an active precision.
    pub a: f64,
    pub b: f64,
    /// Gamma shape/rate of an inactive precision.
    pub a_bar: f64,
    pub b_bar: f64,
    /// Gamma shape/rate of the noise precision.
    pub c: f64,
    pub d: f64,
    /// Support probabilities λ_q.
    pub lambda: Vec<f64>,
}

impl HierarchicalPriorParams {
    /// Default constants: active precision mean 1, inactive precision mean
    /// 1e5, diffuse noise prior, `λ = min(0.5, 2L/Q)`.
    pub fn with_defaults(q: usize, expected_paths: usize) -> Self {
        let lam = (2.0 * expected_paths as f64 / q as f64).min(0.5);
        Self {
            a: 1.0,
            b: 1.0,
            a_bar: 1.0,
            b_bar: 1e-5,
            c: 1e-6,
            d: 1e-6,
            lambda: vec![lam; q],
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("a_bar", self.a_bar),
            ("b_bar", self.b_bar),
            ("c", self.c),
            ("d", self.d),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("prior parameter {name} = {v} must be positive")));
            }
        }
        if self.lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(invalid("support probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Prior mean of ρ_q, mixing the two Gamma branches by λ_q.
    pub fn mean_precision(&self, q: usize) -> f64 {
        let l = self.lambda[q];
        l * self.a / self.b + (1.0 - l) * self.a_bar / self.b_bar
    }
}

/// `ln Ga(x; shape, rate)`
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `ln p(s) = Σ s ln λ + (1−s) ln(1−λ)`
pub fn support_logpmf(lambda: &[f64], s: &[bool]) -> f64 {
    lambda
        .iter()
        .zip(s)
        .map(|(&l, &on)| if on { ln(l) } else { ln(1.0 - l) })
        .sum()
}

/// `ln p(ρ | s)`
pub fn precision_logpdf(params: &HierarchicalPriorParams, rho: &[f64], s: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    for (&r, &on) in rho.iter().zip(s) {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("precision {r} must be positive")));
        }
        total += if on {
            gamma_logpdf(r, params.a, params.b)
        } else {
            gamma_logpdf(r, params.a_bar, params.b_bar)
        };
    }
    Ok(total)
}

/// `ln p(x | ρ) = Σ ln CN(x_q; 0, 1/ρ_q)`
pub fn gain_logpdf(x: &[Complex64], rho: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (xi, &r) in x.iter().zip(rho) {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("precision {r} must be positive")));
        }
        total += (r / PI).ln() - r * xi.norm_sqr();
    }
    Ok(total)
}

/// `ln Ga(γ; c, d)`
pub fn noise_logpdf(c: f64, d: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("noise precision {gamma} must be positive")));
    }
    Ok(gamma_logpdf(gamma, c, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_masks(k_x: usize, k_z: usize) -> impl Iterator<Item = VisibilityMap> {
        let n = k_x * k_z;
        (0..1usize << n).map(move |code| {
            VisibilityMap::new(k_x, k_z, (0..n).map(|i| code >> i & 1 == 1).collect()).unwrap()
        })
    }

    #[test]
    fn calibration_solves_stationarity() {
        let p = calibrate_markov(0.5, 0.3, 0.2).unwrap();
        assert!((p.p01_x - 0.3).abs() < 1e-15 && (p.p01_z - 0.2).abs() < 1e-15);
        let p = calibrate_markov(0.25, 0.3, 0.3).unwrap();
        assert!((p.p01_x - 0.1).abs() < 1e-15);
        assert!((p.p01_x * 0.75 - p.p10_x * 0.25).abs() < 1e-15);
        assert!((p.p11_x() - 0.7).abs() < 1e-15 && (p.p00_x() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn calibration_rejects_infeasible() {
        assert!(matches!(
            calibrate_markov(0.8, 0.5, 0.1),
            Err(Error::InfeasibleParameters(_))
        ));
        assert!(calibrate_markov(0.0, 0.3, 0.3).is_err());
        assert!(calibrate_markov(0.5, 1.0, 0.3).is_err());
    }

    #[test]
    fn log_prior_small_cases() {
        let p = calibrate_markov(0.4, 0.3, 0.2).unwrap();
        let one = VisibilityMap::all_ones(1, 1);
        assert!((markov2d_log_prior(&p, &one) - 0.4f64.ln()).abs() < 1e-15);
        let two = VisibilityMap::all_ones(2, 1);
        assert!((markov2d_log_prior(&p, &two) - (0.4f64.ln() + 0.7f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn chains_normalize_and_agree_with_raster_law() {
        let p = calibrate_markov(0.3, 0.25, 0.4).unwrap();
        for (kx, kz) in [(1, 1), (4, 1), (1, 5), (6, 1)] {
            let mut total = 0.0;
            for m in all_masks(kx, kz) {
                let lp = markov2d_log_prior(&p, &m);
                assert!((lp - raster_log_prob(&p, &m)).abs() < 1e-12);
                total += lp.exp();
            }
            assert!((total - 1.0).abs() < 1e-12, "{kx}x{kz}: {total}");
        }
    }

    #[test]
    fn raster_law_normalizes_on_lattices() {
        let p = calibrate_markov(0.5, 0.3, 0.2).unwrap();
        for (kx, kz) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            let total: f64 = all_masks(kx, kz).map(|m| raster_log_prob(&p, &m).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "{kx}x{kz}: {total}");
        }
    }

    #[test]
    fn factor_product_deficit_on_lattices_is_reported() {
        // The factor product double-counts interior entries; measure how far
        // from one it sums so the gap is visible in test output.
        let p = calibrate_markov(0.5, 0.3, 0.3).unwrap();
        for (kx, kz) in [(2, 2), (2, 3), (3, 3)] {
            let total: f64 = all_masks(kx, kz).map(|m| markov2d_log_prior(&p, &m).exp()).sum();
            println!("factor-product mass on {kx}x{kz} lattice: {total:.6} (deficit {:.6})", 1.0 - total);
            assert!(total > 0.0 && total < 1.0);
        }
    }

    #[test]
    fn support_and_gain_densities() {
        let lam = vec![0.5; 6];
        for code in 0..64u32 {
            let s: Vec<bool> = (0..6).map(|i| code >> i & 1 == 1).collect();
            assert!((support_logpmf(&lam, &s) + 6.0 * 2f64.ln()).abs() < 1e-12);
        }
        let rho = [2.0, 0.5];
        let g = gain_logpdf(&[Complex64::new(0.0, 0.0); 2], &rho).unwrap();
        assert!((g - ((2.0 / PI).ln() + (0.5 / PI).ln())).abs() < 1e-12);
        assert!(gain_logpdf(&[Complex64::new(0.0, 0.0)], &[0.0]).is_err());
        assert!(noise_logpdf(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn precision_density_integrates_to_one() {
        let params = HierarchicalPriorParams {
            a: 2.5,
            b: 1.5,
            a_bar: 3.0,
            b_bar: 0.05,
            c: 1.0,
            d: 1.0,
            lambda: vec![0.5],
        };
        for s in [true, false] {
            // integrate in log-space: ρ = e^t, dρ = e^t dt
            let (lo, hi, n) = (-20.0f64, 8.0f64, 200_000);
            let h = (hi - lo) / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let t = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                total += w * (precision_logpdf(&params, &[t.exp()], &[s]).unwrap() + t).exp();
            }
            total *= h;
            assert!((total - 1.0).abs() < 1e-6, "s={s}: {total}");
        }
    }

    #[test]
    fn default_prior_orders() {
        let p = HierarchicalPriorParams::with_defaults(1024, 4);
        p.validate().unwrap();
        assert!(p.a / p.b <= 10.0 && p.a_bar / p.b_bar >= 1e4);
        assert!((p.lambda[0] - 8.0 / 1024.0).abs() < 1e-15);
        assert_eq!(HierarchicalPriorParams::with_defaults(4, 4).lambda[0], 0.5);
    }
}
