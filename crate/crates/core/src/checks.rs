//! Quick oracle checks on small random instances, used by the CLI.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ep::{lattice_sum_product, lmmse_module_a, GaussMoments};
use crate::geometry::{fresnel_distance, ArrayConfig};
use crate::grid::{build_fixed_grid, sensing_matrix, GridPoint, VisibilityMap};
use crate::ifvbi::{run_ifvbi, IfvbiConfig};
use crate::linalg::{norm_sqr, CMatrix, SensingMatrix};
use crate::oracles::{central_difference, exact_vbi_mean, gaussian_conditioning, vr_marginals_enumeration};
use crate::priors::{calibrate_markov, HierarchicalPriorParams};
use crate::refine::RefineProblem;
use crate::scene::{observe, rng_from, sample_scene, GainLaw};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check { name, passed: worst <= tol, detail: format!("worst {worst:.3e} (tol {tol:.0e})") }
}

fn cn<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d / norm_sqr(b)).sqrt()
}

/// IF-VBI fixed point against the dense-inverse posterior mean at the same
/// hyperparameters.
pub fn ifvbi_fixed_point(seeds: u64) -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = rng_from(1000 + seed);
        let (m, q) = (32, 16);
        let f = CMatrix::from_fn(m, q, |_, _| cn(&mut rng) / (m as f64).sqrt());
        let mut x = vec![Complex64::new(0.0, 0.0); q];
        for k in 0..3 {
            x[(seed as usize + 5 * k) % q] = cn(&mut rng);
        }
        let f = SensingMatrix::new(f);
        let h = f.apply(&x);
        let sigma = (norm_sqr(&h) / m as f64 / 100.0).sqrt();
        let y: Vec<Complex64> = h.iter().map(|v| v + cn(&mut rng) * sigma).collect();
        let priors = HierarchicalPriorParams::with_defaults(q, 3);
        let cfg = IfvbiConfig { max_iter: 20_000, tol: 1e-12, ..IfvbiConfig::default() };
        let Ok(out) = run_ifvbi(&f, &y, &priors, &cfg) else {
            return Check { name: "ifvbi-fixed-point", passed: false, detail: "estimator failed".into() };
        };
        let rho: Vec<f64> = (0..q).map(|i| out.state.rho_mean(i)).collect();
        let want = exact_vbi_mean(f.matrix(), &y, out.gamma_hat, &rho);
        worst = worst.max(rel_err(&out.x_hat, &want));
    }
    check("ifvbi-fixed-point", worst, 1e-3)
}

/// Sum-product on chains against exhaustive enumeration.
pub fn module_b_chains(draws: usize) -> Check {
    let mut rng = rng_from(2000);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < draws {
        let Ok(p) = calibrate_markov(rng.random_range(0.2..0.8), rng.random_range(0.05..0.5), rng.random_range(0.05..0.5))
        else {
            continue;
        };
        done += 1;
        for (kx, kz) in [(1, 4), (4, 1)] {
            let pi1: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
            let got = lattice_sum_product(&p, kx, kz, &pi1, 10).posterior;
            let want = vr_marginals_enumeration(&p, kx, kz, &pi1);
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    check("module-b-chains", worst, 1e-10)
}

/// Module A posterior against joint-Gaussian conditioning.
pub fn module_a_conditioning(draws: usize) -> Check {
    let mut rng = rng_from(3000);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let h = DMatrix::from_fn(4, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pri = GaussMoments {
            mean: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            var: (0..3).map(|_| rng.random_range(0.1..2.0)).collect(),
        };
        let prec = rng.random_range(0.5..20.0);
        let Ok((post, _)) = lmmse_module_a(&h, &y, prec, &pri, &pri) else {
            return Check { name: "module-a-conditioning", passed: false, detail: "LMMSE failed".into() };
        };
        let (mean, cov) = gaussian_conditioning(
            &h,
            &y,
            &DVector::from_vec(pri.mean.clone()),
            &DMatrix::from_diagonal(&DVector::from_vec(pri.var.clone())),
            &(DMatrix::identity(4, 4) / prec),
        );
        for i in 0..3 {
            worst = worst.max((post.mean[i] - mean[i]).abs()).max((post.var[i] - cov[(i, i)]).abs());
        }
    }
    check("module-a-conditioning", worst, 1e-10)
}

/// Analytic grid gradient against central differences (step 1e-6) on
/// sampled scenes: the active points are the truth-nearest grid points,
/// moved to random positions inside their cells, weighted by the true gains.
pub fn grid_gradient(draws: usize) -> Check {
    let cfg = ArrayConfig::new(16, 4, 4, 2, 30e9).expect("valid array");
    let base = build_fixed_grid(&cfg, 8, 4, 3, 2.0 * fresnel_distance(&cfg)).expect("valid grid");
    let markov = calibrate_markov(0.5, 0.2, 0.2).expect("feasible prior");
    let mut rng = rng_from(4000);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < draws {
        let seed = rng.random::<u64>();
        let Ok(scene) = sample_scene(&cfg, &base, 3, GainLaw::ComplexGaussian, &markov, seed) else {
            continue;
        };
        let Ok(obs) = observe(&scene, rng.random_range(0.0..20.0), seed ^ 1) else {
            continue;
        };
        done += 1;
        let mut grid = base.clone();
        let mut masks: Vec<VisibilityMap> = (0..grid.len()).map(|_| VisibilityMap::all_ones(4, 2)).collect();
        let mut x = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (path, &q) in scene.paths.iter().zip(&scene.truth_grid_index) {
            let cell = grid.cell_bounds(q);
            let c: [f64; 3] = std::array::from_fn(|k| rng.random_range(cell[k].0..cell[k].1));
            grid.points[q] = GridPoint::from_coords(c);
            masks[q] = path.vr.clone();
            x[q] = path.gain;
        }
        let Ok(a) = sensing_matrix(&cfg, &grid, &masks) else {
            return Check { name: "grid-gradient", passed: false, detail: "sensing matrix failed".into() };
        };
        let f = SensingMatrix::new(a);
        let prob = RefineProblem::new(&cfg, &obs.y, &f, &masks, &x, obs.noise_precision, &scene.truth_grid_index);
        let pts: Vec<GridPoint> = prob.active().iter().map(|&q| grid.points[q]).collect();
        let g = prob.gradient(&pts);
        for i in 0..pts.len() {
            for k in 0..3 {
                let fd = central_difference(
                    |t| {
                        let mut p = pts.clone();
                        let mut c = p[i].coords();
                        c[k] = t;
                        p[i] = GridPoint::from_coords(c);
                        prob.value(&p)
                    },
                    pts[i].coords()[k],
                    1e-6,
                );
                let scale = g[i][k].abs().max(fd.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((g[i][k] - fd).abs() / scale);
            }
        }
    }
    check("grid-gradient", worst, 1e-5)
}

pub fn run_suite() -> Vec<Check> {
    vec![ifvbi_fixed_point(5), module_b_chains(100), module_a_conditioning(100), grid_gradient(20)]
}
