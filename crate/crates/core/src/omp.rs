//! Sub-array-wise OMP baseline: each sub-array estimates its own channel
//! independently on the row-restricted dictionary.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ep::subarray_partition;
use crate::error::{Error, Result};
use crate::geometry::ArrayConfig;
use crate::grid::{dictionary, sensing_matrix, GridPoint, PolarGrid, VisibilityMap};
use crate::linalg::{norm_sqr, CMatrix, SensingMatrix};
use crate::refine::{refine_step, GridRefineConfig, RefineProblem};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmpConfig {
    /// Atom cap per sub-array.
    pub max_atoms: usize,
    /// Refine/refit rounds after the greedy stage.
    pub refine_steps: usize,
    pub refine: GridRefineConfig,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self { max_atoms: 8, refine_steps: 10, refine: GridRefineConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct OmpSelection {
    pub support: Vec<usize>,
    pub coeffs: Vec<Complex64>,
    /// `‖r‖²` after each greedy step.
    pub residual_energy: Vec<f64>,
    pub residual: Vec<Complex64>,
}

/// Least-squares coefficients of `y` on the columns of `a` (normal equations).
pub fn least_squares(a: &CMatrix, y: &[Complex64]) -> Result<Vec<Complex64>> {
    let g = a.adjoint() * a;
    let b = a.adjoint() * DVector::from_column_slice(y);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numeric("selected atoms are linearly dependent".into()))?;
    Ok(chol.solve(&b).iter().cloned().collect())
}

/// Greedy selection on `a` (rows already restricted) until
/// `‖r‖² ≤ noise_floor` or `max_atoms` atoms.
pub fn omp_select(a: &CMatrix, y: &[Complex64], noise_floor: f64, max_atoms: usize) -> Result<OmpSelection> {
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = Vec::new();
    let mut residual = y.to_vec();
    let mut history = Vec::new();
    while support.len() < max_atoms && norm_sqr(&residual) > noise_floor {
        let r = DVector::from_column_slice(&residual);
        let corr = a.ad_mul(&r);
        let best = (0..a.ncols())
            .filter(|q| !support.contains(q))
            .max_by(|&i, &j| corr[i].norm().total_cmp(&corr[j].norm()));
        let Some(best) = best else { break };
        if corr[best].norm() == 0.0 {
            break;
        }
        support.push(best);
        let sub = a.select_columns(&support);
        coeffs = least_squares(&sub, y)?;
        let fit = &sub * DVector::from_column_slice(&coeffs);
        residual = y.iter().zip(fit.iter()).map(|(a, b)| a - b).collect();
        history.push(norm_sqr(&residual));
    }
    Ok(OmpSelection { support, coeffs, residual_energy: history, residual })
}

#[derive(Debug, Clone)]
pub struct SubarrayEstimate {
    /// Fixed-grid indices of the selected atoms.
    pub atoms: Vec<usize>,
    /// Refined positions of the atoms.
    pub points: Vec<GridPoint>,
    pub gains: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct OmpOutput {
    pub h_hat: Vec<Complex64>,
    /// `V̂_q[k] = 1` iff sub-array `k` selected atom `q`.
    pub masks: Vec<VisibilityMap>,
    pub subarrays: Vec<SubarrayEstimate>,
}

fn restrict_rows(a: &CMatrix, rows: &[usize]) -> CMatrix {
    a.select_rows(rows)
}

/// OMP per sub-array on the fixed grid, then gradient refinement of the
/// selected atoms with least-squares refits. `noise_precision` sets the
/// stopping floor `N / γ`.
pub fn run_subarray_omp(
    cfg: &ArrayConfig,
    y: &[Complex64],
    grid: &PolarGrid,
    noise_precision: f64,
    omp: &OmpConfig,
) -> Result<OmpOutput> {
    if !(noise_precision > 0.0) {
        return Err(Error::InvalidArgument("noise precision must be positive".into()));
    }
    let mut fixed = grid.clone();
    fixed.reset();
    let a = dictionary(cfg, &fixed);
    let sets = subarray_partition(cfg);
    let mut h_hat = vec![ZERO; cfg.num_antennas()];
    let mut masks = vec![VisibilityMap::zeros(cfg.k_x, cfg.k_z); fixed.len()];
    let mut subarrays = Vec::with_capacity(sets.len());
    for (k, rows) in sets.iter().enumerate() {
        let (kx, kz) = (k % cfg.k_x, k / cfg.k_x);
        let yk: Vec<Complex64> = rows.iter().map(|&m| y[m]).collect();
        let floor = rows.len() as f64 / noise_precision;
        let sel = omp_select(&restrict_rows(&a, rows), &yk, floor, omp.max_atoms)?;
        for &q in &sel.support {
            masks[q].set(kx, kz, true);
        }
        if sel.support.is_empty() {
            subarrays.push(SubarrayEstimate { atoms: vec![], points: vec![], gains: vec![] });
            continue;
        }

        // refinement on a grid holding only the selected atoms, visible in
        // sub-array k alone; y is zeroed outside the sub-array
        let mut sub = fixed.subset(&sel.support);
        let mut one = VisibilityMap::zeros(cfg.k_x, cfg.k_z);
        one.set(kx, kz, true);
        let sub_masks = vec![one; sel.support.len()];
        let mut y_local = vec![ZERO; cfg.num_antennas()];
        for &m in rows {
            y_local[m] = y[m];
        }
        let mut gains = sel.coeffs.clone();
        let all: Vec<usize> = (0..sel.support.len()).collect();
        for _ in 0..omp.refine_steps {
            let f = SensingMatrix::new(sensing_matrix(cfg, &sub, &sub_masks)?);
            let prob = RefineProblem::new(cfg, &y_local, &f, &sub_masks, &gains, noise_precision, &all);
            refine_step(&prob, &mut sub, &omp.refine)?;
            let cols = restrict_rows(&sensing_matrix(cfg, &sub, &sub_masks)?, rows);
            gains = least_squares(&cols, &yk)?;
        }
        let cols = restrict_rows(&sensing_matrix(cfg, &sub, &sub_masks)?, rows);
        let fit = &cols * DVector::from_column_slice(&gains);
        for (i, &m) in rows.iter().enumerate() {
            h_hat[m] = fit[i];
        }
        subarrays.push(SubarrayEstimate { atoms: sel.support, points: sub.points.clone(), gains });
    }
    Ok(OmpOutput { h_hat, masks, subarrays })
}
