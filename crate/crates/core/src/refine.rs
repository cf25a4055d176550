//! Off-grid refinement of the dynamic polar grid by block gradient ascent.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::ArrayConfig;
use crate::grid::{fill_sensing_column, GridPoint, PolarGrid, VisibilityMap};
use crate::linalg::{axpy, SensingMatrix};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridRefineConfig {
    pub armijo_shrink: f64,
    pub armijo_slope: f64,
    pub max_backtracks: usize,
    /// First trial step per block `(ϑ, φ, 1/r)`; `None` scales the step so the
    /// steepest point moves one trust radius.
    pub initial_steps: Option<[f64; 3]>,
    /// Largest move per call, in fixed-grid cells.
    pub trust_radius: f64,
}

impl Default for GridRefineConfig {
    fn default() -> Self {
        Self {
            armijo_shrink: 0.5,
            armijo_slope: 1e-4,
            max_backtracks: 20,
            initial_steps: None,
            trust_radius: 0.5,
        }
    }
}

impl GridRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(invalid("armijo_shrink must lie in (0, 1)"));
        }
        if !(self.armijo_slope > 0.0 && self.armijo_slope < 1.0) {
            return Err(invalid("armijo_slope must lie in (0, 1)"));
        }
        if !(self.trust_radius > 0.0) {
            return Err(invalid("trust_radius must be positive"));
        }
        Ok(())
    }
}

/// `L = −γ̂‖y − F x̂‖²` with `F = A(Ξ) ⊙ U(V̂)`.
pub fn log_posterior(y: &[Complex64], f: &SensingMatrix, x_hat: &[Complex64], gamma_hat: f64) -> f64 {
    let fx = f.apply(x_hat);
    -gamma_hat * residual_energy(y, &fx)
}

fn residual_energy(y: &[Complex64], fx: &[Complex64]) -> f64 {
    y.iter().zip(fx).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// The refinement objective with every column outside the active set frozen
/// at its value in `f`. Evaluations follow the same column order and
/// arithmetic as [`SensingMatrix::apply`], so a grid accepted here gives the
/// same `L` when the sensing matrix is rebuilt.
pub struct RefineProblem<'a> {
    cfg: &'a ArrayConfig,
    y: &'a [Complex64],
    f: &'a SensingMatrix,
    masks: &'a [VisibilityMap],
    x_hat: &'a [Complex64],
    gamma_hat: f64,
    active: Vec<usize>,
    /// position of each column in `active`, if any
    slot: Vec<Option<usize>>,
}

impl<'a> RefineProblem<'a> {
    pub fn new(
        cfg: &'a ArrayConfig,
        y: &'a [Complex64],
        f: &'a SensingMatrix,
        masks: &'a [VisibilityMap],
        x_hat: &'a [Complex64],
        gamma_hat: f64,
        active: &[usize],
    ) -> Self {
        let mut slot = vec![None; f.ncols()];
        let mut kept = Vec::new();
        for &q in active {
            // points with empty masks or zero weight have no gradient
            if !masks[q].is_empty() && x_hat[q] != ZERO && slot[q].is_none() {
                slot[q] = Some(kept.len());
                kept.push(q);
            }
        }
        Self { cfg, y, f, masks, x_hat, gamma_hat, active: kept, slot }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn columns(&self, points: &[GridPoint]) -> Vec<Vec<Complex64>> {
        self.active
            .iter()
            .zip(points)
            .map(|(&q, p)| {
                let mut col = vec![ZERO; self.cfg.num_antennas()];
                fill_sensing_column(self.cfg, p, &self.masks[q], &mut col);
                col
            })
            .collect()
    }

    fn model_output(&self, cols: &[Vec<Complex64>]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.f.nrows()];
        for &q in self.f.live_columns() {
            if self.x_hat[q] != ZERO {
                let col = match self.slot[q] {
                    Some(i) => &cols[i][..],
                    None => self.f.column(q),
                };
                axpy(self.x_hat[q], col, &mut out);
            }
        }
        out
    }

    /// `L` with the active points placed at `points` (same order as
    /// [`Self::active`]).
    pub fn value(&self, points: &[GridPoint]) -> f64 {
        let cols = self.columns(points);
        -self.gamma_hat * residual_energy(self.y, &self.model_output(&cols))
    }

    /// `∂L/∂(ϑ, φ, 1/r)` for every active point.
    pub fn gradient(&self, points: &[GridPoint]) -> Vec<[f64; 3]> {
        let cfg = self.cfg;
        let cols = self.columns(points);
        let fx = self.model_output(&cols);
        let r: Vec<Complex64> = self.y.iter().zip(&fx).map(|(a, b)| a - b).collect();
        let k = cfg.wavenumber();
        let ox: Vec<f64> = (0..cfg.m_x).map(|i| cfg.offset_x(i)).collect();
        let oz: Vec<f64> = (0..cfg.m_z).map(|i| cfg.offset_z(i)).collect();
        self.active
            .iter()
            .zip(points)
            .zip(&cols)
            .map(|((&q, p), col)| {
                let (u, w, s) = (p.dir_cos_x, p.dir_cos_z, p.inv_distance());
                // Σ conj(r_m) f_m · c_m for the three phase derivatives c_m
                let mut acc = [ZERO; 3];
                for iz in 0..cfg.m_z {
                    let dz = -oz[iz] - oz[iz] * oz[iz] * w * s;
                    let sz = oz[iz] * oz[iz] * (1.0 - w * w) / 2.0;
                    for ix in 0..cfg.m_x {
                        let m = iz * cfg.m_x + ix;
                        if col[m] == ZERO {
                            continue;
                        }
                        let t = r[m].conj() * col[m];
                        let dx = -ox[ix] - ox[ix] * ox[ix] * u * s;
                        let sx = ox[ix] * ox[ix] * (1.0 - u * u) / 2.0;
                        acc[0] += t * dx;
                        acc[1] += t * dz;
                        acc[2] += t * (sx + sz);
                    }
                }
                // ∂f = f · (−jk) · c, ∂L = 2γ Re{x_q Σ conj(r) ∂f}
                let scale = Complex64::new(0.0, -k) * self.x_hat[q] * (2.0 * self.gamma_hat);
                [(scale * acc[0]).re, (scale * acc[1]).re, (scale * acc[2]).re]
            })
            .collect()
    }
}

/// Outcome of one refinement call.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub l_before: f64,
    pub l_after: f64,
    /// Whether each block `(ϑ, φ, 1/r)` moved.
    pub accepted: [bool; 3],
}

/// One sweep of projected Armijo ascent over the blocks ϑ, φ, 1/r, each using
/// the freshest values of the others. Each coordinate moves at most
/// `trust_radius` grid cells per call and stays inside the grid's range.
pub fn refine_step(
    problem: &RefineProblem<'_>,
    grid: &mut PolarGrid,
    cfg: &GridRefineConfig,
) -> Result<RefineReport> {
    cfg.validate()?;
    let active = problem.active().to_vec();
    let spacing = grid.spacing();
    let mut points: Vec<GridPoint> = active.iter().map(|&q| grid.points[q]).collect();
    let start: Vec<[f64; 3]> = points.iter().map(|p| p.coords()).collect();
    let range = [(-1.0, 1.0), (-1.0, 1.0), grid.inv_r_range()];
    let boxes: Vec<[(f64, f64); 3]> = start
        .iter()
        .map(|c| {
            let mut b = [(0.0, 0.0); 3];
            for k in 0..3 {
                let reach = cfg.trust_radius * spacing[k];
                let lo = range[k].0.max(c[k] - reach);
                let hi = range[k].1.min(c[k] + reach);
                // a point already outside the range is left in place
                b[k] = if lo <= hi { (lo, hi) } else { (c[k], c[k]) };
            }
            b
        })
        .collect();

    let l_before = problem.value(&points);
    let mut current = l_before;
    let mut accepted = [false; 3];
    if active.is_empty() {
        return Ok(RefineReport { l_before, l_after: l_before, accepted });
    }
    for block in 0..3 {
        let grads = problem.gradient(&points);
        let gmax = grads.iter().map(|g| g[block].abs()).fold(0.0, f64::max);
        if gmax == 0.0 || !gmax.is_finite() {
            continue;
        }
        let mut step = match cfg.initial_steps {
            Some(s) => s[block],
            None => cfg.trust_radius * spacing[block] / gmax,
        };
        for _ in 0..=cfg.max_backtracks {
            let mut trial = points.clone();
            let mut slope = 0.0;
            for (i, p) in trial.iter_mut().enumerate() {
                let mut c = p.coords();
                let (lo, hi) = boxes[i][block];
                let moved = (c[block] + step * grads[i][block]).clamp(lo, hi);
                slope += grads[i][block] * (moved - c[block]);
                c[block] = moved;
                *p = GridPoint::from_coords(c);
            }
            let value = problem.value(&trial);
            if value >= current + cfg.armijo_slope * slope {
                if trial != points {
                    accepted[block] = true;
                }
                points = trial;
                current = value;
                break;
            }
            step *= cfg.armijo_shrink;
        }
    }
    for (&q, p) in active.iter().zip(&points) {
        grid.points[q] = *p;
    }
    Ok(RefineReport { l_before, l_after: current, accepted })
}
