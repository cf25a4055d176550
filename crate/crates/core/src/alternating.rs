//! Alternating MAP outer loop: channel estimation, VR detection and grid
//! refinement in turn.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::ep::{polar_filter, run_structured_ep, EpConfig, VrPrior};
use crate::error::{Error, Result};
use crate::geometry::ArrayConfig;
use crate::grid::{sensing_matrix, GridPoint, PolarGrid, VisibilityMap};
use crate::ifvbi::{run_ifvbi_from, IfvbiConfig};
use crate::linalg::{CMatrix, SensingMatrix};
use crate::metrics::{nmse, vr_error_rate};
use crate::priors::HierarchicalPriorParams;
use crate::refine::{refine_step, GridRefineConfig, RefineProblem};
use crate::scene::ChannelScene;

/// Algorithm variants compared by the experiment driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    GenieAided,
    #[serde(rename = "proposed-2d-markov")]
    Proposed2dMarkov,
    ProposedIid,
    OnGrid,
    SubarrayOmp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::GenieAided,
        Variant::Proposed2dMarkov,
        Variant::ProposedIid,
        Variant::OnGrid,
        Variant::SubarrayOmp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::GenieAided => "genie-aided",
            Variant::Proposed2dMarkov => "proposed-2d-markov",
            Variant::ProposedIid => "proposed-iid",
            Variant::OnGrid => "on-grid",
            Variant::SubarrayOmp => "subarray-omp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingConfig {
    /// Outer iterations `I_out`.
    pub outer_iters: usize,
    pub ifvbi: IfvbiConfig,
    pub ep: EpConfig,
    pub refine: GridRefineConfig,
    pub refine_grid: bool,
    pub update_vr: bool,
    pub vr_prior: VrPrior,
}

impl AlternatingConfig {
    /// Settings of `variant` on top of `self` (which carries the proposed
    /// algorithm's parameters). The OMP baseline does not use this loop.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        match variant {
            Variant::Proposed2dMarkov | Variant::SubarrayOmp => {}
            Variant::ProposedIid => c.vr_prior = VrPrior::Iid { kappa: self.vr_prior.kappa() },
            Variant::OnGrid | Variant::GenieAided => c.refine_grid = false,
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct AlternatingOutput {
    pub x_hat: Vec<Complex64>,
    pub gamma_hat: f64,
    pub masks: Vec<VisibilityMap>,
    pub grid: PolarGrid,
    /// `[A(Ξ̂) ⊙ U(V̂)] x̂` with the operator `x̂` was estimated under.
    pub h_hat: Vec<Complex64>,
    /// Per outer iteration; empty when no truth is supplied.
    pub nmse_trace: Vec<f64>,
    pub vr_trace: Vec<f64>,
    pub omega_sizes: Vec<usize>,
    pub iterations_run: usize,
}

/// Places each path's true parameters at its nearest fixed grid point (the
/// first path wins when two share a point).
pub fn inject_truth(grid: &mut PolarGrid, scene: &ChannelScene) {
    let mut used = Vec::new();
    for (path, &q) in scene.paths.iter().zip(&scene.truth_grid_index) {
        if used.contains(&q) {
            continue;
        }
        used.push(q);
        grid.points[q] = GridPoint {
            dir_cos_x: path.scatterer.dir_cos_x,
            dir_cos_z: path.scatterer.dir_cos_z,
            distance_m: path.scatterer.distance_m,
        };
    }
}

/// Runs `I_out` rounds of IF-VBI → structured EP → grid refinement starting
/// from `V̂_q = 1` and the supplied grid. When `truth` is given, the NMSE and
/// VR error rate are recorded after every round.
pub fn run_alternating_map(
    cfg: &ArrayConfig,
    y: &[Complex64],
    mut grid: PolarGrid,
    priors: &HierarchicalPriorParams,
    alg: &AlternatingConfig,
    truth: Option<&ChannelScene>,
) -> Result<AlternatingOutput> {
    if alg.outer_iters == 0 {
        return Err(Error::InvalidArgument("I_out must be at least 1".into()));
    }
    let q = grid.len();
    let mut masks = vec![VisibilityMap::all_ones(cfg.k_x, cfg.k_z); q];
    let mut bound_vec: Option<Vec<Complex64>> = None;
    let mut state = None;
    let mut nmse_trace = Vec::new();
    let mut vr_trace = Vec::new();
    let mut omega_sizes = Vec::new();
    let mut last = None;
    for _ in 0..alg.outer_iters {
        let f = SensingMatrix::new(sensing_matrix(cfg, &grid, &masks)?);
        // T and z restart every round; the other factors carry over
        let est = run_ifvbi_from(&f, y, priors, &alg.ifvbi, bound_vec.as_deref(), state.as_ref())?;
        if est.bound.t > 0.0 {
            bound_vec = Some(est.bound.vector.clone());
        }
        let h_hat = f.apply(&est.x_hat);
        state = Some(est.state.clone());

        // empty Ω: keep V̂ and Ξ̂ for this round
        let omega = match polar_filter(&est.x_hat, est.gamma_hat, alg.ep.c_thresh) {
            Ok(o) => o,
            Err(Error::EmptySupport) => Vec::new(),
            Err(e) => return Err(e),
        };
        if !omega.is_empty() {
            if alg.update_vr {
                let a = omega_dictionary(cfg, &grid, &omega)?;
                masks = run_structured_ep(cfg, &a, &est.x_hat, est.gamma_hat, y, &alg.vr_prior, &alg.ep)?.masks;
            }
            if alg.refine_grid {
                refine(cfg, y, &mut grid, &masks, &est.x_hat, est.gamma_hat, &omega, &alg.refine)?;
            }
        }
        let omega_size = omega.len();
        omega_sizes.push(omega_size);
        if let Some(scene) = truth {
            nmse_trace.push(nmse(&h_hat, &scene.h)?);
            vr_trace.push(vr_error_rate(scene, &masks));
        }
        last = Some((est.x_hat, est.gamma_hat, h_hat));
    }
    let (x_hat, gamma_hat, h_hat) = last.expect("at least one outer iteration");
    Ok(AlternatingOutput {
        x_hat,
        gamma_hat,
        masks,
        grid,
        h_hat,
        nmse_trace,
        vr_trace,
        omega_sizes,
        iterations_run: alg.outer_iters,
    })
}

/// Dictionary with only the columns in `omega` filled; EP reads nothing else.
fn omega_dictionary(cfg: &ArrayConfig, grid: &PolarGrid, omega: &[usize]) -> Result<CMatrix> {
    let mut masks = vec![VisibilityMap::zeros(cfg.k_x, cfg.k_z); grid.len()];
    for &q in omega {
        masks[q] = VisibilityMap::all_ones(cfg.k_x, cfg.k_z);
    }
    sensing_matrix(cfg, grid, &masks)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    cfg: &ArrayConfig,
    y: &[Complex64],
    grid: &mut PolarGrid,
    masks: &[VisibilityMap],
    x_hat: &[Complex64],
    gamma_hat: f64,
    omega: &[usize],
    rc: &GridRefineConfig,
) -> Result<()> {
    let f = SensingMatrix::new(sensing_matrix(cfg, grid, masks)?);
    let prob = RefineProblem::new(cfg, y, &f, masks, x_hat, gamma_hat, omega);
    refine_step(&prob, grid, rc)?;
    Ok(())
}
