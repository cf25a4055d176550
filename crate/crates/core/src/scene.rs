//! Synthetic ground-truth scenes and noisy observations.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::geometry::{fresnel_distance, steering_exact, ArrayConfig, ScattererParams};
use crate::grid::{PolarGrid, VisibilityMap};
use crate::linalg::norm_sqr;
use crate::priors::{raster_conditional_one, Markov2DParams};

/// Distribution of the path gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainLaw {
    /// `CN(0, 1)`
    #[default]
    ComplexGaussian,
    /// Every gain equals one.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    pub scatterer: ScattererParams,
    pub vr: VisibilityMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScene {
    pub paths: Vec<Path>,
    pub h: Vec<Complex64>,
    pub truth_grid_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<Complex64>,
    pub noise_precision: f64,
    pub snr_db: f64,
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn complex_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

pub(crate) fn sample_vr_with<R: Rng>(params: &Markov2DParams, k_x: usize, k_z: usize, rng: &mut R) -> VisibilityMap {
    let mut mask = VisibilityMap::zeros(k_x, k_z);
    for kz in 0..k_z {
        for kx in 0..k_x {
            let up = (kx > 0).then(|| mask.get(kx - 1, kz));
            let left = (kz > 0).then(|| mask.get(kx, kz - 1));
            let p1 = raster_conditional_one(params, up, left);
            let u: f64 = rng.random();
            mask.set(kx, kz, u < p1);
        }
    }
    mask
}

/// Draws a VR mask by raster scan over the Markov factor graph.
pub fn sample_vr(params: &Markov2DParams, k_x: usize, k_z: usize, rng_seed: u64) -> Result<VisibilityMap> {
    if k_x == 0 || k_z == 0 {
        return Err(invalid("mask dimensions must be positive"));
    }
    Ok(sample_vr_with(params, k_x, k_z, &mut rng_from(rng_seed)))
}

/// `h = Σ_l x_l · a_exact(scatterer_l) ⊙ u_l`
pub fn assemble_channel(cfg: &ArrayConfig, paths: &[Path]) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.num_antennas()];
    for p in paths {
        let a = steering_exact(cfg, &p.scatterer);
        let u = p.vr.lift(cfg);
        for ((hm, am), on) in h.iter_mut().zip(&a).zip(&u) {
            if *on {
                *hm += p.gain * am;
            }
        }
    }
    h
}

/// Draws `l` paths: direction cosines uniform over the realizable disk,
/// distances uniform in `1/r` over the grid's range, VR masks from the
/// Markov prior. Draws in which no path is visible anywhere are redrawn from
/// the same stream (up to a fixed number of attempts).
pub fn sample_scene(
    cfg: &ArrayConfig,
    grid: &PolarGrid,
    l: usize,
    gain_law: GainLaw,
    markov: &Markov2DParams,
    rng_seed: u64,
) -> Result<ChannelScene> {
    if l == 0 {
        return Err(invalid("a scene needs at least one path"));
    }
    let mut rng = rng_from(rng_seed);
    let mut paths = draw_paths(cfg, grid, l, gain_law, markov, &mut rng)?;
    for _ in 1..MAX_SCENE_DRAWS {
        if paths.iter().any(|p| !p.vr.is_empty()) {
            break;
        }
        paths = draw_paths(cfg, grid, l, gain_law, markov, &mut rng)?;
    }
    debug_assert!(paths.iter().all(|p| p.scatterer.distance_m > fresnel_distance(cfg)));
    Ok(scene_from_paths(cfg, grid, paths))
}

const MAX_SCENE_DRAWS: usize = 1000;

fn draw_paths(
    cfg: &ArrayConfig,
    grid: &PolarGrid,
    l: usize,
    gain_law: GainLaw,
    markov: &Markov2DParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Path>> {
    let (s_lo, s_hi) = grid.inv_r_range();
    let mut paths = Vec::with_capacity(l);
    for _ in 0..l {
        let (ux, uz) = loop {
            let ux = rng.random_range(-1.0..=1.0);
            let uz = rng.random_range(-1.0..=1.0);
            if ux * ux + uz * uz <= 1.0 {
                break (ux, uz);
            }
        };
        let s: f64 = rng.random_range(s_lo..=s_hi);
        let scatterer = ScattererParams::from_dir_cos(ux, uz, 1.0 / s)?;
        let gain = match gain_law {
            GainLaw::ComplexGaussian => complex_normal(rng, 1.0),
            GainLaw::Unit => Complex64::new(1.0, 0.0),
        };
        let vr = sample_vr_with(markov, cfg.k_x, cfg.k_z, rng);
        paths.push(Path { gain, scatterer, vr });
    }
    Ok(paths)
}

/// Builds a scene from explicit paths.
pub fn scene_from_paths(cfg: &ArrayConfig, grid: &PolarGrid, paths: Vec<Path>) -> ChannelScene {
    let h = assemble_channel(cfg, &paths);
    let truth_grid_index = paths
        .iter()
        .map(|p| {
            grid.nearest_fixed([
                p.scatterer.dir_cos_x,
                p.scatterer.dir_cos_z,
                1.0 / p.scatterer.distance_m,
            ])
        })
        .collect();
    ChannelScene { paths, h, truth_grid_index }
}

/// `y = h + w` with `γ = M · 10^{snr/10} / ‖h‖²`.
pub fn observe(scene: &ChannelScene, snr_db: f64, rng_seed: u64) -> Result<Observation> {
    let energy = norm_sqr(&scene.h);
    if energy == 0.0 {
        return Err(Error::DegenerateScene("channel has zero energy".into()));
    }
    if snr_db.is_nan() {
        return Err(invalid("snr_db is NaN"));
    }
    let m = scene.h.len() as f64;
    let noise_precision = m * 10f64.powf(snr_db / 10.0) / energy;
    let variance = 1.0 / noise_precision;
    let mut rng = rng_from(rng_seed);
    let y = scene
        .h
        .iter()
        .map(|h| {
            let w = complex_normal(&mut rng, variance);
            if variance == 0.0 {
                *h
            } else {
                h + w
            }
        })
        .collect();
    Ok(Observation { y, noise_precision, snr_db })
}

impl ChannelScene {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scene serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
struct ObservationFile {
    noise_precision: f64,
    snr_db: f64,
    /// `[re_0, im_0, re_1, im_1, ...]`
    y: Vec<f64>,
}

impl Observation {
    pub fn to_json(&self) -> Result<String> {
        let file = ObservationFile {
            noise_precision: self.noise_precision,
            snr_db: self.snr_db,
            y: self.y.iter().flat_map(|c| [c.re, c.im]).collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ObservationFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if !file.y.len().is_multiple_of(2) {
            return Err(Error::Parse("odd number of interleaved values".into()));
        }
        if !(file.noise_precision > 0.0) {
            return Err(Error::Parse("noise precision must be positive".into()));
        }
        Ok(Self {
            y: file.y.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
            noise_precision: file.noise_precision,
            snr_db: file.snr_db,
        })
    }
}
