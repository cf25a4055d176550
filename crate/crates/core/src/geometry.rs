//! Uniform planar array geometry and near-field steering vectors.
//!
//! Antennas are enumerated x-major inside each z row: flat index
//! `m = (m_z - 1) * M_x + (m_x - 1)` for one-based `(m_x, m_z)`. Every
//! dictionary, visibility lift and sub-array partition in the crate uses
//! this ordering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Propagation speed used to derive the carrier wavelength (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Geometry of a half-wavelength UPA split into `k_x × k_z` sub-arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_x: usize,
    pub m_z: usize,
    pub k_x: usize,
    pub k_z: usize,
    pub n_x: usize,
    pub n_z: usize,
    pub carrier_hz: f64,
    pub spacing_m: f64,
    pub wavelength_m: f64,
    pub aperture_m: f64,
}

impl ArrayConfig {
    /// Builds a half-wavelength array of `m_x × m_z` antennas grouped into
    /// `k_x × k_z` equally sized sub-arrays.
    pub fn new(m_x: usize, m_z: usize, k_x: usize, k_z: usize, carrier_hz: f64) -> Result<Self> {
        if m_x == 0 || m_z == 0 || k_x == 0 || k_z == 0 {
            return Err(invalid("array and sub-array counts must be positive"));
        }
        if !m_x.is_multiple_of(k_x) || !m_z.is_multiple_of(k_z) {
            return Err(invalid(format!(
                "{m_x}x{m_z} antennas cannot be split into {k_x}x{k_z} equal sub-arrays"
            )));
        }
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(invalid("carrier frequency must be positive"));
        }
        let wavelength_m = SPEED_OF_LIGHT / carrier_hz;
        let spacing_m = wavelength_m / 2.0;
        let aperture_m = (((m_x - 1).pow(2) + (m_z - 1).pow(2)) as f64).sqrt() * spacing_m;
        Ok(Self {
            m_x,
            m_z,
            k_x,
            k_z,
            n_x: m_x / k_x,
            n_z: m_z / k_z,
            carrier_hz,
            spacing_m,
            wavelength_m,
            aperture_m,
        })
    }

    /// Total antenna count M.
    pub fn num_antennas(&self) -> usize {
        self.m_x * self.m_z
    }

    /// Number of sub-arrays K.
    pub fn num_subarrays(&self) -> usize {
        self.k_x * self.k_z
    }

    /// Antennas per sub-array N.
    pub fn subarray_size(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }

    /// Zero-based flat index of the antenna at zero-based `(ix, iz)`.
    #[inline]
    pub fn flat_index(&self, ix: usize, iz: usize) -> usize {
        iz * self.m_x + ix
    }

    /// Centered x offset δ_{m_x}·d of the zero-based column `ix`.
    #[inline]
    pub fn offset_x(&self, ix: usize) -> f64 {
        (ix as f64 - (self.m_x as f64 - 1.0) / 2.0) * self.spacing_m
    }

    /// Centered z offset δ_{m_z}·d of the zero-based row `iz`.
    #[inline]
    pub fn offset_z(&self, iz: usize) -> f64 {
        (iz as f64 - (self.m_z as f64 - 1.0) / 2.0) * self.spacing_m
    }

    fn check_index(&self, m_x_idx: usize, m_z_idx: usize) -> Result<()> {
        if m_x_idx == 0 || m_x_idx > self.m_x || m_z_idx == 0 || m_z_idx > self.m_z {
            return Err(invalid(format!(
                "antenna index ({m_x_idx},{m_z_idx}) outside 1..={} x 1..={}",
                self.m_x, self.m_z
            )));
        }
        Ok(())
    }
}

/// A last-hop scatterer in spherical coordinates, with its direction cosines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererParams {
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub distance_m: f64,
    /// cos θ · sin φ
    pub dir_cos_x: f64,
    /// cos φ
    pub dir_cos_z: f64,
}

impl ScattererParams {
    pub fn from_angles(azimuth_rad: f64, elevation_rad: f64, distance_m: f64) -> Result<Self> {
        if !(distance_m.is_finite() && distance_m > 0.0) {
            return Err(invalid("scatterer distance must be positive"));
        }
        Ok(Self {
            azimuth_rad,
            elevation_rad,
            distance_m,
            dir_cos_x: azimuth_rad.cos() * elevation_rad.sin(),
            dir_cos_z: elevation_rad.cos(),
        })
    }

    /// Builds a scatterer in front of the array (y ≥ 0) from its direction
    /// cosines.
    pub fn from_dir_cos(dir_cos_x: f64, dir_cos_z: f64, distance_m: f64) -> Result<Self> {
        if !(distance_m.is_finite() && distance_m > 0.0) {
            return Err(invalid("scatterer distance must be positive"));
        }
        if dir_cos_x.abs() > 1.0 || dir_cos_z.abs() > 1.0 {
            return Err(invalid("direction cosines must lie in [-1, 1]"));
        }
        if dir_cos_x * dir_cos_x + dir_cos_z * dir_cos_z > 1.0 + 1e-12 {
            return Err(invalid("direction cosines are not realizable"));
        }
        let elevation_rad = dir_cos_z.acos();
        let sin_el = elevation_rad.sin();
        let azimuth_rad = if sin_el > 0.0 {
            (dir_cos_x / sin_el).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        Ok(Self {
            azimuth_rad,
            elevation_rad,
            distance_m,
            dir_cos_x,
            dir_cos_z,
        })
    }

    /// Cartesian position `[r cosθ sinφ, r sinθ sinφ, r cosφ]`.
    pub fn position(&self) -> [f64; 3] {
        let r = self.distance_m;
        [
            r * self.azimuth_rad.cos() * self.elevation_rad.sin(),
            r * self.azimuth_rad.sin() * self.elevation_rad.sin(),
            r * self.elevation_rad.cos(),
        ]
    }
}

/// Coordinates of the one-based antenna `(m_x_idx, m_z_idx)`.
pub fn antenna_position(cfg: &ArrayConfig, m_x_idx: usize, m_z_idx: usize) -> Result<[f64; 3]> {
    cfg.check_index(m_x_idx, m_z_idx)?;
    Ok([cfg.offset_x(m_x_idx - 1), 0.0, cfg.offset_z(m_z_idx - 1)])
}

/// Exact scatterer-to-antenna distance.
pub fn exact_distance(
    cfg: &ArrayConfig,
    s: &ScattererParams,
    m_x_idx: usize,
    m_z_idx: usize,
) -> Result<f64> {
    cfg.check_index(m_x_idx, m_z_idx)?;
    Ok(exact_distance_unchecked(
        s,
        cfg.offset_x(m_x_idx - 1),
        cfg.offset_z(m_z_idx - 1),
    ))
}

#[inline]
fn exact_distance_unchecked(s: &ScattererParams, dx: f64, dz: f64) -> f64 {
    let r = s.distance_m;
    let sq = r * r + dx * dx + dz * dz - 2.0 * r * dx * s.dir_cos_x - 2.0 * r * dz * s.dir_cos_z;
    sq.max(0.0).sqrt()
}

/// Uniform spherical wave steering vector with exact per-antenna distances.
pub fn steering_exact(cfg: &ArrayConfig, s: &ScattererParams) -> Vec<Complex64> {
    let k = cfg.wavenumber();
    let scale = 1.0 / (cfg.num_antennas() as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.num_antennas());
    for iz in 0..cfg.m_z {
        let dz = cfg.offset_z(iz);
        for ix in 0..cfg.m_x {
            let dist = exact_distance_unchecked(s, cfg.offset_x(ix), dz);
            out.push(Complex64::from_polar(scale, -k * (dist - s.distance_m)));
        }
    }
    out
}

/// Per-axis Fresnel phase factor `exp(-jk(-δd·u + δ²d²(1-u²)·inv_r/2))`.
pub(crate) fn fresnel_axis(
    k: f64,
    offsets: impl Iterator<Item = f64>,
    dir_cos: f64,
    inv_r: f64,
) -> Vec<Complex64> {
    offsets
        .map(|o| {
            let phase = -o * dir_cos + o * o * (1.0 - dir_cos * dir_cos) * inv_r / 2.0;
            Complex64::from_polar(1.0, -k * phase)
        })
        .collect()
}

/// Fresnel-approximate steering vector in direction-cosine / inverse-distance
/// form. Shared by the dictionary and the grid refinement.
pub fn steering_fresnel_raw(
    cfg: &ArrayConfig,
    dir_cos_x: f64,
    dir_cos_z: f64,
    inv_r: f64,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); cfg.num_antennas()];
    fill_steering_fresnel(cfg, dir_cos_x, dir_cos_z, inv_r, &mut out);
    out
}

/// Writes the Fresnel steering vector into `out` (length M).
pub(crate) fn fill_steering_fresnel(
    cfg: &ArrayConfig,
    dir_cos_x: f64,
    dir_cos_z: f64,
    inv_r: f64,
    out: &mut [Complex64],
) {
    let k = cfg.wavenumber();
    let scale = 1.0 / (cfg.num_antennas() as f64).sqrt();
    let ax = fresnel_axis(k, (0..cfg.m_x).map(|i| cfg.offset_x(i)), dir_cos_x, inv_r);
    let az = fresnel_axis(k, (0..cfg.m_z).map(|i| cfg.offset_z(i)), dir_cos_z, inv_r);
    for (iz, zf) in az.iter().enumerate() {
        let zs = zf * scale;
        let row = &mut out[iz * cfg.m_x..(iz + 1) * cfg.m_x];
        for (o, xf) in row.iter_mut().zip(&ax) {
            *o = zs * xf;
        }
    }
}

/// `(1/√M) a_z(φ̃, r) ⊗ a_x(ϑ, r)` under the Fresnel approximation.
pub fn steering_fresnel(cfg: &ArrayConfig, s: &ScattererParams) -> Vec<Complex64> {
    steering_fresnel_raw(cfg, s.dir_cos_x, s.dir_cos_z, 1.0 / s.distance_m)
}

/// Rayleigh distance `2D²/λ`.
pub fn rayleigh_distance(cfg: &ArrayConfig) -> f64 {
    2.0 * cfg.aperture_m * cfg.aperture_m / cfg.wavelength_m
}

/// Fresnel distance `0.5·sqrt(D³/λ)`.
pub fn fresnel_distance(cfg: &ArrayConfig) -> f64 {
    0.5 * (cfg.aperture_m.powi(3) / cfg.wavelength_m).sqrt()
}
