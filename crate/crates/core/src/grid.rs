//! Polar-domain sampling grid, steering dictionary and visibility lifts.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{fill_steering_fresnel, fresnel_distance, rayleigh_distance, ArrayConfig};
use crate::linalg::CMatrix;

/// One polar-domain sample `(ϑ, φ, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub dir_cos_x: f64,
    pub dir_cos_z: f64,
    pub distance_m: f64,
}

impl GridPoint {
    pub fn inv_distance(&self) -> f64 {
        1.0 / self.distance_m
    }

    /// Coordinates in the refinement parameterization `(ϑ, φ, 1/r)`.
    pub fn coords(&self) -> [f64; 3] {
        [self.dir_cos_x, self.dir_cos_z, self.inv_distance()]
    }

    pub fn from_coords(c: [f64; 3]) -> Self {
        Self {
            dir_cos_x: c[0],
            dir_cos_z: c[1],
            distance_m: 1.0 / c[2],
        }
    }
}

/// Dynamic polar grid Ξ together with its immutable initial copy Ξ̄.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub points: Vec<GridPoint>,
    fixed_points: Vec<GridPoint>,
    pub m1: usize,
    pub m2: usize,
    pub distances_per_angle: Vec<usize>,
    /// `[1/r_max, 1/r_min]`
    inv_r_range: (f64, f64),
    /// Fixed-grid cell widths in `(ϑ, φ, 1/r)`.
    spacing: [f64; 3],
}

/// Uniform samples on `[-1, 1]` including both endpoints.
fn angle_samples(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Builds the fixed grid: `m1 × m2` angle pairs on `[-1,1]²`, each with
/// `n_r` distances spaced uniformly in `1/r` between `1/r_max` and `1/r_min`,
/// where `r_max` is twice the Rayleigh distance.
pub fn build_fixed_grid(
    cfg: &ArrayConfig,
    m1: usize,
    m2: usize,
    n_r: usize,
    r_min: f64,
) -> Result<PolarGrid> {
    if m1 == 0 || m2 == 0 || n_r == 0 {
        return Err(invalid("grid sizes must be positive"));
    }
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(invalid("r_min must be positive"));
    }
    if r_min <= fresnel_distance(cfg) {
        return Err(invalid(format!(
            "r_min = {r_min} m is inside the Fresnel distance {} m",
            fresnel_distance(cfg)
        )));
    }
    let r_max = 2.0 * rayleigh_distance(cfg);
    if r_min >= r_max {
        return Err(invalid("r_min must be below twice the Rayleigh distance"));
    }
    let (s_lo, s_hi) = (1.0 / r_max, 1.0 / r_min);
    let inv_r: Vec<f64> = if n_r == 1 {
        vec![s_lo]
    } else {
        (0..n_r)
            .map(|i| s_lo + (s_hi - s_lo) * i as f64 / (n_r - 1) as f64)
            .collect()
    };
    let ux = angle_samples(m1);
    let uz = angle_samples(m2);
    let mut points = Vec::with_capacity(m1 * m2 * n_r);
    for &x in &ux {
        for &z in &uz {
            for &s in &inv_r {
                points.push(GridPoint {
                    dir_cos_x: x,
                    dir_cos_z: z,
                    distance_m: 1.0 / s,
                });
            }
        }
    }
    let cell = |n: usize, width: f64| if n == 1 { width } else { width / (n - 1) as f64 };
    Ok(PolarGrid {
        fixed_points: points.clone(),
        points,
        m1,
        m2,
        distances_per_angle: vec![n_r; m1 * m2],
        inv_r_range: (s_lo, s_hi),
        spacing: [cell(m1, 2.0), cell(m2, 2.0), cell(n_r, s_hi - s_lo)],
    })
}

impl PolarGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fixed_points(&self) -> &[GridPoint] {
        &self.fixed_points
    }

    pub fn inv_r_range(&self) -> (f64, f64) {
        self.inv_r_range
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Per-coordinate box `[lo, hi]` that point `q` may occupy: its own fixed
    /// cell (half a spacing either side), intersected with the global ranges.
    pub fn cell_bounds(&self, q: usize) -> [(f64, f64); 3] {
        let c = self.fixed_points[q].coords();
        let global = [(-1.0, 1.0), (-1.0, 1.0), self.inv_r_range];
        let mut out = [(0.0, 0.0); 3];
        for k in 0..3 {
            let half = self.spacing[k] / 2.0;
            out[k] = ((c[k] - half).max(global[k].0), (c[k] + half).min(global[k].1));
        }
        out
    }

    /// Index of the fixed point nearest to `(ϑ, φ, 1/r)` under the metric that
    /// measures each coordinate in units of its grid spacing.
    pub fn nearest_fixed(&self, coords: [f64; 3]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (q, p) in self.fixed_points.iter().enumerate() {
            let c = p.coords();
            let d: f64 = (0..3)
                .map(|k| ((c[k] - coords[k]) / self.spacing[k]).powi(2))
                .sum();
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    /// Grid made of the listed points (current and fixed positions), keeping
    /// the cell geometry of `self`.
    pub fn subset(&self, indices: &[usize]) -> PolarGrid {
        PolarGrid {
            points: indices.iter().map(|&q| self.points[q]).collect(),
            fixed_points: indices.iter().map(|&q| self.fixed_points[q]).collect(),
            m1: self.m1,
            m2: self.m2,
            distances_per_angle: self.distances_per_angle.clone(),
            inv_r_range: self.inv_r_range,
            spacing: self.spacing,
        }
    }

    /// Restores every point to its fixed position.
    pub fn reset(&mut self) {
        self.points.clone_from(&self.fixed_points);
    }

    /// Serializes the grid as delimited text: a `#` metadata block followed by
    /// one record per point (current and fixed coordinates).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# m1={}", self.m1);
        let _ = writeln!(s, "# m2={}", self.m2);
        let _ = writeln!(s, "# inv_r_range={} {}", self.inv_r_range.0, self.inv_r_range.1);
        let _ = writeln!(
            s,
            "# spacing={} {} {}",
            self.spacing[0], self.spacing[1], self.spacing[2]
        );
        let counts: Vec<String> = self.distances_per_angle.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "# distances_per_angle={}", counts.join(" "));
        s.push_str("q,dir_cos_x,dir_cos_z,distance_m,fixed_dir_cos_x,fixed_dir_cos_z,fixed_distance_m\n");
        for (q, (p, f)) in self.points.iter().zip(&self.fixed_points).enumerate() {
            let _ = writeln!(
                s,
                "{q},{},{},{},{},{},{}",
                p.dir_cos_x, p.dir_cos_z, p.distance_m, f.dir_cos_x, f.dir_cos_z, f.distance_m
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("grid file: {m}"));
        let nums = |v: &str| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("malformed number")))
                .collect()
        };
        let (mut m1, mut m2, mut range, mut spacing, mut counts) = (None, None, None, None, None);
        let mut points = Vec::new();
        let mut fixed = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, val)) = meta.trim().split_once('=') {
                    match key {
                        "m1" => m1 = val.trim().parse::<usize>().ok(),
                        "m2" => m2 = val.trim().parse::<usize>().ok(),
                        "inv_r_range" => range = Some(nums(val)?),
                        "spacing" => spacing = Some(nums(val)?),
                        "distances_per_angle" => {
                            counts = Some(
                                val.split_whitespace()
                                    .map(|t| t.parse::<usize>().map_err(|_| bad("count")))
                                    .collect::<Result<Vec<_>>>()?,
                            )
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("q,") {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad("malformed record")))
                .collect::<Result<_>>()?;
            if f.len() != 6 {
                return Err(bad("expected 7 fields per record"));
            }
            points.push(GridPoint { dir_cos_x: f[0], dir_cos_z: f[1], distance_m: f[2] });
            fixed.push(GridPoint { dir_cos_x: f[3], dir_cos_z: f[4], distance_m: f[5] });
        }
        let range = range.filter(|r| r.len() == 2).ok_or_else(|| bad("missing inv_r_range"))?;
        let spacing = spacing.filter(|s| s.len() == 3).ok_or_else(|| bad("missing spacing"))?;
        let counts = counts.ok_or_else(|| bad("missing distances_per_angle"))?;
        if counts.iter().sum::<usize>() != points.len() {
            return Err(bad("point count disagrees with distances_per_angle"));
        }
        Ok(Self {
            points,
            fixed_points: fixed,
            m1: m1.ok_or_else(|| bad("missing m1"))?,
            m2: m2.ok_or_else(|| bad("missing m2"))?,
            distances_per_angle: counts,
            inv_r_range: (range[0], range[1]),
            spacing: [spacing[0], spacing[1], spacing[2]],
        })
    }
}

/// Binary `K_x × K_z` visibility matrix of one scatterer / grid point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisibilityMap {
    pub k_x: usize,
    pub k_z: usize,
    /// column-major: entry `(kx, kz)` at `kz * k_x + kx`
    bits: Vec<bool>,
}

impl VisibilityMap {
    pub fn new(k_x: usize, k_z: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != k_x * k_z {
            return Err(Error::Shape(format!(
                "{} bits for a {k_x}x{k_z} mask",
                bits.len()
            )));
        }
        Ok(Self { k_x, k_z, bits })
    }

    pub fn filled(k_x: usize, k_z: usize, value: bool) -> Self {
        Self { k_x, k_z, bits: vec![value; k_x * k_z] }
    }

    pub fn all_ones(k_x: usize, k_z: usize) -> Self {
        Self::filled(k_x, k_z, true)
    }

    pub fn zeros(k_x: usize, k_z: usize) -> Self {
        Self::filled(k_x, k_z, false)
    }

    #[inline]
    pub fn get(&self, kx: usize, kz: usize) -> bool {
        self.bits[kz * self.k_x + kx]
    }

    #[inline]
    pub fn set(&mut self, kx: usize, kz: usize, v: bool) {
        self.bits[kz * self.k_x + kx] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Number of entries that differ from `other`.
    pub fn hamming(&self, other: &VisibilityMap) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Element-level lift `vec(V ⊗ 1_{N_x×N_z})`, length M.
    pub fn lift(&self, cfg: &ArrayConfig) -> Vec<bool> {
        let mut u = vec![false; cfg.num_antennas()];
        for iz in 0..cfg.m_z {
            for ix in 0..cfg.m_x {
                u[cfg.flat_index(ix, iz)] = self.get(ix / cfg.n_x, iz / cfg.n_z);
            }
        }
        u
    }

    /// Compact "0101…" rendering in column-major order.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(k_x: usize, k_z: usize, s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Parse(format!("invalid mask bit {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(k_x, k_z, bits)
    }
}

/// Steering dictionary `A(Ξ)`: column q is the Fresnel steering vector of
/// grid point q.
pub fn dictionary(cfg: &ArrayConfig, grid: &PolarGrid) -> CMatrix {
    let m = cfg.num_antennas();
    let mut a = CMatrix::zeros(m, grid.len());
    for (q, col) in a.as_mut_slice().chunks_exact_mut(m).enumerate() {
        let p = &grid.points[q];
        fill_steering_fresnel(cfg, p.dir_cos_x, p.dir_cos_z, p.inv_distance(), col);
    }
    a
}

/// VR dictionary `U(V) = [u_1, …, u_Q]` as a real 0/1 matrix.
pub fn vr_dictionary(cfg: &ArrayConfig, masks: &[VisibilityMap]) -> DMatrix<f64> {
    let m = cfg.num_antennas();
    let mut u = DMatrix::zeros(m, masks.len());
    for (q, mask) in masks.iter().enumerate() {
        for (i, b) in mask.lift(cfg).into_iter().enumerate() {
            if b {
                u[(i, q)] = 1.0;
            }
        }
    }
    u
}

/// `F = A ⊙ U`
pub fn effective_sensing_matrix(a: &CMatrix, u: &DMatrix<f64>) -> Result<CMatrix> {
    if a.shape() != u.shape() {
        return Err(Error::Shape(format!(
            "dictionary {:?} vs VR dictionary {:?}",
            a.shape(),
            u.shape()
        )));
    }
    Ok(a.zip_map(u, |x, w| x * w))
}

/// Column `a(p) ⊙ u(mask)` written into `out`.
pub(crate) fn fill_sensing_column(cfg: &ArrayConfig, p: &GridPoint, mask: &VisibilityMap, out: &mut [Complex64]) {
    fill_steering_fresnel(cfg, p.dir_cos_x, p.dir_cos_z, p.inv_distance(), out);
    if mask.count_ones() != mask.bits().len() {
        for (c, keep) in out.iter_mut().zip(mask.lift(cfg)) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// `A(Ξ) ⊙ U(V)` assembled column by column, skipping empty masks.
pub fn sensing_matrix(cfg: &ArrayConfig, grid: &PolarGrid, masks: &[VisibilityMap]) -> Result<CMatrix> {
    if masks.len() != grid.len() {
        return Err(Error::Shape(format!("{} masks for {} grid points", masks.len(), grid.len())));
    }
    let m = cfg.num_antennas();
    let mut f = CMatrix::zeros(m, grid.len());
    for (q, col) in f.as_mut_slice().chunks_exact_mut(m).enumerate() {
        if masks[q].is_empty() {
            continue;
        }
        fill_sensing_column(cfg, &grid.points[q], &masks[q], col);
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{steering_fresnel_raw};

    fn cfg() -> ArrayConfig {
        ArrayConfig::new(16, 4, 4, 2, 30e9).unwrap()
    }

    fn grid(m1: usize, m2: usize, n_r: usize) -> PolarGrid {
        let c = cfg();
        build_fixed_grid(&c, m1, m2, n_r, 2.0 * fresnel_distance(&c)).unwrap()
    }

    #[test]
    fn grid_counts_and_samples() {
        assert_eq!(grid(1, 1, 1).len(), 1);
        let g = grid(3, 2, 4);
        assert_eq!(g.len(), g.distances_per_angle.iter().sum::<usize>());
        assert_eq!(g.len(), 24);
        let xs: Vec<f64> = g.points.iter().step_by(8).map(|p| p.dir_cos_x).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        let (lo, hi) = g.inv_r_range();
        for p in &g.points {
            assert!(p.inv_distance() >= lo - 1e-12 && p.inv_distance() <= hi + 1e-12);
        }
    }

    #[test]
    fn grid_rejects_bad_distances() {
        let c = cfg();
        assert!(build_fixed_grid(&c, 2, 2, 2, 0.0).is_err());
        assert!(build_fixed_grid(&c, 2, 2, 2, -1.0).is_err());
        assert!(build_fixed_grid(&c, 2, 2, 2, 0.5 * fresnel_distance(&c)).is_err());
    }

    #[test]
    fn dictionary_columns() {
        let c = cfg();
        let g = grid(1, 1, 1);
        let a = dictionary(&c, &g);
        let p = g.points[0];
        let want = steering_fresnel_raw(&c, p.dir_cos_x, p.dir_cos_z, p.inv_distance());
        assert_eq!(a.column(0).iter().copied().collect::<Vec<_>>(), want);

        let g = grid(5, 3, 4);
        let a = dictionary(&c, &g);
        for col in a.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        // reproducible bit for bit
        assert_eq!(a, dictionary(&c, &grid(5, 3, 4)));
    }

    #[test]
    fn duplicate_points_have_unit_coherence() {
        let c = cfg();
        let mut g = grid(2, 2, 1);
        g.points[1] = g.points[0];
        let a = dictionary(&c, &g);
        let coh = a.column(0).dotc(&a.column(1)).norm();
        assert!((coh - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbing_one_point_changes_one_column() {
        let c = cfg();
        let mut g = grid(3, 2, 2);
        let a0 = dictionary(&c, &g);
        g.points[5].dir_cos_x += 0.01;
        let a1 = dictionary(&c, &g);
        for q in 0..g.len() {
            assert_eq!(a0.column(q) == a1.column(q), q != 5);
        }
    }

    #[test]
    fn vr_dictionary_columns() {
        let c = cfg();
        let ones = VisibilityMap::all_ones(4, 2);
        let zeros = VisibilityMap::zeros(4, 2);
        let mut single = VisibilityMap::zeros(4, 2);
        single.set(2, 1, true);
        let u = vr_dictionary(&c, &[ones, zeros, single]);
        assert!(u.column(0).iter().all(|&v| v == 1.0));
        assert!(u.column(1).iter().all(|&v| v == 0.0));
        assert_eq!(u.column(2).sum(), c.subarray_size() as f64);
        // the N ones sit inside sub-array (2,1): x in 8..12, z in 2..4
        for iz in 0..c.m_z {
            for ix in 0..c.m_x {
                let inside = (8..12).contains(&ix) && (2..4).contains(&iz);
                assert_eq!(u[(c.flat_index(ix, iz), 2)] == 1.0, inside);
            }
        }
    }

    #[test]
    fn lift_subsamples_back_to_mask() {
        let c = cfg();
        let m = VisibilityMap::from_bit_string(4, 2, "10110010").unwrap();
        let u = m.lift(&c);
        assert_eq!(u.iter().filter(|&&b| b).count(), c.subarray_size() * m.count_ones());
        for kz in 0..2 {
            for kx in 0..4 {
                assert_eq!(u[c.flat_index(kx * c.n_x, kz * c.n_z)], m.get(kx, kz));
            }
        }
    }

    #[test]
    fn effective_matrix_limits() {
        let c = cfg();
        let g = grid(2, 2, 2);
        let a = dictionary(&c, &g);
        let q = g.len();
        let ones = vr_dictionary(&c, &vec![VisibilityMap::all_ones(4, 2); q]);
        assert_eq!(effective_sensing_matrix(&a, &ones).unwrap(), a);
        let zeros = vr_dictionary(&c, &vec![VisibilityMap::zeros(4, 2); q]);
        assert!(effective_sensing_matrix(&a, &zeros).unwrap().iter().all(|z| z.norm() == 0.0));
        let short = DMatrix::zeros(3, q);
        assert!(effective_sensing_matrix(&a, &short).is_err());
    }

    #[test]
    fn sparse_representation_matches_path_sum() {
        let c = cfg();
        let g = grid(3, 3, 2);
        let q = g.len();
        let mut masks = vec![VisibilityMap::zeros(4, 2); q];
        masks[4] = VisibilityMap::from_bit_string(4, 2, "11000110").unwrap();
        masks[11] = VisibilityMap::from_bit_string(4, 2, "01111000").unwrap();
        let mut x = vec![Complex64::new(0.0, 0.0); q];
        x[4] = Complex64::new(0.7, -0.2);
        x[11] = Complex64::new(-0.1, 1.3);
        let f = effective_sensing_matrix(&dictionary(&c, &g), &vr_dictionary(&c, &masks)).unwrap();
        assert_eq!(f, sensing_matrix(&c, &g, &masks).unwrap());
        let h = &f * nalgebra::DVector::from_vec(x.clone());
        let mut direct = vec![Complex64::new(0.0, 0.0); c.num_antennas()];
        for &l in &[4usize, 11] {
            let p = g.points[l];
            let a = steering_fresnel_raw(&c, p.dir_cos_x, p.dir_cos_z, p.inv_distance());
            for (m, keep) in masks[l].lift(&c).into_iter().enumerate() {
                if keep {
                    direct[m] += x[l] * a[m];
                }
            }
        }
        for (a, b) in h.iter().zip(&direct) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn nearest_fixed_and_cells() {
        let g = grid(5, 3, 4);
        for q in [0, 7, 33, g.len() - 1] {
            assert_eq!(g.nearest_fixed(g.fixed_points()[q].coords()), q);
            let b = g.cell_bounds(q);
            let c = g.fixed_points()[q].coords();
            for k in 0..3 {
                assert!(b[k].0 <= c[k] && c[k] <= b[k].1);
            }
        }
    }

    #[test]
    fn grid_text_round_trip() {
        let mut g = grid(3, 2, 3);
        g.points[4].dir_cos_x = 0.123456789;
        let back = PolarGrid::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }
}
