//! Channel and VR detection error metrics.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::VisibilityMap;
use crate::linalg::norm_sqr;
use crate::scene::ChannelScene;

/// `‖ĥ − h‖² / ‖h‖²`
pub fn nmse(h_hat: &[Complex64], h_true: &[Complex64]) -> Result<f64> {
    if h_hat.len() != h_true.len() {
        return Err(Error::Shape(format!("{} vs {} entries", h_hat.len(), h_true.len())));
    }
    let e = norm_sqr(h_true);
    if e == 0.0 {
        return Err(Error::Domain("true channel has zero energy".into()));
    }
    let d: f64 = h_hat.iter().zip(h_true).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(d / e)
}

/// Mismatched bits between each path's VR and the estimate at its nearest
/// fixed grid point, over `K_x K_z L`.
pub fn vr_error_rate(scene: &ChannelScene, masks: &[VisibilityMap]) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (path, &q) in scene.paths.iter().zip(&scene.truth_grid_index) {
        wrong += path.vr.hamming(&masks[q]);
        total += path.vr.bits().len();
    }
    if total == 0 {
        0.0
    } else {
        wrong as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScattererParams;
    use crate::scene::Path;

    #[test]
    fn nmse_cases() {
        let h: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0)).collect();
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse(&[Complex64::new(0.0, 0.0); 5], &h).unwrap(), 1.0);
        let h2: Vec<Complex64> = h.iter().map(|c| c * 2.0).collect();
        assert!((nmse(&h2, &h).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&h, &[Complex64::new(0.0, 0.0); 5]).is_err());
        assert!(nmse(&h[..4], &h).is_err());
    }

    #[test]
    fn error_rate_counting() {
        let sc = ScattererParams::from_dir_cos(0.1, 0.1, 10.0).unwrap();
        let vr = VisibilityMap::from_bit_string(8, 4, &"10".repeat(16)).unwrap();
        let scene = ChannelScene {
            paths: (0..4).map(|_| Path { gain: Complex64::new(1.0, 0.0), scatterer: sc, vr: vr.clone() }).collect(),
            h: vec![],
            truth_grid_index: vec![0, 1, 2, 3],
        };
        let mut masks = vec![vr.clone(); 4];
        assert_eq!(vr_error_rate(&scene, &masks), 0.0);
        let bit = masks[2].get(3, 1);
        masks[2].set(3, 1, !bit);
        assert_eq!(vr_error_rate(&scene, &masks), 1.0 / 128.0);
        let flipped = VisibilityMap::from_bit_string(8, 4, &"01".repeat(16)).unwrap();
        assert_eq!(vr_error_rate(&scene, &vec![flipped; 4]), 1.0);
    }
}
