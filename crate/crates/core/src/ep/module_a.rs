//! Module A: per-sub-array LMMSE estimate of the relaxed visibility vector.

use nalgebra::{DMatrix, DVector};

use super::GaussMoments;
use crate::error::{Error, Result};

/// LMMSE posterior of `v` in `ỹ = H̃ v + n`, `n ~ N(0, I/noise_precision)`,
/// under the prior `a_pri`, followed by the extrinsic message to Module B.
///
/// Elements whose extrinsic variance would be non-positive keep the values of
/// `prev_b_pri`.
pub fn lmmse_module_a(
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    noise_precision: f64,
    a_pri: &GaussMoments,
    prev_b_pri: &GaussMoments,
) -> Result<(GaussMoments, GaussMoments)> {
    let n = h.ncols();
    if a_pri.len() != n || prev_b_pri.len() != n || h.nrows() != y.len() {
        return Err(Error::Shape("Module A inputs are not conformable".into()));
    }
    if a_pri.var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric("Module A prior variance is not positive".into()));
    }
    let mut precision = h.tr_mul(h) * noise_precision;
    for i in 0..n {
        precision[(i, i)] += 1.0 / a_pri.var[i];
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("LMMSE precision is not positive definite".into()))?;
    let cov = chol.inverse();
    let mut rhs = h.tr_mul(y) * noise_precision;
    for i in 0..n {
        rhs[i] += a_pri.mean[i] / a_pri.var[i];
    }
    let mean = &cov * rhs;
    let post = GaussMoments {
        mean: mean.iter().cloned().collect(),
        var: (0..n).map(|i| cov[(i, i)]).collect(),
    };
    let mut ext = prev_b_pri.clone();
    for i in 0..n {
        let v = 1.0 / (1.0 / post.var[i] - 1.0 / a_pri.var[i]);
        if v > 0.0 && v.is_finite() {
            ext.var[i] = v;
            ext.mean[i] = v * (post.mean[i] / post.var[i] - a_pri.mean[i] / a_pri.var[i]);
        }
    }
    Ok((post, ext))
}
