//! Dense complex matrix-vector kernels used by the inverse-free estimator.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `‖v‖²`
pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// `a^H b`
#[inline]
pub fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re0, mut im0, mut re1, mut im1) = (0.0, 0.0, 0.0, 0.0);
    let mut ca = a.chunks_exact(2);
    let mut cb = b.chunks_exact(2);
    for (x, y) in (&mut ca).zip(&mut cb) {
        re0 += x[0].re * y[0].re + x[0].im * y[0].im;
        im0 += x[0].re * y[0].im - x[0].im * y[0].re;
        re1 += x[1].re * y[1].re + x[1].im * y[1].im;
        im1 += x[1].re * y[1].im - x[1].im * y[1].re;
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        re0 += x.re * y.re + x.im * y.im;
        im0 += x.re * y.im - x.im * y.re;
    }
    Complex64::new(re0 + re1, im0 + im1)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// A sensing matrix that remembers which of its columns are identically zero.
///
/// Columns whose visibility mask is empty carry no signal; skipping them in
/// both products keeps the cost proportional to the number of live columns.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    mat: CMatrix,
    live: Vec<usize>,
}

impl SensingMatrix {
    pub fn new(mat: CMatrix) -> Self {
        let live = (0..mat.ncols())
            .filter(|&q| mat.column(q).iter().any(|c| *c != ZERO))
            .collect();
        Self { mat, live }
    }

    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn live_columns(&self) -> &[usize] {
        &self.live
    }

    pub fn column(&self, q: usize) -> &[Complex64] {
        let m = self.mat.nrows();
        &self.mat.as_slice()[q * m..(q + 1) * m]
    }

    /// `F x`
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.nrows()];
        for &q in &self.live {
            if x[q] != ZERO {
                axpy(x[q], self.column(q), &mut out);
            }
        }
        out
    }

    /// `F^H r`
    pub fn apply_adjoint(&self, r: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.ncols()];
        for &q in &self.live {
            out[q] = dotc(self.column(q), r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_nalgebra() {
        let m = CMatrix::from_fn(5, 3, |i, j| {
            if j == 1 {
                ZERO
            } else {
                Complex64::new(i as f64 + 0.5 * j as f64, (i * j) as f64 - 1.0)
            }
        });
        let f = SensingMatrix::new(m.clone());
        assert_eq!(f.live_columns(), &[0, 2]);
        let x = vec![Complex64::new(1.0, -2.0), Complex64::new(3.0, 0.5), Complex64::new(-0.5, 0.25)];
        let y = f.apply(&x);
        let want = &m * nalgebra::DVector::from_vec(x.clone());
        for (a, b) in y.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let r: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let g = f.apply_adjoint(&r);
        let want = m.adjoint() * nalgebra::DVector::from_vec(r);
        for (a, b) in g.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
