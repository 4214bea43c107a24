use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Cholesky with escalating diagonal jitter: none, then 1e-10, 1e-9, ... 1e-6.
///
/// Returns the factor and the jitter that was needed.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut j = m.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::cond(format!(
        "Cholesky of {}x{} matrix failed with jitter up to {JITTER_MAX:e}",
        m.nrows(),
        m.ncols()
    )))
}

/// Dense SPD factor exposing the same operations as the sparse one.
#[derive(Clone, Debug)]
pub struct DenseFactor {
    chol: Cholesky<f64, Dyn>,
}

impl DenseFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { chol: jittered_cholesky(m)?.0 })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(b)).data.into()
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} B`
    pub fn lower_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Maps standard normals to a draw from `N(0, A^{-1})` via `L^{-T} z`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut x = z.to_vec();
        for j in (0..n).rev() {
            let mut acc = x[j];
            for i in j + 1..n {
                acc -= l[(i, j)] * x[i];
            }
            x[j] = acc / l[(j, j)];
        }
        x
    }

    /// Draw from `N(A^{-1} b, A^{-1})` given standard normals `z`.
    pub fn sample_with(&self, b: &[f64], z: &[f64]) -> Vec<f64> {
        let l = self.chol.l_dirty();
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let acc: f64 = (0..i).map(|j| l[(i, j)] * y[j]).sum();
            y[i] = (y[i] - acc) / l[(i, i)];
        }
        for (v, e) in y.iter_mut().zip(z) {
            *v += e;
        }
        for j in (0..n).rev() {
            let mut acc = y[j];
            for i in j + 1..n {
                acc -= l[(i, j)] * y[i];
            }
            y[j] = acc / l[(j, j)];
        }
        y
    }

    /// Inverse of [`color`](Self::color): `L^{-1} x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let l = self.chol.l_dirty();
        let mut z = x.to_vec();
        for i in 0..z.len() {
            let acc: f64 = (0..i).map(|j| l[(i, j)] * z[j]).sum();
            z[i] = (z[i] - acc) / l[(i, i)];
        }
        z
    }

    /// Maps standard normals to a draw from `N(0, A)` via `L z`.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        (0..n).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Draws from `N(mean, cov)` for a symmetric positive semidefinite `cov`,
/// clamping tiny negative eigenvalues produced by rounding.
pub fn sample_psd_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let p = mean.len();
    let sym = (cov + cov.transpose()) * 0.5;
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    if let Some(c) = sym.clone().cholesky() {
        return mean + c.l() * z;
    }
    let eig = sym.symmetric_eigen();
    let scaled = DVector::from_fn(p, |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    mean + eig.eigenvectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (c, jitter) = jittered_cholesky(&m).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
        assert!(c.l().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(jittered_cholesky(&m), Err(Error::Conditioning(_))));
    }

    #[test]
    fn whiten_and_color_are_consistent() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = DenseFactor::new(&m).unwrap();
        let mut w = DMatrix::zeros(3, 3);
        let mut c = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            w.set_column(j, &DVector::from_vec(f.whiten_inverse(&e)));
            c.set_column(j, &DVector::from_vec(f.color(&e)));
        }
        assert!((&w * w.transpose() - m.clone().try_inverse().unwrap()).abs().max() < 1e-12);
        assert!((&c * c.transpose() - m).abs().max() < 1e-12);
    }
}
