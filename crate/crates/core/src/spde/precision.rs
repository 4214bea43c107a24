use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::FemMatrices;
use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, CscMatrix, Ordering, SymbolicCholesky};

/// `Q_kappa = kappa^2 / (4 pi) (kappa^-4 C + 2 kappa^-2 G1 + G2)` with its
/// sparse Cholesky factor.
#[derive(Clone, Debug)]
pub struct SparsePrecision {
    q: CscMatrix,
    kappa: f64,
    factor: CholeskyFactor,
}

impl SparsePrecision {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.q
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.factor.logdet()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.q.quad_form(x)
    }

    /// `Q^{-1} b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.factor.solve(b)
    }
}

/// Rebuilds `Q_kappa` for many values of `kappa` on one sparsity pattern,
/// sharing the symbolic factorization.
#[derive(Clone, Debug)]
pub struct PrecisionBuilder {
    pattern: CscMatrix,
    c: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    symbolic: Arc<SymbolicCholesky>,
}

impl PrecisionBuilder {
    pub fn new(fem: &FemMatrices) -> Result<Self> {
        Self::with_ordering(fem, Ordering::default())
    }

    pub fn with_ordering(fem: &FemMatrices, ordering: Ordering) -> Result<Self> {
        let cmat = CscMatrix::diagonal(&fem.c);
        let pattern = CscMatrix::pattern_union(&[&cmat, &fem.g1, &fem.g2]);
        let symbolic = SymbolicCholesky::analyze(&pattern, ordering)?;
        Ok(Self {
            c: cmat.values_on_pattern(&pattern),
            g1: fem.g1.values_on_pattern(&pattern),
            g2: fem.g2.values_on_pattern(&pattern),
            pattern,
            symbolic,
        })
    }

    /// The shared sparsity pattern of every `Q_kappa`.
    pub fn pattern(&self) -> &CscMatrix {
        &self.pattern
    }

    /// Values of `Q_kappa` on [`Self::pattern`].
    pub fn values(&self, kappa: f64) -> Result<Vec<f64>> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::domain(format!("kappa must be positive, got {kappa}")));
        }
        let k2 = kappa * kappa;
        let (a, b, c) = (1.0 / (k2 * k2), 2.0 / k2, 1.0);
        let s = k2 / (4.0 * PI);
        Ok((0..self.c.len()).map(|p| s * (a * self.c[p] + b * self.g1[p] + c * self.g2[p])).collect())
    }

    pub fn build(&self, kappa: f64) -> Result<SparsePrecision> {
        let values = self.values(kappa)?;
        let factor = self.symbolic.factor(&values)?;
        Ok(SparsePrecision { q: self.pattern.with_values(values), kappa, factor })
    }
}

pub fn build_precision(fem: &FemMatrices, kappa: f64) -> Result<SparsePrecision> {
    PrecisionBuilder::new(fem)?.build(kappa)
}

/// Draws `omega ~ N(0, scale * Q_kappa^{-1})`.
pub fn gmrf_sample<R: Rng + ?Sized>(precision: &SparsePrecision, scale: f64, rng: &mut R) -> Vec<f64> {
    let n = precision.dim();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sd = scale.sqrt();
    precision.factor.whiten_inverse(&z).into_iter().map(|v| sd * v).collect()
}
