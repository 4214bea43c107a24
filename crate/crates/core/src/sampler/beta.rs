use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::field::SpatialModel;
use crate::linalg::DenseFactor;
use crate::model::{Dataset, HyperState, LatentState};

/// Mean and precision of the fixed-effect full conditional.
///
/// Precision `I / v + X'X / tau2`; the mean solves it against
/// `X' (lambda - intercept - F' theta) / tau2`.
pub fn beta_conditional(
    state: &LatentState,
    hypers: &HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
    prior_variance: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = data.n_covariates();
    let n = data.n_sites();
    let mut prec = DMatrix::identity(q, q) / prior_variance;
    let mut rhs = DVector::zeros(q);
    let mut intercept = vec![0.0; n];
    for t in 0..data.n_times() {
        spatial.project_into(state.field.column(t).as_slice(), &mut intercept);
        let temporal: f64 = data.design_row(t).iter().zip(state.theta.column(t).iter()).map(|(f, th)| f * th).sum();
        for i in 0..n {
            let x = data.covariates_at(t, i);
            let r = state.lambda[(i, t)] - intercept[i] - temporal;
            for a in 0..q {
                rhs[a] += x[a] * r / hypers.tau2;
                for b in 0..q {
                    prec[(a, b)] += x[a] * x[b] / hypers.tau2;
                }
            }
        }
    }
    let mean = DVector::from_vec(DenseFactor::new(&prec)?.solve(rhs.as_slice()));
    Ok((mean, prec))
}

/// Conjugate Gaussian draw of `beta`; a no-op without covariates.
pub fn update_beta_gibbs<R: Rng + ?Sized>(
    state: &LatentState,
    hypers: &mut HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
    prior_variance: f64,
    rng: &mut R,
) -> Result<()> {
    let q = data.n_covariates();
    if q == 0 {
        return Ok(());
    }
    let (mean, prec) = beta_conditional(state, hypers, data, spatial, prior_variance)?;
    let factor = DenseFactor::new(&prec)?;
    let z: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    let noise = factor.whiten_inverse(&z);
    hypers.beta = mean.iter().zip(noise).map(|(m, e)| m + e).collect();
    Ok(())
}
