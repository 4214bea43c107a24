use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::field::{ConditionalFactor, FieldPrecision, SpatialModel};
use crate::model::{Dataset, HyperState, LatentState};

/// `lambda_t - F_t' theta_t - X_t beta` at the sites.
pub(crate) fn site_residual(t: usize, state: &LatentState, hypers: &HyperState, data: &Dataset) -> Vec<f64> {
    let temporal: f64 = data.design_row(t).iter().zip(state.theta.column(t).iter()).map(|(f, th)| f * th).sum();
    (0..data.n_sites())
        .map(|i| {
            let fixed: f64 = data.covariates_at(t, i).iter().zip(&hypers.beta).map(|(x, b)| x * b).sum();
            state.lambda[(i, t)] - temporal - fixed
        })
        .collect()
}

/// Right-hand side `b_t` of the full conditional `P_t R_t = b_t`.
fn conditional_rhs(
    t: usize,
    state: &LatentState,
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    data: &Dataset,
) -> Vec<f64> {
    let nn = spatial.n_nodes();
    let nt = data.n_times();
    let mut neighbours = vec![0.0; nn];
    if t > 0 {
        neighbours.copy_from_slice(state.field.column(t - 1).as_slice());
    }
    if t + 1 < nt {
        for (v, r) in neighbours.iter_mut().zip(state.field.column(t + 1).iter()) {
            *v += r;
        }
    }
    let mut prior_part = vec![0.0; nn];
    precision.mul_into(&neighbours, &mut prior_part);
    let resid = site_residual(t, state, hypers, data);
    let mut lik_part = vec![0.0; nn];
    spatial.project_transpose_into(&resid, &mut lik_part);
    prior_part.iter().zip(&lik_part).map(|(p, l)| p / hypers.sigma2 + l / hypers.tau2).collect()
}

fn conditional_factors(
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    n_times: usize,
) -> Result<(Option<ConditionalFactor>, ConditionalFactor)> {
    let lik = 1.0 / hypers.tau2;
    let inner = if n_times > 1 {
        Some(spatial.conditional_factor(precision, 2.0 / hypers.sigma2, lik)?)
    } else {
        None
    };
    let last = spatial.conditional_factor(precision, 1.0 / hypers.sigma2, lik)?;
    Ok((inner, last))
}

/// Sequential Gibbs sweep over the intercept weights `R_1..R_T` (or `mu_t`).
///
/// Each `R_t` is drawn from its Gaussian full conditional given the newest
/// `R_{t-1}` and the current `R_{t+1}`.
pub fn update_field_gibbs<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    let nt = data.n_times();
    let (inner, last) = conditional_factors(hypers, precision, spatial, nt)?;
    for t in 0..nt {
        let b = conditional_rhs(t, state, hypers, precision, spatial, data);
        let factor = if t + 1 < nt { inner.as_ref().expect("inner factor exists when T > 1") } else { &last };
        let draw = factor.sample(&b, rng);
        state.field.column_mut(t).copy_from_slice(&draw);
    }
    Ok(())
}

/// Mean and covariance of the full conditional of the weights at time `t`,
/// computed through the same factorization the sampler uses.
pub fn field_conditional(
    t: usize,
    state: &LatentState,
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    data: &Dataset,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nt = data.n_times();
    let (inner, last) = conditional_factors(hypers, precision, spatial, nt)?;
    let factor = if t + 1 < nt { inner.as_ref().unwrap() } else { &last };
    let b = conditional_rhs(t, state, hypers, precision, spatial, data);
    let mean = DVector::from_vec(factor.solve(&b));
    let nn = spatial.n_nodes();
    let mut cov = DMatrix::zeros(nn, nn);
    for j in 0..nn {
        let mut e = vec![0.0; nn];
        e[j] = 1.0;
        cov.column_mut(j).copy_from_slice(&factor.solve(&e));
    }
    Ok((mean, cov))
}
