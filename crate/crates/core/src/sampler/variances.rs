use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::field::FieldPrecision;
use crate::model::InvGammaPrior;

/// Draws from `InvGamma(shape, rate)` as the reciprocal of a gamma variate.
pub fn draw_inv_gamma<R: Rng + ?Sized>(ig: InvGammaPrior, rng: &mut R) -> Result<f64> {
    if !(ig.shape > 0.0 && ig.rate > 0.0) || !ig.rate.is_finite() {
        return Err(Error::Numerical(format!(
            "inverse-gamma needs positive shape and rate, got ({}, {})",
            ig.shape, ig.rate
        )));
    }
    let g = Gamma::new(ig.shape, 1.0 / ig.rate).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(1.0 / g.sample(rng))
}

/// Full conditional of the increment variance: shape `a + N T / 2`,
/// rate `b + sum_t d_t' Q d_t / 2`.
pub fn sigma2_conditional(prior: InvGammaPrior, increments: &DMatrix<f64>, precision: &FieldPrecision) -> InvGammaPrior {
    let count = (increments.nrows() * increments.ncols()) as f64;
    InvGammaPrior { shape: prior.shape + 0.5 * count, rate: prior.rate + 0.5 * precision.quad_sum(increments) }
}

/// Full conditional of the nugget given every log-rate and its conditional
/// mean: shape `a + nT/2`, rate `b + sum (lambda - m)^2 / 2`.
pub fn tau2_conditional(prior: InvGammaPrior, lambda: &DMatrix<f64>, means: &DMatrix<f64>) -> InvGammaPrior {
    let ss: f64 = lambda.iter().zip(means.iter()).map(|(l, m)| (l - m) * (l - m)).sum();
    InvGammaPrior { shape: prior.shape + 0.5 * lambda.len() as f64, rate: prior.rate + 0.5 * ss }
}

/// Full conditional of the `l`-th state-evolution variance given
/// `theta_0..theta_T`: shape `a + T/2`, rate `b + sum_t (theta_t - G theta_{t-1})_l^2 / 2`.
pub fn w_conditional(
    prior: InvGammaPrior,
    l: usize,
    theta0: &DVector<f64>,
    theta: &DMatrix<f64>,
    evolution: &DMatrix<f64>,
) -> InvGammaPrior {
    let mut ss = 0.0;
    let mut prev = theta0.clone();
    for t in 0..theta.ncols() {
        let cur = theta.column(t).into_owned();
        let r = (&cur - evolution * &prev)[l];
        ss += r * r;
        prev = cur;
    }
    InvGammaPrior { shape: prior.shape + 0.5 * theta.ncols() as f64, rate: prior.rate + 0.5 * ss }
}

/// Draws the nugget, increment and state variances in that order.
#[allow(clippy::too_many_arguments)]
pub fn update_variances<R: Rng + ?Sized>(
    hypers: &mut crate::model::HyperState,
    state: &crate::model::LatentState,
    means: &DMatrix<f64>,
    precision: &FieldPrecision,
    evolution: &DMatrix<f64>,
    prior: &crate::model::PriorConfig,
    rng: &mut R,
) -> Result<()> {
    hypers.tau2 = draw_inv_gamma(tau2_conditional(prior.tau2, &state.lambda, means), rng)?;
    let d = super::kappa::field_increments(&state.field);
    hypers.sigma2 = draw_inv_gamma(sigma2_conditional(prior.sigma2, &d, precision), rng)?;
    for l in 0..hypers.w.len() {
        hypers.w[l] = draw_inv_gamma(w_conditional(prior.w_prior(l), l, &state.theta0, &state.theta, evolution), rng)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SpatialModel;
    use crate::model::SpatialLocation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_residuals_keep_prior_rate() {
        let prior = InvGammaPrior::default();
        let l = DMatrix::from_element(3, 4, 1.5);
        let post = tau2_conditional(prior, &l, &l.clone());
        assert_eq!(post.shape, 2.0 + 6.0);
        assert_eq!(post.rate, 0.1);
    }

    #[test]
    fn empty_series_draws_from_prior() {
        let prior = InvGammaPrior { shape: 2.0, rate: 0.1 };
        let theta = DMatrix::<f64>::zeros(1, 0);
        let post = w_conditional(prior, 0, &DVector::zeros(1), &theta, &DMatrix::identity(1, 1));
        assert_eq!(post, prior);
        // Mean of InvGamma(2, 0.1) is 0.1; the variance is infinite, so compare medians.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draws: Vec<f64> = (0..40_000).map(|_| draw_inv_gamma(post, &mut rng).unwrap()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[draws.len() / 2];
        // InvGamma(2, b) median = b / Gamma(2,1) median = 0.1 / 1.678346990...
        let want = 0.1 / 1.678_346_990_016_661;
        assert!((median - want).abs() < 0.003, "{median} vs {want}");
    }

    #[test]
    fn shape_and_rate_match_hand_derivation() {
        let prior = InvGammaPrior { shape: 2.0, rate: 0.1 };
        // theta path p=2, T=2 with G = [[1,1],[0,1]].
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let theta0 = DVector::from_vec(vec![1.0, 0.5]);
        let theta = DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        // residuals: t1 = (2,0) - (1.5,0.5) = (0.5,-0.5); t2 = (1,1) - (2,0) = (-1,1)
        let w0 = w_conditional(prior, 0, &theta0, &theta, &g);
        let w1 = w_conditional(prior, 1, &theta0, &theta, &g);
        assert_eq!(w0.shape, 3.0);
        assert!((w0.rate - (0.1 + 0.5 * (0.25 + 1.0))).abs() < 1e-15);
        assert!((w1.rate - (0.1 + 0.5 * (0.25 + 1.0))).abs() < 1e-15);

        let lambda = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]);
        let means = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 1.0, 0.0]);
        let t2 = tau2_conditional(prior, &lambda, &means);
        assert_eq!(t2.shape, 4.0);
        assert!((t2.rate - (0.1 + 0.5 * (0.25 + 1.0 + 1.0))).abs() < 1e-15);
    }

    #[test]
    fn sigma2_rate_uses_precision_quadratic_form() {
        let sites: Vec<_> = (0..3).map(|k| SpatialLocation::new(k as f64 * 0.4, 0.0)).collect();
        let spatial = SpatialModel::dense(sites, 0.5).unwrap();
        let mut prec = spatial.precision(0.5).unwrap();
        let d = DMatrix::from_column_slice(3, 2, &[0.1, -0.2, 0.3, 0.0, 0.4, -0.1]);
        let post = sigma2_conditional(InvGammaPrior::default(), &d, &prec);
        let q = prec.dense_matrix();
        let mut ss = 0.0;
        for t in 0..2 {
            let c = d.column(t).into_owned();
            ss += (c.transpose() * &q * &c)[(0, 0)];
        }
        assert_eq!(post.shape, 2.0 + 3.0);
        assert!((post.rate - (0.1 + 0.5 * ss)).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_rate_is_a_numerical_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            draw_inv_gamma(InvGammaPrior { shape: 2.0, rate: 0.0 }, &mut rng),
            Err(Error::Numerical(_))
        ));
    }
}
