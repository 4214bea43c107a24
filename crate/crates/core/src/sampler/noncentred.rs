//! Moves on the range and increment variance that hold the whitened
//! intercept increments fixed and carry the field along, so the only
//! likelihood term that changes is that of the log-rates given the field.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::kappa::{field_increments, KappaMove};
use crate::error::Result;
use crate::field::{FieldPrecision, SpatialModel};
use crate::model::{Dataset, HyperState, InvGammaPrior, LatentState};

/// `lambda - F'theta - X beta`: what the intercepts explain, `n x T`.
pub fn field_offsets(
    state: &LatentState,
    hypers: &HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
) -> DMatrix<f64> {
    let means = super::lambda::conditional_means(state, hypers, data, spatial);
    let mut out = &state.lambda - means;
    let mut proj = vec![0.0; data.n_sites()];
    for t in 0..data.n_times() {
        spatial.project_into(state.field.column(t).as_slice(), &mut proj);
        for (i, v) in proj.iter().enumerate() {
            out[(i, t)] += v;
        }
    }
    out
}

/// `-sum ||offset_t - A R_t||^2 / (2 tau2)`.
pub fn field_log_lik(field: &DMatrix<f64>, offsets: &DMatrix<f64>, spatial: &SpatialModel, tau2: f64) -> f64 {
    let oo: f64 = offsets.iter().map(|o| o * o).sum();
    FitTerms::new(field, offsets, spatial).log_lik(oo, tau2)
}

/// Inner products `sum offset . A R` and `sum |A R|^2`, from which the
/// log-rate likelihood of the field follows up to a constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitTerms {
    pub cross: f64,
    pub square: f64,
}

impl FitTerms {
    pub fn new(field: &DMatrix<f64>, offsets: &DMatrix<f64>, spatial: &SpatialModel) -> Self {
        let mut proj = vec![0.0; offsets.nrows()];
        let (mut cross, mut square) = (0.0, 0.0);
        for t in 0..field.ncols() {
            spatial.project_into(field.column(t).as_slice(), &mut proj);
            for (a, o) in proj.iter().zip(offsets.column(t).iter()) {
                cross += a * o;
                square += a * a;
            }
        }
        Self { cross, square }
    }

    /// Log-likelihood given `sum offset^2`.
    pub fn log_lik(&self, offsets_square: f64, tau2: f64) -> f64 {
        -0.5 * (offsets_square - 2.0 * self.cross + self.square) / tau2
    }

    /// Change in log-likelihood when the field is multiplied by `c`.
    fn scaled_delta(&self, c: f64, tau2: f64) -> f64 {
        (2.0 * (c - 1.0) * self.cross - (c * c - 1.0) * self.square) / (2.0 * tau2)
    }
}

/// Standard-normal coordinates of the increments under `sigma2 * Q^{-1}`.
pub fn whitened_increments(field: &DMatrix<f64>, precision: &FieldPrecision, sigma2: f64) -> DMatrix<f64> {
    let d = field_increments(field);
    let sd = sigma2.sqrt();
    let mut z = DMatrix::zeros(d.nrows(), d.ncols());
    for t in 0..d.ncols() {
        let w = precision.whiten(d.column(t).as_slice());
        for (i, v) in w.into_iter().enumerate() {
            z[(i, t)] = v / sd;
        }
    }
    z
}

/// Random-walk path whose increments have whitened coordinates `z`.
pub fn field_from_whitened(z: &DMatrix<f64>, precision: &FieldPrecision, sigma2: f64) -> DMatrix<f64> {
    let sd = sigma2.sqrt();
    let mut field = DMatrix::zeros(z.nrows(), z.ncols());
    for t in 0..z.ncols() {
        let d = precision.unwhiten(z.column(t).as_slice());
        for (i, v) in d.into_iter().enumerate() {
            field[(i, t)] = v * sd + if t > 0 { field[(i, t - 1)] } else { 0.0 };
        }
    }
    field
}

fn log_inv_gamma(prior: InvGammaPrior, x: f64) -> f64 {
    -(prior.shape + 1.0) * x.ln() - prior.rate / x
}

/// Log-scale random walk on the range with the whitened increments fixed.
#[allow(clippy::too_many_arguments)]
pub fn update_range_noncentred<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &mut HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    offsets: &DMatrix<f64>,
    terms: &mut FitTerms,
    kappa_max: f64,
    step: f64,
    rng: &mut R,
) -> Result<KappaMove> {
    let e: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let prop = hypers.kappa * (step * e).exp();
    if !(prop > 0.0 && prop <= kappa_max) {
        return Ok(KappaMove::OutOfSupport);
    }
    let candidate = match spatial.precision(prop) {
        Ok(p) => p,
        Err(_) => return Ok(KappaMove::FactorizationFailed),
    };
    let z = whitened_increments(&state.field, precision, hypers.sigma2);
    let moved = field_from_whitened(&z, &candidate, hypers.sigma2);
    let moved_terms = FitTerms::new(&moved, offsets, spatial);
    let log_alpha = moved_terms.log_lik(0.0, hypers.tau2) - terms.log_lik(0.0, hypers.tau2) + (prop / hypers.kappa).ln();
    if u.ln() < log_alpha {
        hypers.kappa = prop;
        *precision = candidate;
        state.field = moved;
        *terms = moved_terms;
        Ok(KappaMove::Accepted)
    } else {
        Ok(KappaMove::Rejected)
    }
}

/// Log-scale random walk on the increment variance; the whole field scales
/// by the square root of the ratio.
#[allow(clippy::too_many_arguments)]
pub fn update_scale_noncentred<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &mut HyperState,
    terms: &mut FitTerms,
    prior: InvGammaPrior,
    step: f64,
    rng: &mut R,
) -> bool {
    let e: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let prop = hypers.sigma2 * (step * e).exp();
    let c = (prop / hypers.sigma2).sqrt();
    let log_alpha = terms.scaled_delta(c, hypers.tau2)
        + log_inv_gamma(prior, prop)
        - log_inv_gamma(prior, hypers.sigma2)
        + (prop / hypers.sigma2).ln();
    if prop.is_finite() && prop > 0.0 && u.ln() < log_alpha {
        hypers.sigma2 = prop;
        state.field *= c;
        terms.cross *= c;
        terms.square *= c * c;
        true
    } else {
        false
    }
}
