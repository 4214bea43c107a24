use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{FieldPrecision, SpatialModel};
use crate::model::InvGammaPrior;

/// `d_t = R_t - R_{t-1}` with `R_0 = 0`, as columns.
pub fn field_increments(field: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = field.clone();
    for t in (1..field.ncols()).rev() {
        let prev = field.column(t - 1).into_owned();
        let mut col = d.column_mut(t);
        col -= prev;
    }
    d
}

/// Log Metropolis ratio for moving the range from `current` to `proposed`
/// with the increments held fixed; the flat prior cancels inside its support.
pub fn kappa_log_acceptance(
    increments: &DMatrix<f64>,
    sigma2: f64,
    current: &FieldPrecision,
    proposed: &FieldPrecision,
) -> f64 {
    let nt = increments.ncols() as f64;
    0.5 * nt * (proposed.logdet() - current.logdet())
        - (proposed.quad_sum(increments) - current.quad_sum(increments)) / (2.0 * sigma2)
}

/// Log Metropolis ratio for the range with the increment variance integrated
/// out against its inverse-gamma prior.
pub fn kappa_marginal_log_acceptance(
    increments: &DMatrix<f64>,
    sigma2_prior: InvGammaPrior,
    current: &FieldPrecision,
    proposed: &FieldPrecision,
) -> f64 {
    let nt = increments.ncols() as f64;
    let shape = sigma2_prior.shape + 0.5 * increments.len() as f64;
    let rate = |p: &FieldPrecision| sigma2_prior.rate + 0.5 * p.quad_sum(increments);
    0.5 * nt * (proposed.logdet() - current.logdet()) - shape * (rate(proposed).ln() - rate(current).ln())
}

/// Whether the range move conditions on the increment variance or
/// integrates it out. The marginal move must be followed by a draw of the
/// variance from its full conditional, which makes the pair a block update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeUpdate {
    #[default]
    Marginal,
    Conditional,
}

/// Target of one range move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KappaTarget {
    Conditional { sigma2: f64 },
    Marginal { sigma2_prior: InvGammaPrior },
}

/// Outcome of one range update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KappaMove {
    Accepted,
    Rejected,
    /// The proposal fell outside `(0, kappa_max]`.
    OutOfSupport,
    /// `Q` could not be factorized at the proposal; treated as a rejection.
    FactorizationFailed,
}

/// Random-walk Metropolis update of the range. On acceptance `kappa` and
/// `precision` are replaced.
pub fn update_kappa_mh<R: Rng + ?Sized>(
    kappa: &mut f64,
    field: &DMatrix<f64>,
    target: KappaTarget,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    kappa_max: f64,
    step: f64,
    rng: &mut R,
) -> Result<KappaMove> {
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let prop = *kappa + step * z;
    if !(prop > 0.0 && prop <= kappa_max) {
        return Ok(KappaMove::OutOfSupport);
    }
    let candidate = match spatial.precision(prop) {
        Ok(p) => p,
        Err(_) => return Ok(KappaMove::FactorizationFailed),
    };
    let d = field_increments(field);
    let log_alpha = match target {
        KappaTarget::Conditional { sigma2 } => kappa_log_acceptance(&d, sigma2, precision, &candidate),
        KappaTarget::Marginal { sigma2_prior } => {
            kappa_marginal_log_acceptance(&d, sigma2_prior, precision, &candidate)
        }
    };
    if u.ln() < log_alpha {
        *kappa = prop;
        *precision = candidate;
        Ok(KappaMove::Accepted)
    } else {
        Ok(KappaMove::Rejected)
    }
}
