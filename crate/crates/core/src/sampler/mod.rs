//! Hybrid MCMC for the spatiotemporal dynamic Poisson model.
//!
//! One iteration runs, in order: the range update, the nugget, increment and
//! state variances, the intercept field (by default a joint move on the range
//! and increment variance with the field integrated out, then an exact draw of
//! every intercept), the log-rates, the dynamic states, the level shift and the
//! fixed effects.

mod adapt;
mod beta;
mod chain;
mod collapsed;
mod diagnostics;
mod ffbs;
pub(crate) mod intercept;
mod kappa;
mod lambda;
mod level;
mod noncentred;
mod variances;

pub use adapt::DualAveraging;
pub use beta::{beta_conditional, update_beta_gibbs};
pub use chain::{
    initial_state, monitored_cells, run_chain, run_chains, AcceptanceStats, ChainConfig, StepSizes, PosteriorDraws,
};
pub use collapsed::{
    modal_data, update_collapsed, CollapsedMove, FieldUpdate, ModalPosterior, ProposalFactor, ProposalShape, WalkModes,
};
pub use diagnostics::{diagnose, diagnose_table, effective_sample_size, split_rhat, Diagnostics, RHAT_THRESHOLD};
pub use ffbs::{pseudo_observations, update_theta_ffbs, StateSpaceModel};
pub use intercept::{field_conditional, update_field_gibbs};
pub use kappa::{
    field_increments, kappa_log_acceptance, kappa_marginal_log_acceptance, update_kappa_mh, KappaMove, KappaTarget,
    RangeUpdate,
};
pub use lambda::{
    conditional_means, pmala_curvature, pmala_gradient, pmala_log_target, pmala_step, update_lambda_pmala,
    LambdaSweep,
};
pub use level::{
    apply_level_shift, level_shift_applies, level_shift_conditional, update_level_shift, Tridiagonal,
};
pub use noncentred::{
    field_from_whitened, field_log_lik, field_offsets, FitTerms, update_range_noncentred, update_scale_noncentred,
    whitened_increments,
};
pub use variances::{
    draw_inv_gamma, sigma2_conditional, tau2_conditional, update_variances, w_conditional,
};

use crate::error::{Error, Result};
use crate::field::SpatialModel;
use crate::model::{max_pairwise_distance, Dataset, PriorConfig};

/// Everything a chain needs that stays fixed during sampling.
#[derive(Clone, Debug)]
pub struct ModelContext {
    data: Dataset,
    spatial: SpatialModel,
    prior: PriorConfig,
    kappa_max: f64,
}

impl ModelContext {
    pub fn new(data: Dataset, spatial: SpatialModel, prior: PriorConfig) -> Result<Self> {
        if spatial.n_sites() != data.n_sites() {
            return Err(Error::dim(format!(
                "spatial model covers {} sites but the dataset has {}",
                spatial.n_sites(),
                data.n_sites()
            )));
        }
        prior.validate(data.n_states())?;
        if data.n_observed() == 0 {
            return Err(Error::domain("dataset has no observed cells"));
        }
        let kappa_max = prior.kappa_max(data.sites());
        if !(kappa_max > 0.0 && kappa_max.is_finite()) {
            return Err(Error::domain(format!(
                "range prior upper bound must be positive (max site distance {})",
                max_pairwise_distance(data.sites())
            )));
        }
        Ok(Self { data, spatial, prior, kappa_max })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn spatial(&self) -> &SpatialModel {
        &self.spatial
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    /// Upper end of the uniform range prior.
    pub fn kappa_max(&self) -> f64 {
        self.kappa_max
    }
}
