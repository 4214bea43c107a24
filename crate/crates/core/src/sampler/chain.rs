use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::DualAveraging;
use super::beta::update_beta_gibbs;
use super::collapsed::{update_collapsed, CollapsedMove, FieldUpdate, ProposalShape, WalkModes};
use super::ffbs::update_theta_ffbs;
use super::intercept::update_field_gibbs;
use super::kappa::{update_kappa_mh, KappaMove, KappaTarget, RangeUpdate};
use super::lambda::{conditional_means, update_lambda_pmala};
use super::level::{level_shift_applies, update_level_shift};
use super::noncentred::{field_offsets, update_range_noncentred, update_scale_noncentred, FitTerms};
use super::variances::update_variances;
use super::ModelContext;
use crate::error::{Error, Result};
use crate::field::SpatialModel;
use crate::model::{HyperState, LatentState};

const LAMBDA_TARGET: f64 = 0.57;
const KAPPA_TARGET: f64 = 0.30;
/// Initial log-scale step of the whitened range and variance moves.
const WHITENED_STEP: f64 = 0.1;
/// Initial scale of the collapsed range and variance proposal.
const COLLAPSED_STEP: f64 = 0.3;
/// Fraction of the adaptation window discarded before the collapsed proposal
/// starts learning its shape.
const SHAPE_START_FRACTION: f64 = 0.1;
/// Default range random-walk step as a fraction of the maximum site distance.
const KAPPA_STEP_FRACTION: f64 = 0.05;
/// Stream reserved for choosing the monitored intercept cells.
const MONITOR_STREAM: u64 = u64::MAX;

/// Chain length, thinning and tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Initial preconditioned MALA step.
    pub lambda_step: f64,
    /// Initial range random-walk step; `None` uses 5% of the maximum site distance.
    pub kappa_step: Option<f64>,
    /// Whether the range move integrates out the increment variance.
    pub range_update: RangeUpdate,
    /// Add log-scale moves on the range and increment variance that keep the
    /// whitened intercept increments fixed.
    pub whitened_moves: bool,
    /// Add an exact Gibbs move on the per-time level shared between the
    /// intercepts and the dynamic states.
    pub level_shift: bool,
    /// How the intercept weights are refreshed.
    pub field_update: FieldUpdate,
    /// Iterations of step-size adaptation; `None` adapts through the whole burn-in.
    pub adaptation_window: Option<usize>,
    /// Keep every kept draw of the log-rates (needed for imputation).
    pub keep_lambda: bool,
    /// Number of random intercept cells added to the monitored scalars.
    pub monitored_cells: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 15_000,
            thinning: 1,
            n_chains: 4,
            seed: 1,
            lambda_step: 0.8,
            kappa_step: None,
            range_update: RangeUpdate::Marginal,
            whitened_moves: true,
            level_shift: true,
            field_update: FieldUpdate::Collapsed,
            adaptation_window: None,
            keep_lambda: false,
            monitored_cells: 3,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if !(self.lambda_step > 0.0) || self.kappa_step.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        Ok(())
    }

    /// Number of draws a chain keeps.
    pub fn n_kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// Acceptance counts over the kept phase of a chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub lambda_accepted: u64,
    pub lambda_proposed: u64,
    pub kappa_accepted: u64,
    pub kappa_proposed: u64,
    /// Range proposals rejected because `Q` failed to factorize.
    pub kappa_factor_failures: u64,
    pub whitened_kappa_accepted: u64,
    pub whitened_sigma2_accepted: u64,
    /// Proposals of each whitened move.
    pub whitened_proposed: u64,
    pub collapsed_accepted: u64,
    pub collapsed_proposed: u64,
}

/// Step sizes in force after adaptation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub lambda: f64,
    pub kappa: f64,
    pub whitened_kappa: f64,
    pub whitened_sigma2: f64,
    #[serde(default)]
    pub collapsed_scale: f64,
}

impl AcceptanceStats {
    pub fn lambda_rate(&self) -> f64 {
        ratio(self.lambda_accepted, self.lambda_proposed)
    }

    pub fn kappa_rate(&self) -> f64 {
        ratio(self.kappa_accepted, self.kappa_proposed)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Kept draws of one chain.
///
/// `field[k]` is the `N x T` intercept weights of draw `k`; on the dense path
/// these are the intercepts at the sites, on the sparse path project them with
/// [`PosteriorDraws::intercepts`].
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub chain: usize,
    pub hypers: Vec<HyperState>,
    /// `p x T` dynamic states per draw.
    pub theta: Vec<DMatrix<f64>>,
    pub field: Vec<DMatrix<f64>>,
    /// `n x T` log-rates per draw, when kept.
    pub lambda: Option<Vec<DMatrix<f64>>>,
    pub monitored_names: Vec<String>,
    /// Row per draw, one column per monitored scalar.
    pub monitored: Vec<Vec<f64>>,
    pub acceptance: AcceptanceStats,
    pub final_steps: StepSizes,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.hypers.len()
    }

    /// `n x T` intercepts at the sites for draw `k`.
    pub fn intercepts(&self, k: usize, spatial: &SpatialModel) -> DMatrix<f64> {
        let f = &self.field[k];
        let mut out = DMatrix::zeros(spatial.n_sites(), f.ncols());
        let mut col = vec![0.0; spatial.n_sites()];
        for t in 0..f.ncols() {
            spatial.project_into(f.column(t).as_slice(), &mut col);
            out.column_mut(t).copy_from_slice(&col);
        }
        out
    }
}

/// Scalar names: range, variances, state variances, coefficients.
pub(crate) fn hyper_names(p: usize, q: usize) -> Vec<String> {
    let mut names = vec!["kappa".to_string(), "sigma2".to_string(), "tau2".to_string()];
    names.extend((1..=p).map(|l| format!("w{l}")));
    names.extend((1..=q).map(|k| format!("beta{k}")));
    names
}

fn hyper_values(h: &HyperState) -> Vec<f64> {
    let mut v = vec![h.kappa, h.sigma2, h.tau2];
    v.extend(&h.w);
    v.extend(&h.beta);
    v
}

/// Intercept cells `(t, i)` tracked by the diagnostics; the same for every chain.
pub fn monitored_cells(ctx: &ModelContext, config: &ChainConfig) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(MONITOR_STREAM);
    let (nt, n) = (ctx.data().n_times(), ctx.data().n_sites());
    (0..config.monitored_cells).map(|_| (rng.random_range(0..nt), rng.random_range(0..n))).collect()
}

/// Starting values. Chain 0 uses the default start; later chains perturb the
/// hyperparameters so the chains begin from different points.
pub fn initial_state<R: Rng + ?Sized>(ctx: &ModelContext, chain: usize, rng: &mut R) -> (LatentState, HyperState) {
    let data = ctx.data();
    let (n, nt, p, q) = (data.n_sites(), data.n_times(), data.n_states(), data.n_covariates());
    let mut state = LatentState::zeros(n, ctx.spatial().n_nodes(), nt, p);
    let obs_logs: Vec<f64> = (0..nt)
        .flat_map(|t| (0..n).map(move |i| (t, i)))
        .filter(|&(t, i)| data.is_observed(t, i))
        .map(|(t, i)| (data.count(t, i) as f64 + 0.5).ln())
        .collect();
    let global = obs_logs.iter().sum::<f64>() / obs_logs.len().max(1) as f64;
    for i in 0..n {
        let site: Vec<f64> = (0..nt).filter(|&t| data.is_observed(t, i)).map(|t| (data.count(t, i) as f64 + 0.5).ln()).collect();
        let fill = if site.is_empty() { global } else { site.iter().sum::<f64>() / site.len() as f64 };
        for t in 0..nt {
            state.lambda[(i, t)] = if data.is_observed(t, i) { (data.count(t, i) as f64 + 0.5).ln() } else { fill };
        }
    }
    let prior = ctx.prior();
    state.theta0 = DVector::from_element(p, prior.theta0_mean);
    state.theta = DMatrix::from_fn(p, nt, |_, _| prior.theta0_mean);
    let mut hypers = HyperState {
        kappa: ctx.kappa_max() / 4.0,
        sigma2: prior.sigma2.mean(),
        tau2: prior.tau2.mean(),
        w: (0..p).map(|l| prior.w_prior(l).mean()).collect(),
        beta: vec![0.0; q],
    };
    if chain > 0 {
        let mut jitter = |spread: f64| (rng.random_range(-spread..spread) as f64).exp();
        hypers.kappa = (hypers.kappa * jitter(0.7)).min(ctx.kappa_max());
        hypers.sigma2 *= jitter(1.0);
        hypers.tau2 *= jitter(1.0);
        for w in hypers.w.iter_mut() {
            *w *= jitter(1.0);
        }
    }
    (state, hypers)
}

/// Runs one chain. Chains share the master seed and differ by RNG stream.
pub fn run_chain(ctx: &ModelContext, config: &ChainConfig, chain: usize) -> Result<PosteriorDraws> {
    config.validate()?;
    let data = ctx.data();
    let spatial = ctx.spatial();
    let prior = ctx.prior();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);

    let (mut state, mut hypers) = initial_state(ctx, chain, &mut rng);
    let mut precision = spatial.precision(hypers.kappa)?;
    let p = data.n_states();
    let m0 = DVector::from_element(p, prior.theta0_mean);
    let c0 = DMatrix::identity(p, p) * prior.theta0_variance;
    let cells = monitored_cells(ctx, config);
    let mut names = hyper_names(p, data.n_covariates());
    names.extend(cells.iter().map(|(t, i)| format!("intercept_t{t}_s{i}")));

    let kappa_step0 = config.kappa_step.unwrap_or(KAPPA_STEP_FRACTION * ctx.kappa_max() / 2.0);
    let mut lambda_da = DualAveraging::new(config.lambda_step, LAMBDA_TARGET);
    let mut kappa_da = DualAveraging::new(kappa_step0, KAPPA_TARGET);
    let adapt_until = config.adaptation_window.unwrap_or(config.burn_in).min(config.burn_in);
    let mut nc_kappa_da = DualAveraging::new(WHITENED_STEP, KAPPA_TARGET);
    let mut nc_sigma2_da = DualAveraging::new(WHITENED_STEP, KAPPA_TARGET);
    let mut collapsed_da = DualAveraging::new(COLLAPSED_STEP, KAPPA_TARGET);
    let mut shape = ProposalShape::default();
    let shape_from = (SHAPE_START_FRACTION * adapt_until as f64) as usize;
    let mut frozen = StepSizes {
        lambda: config.lambda_step,
        kappa: kappa_step0,
        whitened_kappa: WHITENED_STEP,
        whitened_sigma2: WHITENED_STEP,
        collapsed_scale: COLLAPSED_STEP,
    };
    let mut frozen_shape = shape.factor(COLLAPSED_STEP);
    let modes = WalkModes::new(data.n_times());

    let n_kept = config.n_kept();
    let mut out = PosteriorDraws {
        chain,
        hypers: Vec::with_capacity(n_kept),
        theta: Vec::with_capacity(n_kept),
        field: Vec::with_capacity(n_kept),
        lambda: config.keep_lambda.then(|| Vec::with_capacity(n_kept)),
        monitored_names: names,
        monitored: Vec::with_capacity(n_kept),
        acceptance: AcceptanceStats::default(),
        final_steps: frozen,
    };

    let mut proj = vec![0.0; data.n_sites()];
    let shift_level = config.level_shift && level_shift_applies(data, spatial);
    for it in 0..config.iterations {
        let adapting = it < adapt_until;
        let steps = if adapting {
            StepSizes {
                lambda: lambda_da.step(),
                kappa: kappa_da.step(),
                whitened_kappa: nc_kappa_da.step(),
                whitened_sigma2: nc_sigma2_da.step(),
                collapsed_scale: collapsed_da.step(),
            }
        } else {
            frozen
        };
        let wrap = |e: Error| Error::Iteration { iteration: it, source: Box::new(e) };

        let target = match config.range_update {
            RangeUpdate::Marginal => KappaTarget::Marginal { sigma2_prior: prior.sigma2 },
            RangeUpdate::Conditional => KappaTarget::Conditional { sigma2: hypers.sigma2 },
        };
        let mv = update_kappa_mh(
            &mut hypers.kappa,
            &state.field,
            target,
            &mut precision,
            spatial,
            ctx.kappa_max(),
            steps.kappa,
            &mut rng,
        )
        .map_err(wrap)?;

        let means = conditional_means(&state, &hypers, data, spatial);
        update_variances(&mut hypers, &state, &means, &precision, data.evolution(), prior, &mut rng).map_err(wrap)?;
        let whitened = if config.whitened_moves {
            let offsets = field_offsets(&state, &hypers, data, spatial);
            let mut terms = FitTerms::new(&state.field, &offsets, spatial);
            let k = update_range_noncentred(
                &mut state,
                &mut hypers,
                &mut precision,
                spatial,
                &offsets,
                &mut terms,
                ctx.kappa_max(),
                steps.whitened_kappa,
                &mut rng,
            )
            .map_err(wrap)?;
            let s = update_scale_noncentred(&mut state, &mut hypers, &mut terms, prior.sigma2, steps.whitened_sigma2, &mut rng);
            Some((k == KappaMove::Accepted, s))
        } else {
            None
        };
        let collapsed = match config.field_update {
            FieldUpdate::Sequential => {
                update_field_gibbs(&mut state, &hypers, &mut precision, spatial, data, &mut rng).map_err(wrap)?;
                None
            }
            FieldUpdate::Collapsed => {
                let proposal = if adapting { shape.factor(steps.collapsed_scale) } else { frozen_shape };
                let m = update_collapsed(
                    &mut state,
                    &mut hypers,
                    &mut precision,
                    spatial,
                    data,
                    &modes,
                    prior.sigma2,
                    ctx.kappa_max(),
                    &proposal,
                    &mut rng,
                )
                .map_err(wrap)?;
                Some(m == CollapsedMove::Accepted)
            }
        };
        let means = conditional_means(&state, &hypers, data, spatial);
        let sweep = update_lambda_pmala(&mut state.lambda, &means, hypers.tau2, data, steps.lambda, &mut rng).map_err(wrap)?;
        update_theta_ffbs(&mut state, &hypers, data, spatial, &m0, &c0, &mut rng).map_err(wrap)?;
        if shift_level {
            update_level_shift(&mut state, &hypers, &mut precision, data, spatial, &mut rng).map_err(wrap)?;
        }
        update_beta_gibbs(&state, &mut hypers, data, spatial, prior.beta_variance, &mut rng).map_err(wrap)?;

        if !state.is_finite() || hyper_values(&hypers).iter().any(|v| !v.is_finite()) {
            return Err(wrap(Error::Numerical("non-finite state after sweep".into())));
        }

        if adapting {
            lambda_da.update(sweep.rate());
            kappa_da.update(if mv == KappaMove::Accepted { 1.0 } else { 0.0 });
            if let Some((k, s)) = whitened {
                nc_kappa_da.update(k as u8 as f64);
                nc_sigma2_da.update(s as u8 as f64);
            }
            if let Some(c) = collapsed {
                collapsed_da.update(c as u8 as f64);
                if it >= shape_from {
                    shape.observe(hypers.kappa, hypers.sigma2);
                }
            }
            if it + 1 == adapt_until {
                frozen = StepSizes {
                    lambda: lambda_da.final_step(),
                    kappa: kappa_da.final_step(),
                    whitened_kappa: nc_kappa_da.final_step(),
                    whitened_sigma2: nc_sigma2_da.final_step(),
                    collapsed_scale: collapsed_da.final_step(),
                };
                frozen_shape = shape.factor(frozen.collapsed_scale);
            }
        }

        if it >= config.burn_in {
            let acc = &mut out.acceptance;
            acc.lambda_accepted += sweep.accepted as u64;
            acc.lambda_proposed += sweep.proposed as u64;
            acc.kappa_proposed += 1;
            acc.kappa_accepted += (mv == KappaMove::Accepted) as u64;
            acc.kappa_factor_failures += (mv == KappaMove::FactorizationFailed) as u64;
            if let Some((k, s)) = whitened {
                acc.whitened_proposed += 1;
                acc.whitened_kappa_accepted += k as u64;
                acc.whitened_sigma2_accepted += s as u64;
            }
            if let Some(c) = collapsed {
                acc.collapsed_proposed += 1;
                acc.collapsed_accepted += c as u64;
            }
            if (it + 1 - config.burn_in) % config.thinning == 0 {
                let mut row = hyper_values(&hypers);
                for &(t, i) in &cells {
                    spatial.project_into(state.field.column(t).as_slice(), &mut proj);
                    row.push(proj[i]);
                }
                out.monitored.push(row);
                out.hypers.push(hypers.clone());
                out.theta.push(state.theta.clone());
                out.field.push(state.field.clone());
                if let Some(l) = out.lambda.as_mut() {
                    l.push(state.lambda.clone());
                }
            }
        }
    }
    out.final_steps = frozen;
    Ok(out)
}

/// Runs `config.n_chains` chains in parallel.
pub fn run_chains(ctx: &ModelContext, config: &ChainConfig) -> Result<Vec<PosteriorDraws>> {
    config.validate()?;
    (0..config.n_chains).into_par_iter().map(|c| run_chain(ctx, config, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, PriorConfig, SpatialLocation};
    use crate::simulate::build_harmonics;
    use rand_distr::{Distribution, Poisson};

    fn tiny_context(seed: u64) -> ModelContext {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites: Vec<_> = (0..5).map(|_| SpatialLocation::new(rng.random(), rng.random())).collect();
        let nt = 8;
        let (f, g) = build_harmonics(7, 1).unwrap();
        let design = DMatrix::from_fn(nt, 2, |_, k| f[k]);
        let pois = Poisson::new(4.0).unwrap();
        let counts: Vec<u64> = (0..5 * nt).map(|_| pois.sample(&mut rng) as u64).collect();
        let mut observed = vec![true; 5 * nt];
        observed[3] = false;
        observed[17] = false;
        let x: Vec<f64> = (0..5 * nt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(sites.clone(), nt, counts, observed, x, 1, design, g).unwrap();
        let spatial = SpatialModel::dense(sites, 1.0).unwrap();
        ModelContext::new(data, spatial, PriorConfig::default()).unwrap()
    }

    fn short(seed: u64) -> ChainConfig {
        ChainConfig { iterations: 60, burn_in: 20, thinning: 2, n_chains: 2, seed, keep_lambda: true, ..Default::default() }
    }

    #[test]
    fn kept_draw_count() {
        let ctx = tiny_context(1);
        let cfg = ChainConfig { iterations: 10, burn_in: 5, thinning: 5, ..short(3) };
        let d = run_chain(&ctx, &cfg, 0).unwrap();
        assert_eq!(d.n_draws(), 1);
        assert_eq!(d.monitored.len(), 1);
        assert_eq!(d.monitored[0].len(), d.monitored_names.len());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ctx = tiny_context(2);
        let a = run_chains(&ctx, &short(5)).unwrap();
        let b = run_chains(&ctx, &short(5)).unwrap();
        assert_eq!(a, b);
        let c = run_chains(&ctx, &short(6)).unwrap();
        assert_ne!(a[0].monitored, c[0].monitored);
        assert_ne!(a[0].monitored, a[1].monitored);
    }

    #[test]
    fn draws_respect_support() {
        let ctx = tiny_context(4);
        let d = run_chain(&ctx, &short(1), 1).unwrap();
        for h in &d.hypers {
            h.validate(ctx.kappa_max()).unwrap();
        }
        let acc = d.acceptance;
        assert!((0.0..=1.0).contains(&acc.lambda_rate()));
        assert!((0.0..=1.0).contains(&acc.kappa_rate()));
    }

    #[test]
    fn both_field_updates_run_and_count_their_moves() {
        let ctx = tiny_context(5);
        for mode in [FieldUpdate::Sequential, FieldUpdate::Collapsed] {
            let d = run_chain(&ctx, &ChainConfig { field_update: mode, ..short(8) }, 0).unwrap();
            for h in &d.hypers {
                h.validate(ctx.kappa_max()).unwrap();
            }
            let acc = d.acceptance;
            let expected = if mode == FieldUpdate::Collapsed { 40 } else { 0 };
            assert_eq!(acc.collapsed_proposed, expected);
            assert!(acc.collapsed_accepted <= acc.collapsed_proposed);
        }
    }

    #[test]
    fn masked_counts_never_reach_the_sampler() {
        let ctx = tiny_context(7);
        let blind = ModelContext::new(
            ctx.data().with_masked_counts(999_999),
            ctx.spatial().clone(),
            ctx.prior().clone(),
        )
        .unwrap();
        let a = run_chain(&ctx, &short(2), 0).unwrap();
        let b = run_chain(&blind, &short(2), 0).unwrap();
        assert_eq!(a.hypers, b.hypers);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = ChainConfig { iterations: 10, burn_in: 10, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ChainConfig { thinning: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
