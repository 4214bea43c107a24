//! Posterior-predictive sampling: imputation of hidden cells, kriging at new
//! sites, forecasting, space-time prediction and annual average daily counts.
//!
//! Every posterior draw yields one log-rate per target and one Poisson count;
//! summaries are taken over the pooled draws of all chains.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldPrecision, SpatialModel};
use crate::model::{HyperState, SpatialLocation};
use crate::sampler::{ModelContext, PosteriorDraws};
use crate::simulate::poisson_count;
use crate::spde::locate;
use crate::summary::quantile;

/// Credible level, RNG seed and whether to keep raw count draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub level: f64,
    pub seed: u64,
    pub keep_draws: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { level: 0.95, seed: 1, keep_draws: false }
    }
}

/// A data site by index or a new location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetSite {
    Site(usize),
    New(SpatialLocation),
}

/// One space-time point; `t >= T` is a forecast `t - T + 1` steps ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTarget {
    pub site: TargetSite,
    pub t: usize,
}

/// Per-target posterior-predictive summaries of counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub level: f64,
    pub targets: Vec<PredictionTarget>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `draws[target][draw]`, when requested.
    pub draws: Option<Vec<Vec<u64>>>,
}

/// A location without data, with its covariates at the times predicted
/// (row per time, column per covariate).
#[derive(Clone, Debug, PartialEq)]
pub struct NewSite {
    pub location: SpatialLocation,
    pub covariates: DMatrix<f64>,
}

/// Designs for times `T+1..T+H`: `F` rows (`H x p`) and covariates at the
/// data sites (`H * n * q`, cell-major as in the dataset).
#[derive(Clone, Debug, PartialEq)]
pub struct FutureInputs {
    pub design: DMatrix<f64>,
    pub covariates: Vec<f64>,
}

impl FutureInputs {
    pub fn horizon(&self) -> usize {
        self.design.nrows()
    }
}

/// Site for an annual-average estimate.
#[derive(Clone, Debug, PartialEq)]
pub enum AadbSite {
    Site(usize),
    New(NewSite),
}

/// Posterior of the average daily count at one site over a period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AadbEstimate {
    pub site: TargetSite,
    pub period: (usize, usize),
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Period average per posterior draw.
    pub draws: Vec<f64>,
}

fn pooled(chains: &[PosteriorDraws]) -> Result<Vec<(usize, usize)>> {
    let idx: Vec<(usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, d)| (0..d.n_draws()).map(move |k| (c, k))).collect();
    if idx.is_empty() {
        return Err(Error::Config("no posterior draws".into()));
    }
    Ok(idx)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn moments(values: &[f64]) -> (f64, f64) {
    // A constant sample is summarized exactly rather than through a rounded sum.
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("credible level must be in (0, 1), got {level}")));
    }
    Ok(())
}

/// Draws one count per (draw, target) and summarizes per target.
/// `log_rates[draw][target]`.
pub fn summarize_log_rates<R: Rng + ?Sized>(
    targets: Vec<PredictionTarget>,
    log_rates: &[Vec<f64>],
    config: &PredictConfig,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    let counts: Vec<Vec<u64>> =
        log_rates.iter().map(|row| row.iter().map(|l| poisson_count(l.exp(), rng)).collect()).collect();
    summarize_counts(targets, &counts, config)
}

/// Summaries of count draws `counts[draw][target]`.
pub fn summarize_counts(
    targets: Vec<PredictionTarget>,
    counts: &[Vec<u64>],
    config: &PredictConfig,
) -> Result<PredictiveSummary> {
    check_level(config.level)?;
    let nt = targets.len();
    let tail = 0.5 * (1.0 - config.level);
    let mut out = PredictiveSummary {
        level: config.level,
        targets,
        mean: Vec::with_capacity(nt),
        sd: Vec::with_capacity(nt),
        median: Vec::with_capacity(nt),
        lower: Vec::with_capacity(nt),
        upper: Vec::with_capacity(nt),
        draws: None,
    };
    let mut per_target = Vec::with_capacity(nt);
    for j in 0..nt {
        let col: Vec<u64> = counts.iter().map(|row| row[j]).collect();
        let mut vals: Vec<f64> = col.iter().map(|&c| c as f64).collect();
        let (m, s) = moments(&vals);
        vals.sort_by(|a, b| a.total_cmp(b));
        out.mean.push(m);
        out.sd.push(s);
        out.median.push(quantile(&vals, 0.5));
        out.lower.push(quantile(&vals, tail));
        out.upper.push(quantile(&vals, 1.0 - tail));
        if config.keep_draws {
            per_target.push(col);
        }
    }
    if config.keep_draws {
        out.draws = Some(per_target);
    }
    Ok(out)
}

/// Count draws `[draw][cell]` at hidden cells `(t, i)` from the retained log-rates.
pub fn impute_counts<R: Rng + ?Sized>(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    cells: &[(usize, usize)],
    rng: &mut R,
) -> Result<Vec<Vec<u64>>> {
    let data = ctx.data();
    for &(t, i) in cells {
        if t >= data.n_times() || i >= data.n_sites() {
            return Err(Error::dim(format!("cell (t={t}, site={i}) outside the data")));
        }
        if data.is_observed(t, i) {
            return Err(Error::domain(format!("cell (t={t}, site={i}) is observed; nothing to impute")));
        }
    }
    let idx = pooled(chains)?;
    if chains.iter().any(|c| c.lambda.is_none()) {
        return Err(Error::Config("log-rate draws were not kept; refit with lambda retention".into()));
    }
    Ok(idx
        .iter()
        .map(|&(c, k)| {
            let lam = &chains[c].lambda.as_ref().unwrap()[k];
            cells.iter().map(|&(t, i)| poisson_count(lam[(i, t)].exp(), rng)).collect()
        })
        .collect())
}

/// Predictive summaries at hidden cells; every unobserved cell when `cells` is `None`.
pub fn impute(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    cells: Option<&[(usize, usize)]>,
    config: &PredictConfig,
) -> Result<PredictiveSummary> {
    let data = ctx.data();
    let all: Vec<(usize, usize)> = match cells {
        Some(c) => c.to_vec(),
        None => (0..data.n_times())
            .flat_map(|t| (0..data.n_sites()).map(move |i| (t, i)))
            .filter(|&(t, i)| !data.is_observed(t, i))
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let counts = impute_counts(chains, ctx, &all, &mut rng)?;
    let targets = all.iter().map(|&(t, i)| PredictionTarget { site: TargetSite::Site(i), t }).collect();
    summarize_counts(targets, &counts, config)
}

/// Simple-kriging weights `w = Omega^{-1} u` and the residual variance
/// `v = 1 - u' w` for a new location, where `u` holds its correlations with the sites.
pub fn kriging_weights(
    sites: &[SpatialLocation],
    target: SpatialLocation,
    kappa: f64,
    nu: f64,
) -> Result<(DVector<f64>, f64)> {
    let spatial = SpatialModel::dense(sites.to_vec(), nu)?;
    let prec = spatial.precision(kappa)?;
    dense_weights(&prec, sites, target, nu)
}

fn dense_weights(
    prec: &FieldPrecision,
    sites: &[SpatialLocation],
    target: SpatialLocation,
    nu: f64,
) -> Result<(DVector<f64>, f64)> {
    let FieldPrecision::Dense(d) = prec else {
        return Err(Error::Config("kriging weights need the dense path".into()));
    };
    let kappa = prec.kappa();
    let u: Vec<f64> = sites
        .iter()
        .map(|s| crate::model::matern_correlation(s.distance(&target), kappa, nu))
        .collect::<Result<_>>()?;
    let w = d.factor().solve(&u);
    let v = 1.0 - u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    Ok((DVector::from_vec(w), v.max(0.0)))
}

/// How a new location reads the intercept weights.
enum SiteReader {
    /// Sparse path: barycentric row `(node, weight)`.
    Mesh(Vec<(usize, f64)>),
    /// Dense path: the residual of the site's intercept given the data
    /// sites follows its own random walk.
    Dense { location: SpatialLocation },
}

fn site_reader(ctx: &ModelContext, location: SpatialLocation) -> Result<SiteReader> {
    let spatial = ctx.spatial();
    if ctx.data().sites().iter().any(|s| *s == location) {
        return Err(Error::domain(format!(
            "new site ({}, {}) coincides with a data site",
            location.x, location.y
        )));
    }
    match spatial {
        SpatialModel::Dense(_) => Ok(SiteReader::Dense { location }),
        SpatialModel::Sparse(_) => {
            let mesh = spatial.mesh().ok_or_else(|| Error::Config("sparse model has no mesh to locate new sites".into()))?;
            let (k, bary) = locate(mesh, location).ok_or(Error::Coverage {
                site: ctx.data().n_sites(),
                x: location.x,
                y: location.y,
            })?;
            let tri = mesh.triangles()[k];
            Ok(SiteReader::Mesh((0..3).map(|j| (tri[j], bary[j])).filter(|(_, w)| *w != 0.0).collect()))
        }
    }
}

/// Per-draw state for a new site on the dense path.
struct DenseSiteDraw {
    weights: DVector<f64>,
    residual_var: f64,
}

fn dense_site_draw(
    ctx: &ModelContext,
    prec: &FieldPrecision,
    location: SpatialLocation,
    sigma2: f64,
) -> Result<DenseSiteDraw> {
    let (w, v) = dense_weights(prec, ctx.data().sites(), location, ctx.spatial().nu())?;
    Ok(DenseSiteDraw { weights: w, residual_var: sigma2 * v })
}

fn temporal(f: &[f64], theta: &[f64]) -> f64 {
    f.iter().zip(theta).map(|(a, b)| a * b).sum()
}

fn check_rows(m: &DMatrix<f64>, rows: usize, q: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != q {
        return Err(Error::Config(format!(
            "{what}: need {rows} x {q} covariates, got {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Log-rate draws `[draw][t]` at a new site over the observed period.
pub fn krige_log_rates<R: Rng + ?Sized>(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    site: &NewSite,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let data = ctx.data();
    let nt = data.n_times();
    check_rows(&site.covariates, nt, data.n_covariates(), "kriging")?;
    let reader = site_reader(ctx, site.location)?;
    let idx = pooled(chains)?;
    let mut out = Vec::with_capacity(idx.len());
    for (c, k) in idx {
        let d = &chains[c];
        let h = &d.hypers[k];
        let field = &d.field[k];
        let theta = &d.theta[k];
        let dense = match &reader {
            SiteReader::Dense { location } => {
                Some(dense_site_draw(ctx, &ctx.spatial().precision(h.kappa)?, *location, h.sigma2)?)
            }
            SiteReader::Mesh(_) => None,
        };
        let mut resid = 0.0;
        let mut row = Vec::with_capacity(nt);
        for t in 0..nt {
            let intercept = match (&reader, &dense) {
                (SiteReader::Mesh(a), _) => a.iter().map(|&(j, w)| w * field[(j, t)]).sum::<f64>(),
                (_, Some(ds)) => {
                    resid += ds.residual_var.sqrt() * normal(rng);
                    ds.weights.dot(&field.column(t)) + resid
                }
                _ => unreachable!(),
            };
            row.push(log_rate(intercept, data.design_row(t), theta.column(t).as_slice(), site.covariates.row(t).iter(), h, rng));
        }
        out.push(row);
    }
    Ok(out)
}

fn log_rate<'a, R: Rng + ?Sized>(
    intercept: f64,
    f: &[f64],
    theta: &[f64],
    x: impl Iterator<Item = &'a f64>,
    h: &HyperState,
    rng: &mut R,
) -> f64 {
    let fixed: f64 = x.zip(&h.beta).map(|(a, b)| a * b).sum();
    intercept + temporal(f, theta) + fixed + h.tau2.sqrt() * normal(rng)
}

/// Predictive counts at a new site for every observed time.
pub fn krige(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    site: &NewSite,
    config: &PredictConfig,
) -> Result<PredictiveSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lr = krige_log_rates(chains, ctx, site, &mut rng)?;
    let targets = (0..ctx.data().n_times())
        .map(|t| PredictionTarget { site: TargetSite::New(site.location), t })
        .collect();
    summarize_log_rates(targets, &lr, config, &mut rng)
}

fn propagate_theta<R: Rng + ?Sized>(theta: &mut DVector<f64>, g: &DMatrix<f64>, w: &[f64], rng: &mut R) {
    let mut next = g * &*theta;
    for (l, wl) in w.iter().enumerate() {
        next[l] += wl.sqrt() * normal(rng);
    }
    *theta = next;
}

fn check_future(ctx: &ModelContext, future: &FutureInputs) -> Result<()> {
    let data = ctx.data();
    let hz = future.horizon();
    if hz == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    if future.design.ncols() != data.n_states() {
        return Err(Error::Config(format!(
            "future design has {} columns, the model has {} states",
            future.design.ncols(),
            data.n_states()
        )));
    }
    let need = hz * data.n_sites() * data.n_covariates();
    if future.covariates.len() != need {
        return Err(Error::Config(format!(
            "future covariates: need {need} values for {hz} steps, got {}",
            future.covariates.len()
        )));
    }
    Ok(())
}

/// Log-rate draws `[draw][h * n + i]` at every data site for `h = 1..H`.
pub fn forecast_log_rates<R: Rng + ?Sized>(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    future: &FutureInputs,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_future(ctx, future)?;
    let data = ctx.data();
    let spatial = ctx.spatial();
    let (n, nt, q) = (data.n_sites(), data.n_times(), data.n_covariates());
    let idx = pooled(chains)?;
    let mut out = Vec::with_capacity(idx.len());
    let mut proj = vec![0.0; n];
    for (c, k) in idx {
        let d = &chains[c];
        let h = &d.hypers[k];
        let prec = spatial.precision(h.kappa)?;
        let mut field: Vec<f64> = d.field[k].column(nt - 1).iter().copied().collect();
        let mut theta = d.theta[k].column(nt - 1).into_owned();
        let mut row = Vec::with_capacity(future.horizon() * n);
        for step in 0..future.horizon() {
            for (r, e) in field.iter_mut().zip(prec.sample_increment(h.sigma2, rng)) {
                *r += e;
            }
            propagate_theta(&mut theta, data.evolution(), &h.w, rng);
            spatial.project_into(&field, &mut proj);
            let f: Vec<f64> = future.design.row(step).iter().copied().collect();
            for i in 0..n {
                let x = &future.covariates[(step * n + i) * q..(step * n + i + 1) * q];
                row.push(log_rate(proj[i], &f, theta.as_slice(), x.iter(), h, rng));
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Predictive counts at every data site for the next `H` times.
pub fn forecast(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    future: &FutureInputs,
    config: &PredictConfig,
) -> Result<PredictiveSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lr = forecast_log_rates(chains, ctx, future, &mut rng)?;
    let (n, nt) = (ctx.data().n_sites(), ctx.data().n_times());
    let targets = (0..future.horizon())
        .flat_map(|h| (0..n).map(move |i| PredictionTarget { site: TargetSite::Site(i), t: nt + h }))
        .collect();
    summarize_log_rates(targets, &lr, config, &mut rng)
}

/// Log-rate draws `[draw][h]` at a new site for `h = 1..H`.
///
/// `site.covariates` has one row per future step. On the dense path the
/// data-site intercepts are propagated jointly and kriged, and the site's own
/// residual continues its random walk from the end of the observed period.
pub fn spacetime_log_rates<R: Rng + ?Sized>(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    site: &NewSite,
    design: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let data = ctx.data();
    let spatial = ctx.spatial();
    let hz = design.nrows();
    if hz == 0 || design.ncols() != data.n_states() {
        return Err(Error::Config("future design must be H x p with H >= 1".into()));
    }
    check_rows(&site.covariates, hz, data.n_covariates(), "space-time prediction")?;
    let reader = site_reader(ctx, site.location)?;
    let nt = data.n_times();
    let idx = pooled(chains)?;
    let mut out = Vec::with_capacity(idx.len());
    for (c, k) in idx {
        let d = &chains[c];
        let h = &d.hypers[k];
        let prec = spatial.precision(h.kappa)?;
        let dense = match &reader {
            SiteReader::Dense { location } => Some(dense_site_draw(ctx, &prec, *location, h.sigma2)?),
            SiteReader::Mesh(_) => None,
        };
        // Residual accumulated over the observed period, as in kriging at time T.
        let mut resid = match &dense {
            Some(ds) => (nt as f64 * ds.residual_var).sqrt() * normal(rng),
            None => 0.0,
        };
        let mut field: Vec<f64> = d.field[k].column(nt - 1).iter().copied().collect();
        let mut theta = d.theta[k].column(nt - 1).into_owned();
        let mut row = Vec::with_capacity(hz);
        for step in 0..hz {
            for (r, e) in field.iter_mut().zip(prec.sample_increment(h.sigma2, rng)) {
                *r += e;
            }
            propagate_theta(&mut theta, data.evolution(), &h.w, rng);
            let intercept = match (&reader, &dense) {
                (SiteReader::Mesh(a), _) => a.iter().map(|&(j, w)| w * field[j]).sum::<f64>(),
                (_, Some(ds)) => {
                    resid += ds.residual_var.sqrt() * normal(rng);
                    ds.weights.iter().zip(&field).map(|(w, m)| w * m).sum::<f64>() + resid
                }
                _ => unreachable!(),
            };
            let f: Vec<f64> = design.row(step).iter().copied().collect();
            row.push(log_rate(intercept, &f, theta.as_slice(), site.covariates.row(step).iter(), h, rng));
        }
        out.push(row);
    }
    Ok(out)
}

/// Predictive counts at a new site for the next `H` times.
pub fn spacetime_predict(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    site: &NewSite,
    design: &DMatrix<f64>,
    config: &PredictConfig,
) -> Result<PredictiveSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lr = spacetime_log_rates(chains, ctx, site, design, &mut rng)?;
    let nt = ctx.data().n_times();
    let targets = (0..design.nrows())
        .map(|h| PredictionTarget { site: TargetSite::New(site.location), t: nt + h })
        .collect();
    summarize_log_rates(targets, &lr, config, &mut rng)
}

/// Average daily count at a site over `period`, per posterior draw.
///
/// Observed cells contribute their counts; hidden cells an imputed draw; a
/// new site its kriged predictive draws.
pub fn estimate_aadb(
    chains: &[PosteriorDraws],
    ctx: &ModelContext,
    site: &AadbSite,
    period: Range<usize>,
    config: &PredictConfig,
) -> Result<AadbEstimate> {
    check_level(config.level)?;
    let data = ctx.data();
    if period.is_empty() {
        return Err(Error::domain("empty averaging period"));
    }
    if period.end > data.n_times() {
        return Err(Error::domain(format!(
            "period {}..{} extends past the {} observed times",
            period.start,
            period.end,
            data.n_times()
        )));
    }
    let len = period.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (label, draws) = match site {
        AadbSite::Site(i) => {
            let i = *i;
            if i >= data.n_sites() {
                return Err(Error::dim(format!("site {i} out of range")));
            }
            let observed: u64 = period.clone().filter(|&t| data.is_observed(t, i)).map(|t| data.count(t, i)).sum();
            let hidden: Vec<(usize, usize)> = period.clone().filter(|&t| !data.is_observed(t, i)).map(|t| (t, i)).collect();
            let n_draws = pooled(chains)?.len();
            let draws = if hidden.is_empty() {
                vec![observed as f64 / len; n_draws]
            } else {
                impute_counts(chains, ctx, &hidden, &mut rng)?
                    .iter()
                    .map(|row| (observed + row.iter().sum::<u64>()) as f64 / len)
                    .collect()
            };
            (TargetSite::Site(i), draws)
        }
        AadbSite::New(ns) => {
            let lr = krige_log_rates(chains, ctx, ns, &mut rng)?;
            let draws = lr
                .iter()
                .map(|row| period.clone().map(|t| poisson_count(row[t].exp(), &mut rng)).sum::<u64>() as f64 / len)
                .collect();
            (TargetSite::New(ns.location), draws)
        }
    };
    let (mean, sd) = moments(&draws);
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - config.level);
    Ok(AadbEstimate {
        site: label,
        period: (period.start, period.end),
        mean,
        sd,
        median: quantile(&sorted, 0.5),
        lower: quantile(&sorted, tail),
        upper: quantile(&sorted, 1.0 - tail),
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, PriorConfig};
    use crate::sampler::intercept::tests::square_mesh;
    use crate::sampler::AcceptanceStats;
    use crate::simulate::build_harmonics;
    use proptest::prelude::*;

    fn loc(x: f64, y: f64) -> SpatialLocation {
        SpatialLocation::new(x, y)
    }

    fn hypers(kappa: f64, sigma2: f64, tau2: f64, w: Vec<f64>, beta: Vec<f64>) -> HyperState {
        HyperState { kappa, sigma2, tau2, w, beta }
    }

    /// `copies` identical posterior draws.
    fn replicated(
        copies: usize,
        h: HyperState,
        theta: DMatrix<f64>,
        field: DMatrix<f64>,
        lambda: Option<DMatrix<f64>>,
    ) -> Vec<PosteriorDraws> {
        vec![PosteriorDraws {
            chain: 0,
            hypers: vec![h; copies],
            theta: vec![theta; copies],
            field: vec![field; copies],
            lambda: lambda.map(|l| vec![l; copies]),
            monitored_names: vec![],
            monitored: vec![],
            acceptance: AcceptanceStats::default(),
            final_steps: Default::default(),
        }]
    }

    fn dataset(
        sites: Vec<SpatialLocation>,
        nt: usize,
        counts: Vec<u64>,
        observed: Vec<bool>,
        q: usize,
        f: DMatrix<f64>,
        g: DMatrix<f64>,
    ) -> Dataset {
        let n = sites.len();
        let x: Vec<f64> = (0..n * nt * q).map(|c| 0.1 * (c as f64 + 1.0)).collect();
        Dataset::new(sites, nt, counts, observed, x, q, f, g).unwrap()
    }

    fn level_model(nt: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(nt, 1, 1.0), DMatrix::identity(1, 1))
    }

    fn dense_ctx(sites: Vec<SpatialLocation>, data: Dataset, nu: f64) -> ModelContext {
        ModelContext::new(data, SpatialModel::dense(sites, nu).unwrap(), PriorConfig::default()).unwrap()
    }

    fn variance(v: &[f64]) -> f64 {
        moments(v).1.powi(2)
    }

    #[test]
    fn imputation_recovers_poisson_mean() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let (f, g) = level_model(1);
        let data = dataset(sites.clone(), 1, vec![0, 3], vec![false, true], 0, f, g);
        let ctx = dense_ctx(sites, data, 0.5);
        let lam = DMatrix::from_column_slice(2, 1, &[5f64.ln(), 0.0]);
        let chains = replicated(100_000, hypers(1.0, 1.0, 1.0, vec![1.0], vec![]), DMatrix::zeros(1, 1), DMatrix::zeros(2, 1), Some(lam));
        let s = impute(&chains, &ctx, None, &PredictConfig::default()).unwrap();
        assert_eq!(s.targets, vec![PredictionTarget { site: TargetSite::Site(0), t: 0 }]);
        assert!((s.mean[0] - 5.0).abs() < 0.05, "mean {}", s.mean[0]);
        assert!((s.sd[0] - 5f64.sqrt()).abs() < 0.03);
    }

    #[test]
    fn imputation_rejects_observed_cells_and_missing_rates() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let (f, g) = level_model(1);
        let data = dataset(sites.clone(), 1, vec![0, 3], vec![false, true], 0, f, g);
        let ctx = dense_ctx(sites, data, 0.5);
        let h = hypers(1.0, 1.0, 1.0, vec![1.0], vec![]);
        let with = replicated(3, h.clone(), DMatrix::zeros(1, 1), DMatrix::zeros(2, 1), Some(DMatrix::zeros(2, 1)));
        let err = impute(&with, &ctx, Some(&[(0, 1)]), &PredictConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let without = replicated(3, h, DMatrix::zeros(1, 1), DMatrix::zeros(2, 1), None);
        assert!(matches!(impute(&without, &ctx, None, &PredictConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn kriging_at_a_data_site_is_exact() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.3), loc(0.2, 0.9)];
        let kappa = 0.7;
        let (w, v) = kriging_weights(&sites, sites[1], kappa, 1.5).unwrap();
        assert!(v.abs() < 1e-10);
        for (j, wj) in w.iter().enumerate() {
            assert!((wj - if j == 1 { 1.0 } else { 0.0 }).abs() < 1e-9, "{w}");
        }
        let near = loc(1.0 + 1e-6 * kappa, 0.3);
        // Smoothness 1 is the model default; the exponential kernel (0.5) only
        // reaches about 2e-6 at this offset since its variance is linear in distance.
        let (w, v) = kriging_weights(&sites, near, kappa, 1.0).unwrap();
        assert!(v < 1e-8, "residual variance {v}");
        assert!((w[1] - 1.0).abs() < 1e-4 && w[0].abs() < 1e-4 && w[2].abs() < 1e-4);
    }

    #[test]
    fn kriging_weights_match_hand_solve() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0), loc(0.0, 2.0)];
        let target = loc(0.4, 0.5);
        let kappa = 0.8;
        // nu = 3/2 has the closed form (1 + u) e^{-u}.
        let rho = |a: &SpatialLocation, b: &SpatialLocation| {
            let u = a.distance(b) / kappa;
            (1.0 + u) * (-u).exp()
        };
        let omega = DMatrix::from_fn(3, 3, |i, j| rho(&sites[i], &sites[j]));
        let u = DVector::from_fn(3, |i, _| rho(&sites[i], &target));
        let expect = omega.clone().lu().solve(&u).unwrap();
        let (w, v) = kriging_weights(&sites, target, kappa, 1.5).unwrap();
        assert!((&w - &expect).amax() < 1e-10);
        assert!((v - (1.0 - u.dot(&expect))).abs() < 1e-10);
    }

    #[test]
    fn coincident_new_site_is_rejected() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let (f, g) = level_model(2);
        let data = dataset(sites.clone(), 2, vec![1; 4], vec![true; 4], 0, f, g);
        let ctx = dense_ctx(sites, data, 0.5);
        let chains = replicated(2, hypers(1.0, 1.0, 1.0, vec![1.0], vec![]), DMatrix::zeros(1, 2), DMatrix::zeros(2, 2), None);
        let ns = NewSite { location: loc(1.0, 0.0), covariates: DMatrix::zeros(2, 0) };
        assert!(matches!(krige(&chains, &ctx, &ns, &PredictConfig::default()), Err(Error::Domain(_))));
    }

    fn mesh_ctx(sites: Vec<SpatialLocation>, data: Dataset) -> ModelContext {
        let spatial = SpatialModel::sparse(square_mesh(), &sites).unwrap();
        ModelContext::new(data, spatial, PriorConfig::default()).unwrap()
    }

    #[test]
    fn sparse_kriging_at_a_vertex_reads_that_weight() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0), loc(1.0, 1.0)];
        let nt = 3;
        let f = DMatrix::from_fn(nt, 2, |t, j| if j == 0 { 1.0 } else { t as f64 });
        let g = DMatrix::identity(2, 2);
        let data = dataset(sites.clone(), nt, vec![1; 9], vec![true; 9], 1, f.clone(), g);
        let ctx = mesh_ctx(sites, data);
        let field = DMatrix::from_fn(6, nt, |j, t| j as f64 + 0.1 * t as f64);
        let theta = DMatrix::from_fn(2, nt, |l, t| 0.5 - l as f64 + 0.2 * t as f64);
        let h = hypers(0.5, 1.0, 0.0, vec![1.0, 1.0], vec![0.7]);
        let chains = replicated(2, h, theta.clone(), field.clone(), None);
        let x = DMatrix::from_fn(nt, 1, |t, _| 1.0 + t as f64);
        let ns = NewSite { location: loc(0.5, 0.5), covariates: x.clone() };
        let lr = krige_log_rates(&chains, &ctx, &ns, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for t in 0..nt {
            let expect = field[(4, t)] + f.row(t).dot(&theta.column(t).transpose()) + 0.7 * x[(t, 0)];
            assert!((lr[0][t] - expect).abs() < 1e-12);
            assert_eq!(lr[0][t], lr[1][t]);
        }
        let outside = NewSite { location: loc(5.0, 5.0), covariates: x };
        assert!(matches!(krige(&chains, &ctx, &outside, &PredictConfig::default()), Err(Error::Coverage { .. })));
    }

    #[test]
    fn deterministic_forecast_follows_the_evolution() {
        let (fv, g) = build_harmonics(7, 1).unwrap();
        let nt = 8;
        let f = DMatrix::from_fn(nt, 2, |_, j| fv[j]);
        let sites = vec![loc(0.25, 0.25), loc(1.0, 0.5)];
        let data = dataset(sites.clone(), nt, vec![1; 2 * nt], vec![true; 2 * nt], 1, f, g.clone());
        let ctx = mesh_ctx(sites, data);
        let mut theta = DMatrix::zeros(2, nt);
        let mut cur = DVector::from_vec(vec![1.0, -0.4]);
        for t in 0..nt {
            cur = &g * cur;
            theta.set_column(t, &cur);
        }
        let field = DMatrix::from_fn(6, nt, |j, _| 0.3 * j as f64);
        let h = hypers(0.5, 0.0, 0.0, vec![0.0, 0.0], vec![-0.2]);
        let chains = replicated(1, h, theta.clone(), field.clone(), None);
        let hz = 3;
        let future = FutureInputs {
            design: DMatrix::from_fn(hz, 2, |_, j| fv[j]),
            covariates: (0..hz * 2).map(|c| c as f64).collect(),
        };
        let lr = forecast_log_rates(&chains, &ctx, &future, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let proj = chains[0].intercepts(0, ctx.spatial()).column(nt - 1).into_owned();
        let mut state = theta.column(nt - 1).into_owned();
        for step in 0..hz {
            state = &g * state;
            let seasonal = fv.dot(&state);
            // With no evolution noise the seasonal term repeats the phase one period back.
            if step == 0 {
                assert!((seasonal - fv.dot(&theta.column(nt - 7))).abs() < 1e-12);
            }
            for i in 0..2 {
                let expect = proj[i] + seasonal - 0.2 * (step * 2 + i) as f64;
                assert!((lr[0][step * 2 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_forecast_variance_decomposes() {
        let sites = vec![loc(0.25, 0.3), loc(1.4, 0.5)];
        let nt = 2;
        let f = DMatrix::from_fn(nt, 2, |_, j| if j == 0 { 1.0 } else { 0.5 });
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let data = dataset(sites.clone(), nt, vec![1; 4], vec![true; 4], 0, f, g);
        let ctx = mesh_ctx(sites, data);
        let (kappa, sigma2, tau2, w) = (0.6, 0.4, 0.05, vec![0.2, 0.3]);
        let n = 100_000;
        let chains = replicated(n, hypers(kappa, sigma2, tau2, w.clone(), vec![]), DMatrix::zeros(2, nt), DMatrix::zeros(6, nt), None);
        let hz = 4;
        let future = FutureInputs { design: DMatrix::from_fn(hz, 2, |_, j| if j == 0 { 1.0 } else { 0.5 }), covariates: vec![] };
        let lr = forecast_log_rates(&chains, &ctx, &future, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let cov = ctx.spatial().precision(kappa).unwrap().dense_covariance();
        let a = ctx.spatial().projector().unwrap().to_dense();
        let field_var = &a * &cov * a.transpose() * sigma2;
        let fw = 1.0 * w[0] + 0.25 * w[1];
        for i in 0..2 {
            let exact = field_var[(i, i)] + fw + tau2;
            let got = variance(&lr.iter().map(|r| r[i]).collect::<Vec<_>>());
            let se = exact * (2.0 / n as f64).sqrt();
            assert!((got - exact).abs() < 5.0 * se, "site {i}: {got} vs {exact}");
        }
        // Forecast spread widens with the horizon.
        for i in 0..2 {
            let vars: Vec<f64> = (0..hz).map(|s| variance(&lr.iter().map(|r| r[s * 2 + i]).collect::<Vec<_>>())).collect();
            assert!(vars.windows(2).all(|p| p[1] > p[0]), "{vars:?}");
        }
    }

    #[test]
    fn dense_spacetime_prediction_composes_forecast_and_kriging() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0), loc(0.0, 1.0)];
        let nt = 2;
        let (fv, g) = build_harmonics(5, 1).unwrap();
        let f = DMatrix::from_fn(nt, 2, |_, j| fv[j]);
        let data = dataset(sites.clone(), nt, vec![1; 6], vec![true; 6], 1, f, g.clone());
        let ctx = dense_ctx(sites.clone(), data, 0.5);
        let (kappa, sigma2, tau2, w) = (0.9, 0.3, 0.02, vec![0.1, 0.05]);
        let theta = DMatrix::from_fn(2, nt, |l, t| 0.4 + 0.1 * l as f64 - 0.2 * t as f64);
        let field = DMatrix::from_fn(3, nt, |i, t| 0.5 * i as f64 + 0.3 * t as f64);
        let n = 100_000;
        let chains = replicated(n, hypers(kappa, sigma2, tau2, w.clone(), vec![0.6]), theta.clone(), field.clone(), None);
        let target = loc(0.4, 0.3);
        let hz = 2;
        let design = DMatrix::from_fn(hz, 2, |_, j| fv[j]);
        let ns = NewSite { location: target, covariates: DMatrix::from_column_slice(hz, 1, &[1.0, -1.0]) };
        let lr = spacetime_log_rates(&chains, &ctx, &ns, &design, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (wk, v) = kriging_weights(&sites, target, kappa, 0.5).unwrap();
        let mut state = theta.column(nt - 1).into_owned();
        let wmat = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let mut state_cov = DMatrix::<f64>::zeros(2, 2);
        for step in 0..hz {
            state = &g * state;
            state_cov = &g * state_cov * g.transpose() + &wmat;
            let mean = wk.dot(&field.column(nt - 1)) + fv.dot(&state) + 0.6 * ns.covariates[(step, 0)];
            let var = nt as f64 * sigma2 * v
                + (step + 1) as f64 * sigma2
                + (fv.transpose() * &state_cov * &fv)[(0, 0)]
                + tau2;
            let col: Vec<f64> = lr.iter().map(|r| r[step]).collect();
            let (m, s) = moments(&col);
            assert!((m - mean).abs() < 5.0 * (var / n as f64).sqrt(), "step {step}: mean {m} vs {mean}");
            let se = var * (2.0 / n as f64).sqrt();
            assert!((s * s - var).abs() < 5.0 * se, "step {step}: var {} vs {var}", s * s);
        }
    }

    #[test]
    fn sparse_spacetime_at_a_vertex_without_noise_is_constant() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let (f, g) = level_model(2);
        let data = dataset(sites.clone(), 2, vec![1; 4], vec![true; 4], 0, f, g);
        let ctx = mesh_ctx(sites, data);
        let field = DMatrix::from_fn(6, 2, |j, t| (j * 3 + t) as f64);
        let chains = replicated(1, hypers(0.5, 0.0, 0.0, vec![0.0], vec![]), DMatrix::zeros(1, 2), field.clone(), None);
        let ns = NewSite { location: loc(2.0, 0.5), covariates: DMatrix::zeros(4, 0) };
        let lr = spacetime_log_rates(&chains, &ctx, &ns, &DMatrix::from_element(4, 1, 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(lr[0].iter().all(|&l| l == field[(5, 1)]));
    }

    /// Two sites; site 0 carries `counts`, site 1 is fully observed.
    fn aadb_ctx(counts: Vec<u64>, observed: Vec<bool>, nt: usize) -> ModelContext {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 1.0)];
        let (f, g) = level_model(nt);
        let mut c = Vec::with_capacity(2 * nt);
        let mut o = Vec::with_capacity(2 * nt);
        for t in 0..nt {
            c.extend([counts[t], 1]);
            o.extend([observed[t], true]);
        }
        dense_ctx(sites.clone(), dataset(sites, nt, c, o, 0, f, g), 0.5)
    }

    #[test]
    fn aadb_of_a_fully_observed_site_is_its_average() {
        let h = hypers(1.0, 1.0, 1.0, vec![1.0], vec![]);
        let ctx = aadb_ctx(vec![10; 365], vec![true; 365], 365);
        let chains = replicated(50, h.clone(), DMatrix::zeros(1, 365), DMatrix::zeros(2, 365), None);
        let e = estimate_aadb(&chains, &ctx, &AadbSite::Site(0), 0..365, &PredictConfig::default()).unwrap();
        assert_eq!((e.mean, e.sd, e.lower, e.upper), (10.0, 0.0, 10.0, 10.0));

        let ctx = aadb_ctx((0..10).collect(), vec![true; 10], 10);
        let chains = replicated(5, h, DMatrix::zeros(1, 10), DMatrix::zeros(2, 10), None);
        let e = estimate_aadb(&chains, &ctx, &AadbSite::Site(0), 0..10, &PredictConfig::default()).unwrap();
        assert!(e.mean == 4.5 && e.sd == 0.0);

        // An average that is not a short binary fraction still comes back exactly.
        let counts: Vec<u64> = (0..20).map(|t| 20 + (t % 13)).collect();
        let exact = counts.iter().sum::<u64>() as f64 / 20.0;
        let ctx = aadb_ctx(counts, vec![true; 20], 20);
        let chains = replicated(400, hypers(1.0, 1.0, 1.0, vec![1.0], vec![]), DMatrix::zeros(1, 20), DMatrix::zeros(2, 20), None);
        let e = estimate_aadb(&chains, &ctx, &AadbSite::Site(0), 0..20, &PredictConfig::default()).unwrap();
        assert_eq!((e.mean, e.median, e.lower, e.upper), (exact, exact, exact, exact));
    }

    #[test]
    fn aadb_recomposes_from_imputation_draws() {
        let nt = 20;
        let observed: Vec<bool> = (0..nt).map(|t| t % 2 == 0).collect();
        let counts: Vec<u64> = (0..nt as u64).map(|t| 3 + t % 4).collect();
        let ctx = aadb_ctx(counts.clone(), observed.clone(), nt);
        let lam = DMatrix::from_fn(2, nt, |_, t| 1.0 + 0.05 * t as f64);
        let chains = replicated(200, hypers(1.0, 1.0, 1.0, vec![1.0], vec![]), DMatrix::zeros(1, nt), DMatrix::zeros(2, nt), Some(lam));
        let cfg = PredictConfig { seed: 9, keep_draws: true, ..Default::default() };
        let period = 4..16;
        let e = estimate_aadb(&chains, &ctx, &AadbSite::Site(0), period.clone(), &cfg).unwrap();
        let hidden: Vec<(usize, usize)> = period.clone().filter(|t| !observed[*t]).map(|t| (t, 0)).collect();
        let imp = impute(&chains, &ctx, Some(&hidden), &cfg).unwrap();
        let draws = imp.draws.unwrap();
        let obs: u64 = period.clone().filter(|t| observed[*t]).map(|t| counts[t]).sum();
        for k in 0..200 {
            let total = obs + draws.iter().map(|d| d[k]).sum::<u64>();
            assert_eq!(e.draws[k], total as f64 / period.len() as f64);
        }
        assert!(e.lower <= e.median && e.median <= e.upper);
    }

    #[test]
    fn aadb_rejects_bad_periods() {
        let ctx = aadb_ctx(vec![1; 5], vec![true; 5], 5);
        let chains = replicated(2, hypers(1.0, 1.0, 1.0, vec![1.0], vec![]), DMatrix::zeros(1, 5), DMatrix::zeros(2, 5), None);
        let cfg = PredictConfig::default();
        assert!(matches!(estimate_aadb(&chains, &ctx, &AadbSite::Site(0), 3..3, &cfg), Err(Error::Domain(_))));
        assert!(matches!(estimate_aadb(&chains, &ctx, &AadbSite::Site(0), 0..6, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn forecast_checks_future_inputs() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.0)];
        let (f, g) = level_model(2);
        let data = dataset(sites.clone(), 2, vec![1; 4], vec![true; 4], 1, f, g);
        let ctx = dense_ctx(sites, data, 0.5);
        let chains = replicated(2, hypers(1.0, 1.0, 1.0, vec![1.0], vec![0.0]), DMatrix::zeros(1, 2), DMatrix::zeros(2, 2), None);
        let short = FutureInputs { design: DMatrix::from_element(3, 1, 1.0), covariates: vec![0.0; 5] };
        assert!(matches!(forecast(&chains, &ctx, &short, &PredictConfig::default()), Err(Error::Config(_))));
        let ok = FutureInputs { design: DMatrix::from_element(3, 1, 1.0), covariates: vec![0.0; 6] };
        let s = forecast(&chains, &ctx, &ok, &PredictConfig::default()).unwrap();
        assert_eq!(s.targets.len(), 6);
        assert_eq!(s.targets[5], PredictionTarget { site: TargetSite::Site(1), t: 4 });
    }

    proptest! {
        #[test]
        fn summaries_are_ordered(rates in prop::collection::vec(prop::collection::vec(-2.0f64..4.0, 3), 2..60), level in 0.5f64..0.99, seed in 0u64..1000) {
            let targets = (0..3).map(|t| PredictionTarget { site: TargetSite::Site(0), t }).collect();
            let cfg = PredictConfig { level, seed, keep_draws: true };
            let s = summarize_log_rates(targets, &rates, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for j in 0..3 {
                prop_assert!(s.lower[j] <= s.median[j] && s.median[j] <= s.upper[j]);
                prop_assert!(s.mean[j] >= 0.0 && s.sd[j] >= 0.0 && s.lower[j] >= 0.0);
                prop_assert_eq!(s.draws.as_ref().unwrap()[j].len(), rates.len());
            }
        }
    }
}
