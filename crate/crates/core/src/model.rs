//! Domain types, the dense Matérn path and the log-density building blocks
//! shared by the sampler and the predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{jittered_cholesky, CscMatrix};
use crate::special::bessel_k;

/// Planar site coordinates in kilometres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialLocation {
    pub x: f64,
    pub y: f64,
}

impl SpatialLocation {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &SpatialLocation) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Largest pairwise distance among `sites`; the range prior lives on `(0, 2 * delta]`.
pub fn max_pairwise_distance(sites: &[SpatialLocation]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            d = d.max(a.distance(b));
        }
    }
    d
}

/// Which representation carries the spatiotemporal intercept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPath {
    /// Matérn correlation over the data sites.
    Dense,
    /// SPDE weights on mesh nodes, projected to the sites.
    Sparse,
}

/// Counts, missingness mask and designs for `n` sites over `T` days.
///
/// Cell `(t, i)` is time `t` (0-based) at site `i`. Counts at unobserved cells
/// are stored but never read by inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sites: Vec<SpatialLocation>,
    counts: Vec<u64>,
    observed: Vec<bool>,
    covariates: Vec<f64>,
    temporal_design: Vec<f64>,
    evolution: DMatrix<f64>,
    n_times: usize,
    n_covariates: usize,
}

impl Dataset {
    /// Validates and assembles a dataset.
    ///
    /// * `counts`, `observed`: length `T * n`, time-major.
    /// * `covariates`: length `T * n * q`, cell-major.
    /// * `temporal_design`: `T x p`, row `t` is `F_t'`.
    /// * `evolution`: `p x p`.
    pub fn new(
        sites: Vec<SpatialLocation>,
        n_times: usize,
        counts: Vec<u64>,
        observed: Vec<bool>,
        covariates: Vec<f64>,
        n_covariates: usize,
        temporal_design: DMatrix<f64>,
        evolution: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sites.len();
        if n == 0 || n_times == 0 {
            return Err(Error::dim("dataset needs at least one site and one time"));
        }
        if counts.len() != n * n_times || observed.len() != n * n_times {
            return Err(Error::dim(format!(
                "counts/mask length must be T*n = {}, got {} and {}",
                n * n_times,
                counts.len(),
                observed.len()
            )));
        }
        if covariates.len() != n * n_times * n_covariates {
            return Err(Error::dim(format!(
                "covariates length must be T*n*q = {}, got {}",
                n * n_times * n_covariates,
                covariates.len()
            )));
        }
        let p = evolution.nrows();
        if evolution.ncols() != p || temporal_design.ncols() != p || temporal_design.nrows() != n_times {
            return Err(Error::dim(format!(
                "F must be T x p ({} x {p}) and G p x p; got F {}x{} and G {}x{}",
                n_times,
                temporal_design.nrows(),
                temporal_design.ncols(),
                evolution.nrows(),
                evolution.ncols()
            )));
        }
        for s in &sites {
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::domain(format!("non-finite site coordinate ({}, {})", s.x, s.y)));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if sites[i] == sites[j] {
                    return Err(Error::domain(format!("sites {i} and {j} share coordinates")));
                }
            }
        }
        if covariates.iter().any(|v| !v.is_finite()) || temporal_design.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite covariate or design value"));
        }
        let mut f_rows = Vec::with_capacity(n_times * p);
        for t in 0..n_times {
            f_rows.extend(temporal_design.row(t).iter());
        }
        Ok(Self {
            sites,
            counts,
            observed,
            covariates,
            temporal_design: f_rows,
            evolution,
            n_times,
            n_covariates,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// `p`, the number of dynamic states.
    pub fn n_states(&self) -> usize {
        self.evolution.nrows()
    }

    /// `q`, the number of fixed-effect covariates.
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn sites(&self) -> &[SpatialLocation] {
        &self.sites
    }

    #[inline]
    pub fn cell(&self, t: usize, i: usize) -> usize {
        t * self.sites.len() + i
    }

    #[inline]
    pub fn count(&self, t: usize, i: usize) -> u64 {
        self.counts[self.cell(t, i)]
    }

    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.observed[self.cell(t, i)]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// `X_t(s_i)`
    #[inline]
    pub fn covariates_at(&self, t: usize, i: usize) -> &[f64] {
        let q = self.n_covariates;
        let c = self.cell(t, i);
        &self.covariates[c * q..(c + 1) * q]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    /// `F_t`
    #[inline]
    pub fn design_row(&self, t: usize) -> &[f64] {
        let p = self.n_states();
        &self.temporal_design[t * p..(t + 1) * p]
    }

    pub fn temporal_design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_times, self.n_states(), &self.temporal_design)
    }

    /// `G`
    pub fn evolution(&self) -> &DMatrix<f64> {
        &self.evolution
    }

    /// Copy with a different mask; counts are left untouched.
    pub fn with_mask(&self, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != self.observed.len() {
            return Err(Error::dim("mask length does not match the dataset"));
        }
        Ok(Self { observed, ..self.clone() })
    }

    /// Copy with the counts at unobserved cells replaced by `sentinel`.
    pub fn with_masked_counts(&self, sentinel: u64) -> Self {
        let counts = self
            .counts
            .iter()
            .zip(&self.observed)
            .map(|(&c, &o)| if o { c } else { sentinel })
            .collect();
        Self { counts, ..self.clone() }
    }
}

/// Matérn hyperparameters; `nu` is configuration, never sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma2: f64,
    pub kappa: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, kappa: f64, nu: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && kappa > 0.0 && nu > 0.0) {
            return Err(Error::domain(format!(
                "Matérn parameters must be positive: sigma2={sigma2}, kappa={kappa}, nu={nu}"
            )));
        }
        Ok(Self { sigma2, kappa, nu })
    }

    pub fn covariance(&self, d: f64) -> Result<f64> {
        Ok(self.sigma2 * matern_correlation(d, self.kappa, self.nu)?)
    }
}

/// Hyperparameters and fixed effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub kappa: f64,
    pub sigma2: f64,
    pub tau2: f64,
    /// Diagonal of the state-evolution covariance `W`.
    pub w: Vec<f64>,
    pub beta: Vec<f64>,
}

impl HyperState {
    /// Checks positivity and the range prior support `(0, kappa_max]`.
    pub fn validate(&self, kappa_max: f64) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= kappa_max) {
            return Err(Error::domain(format!("kappa={} outside (0, {kappa_max}]", self.kappa)));
        }
        if !(self.sigma2 > 0.0 && self.tau2 > 0.0) || self.w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::domain("variance hyperparameters must be positive"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("non-finite beta"));
        }
        Ok(())
    }
}

/// Latent layers of the model.
///
/// `field` column `t` is the intercept representation at time `t`: the mesh
/// weights `R_t` on the sparse path, or `mu_t` at the sites on the dense path.
/// The time-zero intercept is identically zero and not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// `n x T` log-rates.
    pub lambda: DMatrix<f64>,
    /// `N x T` intercept weights.
    pub field: DMatrix<f64>,
    /// `p x T` dynamic states `theta_1..theta_T`.
    pub theta: DMatrix<f64>,
    /// `theta_0`.
    pub theta0: DVector<f64>,
}

impl LatentState {
    pub fn zeros(n_sites: usize, n_nodes: usize, n_times: usize, p: usize) -> Self {
        Self {
            lambda: DMatrix::zeros(n_sites, n_times),
            field: DMatrix::zeros(n_nodes, n_times),
            theta: DMatrix::zeros(p, n_times),
            theta0: DVector::zeros(p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().chain(self.field.iter()).chain(self.theta.iter()).all(|v| v.is_finite())
    }

    /// Intercept at the data sites, `n x T` (`A R_t` per column, or `mu_t`).
    pub fn intercepts(&self, projector: Option<&CscMatrix>) -> DMatrix<f64> {
        match projector {
            None => self.field.clone(),
            Some(a) => {
                let mut out = DMatrix::zeros(a.nrows(), self.field.ncols());
                for t in 0..self.field.ncols() {
                    let col = a.mul_vec(self.field.column(t).as_slice());
                    out.column_mut(t).copy_from_slice(&col);
                }
                out
            }
        }
    }
}

/// Inverse-gamma prior `InvGamma(shape, rate)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }
}

impl Default for InvGammaPrior {
    fn default() -> Self {
        Self::new(2.0, 0.1)
    }
}

/// Prior hyperparameters. Defaults follow the published hierarchy:
/// `InvGamma(2, 0.1)` for every variance, `beta ~ N(0, 10 I)`, `kappa ~ U(0, 2 delta]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub sigma2: InvGammaPrior,
    pub tau2: InvGammaPrior,
    /// One prior per state variance; a single entry is shared by all of them.
    pub w: Vec<InvGammaPrior>,
    pub beta_variance: f64,
    /// Upper end of the uniform range prior; `None` means twice the largest site distance.
    pub kappa_upper: Option<f64>,
    /// Mean of `theta_0`, shared by all components.
    pub theta0_mean: f64,
    /// Diagonal of `C_0`.
    pub theta0_variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma2: InvGammaPrior::default(),
            tau2: InvGammaPrior::default(),
            w: vec![InvGammaPrior::default()],
            beta_variance: 10.0,
            kappa_upper: None,
            theta0_mean: 0.0,
            theta0_variance: 100.0,
        }
    }
}

impl PriorConfig {
    pub fn w_prior(&self, l: usize) -> InvGammaPrior {
        if self.w.len() == 1 {
            self.w[0]
        } else {
            self.w[l]
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let mut all = vec![("sigma2", self.sigma2), ("tau2", self.tau2)];
        if self.w.is_empty() || (self.w.len() != 1 && self.w.len() != p) {
            return Err(Error::Config(format!("need 1 or {p} state-variance priors, got {}", self.w.len())));
        }
        all.extend(self.w.iter().map(|&w| ("w", w)));
        for (name, pr) in all {
            if !(pr.shape > 1.0 && pr.rate > 0.0) {
                return Err(Error::Config(format!(
                    "{name} prior needs shape > 1 and rate > 0, got ({}, {})",
                    pr.shape, pr.rate
                )));
            }
        }
        if !(self.beta_variance > 0.0 && self.theta0_variance > 0.0) {
            return Err(Error::Config("beta and theta0 prior variances must be positive".into()));
        }
        if let Some(k) = self.kappa_upper {
            if !(k > 0.0) {
                return Err(Error::Config(format!("kappa upper bound must be positive, got {k}")));
            }
        }
        Ok(())
    }

    /// Range prior support upper bound for the given sites.
    pub fn kappa_max(&self, sites: &[SpatialLocation]) -> f64 {
        self.kappa_upper.unwrap_or_else(|| 2.0 * max_pairwise_distance(sites))
    }
}

/// Matérn correlation `(d/kappa)^nu K_nu(d/kappa) / (Gamma(nu) 2^(nu-1))`.
pub fn matern_correlation(d: f64, kappa: f64, nu: f64) -> Result<f64> {
    if !(kappa > 0.0 && nu > 0.0) {
        return Err(Error::domain(format!("Matérn needs kappa > 0 and nu > 0, got {kappa}, {nu}")));
    }
    if !(d >= 0.0) {
        return Err(Error::domain(format!("distance must be nonnegative, got {d}")));
    }
    Ok(MaternKernel::new(kappa, nu).correlation(d))
}

/// Matérn correlation with the normalizing constant precomputed.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MaternKernel {
    kappa: f64,
    nu: f64,
    norm: f64,
}

impl MaternKernel {
    pub(crate) fn new(kappa: f64, nu: f64) -> Self {
        Self { kappa, nu, norm: 1.0 / (gamma(nu) * 2f64.powf(nu - 1.0)) }
    }

    #[inline]
    pub(crate) fn correlation(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        let u = d / self.kappa;
        if self.nu == 0.5 {
            return (-u).exp();
        }
        if u > 700.0 {
            return 0.0;
        }
        (self.norm * u.powf(self.nu) * bessel_k(self.nu, u)).clamp(0.0, 1.0)
    }
}

/// Dense Matérn correlation matrix `Omega` over `sites`.
///
/// Fails when the matrix cannot be factored even after the jitter policy.
pub fn build_dense_correlation(sites: &[SpatialLocation], kappa: f64, nu: f64) -> Result<DMatrix<f64>> {
    let omega = dense_correlation_unchecked(sites, kappa, nu)?;
    jittered_cholesky(&omega)?;
    Ok(omega)
}

pub(crate) fn dense_correlation_unchecked(
    sites: &[SpatialLocation],
    kappa: f64,
    nu: f64,
) -> Result<DMatrix<f64>> {
    if sites.is_empty() {
        return Err(Error::dim("correlation matrix needs at least one site"));
    }
    matern_correlation(0.0, kappa, nu)?;
    let kernel = MaternKernel::new(kappa, nu);
    let n = sites.len();
    let mut omega = DMatrix::identity(n, n);
    for j in 0..n {
        for i in j + 1..n {
            let c = kernel.correlation(sites[i].distance(&sites[j]));
            omega[(i, j)] = c;
            omega[(j, i)] = c;
        }
    }
    Ok(omega)
}

/// Poisson log-pmf `y lambda - exp(lambda) - log(y!)` with log-rate `lambda`.
pub fn log_poisson_lik(count: i64, lambda: f64) -> Result<f64> {
    if count < 0 {
        return Err(Error::domain(format!("negative count {count}")));
    }
    let y = count as f64;
    let log_factorial = if count < 32 { (2..=count).map(|k| (k as f64).ln()).sum() } else { ln_gamma(y + 1.0) };
    Ok(y * lambda - lambda.exp() - log_factorial)
}

/// Conditional mean of `lambda_t(s_i)` given the other layers:
/// intercept + `F_t' theta_t` + `X_t(s_i)' beta`.
///
/// `projector` is the `n x N` matrix `A` on the sparse path and `None`
/// (identity) on the dense path.
pub fn conditional_mean_lambda(
    t: usize,
    i: usize,
    state: &LatentState,
    hypers: &HyperState,
    data: &Dataset,
    projector: Option<&CscMatrix>,
) -> Result<f64> {
    if t >= data.n_times() || i >= data.n_sites() {
        return Err(Error::dim(format!(
            "cell ({t}, {i}) outside {}x{} dataset",
            data.n_times(),
            data.n_sites()
        )));
    }
    let intercept = match projector {
        None => state.field[(i, t)],
        Some(a) => {
            let mut acc = 0.0;
            // Row access on CSC: scan columns; A is tiny per row.
            for j in 0..a.ncols() {
                let v = a.get(i, j);
                if v != 0.0 {
                    acc += v * state.field[(j, t)];
                }
            }
            acc
        }
    };
    let temporal: f64 = data.design_row(t).iter().zip(state.theta.column(t).iter()).map(|(f, th)| f * th).sum();
    let fixed: f64 = data.covariates_at(t, i).iter().zip(&hypers.beta).map(|(x, b)| x * b).sum();
    Ok(intercept + temporal + fixed)
}
