//! Range and increment-variance moves with the intercept weights integrated
//! out, followed by an exact joint draw of all the weights.
//!
//! Given the log-rates, the weights `R_1..R_T` are jointly Gaussian with
//! precision `D (x) Q_kappa / sigma2 + I (x) A'A / tau2`, where `D` is the
//! precision of a unit random walk started at zero. Rotating time onto the
//! eigenvectors of `D` splits this into `T` independent `N x N` systems
//! `d_k Q_kappa / sigma2 + A'A / tau2`, which gives both the marginal
//! likelihood of `(kappa, sigma2)` and the joint draw at the cost of `T`
//! small factorizations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::intercept::site_residual;
use crate::error::Result;
use crate::field::{ConditionalFactor, FieldPrecision, SpatialModel};
use crate::model::{Dataset, HyperState, InvGammaPrior, LatentState};

/// How the intercept weights are updated each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldUpdate {
    /// One time at a time, each `R_t` given its neighbours in time.
    Sequential,
    /// A joint move on the range and increment variance with the weights
    /// integrated out, then a joint draw of every `R_t`.
    #[default]
    Collapsed,
}

/// Eigenvalues and orthonormal eigenvectors (columns) of the precision of a
/// unit-variance random walk `R_t = R_{t-1} + e_t`, `R_0 = 0`, over `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkModes {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl WalkModes {
    /// Mode `k` has eigenvalue `2 - 2 cos w_k` and shape `sin(t w_k)`,
    /// `w_k = (2k - 1) pi / (2T + 1)`.
    pub fn new(n_times: usize) -> Self {
        let nt = n_times;
        let denom = (2 * nt + 1) as f64;
        let mut vectors = DMatrix::zeros(nt, nt);
        let mut values = Vec::with_capacity(nt);
        for k in 0..nt {
            let w = (2 * k + 1) as f64 * std::f64::consts::PI / denom;
            values.push(2.0 - 2.0 * w.cos());
            let mut col = vectors.column_mut(k);
            for t in 0..nt {
                col[t] = ((t + 1) as f64 * w).sin();
            }
            let norm = col.norm();
            col /= norm;
        }
        Self { values, vectors }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `T x T`, column `k` is mode `k`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// `sum_t A' y_t u_k(t) / tau2` for every mode, as an `N x T` matrix, where
/// `y_t` is the log-rate minus the dynamic and fixed effects.
pub fn modal_data(
    state: &LatentState,
    hypers: &HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
    modes: &WalkModes,
) -> DMatrix<f64> {
    let (nn, nt) = (spatial.n_nodes(), data.n_times());
    let mut by_time = DMatrix::zeros(nn, nt);
    let mut col = vec![0.0; nn];
    for t in 0..nt {
        spatial.project_transpose_into(&site_residual(t, state, hypers, data), &mut col);
        by_time.column_mut(t).copy_from_slice(&col);
    }
    by_time /= hypers.tau2;
    by_time * modes.vectors()
}

enum Systems {
    /// One factor of `d_k Q / sigma2 + A'A / tau2` per mode.
    Factors(Vec<ConditionalFactor>),
    /// Dense path: with `Omega = V diag(l) V'` and `A = I`, mode `k` has
    /// precision `V diag(d_k / (sigma2 l_j) + 1 / tau2) V'`.
    Spectral { basis: DMatrix<f64>, precision: DMatrix<f64>, rhs: DMatrix<f64> },
}

/// Joint conditional of the weights for one `(kappa, sigma2)`, in modal coordinates.
pub struct ModalPosterior {
    systems: Systems,
    rhs: DMatrix<f64>,
    /// `log p(y | kappa, sigma2)` up to terms free of both.
    pub log_marginal: f64,
}

impl ModalPosterior {
    pub fn new(
        spatial: &SpatialModel,
        precision: &mut FieldPrecision,
        modes: &WalkModes,
        rhs: DMatrix<f64>,
        sigma2: f64,
        tau2: f64,
    ) -> Result<Self> {
        let (nn, nt) = (rhs.nrows(), rhs.ncols());
        let mut quad = 0.0;
        let mut logdet = 0.0;
        let (systems, logdet_q) = match precision {
            FieldPrecision::Dense(p) => {
                let (basis, eig) = p.spectrum()?;
                let rhat = basis.transpose() * &rhs;
                let mut prec = DMatrix::zeros(nn, nt);
                for k in 0..nt {
                    let dk = modes.values()[k] / sigma2;
                    for j in 0..nn {
                        let e = dk / eig[j] + 1.0 / tau2;
                        prec[(j, k)] = e;
                        quad += rhat[(j, k)] * rhat[(j, k)] / e;
                        logdet += e.ln();
                    }
                }
                let logdet_q = -eig.iter().map(|l| l.ln()).sum::<f64>();
                (Systems::Spectral { basis: basis.clone(), precision: prec, rhs: rhat }, logdet_q)
            }
            FieldPrecision::Sparse(_) => {
                let mut factors = Vec::with_capacity(nt);
                for k in 0..nt {
                    let f = spatial.conditional_factor(precision, modes.values()[k] / sigma2, 1.0 / tau2)?;
                    let b = rhs.column(k);
                    let sol = f.solve(b.as_slice());
                    quad += b.iter().zip(&sol).map(|(x, y)| x * y).sum::<f64>();
                    logdet += f.logdet();
                    factors.push(f);
                }
                (Systems::Factors(factors), precision.logdet())
            }
        };
        let log_marginal =
            0.5 * quad - 0.5 * logdet - 0.5 * (nn * nt) as f64 * sigma2.ln() + 0.5 * nt as f64 * logdet_q;
        Ok(Self { systems, rhs, log_marginal })
    }

    /// A joint draw of `R_1..R_T` as an `N x T` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, modes: &WalkModes, rng: &mut R) -> DMatrix<f64> {
        let (nn, nt) = (self.rhs.nrows(), self.rhs.ncols());
        let modal = match &self.systems {
            Systems::Factors(factors) => {
                let mut m = DMatrix::zeros(nn, nt);
                for (k, f) in factors.iter().enumerate() {
                    let draw = f.sample(self.rhs.column(k).as_slice(), rng);
                    m.column_mut(k).copy_from_slice(&draw);
                }
                m
            }
            Systems::Spectral { basis, precision, rhs } => {
                let mut m = DMatrix::zeros(nn, nt);
                for k in 0..nt {
                    for j in 0..nn {
                        let e = precision[(j, k)];
                        let z: f64 = rng.sample(StandardNormal);
                        m[(j, k)] = rhs[(j, k)] / e + z / e.sqrt();
                    }
                }
                basis * m
            }
        };
        modal * modes.vectors().transpose()
    }

    /// Conditional mean of `R_1..R_T`.
    pub fn mean(&self, modes: &WalkModes) -> DMatrix<f64> {
        let (nn, nt) = (self.rhs.nrows(), self.rhs.ncols());
        let modal = match &self.systems {
            Systems::Factors(factors) => {
                let mut m = DMatrix::zeros(nn, nt);
                for (k, f) in factors.iter().enumerate() {
                    m.column_mut(k).copy_from_slice(&f.solve(self.rhs.column(k).as_slice()));
                }
                m
            }
            Systems::Spectral { basis, precision, rhs } => basis * rhs.component_div(precision),
        };
        modal * modes.vectors().transpose()
    }
}

/// Lower Cholesky factor of the proposal covariance on `(log kappa, log sigma2)`.
pub type ProposalFactor = [[f64; 2]; 2];

/// Outcome of one collapsed move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapsedMove {
    Accepted,
    Rejected,
    OutOfSupport,
    FactorizationFailed,
}

/// Log prior of `(log kappa, log sigma2)`: flat range on `(0, kappa_max]`
/// and inverse-gamma variance, with the log-scale Jacobians.
fn log_prior(kappa: f64, sigma2: f64, prior: InvGammaPrior) -> f64 {
    kappa.ln() - prior.shape * sigma2.ln() - prior.rate / sigma2
}

/// Random-walk Metropolis on `(log kappa, log sigma2)` against their
/// marginal posterior given everything but the weights, then an exact draw
/// of the weights. `precision` tracks the accepted range.
#[allow(clippy::too_many_arguments)]
pub fn update_collapsed<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &mut HyperState,
    precision: &mut FieldPrecision,
    spatial: &SpatialModel,
    data: &Dataset,
    modes: &WalkModes,
    sigma2_prior: InvGammaPrior,
    kappa_max: f64,
    proposal: &ProposalFactor,
    rng: &mut R,
) -> Result<CollapsedMove> {
    let rhs = modal_data(state, hypers, data, spatial, modes);
    let current = ModalPosterior::new(spatial, precision, modes, rhs.clone(), hypers.sigma2, hypers.tau2)?;
    let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let u: f64 = rng.random();
    let kappa = (hypers.kappa.ln() + proposal[0][0] * z[0]).exp();
    let sigma2 = (hypers.sigma2.ln() + proposal[1][0] * z[0] + proposal[1][1] * z[1]).exp();

    let mut outcome = if !(kappa > 0.0 && kappa <= kappa_max && sigma2 > 0.0 && sigma2.is_finite()) {
        CollapsedMove::OutOfSupport
    } else {
        CollapsedMove::Rejected
    };
    let mut chosen = None;
    if outcome == CollapsedMove::Rejected {
        let attempt = spatial.precision(kappa).and_then(|mut p| {
            let post = ModalPosterior::new(spatial, &mut p, modes, rhs, sigma2, hypers.tau2)?;
            Ok((p, post))
        });
        match attempt {
            Err(_) => outcome = CollapsedMove::FactorizationFailed,
            Ok((p, post)) => {
                let log_alpha = post.log_marginal + log_prior(kappa, sigma2, sigma2_prior)
                    - current.log_marginal
                    - log_prior(hypers.kappa, hypers.sigma2, sigma2_prior);
                if u.ln() < log_alpha {
                    hypers.kappa = kappa;
                    hypers.sigma2 = sigma2;
                    *precision = p;
                    outcome = CollapsedMove::Accepted;
                    chosen = Some(post);
                }
            }
        }
    }
    let post = chosen.unwrap_or(current);
    state.field = post.sample(modes, rng);
    Ok(outcome)
}

/// Adapts the collapsed proposal: its shape follows the empirical covariance
/// of `(log kappa, log sigma2)` normalized to unit determinant, its overall
/// scale is tuned toward a target acceptance rate.
#[derive(Clone, Debug)]
pub struct ProposalShape {
    n: f64,
    mean: [f64; 2],
    /// Sums of centred cross products.
    m2: [[f64; 2]; 2],
}

/// Draws needed before the empirical shape replaces the identity.
const MIN_SHAPE_DRAWS: f64 = 50.0;

impl Default for ProposalShape {
    fn default() -> Self {
        Self { n: 0.0, mean: [0.0; 2], m2: [[0.0; 2]; 2] }
    }
}

impl ProposalShape {
    pub fn observe(&mut self, kappa: f64, sigma2: f64) {
        let x = [kappa.ln(), sigma2.ln()];
        self.n += 1.0;
        let delta = [x[0] - self.mean[0], x[1] - self.mean[1]];
        for i in 0..2 {
            self.mean[i] += delta[i] / self.n;
        }
        let after = [x[0] - self.mean[0], x[1] - self.mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                self.m2[i][j] += delta[i] * after[j];
            }
        }
    }

    /// Cholesky factor of `scale^2` times the unit-determinant shape.
    pub fn factor(&self, scale: f64) -> ProposalFactor {
        let identity = [[scale, 0.0], [0.0, scale]];
        if self.n < MIN_SHAPE_DRAWS {
            return identity;
        }
        let c = |i: usize, j: usize| self.m2[i][j] / (self.n - 1.0);
        let (a, b, d) = (c(0, 0), c(1, 0), c(1, 1));
        let det = a * d - b * b;
        if !(det > 0.0 && det.is_finite()) {
            return identity;
        }
        let norm = det.sqrt();
        let (a, b, d) = (a / norm, b / norm, d / norm);
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).sqrt();
        [[scale * l00, 0.0], [scale * l10, scale * l11]]
    }
}
