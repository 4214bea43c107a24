//! Exact Gibbs move along the time-varying level shared by the intercepts
//! and the dynamic states.
//!
//! Adding `c_t` to every intercept weight at time `t` and subtracting
//! `c_t F_t / |F_t|^2` from `theta_t` leaves every log-rate mean unchanged
//! when the projector rows sum to one, so only the two random-walk priors see
//! `c`. Its conditional is Gaussian with a tridiagonal precision.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{FieldPrecision, SpatialModel};
use crate::model::{Dataset, HyperState, LatentState};

/// Symmetric tridiagonal matrix: `diag[t]` and `sub[t] = M[t+1][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Self { diag: vec![0.0; n], sub: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for (t, v) in self.sub.iter().enumerate() {
            m[(t + 1, t)] = *v;
            m[(t, t + 1)] = *v;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }

    /// Draw from `N(M^{-1} h, M^{-1})` given standard normals `z`.
    pub fn sample_with(&self, h: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let n = self.diag.len();
        let mut l = vec![0.0; n];
        let mut m = vec![0.0; n.saturating_sub(1)];
        for t in 0..n {
            let mut d = self.diag[t];
            if t > 0 {
                m[t - 1] = self.sub[t - 1] / l[t - 1];
                d -= m[t - 1] * m[t - 1];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::cond(format!("level precision not positive definite at t={t}")));
            }
            l[t] = d.sqrt();
        }
        let mut y = vec![0.0; n];
        for t in 0..n {
            let prev = if t > 0 { m[t - 1] * y[t - 1] } else { 0.0 };
            y[t] = (h[t] - prev) / l[t];
        }
        for (yt, zt) in y.iter_mut().zip(z) {
            *yt += zt;
        }
        for t in (0..n).rev() {
            let next = if t + 1 < n { m[t] * y[t + 1] } else { 0.0 };
            y[t] = (y[t] - next) / l[t];
        }
        Ok(y)
    }
}

/// Whether the shift leaves the log-rate means unchanged: every design row
/// is nonzero and every projector row sums to one.
pub fn level_shift_applies(data: &Dataset, spatial: &SpatialModel) -> bool {
    let nonzero_design = (0..data.n_times()).all(|t| data.design_row(t).iter().any(|f| *f != 0.0));
    let mut rows = vec![0.0; data.n_sites()];
    spatial.project_into(&vec![1.0; spatial.n_nodes()], &mut rows);
    nonzero_design && rows.iter().all(|r| (r - 1.0).abs() < 1e-9)
}

fn shift_direction(data: &Dataset, t: usize) -> DVector<f64> {
    let f = DVector::from_column_slice(data.design_row(t));
    let n2 = f.norm_squared();
    f / n2
}

/// Precision and linear term of `c` given everything else: the log
/// conditional is `-c' M c / 2 + h' c` up to a constant.
pub fn level_shift_conditional(
    state: &LatentState,
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    data: &Dataset,
) -> (Tridiagonal, Vec<f64>) {
    let nt = data.n_times();
    let nn = state.field.nrows();
    let mut ones_q = vec![0.0; nn];
    precision.mul_into(&vec![1.0; nn], &mut ones_q);
    let s = ones_q.iter().sum::<f64>() / hypers.sigma2;

    let mut m = Tridiagonal::zeros(nt);
    let mut h = vec![0.0; nt];
    let winv: Vec<f64> = hypers.w.iter().map(|w| 1.0 / w).collect();
    let g = data.evolution();
    let wdot = |a: &DVector<f64>, b: &DVector<f64>| a.iter().zip(b.iter()).zip(&winv).map(|((x, y), w)| x * y * w).sum::<f64>();

    let mut prev_e: Option<DVector<f64>> = None;
    for t in 0..nt {
        // Intercept random walk: increment d_t gains (c_t - c_{t-1}) on every node.
        let gt: f64 = (0..nn)
            .map(|j| {
                let prev = if t > 0 { state.field[(j, t - 1)] } else { 0.0 };
                ones_q[j] * (state.field[(j, t)] - prev)
            })
            .sum::<f64>()
            / hypers.sigma2;
        m.diag[t] += s;
        h[t] -= gt;
        if t > 0 {
            m.diag[t - 1] += s;
            m.sub[t - 1] -= s;
            h[t - 1] += gt;
        }

        // State evolution: v_t = theta_t - G theta_{t-1} loses c_t e_t - c_{t-1} G e_{t-1}.
        let e = shift_direction(data, t);
        let prev_theta = if t > 0 { state.theta.column(t - 1).into_owned() } else { state.theta0.clone() };
        let v = state.theta.column(t) - g * prev_theta;
        m.diag[t] += wdot(&e, &e);
        h[t] += wdot(&e, &v);
        if let Some(pe) = prev_e.as_ref() {
            let ge = g * pe;
            m.diag[t - 1] += wdot(&ge, &ge);
            m.sub[t - 1] -= wdot(&e, &ge);
            h[t - 1] -= wdot(&ge, &v);
        }
        prev_e = Some(e);
    }
    (m, h)
}

/// Applies the shift `c` to the intercept weights and the states.
pub fn apply_level_shift(state: &mut LatentState, data: &Dataset, c: &[f64]) {
    for (t, &ct) in c.iter().enumerate() {
        state.field.column_mut(t).add_scalar_mut(ct);
        let e = shift_direction(data, t);
        let mut col = state.theta.column_mut(t);
        col -= e * ct;
    }
}

/// Draws the level shift from its conditional and applies it. Returns
/// `false` without drawing when the shift would change the log-rate means.
pub fn update_level_shift<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &HyperState,
    precision: &mut FieldPrecision,
    data: &Dataset,
    spatial: &SpatialModel,
    rng: &mut R,
) -> Result<bool> {
    if !level_shift_applies(data, spatial) {
        return Ok(false);
    }
    let (m, h) = level_shift_conditional(state, hypers, precision, data);
    let z: Vec<f64> = (0..h.len()).map(|_| rng.sample(StandardNormal)).collect();
    let c = m.sample_with(&h, &z)?;
    apply_level_shift(state, data, &c);
    Ok(true)
}
