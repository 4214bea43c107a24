use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::SpatialModel;
use crate::model::{Dataset, HyperState, LatentState};

/// `Y lambda - e^lambda - (lambda - m)^2 / (2 tau2)`, up to a constant.
pub fn pmala_log_target(y: f64, lambda: f64, m: f64, tau2: f64) -> f64 {
    let r = lambda - m;
    y * lambda - lambda.exp() - r * r / (2.0 * tau2)
}

pub fn pmala_gradient(y: f64, lambda: f64, m: f64, tau2: f64) -> f64 {
    y - lambda.exp() - (lambda - m) / tau2
}

/// Negative second derivative of the log target, used as the preconditioner.
pub fn pmala_curvature(lambda: f64, tau2: f64) -> f64 {
    lambda.exp() + 1.0 / tau2
}

/// Conditional means `m_ti` of every log-rate: intercept + `F_t' theta_t` + `X_ti' beta`.
pub fn conditional_means(
    state: &LatentState,
    hypers: &HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
) -> DMatrix<f64> {
    let (n, nt) = (data.n_sites(), data.n_times());
    let mut m = DMatrix::zeros(n, nt);
    let mut col = vec![0.0; n];
    for t in 0..nt {
        spatial.project_into(state.field.column(t).as_slice(), &mut col);
        let temporal: f64 = data.design_row(t).iter().zip(state.theta.column(t).iter()).map(|(f, th)| f * th).sum();
        for i in 0..n {
            let fixed: f64 = data.covariates_at(t, i).iter().zip(&hypers.beta).map(|(x, b)| x * b).sum();
            m[(i, t)] = col[i] + temporal + fixed;
        }
    }
    m
}

/// Acceptance counts from one sweep over the observed cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LambdaSweep {
    pub accepted: usize,
    pub proposed: usize,
}

impl LambdaSweep {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn log_proposal(to: f64, from_mean: f64, from_var: f64) -> f64 {
    let r = to - from_mean;
    -0.5 * from_var.ln() - r * r / (2.0 * from_var)
}

/// One preconditioned MALA step on a single observed log-rate.
///
/// Returns the new value and whether the proposal was accepted.
pub fn pmala_step<R: Rng + ?Sized>(
    y: f64,
    lambda: f64,
    m: f64,
    tau2: f64,
    step: f64,
    rng: &mut R,
) -> Option<(f64, bool)> {
    let eps2 = step * step;
    let g = pmala_gradient(y, lambda, m, tau2);
    if !g.is_finite() {
        return None;
    }
    let h = pmala_curvature(lambda, tau2);
    let fwd_mean = lambda + 0.5 * eps2 * g / h;
    let fwd_var = eps2 / h;
    let z: f64 = rng.sample(StandardNormal);
    let prop = fwd_mean + fwd_var.sqrt() * z;
    let u: f64 = rng.random();

    let g_new = pmala_gradient(y, prop, m, tau2);
    if !g_new.is_finite() {
        return Some((lambda, false));
    }
    let h_new = pmala_curvature(prop, tau2);
    let rev_mean = prop + 0.5 * eps2 * g_new / h_new;
    let rev_var = eps2 / h_new;
    let log_alpha = pmala_log_target(y, prop, m, tau2) - pmala_log_target(y, lambda, m, tau2)
        + log_proposal(lambda, rev_mean, rev_var)
        - log_proposal(prop, fwd_mean, fwd_var);
    if log_alpha.is_finite() && u.ln() < log_alpha {
        Some((prop, true))
    } else {
        Some((lambda, false))
    }
}

/// Updates every log-rate given its conditional mean.
///
/// Observed cells take one preconditioned MALA step; unobserved cells are
/// drawn exactly from `N(m, tau2)`.
pub fn update_lambda_pmala<R: Rng + ?Sized>(
    lambda: &mut DMatrix<f64>,
    means: &DMatrix<f64>,
    tau2: f64,
    data: &Dataset,
    step: f64,
    rng: &mut R,
) -> Result<LambdaSweep> {
    let mut sweep = LambdaSweep::default();
    let sd = tau2.sqrt();
    for t in 0..data.n_times() {
        for i in 0..data.n_sites() {
            let m = means[(i, t)];
            if !data.is_observed(t, i) {
                let z: f64 = rng.sample(StandardNormal);
                lambda[(i, t)] = m + sd * z;
                continue;
            }
            let y = data.count(t, i) as f64;
            let (new, acc) = pmala_step(y, lambda[(i, t)], m, tau2, step, rng).ok_or_else(|| {
                Error::Numerical(format!("non-finite log-rate gradient at cell (t={t}, site={i})"))
            })?;
            lambda[(i, t)] = new;
            sweep.proposed += 1;
            sweep.accepted += acc as usize;
        }
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gradient_at_stationary_point() {
        assert_eq!(pmala_gradient(1.0, 0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn gradient_against_finite_difference_example() {
        let g = pmala_gradient(2.0, 2f64.ln(), 0.0, 0.5);
        let fd = central_diff(|l| pmala_log_target(2.0, l, 0.0, 0.5), 2f64.ln(), 1e-5);
        assert!((g - (-1.386294361119891)).abs() < 1e-12);
        assert!((g - fd).abs() < 1e-8);
    }

    #[test]
    fn gradient_and_curvature_match_finite_differences_on_grid() {
        let tau2 = 0.3;
        let m = 0.7;
        for &y in &[0.0, 1.0, 5.0, 50.0] {
            for k in 0..=80 {
                let l = -3.0 + 0.1 * k as f64;
                let h = 1e-5 * (1.0 + l.abs());
                let fd_g = central_diff(|x| pmala_log_target(y, x, m, tau2), l, h);
                let g = pmala_gradient(y, l, m, tau2);
                let scale = g.abs().max(1.0);
                assert!((g - fd_g).abs() / scale < 1e-6, "grad y={y} l={l}: {g} vs {fd_g}");
                let fd_h = -central_diff(|x| pmala_gradient(y, x, m, tau2), l, h);
                let c = pmala_curvature(l, tau2);
                assert!((c - fd_h).abs() / c < 1e-6, "curv y={y} l={l}: {c} vs {fd_h}");
            }
        }
    }

    #[test]
    fn missing_cell_with_vanishing_nugget_equals_mean() {
        let data = crate::model::Dataset::new(
            vec![crate::model::SpatialLocation::new(0.0, 0.0)],
            1,
            vec![0],
            vec![false],
            vec![],
            0,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let mut lambda = DMatrix::zeros(1, 1);
        let means = DMatrix::from_element(1, 1, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sweep = update_lambda_pmala(&mut lambda, &means, 0.0, &data, 0.8, &mut rng).unwrap();
        assert_eq!(lambda[(0, 0)], 3.0);
        assert_eq!(sweep.proposed, 0);
    }

    /// Moments of `exp(log_target)` by trapezoid quadrature.
    fn quadrature_moments(y: f64, m: f64, tau2: f64) -> (f64, f64) {
        let (lo, hi, n) = (-6.0, 8.0, 200_000);
        let dx = (hi - lo) / n as f64;
        let peak = (0..=n).map(|k| pmala_log_target(y, lo + k as f64 * dx, m, tau2)).fold(f64::MIN, f64::max);
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            let x = lo + k as f64 * dx;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let d = w * (pmala_log_target(y, x, m, tau2) - peak).exp();
            z += d;
            s1 += d * x;
            s2 += d * x * x;
        }
        let mean = s1 / z;
        (mean, s2 / z - mean * mean)
    }

    #[test]
    fn long_run_matches_quadrature_moments() {
        let (y, m, tau2) = (3.0, 0.5, 0.4);
        let (mean, var) = quadrature_moments(y, m, tau2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut l = m;
        let n = 200_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            l = pmala_step(y, l, m, tau2, 1.0, &mut rng).unwrap().0;
            draws.push(l);
        }
        let emp_mean = draws.iter().sum::<f64>() / n as f64;
        let emp_var = draws.iter().map(|d| (d - emp_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Batch means give the Monte Carlo error under autocorrelation.
        let batches = 200;
        let bsize = n / batches;
        let bm: Vec<f64> = (0..batches).map(|b| draws[b * bsize..(b + 1) * bsize].iter().sum::<f64>() / bsize as f64).collect();
        let bmean = bm.iter().sum::<f64>() / batches as f64;
        let se_mean = (bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt();
        let bv: Vec<f64> = (0..batches)
            .map(|b| draws[b * bsize..(b + 1) * bsize].iter().map(|d| (d - emp_mean).powi(2)).sum::<f64>() / bsize as f64)
            .collect();
        let bvmean = bv.iter().sum::<f64>() / batches as f64;
        let se_var = (bv.iter().map(|v| (v - bvmean).powi(2)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt();
        assert!((emp_mean - mean).abs() < 3.0 * se_mean, "mean {emp_mean} vs {mean} (se {se_mean})");
        assert!((emp_var - var).abs() < 3.0 * se_var, "var {emp_var} vs {var} (se {se_var})");
    }

    #[test]
    fn reversibility_of_log_acceptance() {
        // alpha(x -> x') and alpha(x' -> x) must be reciprocal.
        let (y, m, tau2, eps) = (5.0, 1.0, 0.2, 0.7);
        let lr = |from: f64, to: f64| {
            let e2 = eps * eps;
            let fm = from + 0.5 * e2 * pmala_gradient(y, from, m, tau2) / pmala_curvature(from, tau2);
            let fv = e2 / pmala_curvature(from, tau2);
            let rm = to + 0.5 * e2 * pmala_gradient(y, to, m, tau2) / pmala_curvature(to, tau2);
            let rv = e2 / pmala_curvature(to, tau2);
            pmala_log_target(y, to, m, tau2) - pmala_log_target(y, from, m, tau2) + log_proposal(from, rm, rv)
                - log_proposal(to, fm, fv)
        };
        for &(a, b) in &[(0.3, 1.9), (-1.0, 2.5), (1.6, 1.61)] {
            assert!((lr(a, b) + lr(b, a)).abs() < 1e-12);
        }
    }
}
