use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::SpatialModel;
use crate::linalg::DenseFactor;
use crate::model::{Dataset, HyperState, LatentState};

/// Univariate-observation dynamic linear model
/// `z_t = F_t' theta_t + e_t`, `theta_t = G theta_{t-1} + v_t`.
#[derive(Clone, Debug)]
pub struct StateSpaceModel {
    /// `T x p`, row `t` is `F_t'`.
    pub design: DMatrix<f64>,
    pub evolution: DMatrix<f64>,
    /// Diagonal of `W`.
    pub state_variance: DVector<f64>,
    pub obs_variance: f64,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

struct Filtered {
    /// Index 0 holds the prior `(m0, C0)`.
    m: Vec<DVector<f64>>,
    c: Vec<DMatrix<f64>>,
    /// One-step predictions `a_t`, `R_t` for `t = 1..T` at index `t - 1`.
    a: Vec<DVector<f64>>,
    r: Vec<DMatrix<f64>>,
}

/// Draws from `N(mean, cov)`, zeroing eigenvalues below `floor`: backward
/// covariances are pure rounding noise when the evolution is noiseless.
fn sample_clamped<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, floor: f64, rng: &mut R) -> DVector<f64> {
    let p = mean.len();
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eig = cov.clone().symmetric_eigen();
    let scaled = DVector::from_fn(p, |i, _| {
        let e = eig.eigenvalues[i];
        if e > floor { e.sqrt() * z[i] } else { 0.0 }
    });
    mean + eig.eigenvectors * scaled
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

impl StateSpaceModel {
    fn n_times(&self) -> usize {
        self.design.nrows()
    }

    fn filter(&self, z: &[f64]) -> Result<Filtered> {
        let nt = self.n_times();
        if z.len() != nt {
            return Err(Error::dim(format!("{} observations for {nt} times", z.len())));
        }
        let g = &self.evolution;
        let w = DMatrix::from_diagonal(&self.state_variance);
        let mut out = Filtered {
            m: vec![self.m0.clone()],
            c: vec![self.c0.clone()],
            a: Vec::with_capacity(nt),
            r: Vec::with_capacity(nt),
        };
        for t in 0..nt {
            let a = g * &out.m[t];
            let mut r = g * &out.c[t] * g.transpose() + &w;
            symmetrize(&mut r);
            let f = self.design.row(t).transpose();
            let rf = &r * &f;
            let q = f.dot(&rf) + self.obs_variance;
            if !(q > 0.0) || !q.is_finite() {
                return Err(Error::cond(format!("one-step forecast variance {q} at time {t}")));
            }
            let k = &rf / q;
            let m = &a + &k * (z[t] - f.dot(&a));
            let mut c = &r - &k * k.transpose() * q;
            symmetrize(&mut c);
            out.m.push(m);
            out.c.push(c);
            out.a.push(a);
            out.r.push(r);
        }
        Ok(out)
    }

    /// `C_t G' R_{t+1}^{-1}`
    fn smoother_gain(&self, c: &DMatrix<f64>, r_next: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let gc = &self.evolution * c;
        let solved = DenseFactor::new(r_next)?.solve_matrix(&gc);
        Ok(solved.transpose())
    }

    /// Smoothing means and covariances of `theta_0..theta_T` (index 0 is `theta_0`).
    pub fn smooth(&self, z: &[f64]) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        let f = self.filter(z)?;
        let nt = self.n_times();
        let mut s = f.m.clone();
        let mut big_s = f.c.clone();
        for t in (0..nt).rev() {
            let b = self.smoother_gain(&f.c[t], &f.r[t])?;
            s[t] = &f.m[t] + &b * (&s[t + 1] - &f.a[t]);
            let mut cov = &f.c[t] + &b * (&big_s[t + 1] - &f.r[t]) * b.transpose();
            symmetrize(&mut cov);
            big_s[t] = cov;
        }
        Ok((s, big_s))
    }

    /// Joint draw of `theta_0..theta_T` by forward filtering, backward sampling.
    pub fn sample<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let f = self.filter(z)?;
        let nt = self.n_times();
        let p = self.evolution.nrows();
        let mut theta = DMatrix::zeros(p, nt);
        let floor = |c: &DMatrix<f64>| 1e-12 * c.trace().abs();
        let mut next = sample_clamped(&f.m[nt], &f.c[nt], floor(&f.c[nt]), rng);
        theta.column_mut(nt - 1).copy_from(&next);
        for t in (0..nt).rev() {
            let b = self.smoother_gain(&f.c[t], &f.r[t])?;
            let h = &f.m[t] + &b * (&next - &f.a[t]);
            let mut cov = &f.c[t] - &b * &f.r[t] * b.transpose();
            symmetrize(&mut cov);
            next = sample_clamped(&h, &cov, floor(&f.c[t]), rng);
            if t > 0 {
                theta.column_mut(t - 1).copy_from(&next);
            }
        }
        Ok((next, theta))
    }
}

/// `z_t = mean_i (lambda_ti - intercept_ti - X_ti' beta)`, observed with variance `tau2 / n`.
pub fn pseudo_observations(state: &LatentState, hypers: &HyperState, data: &Dataset, spatial: &SpatialModel) -> Vec<f64> {
    let n = data.n_sites();
    let mut intercept = vec![0.0; n];
    (0..data.n_times())
        .map(|t| {
            spatial.project_into(state.field.column(t).as_slice(), &mut intercept);
            let sum: f64 = (0..n)
                .map(|i| {
                    let fixed: f64 = data.covariates_at(t, i).iter().zip(&hypers.beta).map(|(x, b)| x * b).sum();
                    state.lambda[(i, t)] - intercept[i] - fixed
                })
                .sum();
            sum / n as f64
        })
        .collect()
}

/// Draws the dynamic states `theta_0..theta_T` jointly.
pub fn update_theta_ffbs<R: Rng + ?Sized>(
    state: &mut LatentState,
    hypers: &HyperState,
    data: &Dataset,
    spatial: &SpatialModel,
    m0: &DVector<f64>,
    c0: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let model = StateSpaceModel {
        design: data.temporal_design(),
        evolution: data.evolution().clone(),
        state_variance: DVector::from_column_slice(&hypers.w),
        obs_variance: hypers.tau2 / data.n_sites() as f64,
        m0: m0.clone(),
        c0: c0.clone(),
    };
    let z = pseudo_observations(state, hypers, data, spatial);
    let (theta0, theta) = model.sample(&z, rng)?;
    state.theta0 = theta0;
    state.theta = theta;
    Ok(())
}
