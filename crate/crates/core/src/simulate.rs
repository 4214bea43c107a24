//! Synthetic data from the full model hierarchy, with missingness scenarios.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseFactor;
use crate::model::{build_dense_correlation, Dataset, HyperState, SpatialLocation};

/// Log-rates above this produce absurd counts and abort the simulation.
pub const MAX_LOG_RATE: f64 = 20.0;

/// Harmonic seasonal design: `F = (1, 0, 1, 0, ...)` and block-diagonal
/// rotations by `2 pi k / period`, `k = 1..order`.
pub fn build_harmonics(period: usize, order: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if period < 2 || order < 1 {
        return Err(Error::Config(format!("harmonics need period >= 2 and order >= 1, got {period}, {order}")));
    }
    let p = 2 * order;
    let mut f = DVector::zeros(p);
    let mut g = DMatrix::zeros(p, p);
    for k in 0..order {
        let angle = 2.0 * PI * (k + 1) as f64 / period as f64;
        let (s, c) = angle.sin_cos();
        f[2 * k] = 1.0;
        g[(2 * k, 2 * k)] = c;
        g[(2 * k, 2 * k + 1)] = s;
        g[(2 * k + 1, 2 * k)] = -s;
        g[(2 * k + 1, 2 * k + 1)] = c;
    }
    Ok((f, g))
}

/// Which cells are hidden from the fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Missingness {
    None,
    /// A fraction of all cells, chosen uniformly.
    Cells(f64),
    /// Contiguous time blocks with lengths in `[min_len, max_len]` per site,
    /// until each site has the given fraction masked.
    Blocks { proportion: f64, min_len: usize, max_len: usize },
    /// Whole sites.
    Holdout(Vec<usize>),
}

/// Everything needed to generate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_sites: usize,
    /// Site coordinates; drawn uniformly on the unit square when absent.
    pub sites: Option<Vec<SpatialLocation>>,
    pub n_times: usize,
    pub truth: HyperState,
    pub nu: f64,
    pub period: usize,
    pub order: usize,
    pub n_covariates: usize,
    pub missingness: Missingness,
    pub seed: u64,
    /// Initial dynamic state; zero when absent.
    pub theta0: Option<Vec<f64>>,
}

impl SimulationSpec {
    /// Named presets: `appendix-c` (1000 sites, 200 days) and
    /// `appendix-c-small` (100 sites, 100 days).
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let (n_sites, n_times) = match name {
            "appendix-c" => (1000, 200),
            "appendix-c-small" => (100, 100),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        Ok(Self {
            n_sites,
            sites: None,
            n_times,
            truth: HyperState {
                kappa: 0.35,
                sigma2: 0.10,
                tau2: 0.05,
                w: vec![0.01, 0.02],
                beta: vec![0.266, 0.372, 0.573],
            },
            nu: 1.0,
            period: 7,
            order: 1,
            n_covariates: 3,
            missingness: Missingness::None,
            seed,
            theta0: None,
        })
    }

    fn validate(&self) -> Result<()> {
        let h = &self.truth;
        if self.n_sites == 0 || self.n_times == 0 {
            return Err(Error::Config("simulation needs at least one site and one time".into()));
        }
        if h.beta.len() != self.n_covariates {
            return Err(Error::Config(format!("{} coefficients for {} covariates", h.beta.len(), self.n_covariates)));
        }
        if h.w.len() != 2 * self.order {
            return Err(Error::Config(format!("{} state variances for {} states", h.w.len(), 2 * self.order)));
        }
        if !(h.sigma2 >= 0.0 && h.tau2 >= 0.0 && h.w.iter().all(|&w| w >= 0.0)) {
            return Err(Error::domain("simulation variances must be nonnegative"));
        }
        if !(h.kappa > 0.0 && self.nu > 0.0) {
            return Err(Error::domain("range and smoothness must be positive"));
        }
        if let Some(s) = &self.sites {
            if s.len() != self.n_sites {
                return Err(Error::Config(format!("{} coordinates for {} sites", s.len(), self.n_sites)));
            }
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != 2 * self.order {
                return Err(Error::Config("initial state has the wrong length".into()));
            }
        }
        Ok(())
    }
}

/// A simulated dataset with the latent truth behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedTruth {
    /// Counts at every cell with the missingness mask applied.
    pub dataset: Dataset,
    /// `n x T`
    pub lambda: DMatrix<f64>,
    /// `n x T` spatial intercepts.
    pub mu: DMatrix<f64>,
    /// `p x T`
    pub theta: DMatrix<f64>,
    pub theta0: DVector<f64>,
    pub hypers: HyperState,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates sites, covariates, intercept random walk, seasonal states,
/// log-rates and counts, then applies the spec's missingness.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<SimulatedTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, nt, q) = (spec.n_sites, spec.n_times, spec.n_covariates);
    let h = &spec.truth;
    let sites = match &spec.sites {
        Some(s) => s.clone(),
        None => (0..n).map(|_| SpatialLocation::new(rng.random(), rng.random())).collect(),
    };
    let covariates: Vec<f64> = (0..nt * n * q).map(|_| normal(&mut rng)).collect();
    let (f, g) = build_harmonics(spec.period, spec.order)?;
    let p = f.len();

    let mut mu = DMatrix::zeros(n, nt);
    if h.sigma2 > 0.0 {
        let omega = build_dense_correlation(&sites, h.kappa, spec.nu)?;
        let factor = DenseFactor::new(&omega)?;
        let sd = h.sigma2.sqrt();
        let mut level = vec![0.0; n];
        for t in 0..nt {
            let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            for (l, w) in level.iter_mut().zip(factor.color(&z)) {
                *l += sd * w;
            }
            mu.column_mut(t).copy_from_slice(&level);
        }
    }

    let theta0 = DVector::from_vec(spec.theta0.clone().unwrap_or_else(|| vec![0.0; p]));
    let mut theta = DMatrix::zeros(p, nt);
    let mut prev = theta0.clone();
    for t in 0..nt {
        let mut next = &g * &prev;
        for l in 0..p {
            next[l] += h.w[l].sqrt() * normal(&mut rng);
        }
        theta.column_mut(t).copy_from(&next);
        prev = next;
    }

    let tau = h.tau2.sqrt();
    let mut lambda = DMatrix::zeros(n, nt);
    let mut counts = vec![0u64; n * nt];
    for t in 0..nt {
        let temporal = f.dot(&theta.column(t));
        for i in 0..n {
            let x = &covariates[(t * n + i) * q..(t * n + i + 1) * q];
            let fixed: f64 = x.iter().zip(&h.beta).map(|(a, b)| a * b).sum();
            let l = mu[(i, t)] + temporal + fixed + tau * normal(&mut rng);
            if l > MAX_LOG_RATE {
                return Err(Error::domain(format!(
                    "simulated log-rate {l:.2} at (t={t}, site={i}) exceeds {MAX_LOG_RATE}; rescale the truth"
                )));
            }
            lambda[(i, t)] = l;
            counts[t * n + i] = poisson_count(l.exp(), &mut rng);
        }
    }

    let design = DMatrix::from_fn(nt, p, |_, k| f[k]);
    let full = Dataset::new(sites, nt, counts, vec![true; n * nt], covariates, q, design, g)?;
    let dataset = apply_missingness(&full, &spec.missingness, &mut rng)?;
    Ok(SimulatedTruth { dataset, lambda, mu, theta, theta0, hypers: h.clone() })
}

/// One Poisson draw with mean `rate`; zero for vanishing rates.
pub fn poisson_count<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn check_proportion(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("missing proportion {p} outside [0, 1]")));
    }
    Ok(())
}

/// Hides cells of `data` according to `scenario`; already hidden cells stay hidden.
pub fn apply_missingness<R: Rng + ?Sized>(data: &Dataset, scenario: &Missingness, rng: &mut R) -> Result<Dataset> {
    let (n, nt) = (data.n_sites(), data.n_times());
    let mut mask = data.observed().to_vec();
    match scenario {
        Missingness::None => {}
        Missingness::Cells(p) => {
            check_proportion(*p)?;
            let k = (p * (n * nt) as f64).round() as usize;
            for c in sample_indices(rng, n * nt, k) {
                mask[c] = false;
            }
        }
        Missingness::Blocks { proportion, min_len, max_len } => {
            check_proportion(*proportion)?;
            if *min_len == 0 || min_len > max_len {
                return Err(Error::domain(format!("block lengths [{min_len}, {max_len}] are invalid")));
            }
            let target = (proportion * nt as f64).round() as usize;
            for i in 0..n {
                let mut hidden = vec![false; nt];
                let mut count = 0;
                while count < target {
                    let len = rng.random_range(*min_len..=*max_len).min(target - count).min(nt);
                    let start = rng.random_range(0..=nt - len);
                    for h in hidden.iter_mut().skip(start).take(len) {
                        if count < target && !*h {
                            *h = true;
                            count += 1;
                        }
                    }
                }
                for (t, h) in hidden.iter().enumerate() {
                    if *h {
                        mask[t * n + i] = false;
                    }
                }
            }
        }
        Missingness::Holdout(sites) => {
            for &i in sites {
                if i >= n {
                    return Err(Error::domain(format!("holdout site {i} out of range (n = {n})")));
                }
                for t in 0..nt {
                    mask[t * n + i] = false;
                }
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::domain("missingness scenario hides every cell"));
    }
    data.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weekly_rotation_is_orthogonal() {
        let (f, g) = build_harmonics(7, 1).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0]);
        let a = 2.0 * PI / 7.0;
        assert!((g[(0, 0)] - a.cos()).abs() < 1e-15 && (g[(0, 1)] - a.sin()).abs() < 1e-15);
        assert!((g[(1, 0)] + a.sin()).abs() < 1e-15);
        assert!((g.transpose() * &g - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn full_period_is_identity() {
        for (period, order) in [(7, 1), (7, 2), (12, 3), (2, 1), (365, 2)] {
            let (_, g) = build_harmonics(period, order).unwrap();
            let mut acc = DMatrix::identity(2 * order, 2 * order);
            for _ in 0..period {
                acc = &g * acc;
            }
            assert!((acc - DMatrix::identity(2 * order, 2 * order)).abs().max() < 1e-10, "{period} {order}");
        }
    }

    #[test]
    fn second_order_blocks() {
        let (f, g) = build_harmonics(7, 2).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        let (a1, a2) = (2.0 * PI / 7.0, 4.0 * PI / 7.0);
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[
                a1.cos(), a1.sin(), 0.0, 0.0,
                -a1.sin(), a1.cos(), 0.0, 0.0,
                0.0, 0.0, a2.cos(), a2.sin(),
                0.0, 0.0, -a2.sin(), a2.cos(),
            ],
        );
        assert!((g - want).abs().max() < 1e-15);
    }

    #[test]
    fn noiseless_seasonal_signal_is_periodic() {
        let (f, g) = build_harmonics(7, 2).unwrap();
        let mut th = DVector::from_vec(vec![0.3, -1.0, 0.5, 0.2]);
        let mut seq = Vec::new();
        for _ in 0..35 {
            th = &g * th;
            seq.push(f.dot(&th));
        }
        for t in 7..35 {
            assert!((seq[t] - seq[t - 7]).abs() < 1e-8);
        }
    }

    fn degenerate_spec(n: usize, nt: usize, seed: u64) -> SimulationSpec {
        SimulationSpec {
            n_sites: n,
            sites: None,
            n_times: nt,
            truth: HyperState { kappa: 0.3, sigma2: 0.0, tau2: 0.0, w: vec![0.0, 0.0], beta: vec![] },
            nu: 1.0,
            period: 7,
            order: 1,
            n_covariates: 0,
            missingness: Missingness::None,
            seed,
            theta0: None,
        }
    }

    #[test]
    fn degenerate_latents_give_unit_rates() {
        let sim = simulate_dataset(&degenerate_spec(5, 20, 1)).unwrap();
        assert!(sim.lambda.iter().all(|&l| l == 0.0));
        let mean = sim.dataset.counts().iter().sum::<u64>() as f64 / 100.0;
        assert!((mean - 1.0).abs() < 0.35);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SimulationSpec { n_sites: 8, n_times: 10, ..SimulationSpec::preset("appendix-c-small", 3).unwrap() };
        assert_eq!(simulate_dataset(&spec).unwrap(), simulate_dataset(&spec).unwrap());
    }

    #[test]
    fn intercept_random_walk_is_persistent() {
        let spec = SimulationSpec { n_sites: 5, n_times: 200, ..SimulationSpec::preset("appendix-c-small", 9).unwrap() };
        let sim = simulate_dataset(&spec).unwrap();
        for i in 0..5 {
            let x: Vec<f64> = sim.mu.row(i).iter().copied().collect();
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let num: f64 = (1..x.len()).map(|t| (x[t] - m) * (x[t - 1] - m)).sum();
            let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
            assert!(num / den >= 0.95, "site {i}: {}", num / den);
        }
    }

    #[test]
    fn count_moments_match_rate() {
        let mut total = 0u64;
        let theta0 = vec![1.0, 0.0];
        let rate = (2.0 * PI / 7.0).cos().exp();
        for rep in 0..200 {
            let spec = SimulationSpec { theta0: Some(theta0.clone()), ..degenerate_spec(1, 1, 1000 + rep) };
            let sim = simulate_dataset(&spec).unwrap();
            assert!((sim.lambda[(0, 0)] - rate.ln()).abs() < 1e-12);
            total += sim.dataset.count(0, 0);
        }
        let mean = total as f64 / 200.0;
        assert!((mean - rate).abs() <= 3.0 * (rate / 200.0).sqrt(), "{mean} vs {rate}");
    }

    #[test]
    fn overflow_guard() {
        let mut spec = degenerate_spec(1, 1, 0);
        spec.theta0 = Some(vec![40.0, 0.0]);
        assert!(matches!(simulate_dataset(&spec), Err(Error::Domain(_))));
    }

    fn full(n: usize, nt: usize) -> Dataset {
        simulate_dataset(&degenerate_spec(n, nt, 5)).unwrap().dataset
    }

    #[test]
    fn missingness_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = full(6, 200);
        let none = apply_missingness(&d, &Missingness::Cells(0.0), &mut rng).unwrap();
        assert!(none.observed().iter().all(|&m| m));

        let held = apply_missingness(&d, &Missingness::Holdout(vec![3]), &mut rng).unwrap();
        for t in 0..200 {
            for i in 0..6 {
                assert_eq!(held.is_observed(t, i), i != 3);
            }
        }

        let blocks = apply_missingness(&d, &Missingness::Blocks { proportion: 0.5, min_len: 5, max_len: 20 }, &mut rng).unwrap();
        for i in 0..6 {
            let frac = (0..200).filter(|&t| !blocks.is_observed(t, i)).count() as f64 / 200.0;
            assert!((0.45..=0.55).contains(&frac), "site {i}: {frac}");
        }

        let cells = apply_missingness(&d, &Missingness::Cells(0.3), &mut rng).unwrap();
        assert_eq!(cells.observed().iter().filter(|&&m| !m).count(), 360);

        assert!(apply_missingness(&d, &Missingness::Cells(1.0), &mut rng).is_err());
        assert!(apply_missingness(&d, &Missingness::Cells(1.5), &mut rng).is_err());
    }
}
