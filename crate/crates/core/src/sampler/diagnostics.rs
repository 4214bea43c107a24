use serde::{Deserialize, Serialize};

use super::chain::{AcceptanceStats, PosteriorDraws};
use crate::error::{Error, Result};

/// Split R-hat above this flags a scalar as unconverged.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Convergence summary over chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    pub flagged: Vec<bool>,
    pub acceptance: Vec<AcceptanceStats>,
    pub n_draws: usize,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn halves(chains: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let len = chains.first().map(|c| c.len()).unwrap_or(0);
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::dim("chains differ in length"));
    }
    let h = len / 2;
    let splits: Vec<Vec<f64>> = if h == 0 {
        Vec::new()
    } else {
        chains.iter().flat_map(|c| [c[..h].to_vec(), c[len - h..].to_vec()]).collect()
    };
    if splits.len() < 2 || h < 2 {
        return Err(Error::domain(format!("need at least 2 split chains of length 2, got {} of length {h}", splits.len())));
    }
    Ok(splits)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Within-chain variance, pooled variance estimate and split means.
fn variance_parts(splits: &[Vec<f64>]) -> (f64, f64) {
    let n = splits[0].len() as f64;
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = splits.iter().map(|s| var(s)).sum::<f64>() / splits.len() as f64;
    let b_over_n = var(&means);
    (w, (n - 1.0) / n * w + b_over_n)
}

/// Split R-hat; 1 for constant chains.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    let splits = halves(chains)?;
    let (w, var_plus) = variance_parts(&splits);
    if w == 0.0 {
        return Ok(if var_plus == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// over split chains; 0 for constant chains and capped at the draw count.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    let splits = halves(chains)?;
    let m = splits.len();
    let n = splits[0].len();
    let total = (m * n) as f64;
    let (w, var_plus) = variance_parts(&splits);
    if var_plus == 0.0 || w == 0.0 {
        return Ok(0.0);
    }
    let rho = |lag: usize| {
        let acov = splits.iter().map(|s| autocovariance(s, lag)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    if tau <= 0.0 {
        return Ok(total);
    }
    Ok((total / tau).min(total))
}

/// R-hat and ESS for every column of per-chain draw tables
/// (`tables[c][k][j]` is scalar `j` in draw `k` of chain `c`).
pub fn diagnose_table(names: &[String], tables: &[Vec<Vec<f64>>], acceptance: Vec<AcceptanceStats>) -> Result<Diagnostics> {
    let n_draws = tables.iter().map(|t| t.len()).sum();
    let mut ess = Vec::with_capacity(names.len());
    let mut rhat = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let cols: Vec<Vec<f64>> = tables.iter().map(|t| t.iter().map(|row| row[j]).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        rhat.push(split_rhat(&refs)?);
        ess.push(effective_sample_size(&refs)?);
    }
    let flagged = rhat.iter().map(|r| !(*r <= RHAT_THRESHOLD)).collect();
    Ok(Diagnostics { names: names.to_vec(), ess, rhat, flagged, acceptance, n_draws })
}

/// Diagnostics over the monitored scalars of several chains.
pub fn diagnose(draws: &[PosteriorDraws]) -> Result<Diagnostics> {
    let first = draws.first().ok_or_else(|| Error::domain("no chains to diagnose"))?;
    let tables: Vec<Vec<Vec<f64>>> = draws.iter().map(|d| d.monitored.clone()).collect();
    diagnose_table(&first.monitored_names, &tables, draws.iter().map(|d| d.acceptance).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn constant_chains() {
        let a = vec![2.0; 50];
        let refs = [a.as_slice(), a.as_slice()];
        assert_eq!(split_rhat(&refs).unwrap(), 1.0);
        assert_eq!(effective_sample_size(&refs).unwrap(), 0.0);
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        let chains: Vec<Vec<f64>> = (0..4).map(|c| normals(c, 1000)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let r = split_rhat(&refs).unwrap();
        assert!((0.99..=1.02).contains(&r), "{r}");
        let ess = effective_sample_size(&refs).unwrap();
        assert!(ess > 2500.0 && ess <= 4000.0, "{ess}");
    }

    #[test]
    fn offset_chain_is_flagged() {
        let mut chains: Vec<Vec<f64>> = (0..4).map(|c| normals(c + 10, 1000)).collect();
        chains[0].iter_mut().for_each(|v| *v += 10.0);
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        assert!(split_rhat(&refs).unwrap() > 1.5);
    }

    #[test]
    fn autocorrelated_chain_has_smaller_ess() {
        let z = normals(3, 4000);
        let mut ar = vec![0.0; 4000];
        for i in 1..4000 {
            ar[i] = 0.9 * ar[i - 1] + z[i];
        }
        let refs = [&ar[..2000], &ar[2000..]];
        let ess = effective_sample_size(&refs).unwrap();
        // AR(1) with phi = 0.9 has integrated time (1 + phi) / (1 - phi) = 19.
        assert!(ess > 4000.0 / 19.0 * 0.6 && ess < 4000.0 / 19.0 * 1.6, "{ess}");
    }

    #[test]
    fn too_few_splits_is_domain_error() {
        let a = vec![1.0];
        assert!(matches!(split_rhat(&[a.as_slice()]), Err(Error::Domain(_))));
    }
}
