//! Posterior summaries: mean, median, sd and equal-tailed credible intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row of a posterior summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Summarizes a sample at credible level `level` (e.g. 0.95).
pub fn summarize(name: &str, values: &[f64], level: f64) -> Result<ParameterSummary> {
    if values.is_empty() {
        return Err(Error::domain(format!("no draws to summarize for {name}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("credible level must be in (0, 1), got {level}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - level);
    Ok(ParameterSummary {
        parameter: name.to_string(),
        mean,
        median: quantile(&sorted, 0.5),
        sd,
        ci_lower: quantile(&sorted, tail),
        ci_upper: quantile(&sorted, 1.0 - tail),
    })
}

/// Summary of the range, variances, state variances and coefficients pooled
/// over chains, one row each: `3 + p + q` rows.
pub fn posterior_summary(chains: &[PosteriorDraws], level: f64) -> Result<Vec<ParameterSummary>> {
    let first = chains.first().ok_or_else(|| Error::domain("no chains"))?;
    let h0 = first.hypers.first().ok_or_else(|| Error::domain("chain has no draws"))?;
    let n_hyper = 3 + h0.w.len() + h0.beta.len();
    let names = &first.monitored_names[..n_hyper];
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let values: Vec<f64> = chains.iter().flat_map(|c| c.monitored.iter().map(move |row| row[j])).collect();
            summarize(name, &values, level)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&s, 0.5), 2.5);
    }

    #[test]
    fn summary_of_constant_sample() {
        let s = summarize("x", &[10.0; 7], 0.95).unwrap();
        assert_eq!((s.mean, s.median, s.sd, s.ci_lower, s.ci_upper), (10.0, 10.0, 0.0, 10.0, 10.0));
    }

    #[test]
    fn summary_of_range() {
        let v: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let s = summarize("x", &v, 0.9).unwrap();
        assert_eq!(s.mean, 50.0);
        assert_eq!(s.median, 50.0);
        assert!((s.ci_lower - 5.0).abs() < 1e-12 && (s.ci_upper - 95.0).abs() < 1e-12);
        assert!(s.ci_lower <= s.median && s.median <= s.ci_upper);
    }

    #[test]
    fn rejects_bad_level() {
        assert!(summarize("x", &[1.0], 1.0).is_err());
        assert!(summarize("x", &[], 0.5).is_err());
    }
}
