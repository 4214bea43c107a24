use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use stdglm::SpatialLocation;

#[derive(Debug, Parser)]
#[command(name = "stdglm", version, about = "Spatiotemporal dynamic Poisson models for daily counts")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for sampling, simulation and prediction.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,

    /// Number of MCMC chains.
    #[arg(long, global = true, value_name = "INT")]
    pub chains: Option<usize>,

    /// Output directory (the fit directory for prediction commands).
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,

    /// Keep log-rate draws; needed to impute missing counts.
    #[arg(long, global = true)]
    pub keep_lambda: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its truth file.
    Simulate(SimulateArgs),
    /// Fit the model to a data file.
    Fit(FitArgs),
    /// Impute every missing count of the fitted data.
    Predict,
    /// Forecast counts past the last observed day.
    Forecast(ForecastArgs),
    /// Predict counts at an unobserved location.
    Krige(KrigeArgs),
    /// Average daily count at a site over a period.
    Aadb(AadbArgs),
    /// Recompute convergence diagnostics from the stored draws.
    Diagnose,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named scenario: `appendix-c` or `appendix-c-small`.
    #[arg(long, default_value = "appendix-c-small")]
    pub preset: String,

    /// Override the number of sites.
    #[arg(long)]
    pub sites: Option<usize>,

    /// Override the number of days.
    #[arg(long)]
    pub times: Option<usize>,

    /// Masking scenario: `cells:P`, `blocks:P:MIN:MAX` or `holdout:I,J,...`.
    #[arg(long, value_parser = parse_missingness)]
    pub missing: Option<stdglm::simulate::Missingness>,

    /// Label days with ISO dates starting here instead of indices.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub start_date: Option<chrono::NaiveDate>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format CSV: `site_id,x,y,t,count,<covariates...>`.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Number of days ahead.
    #[arg(long)]
    pub horizon: usize,

    /// Forecast at a new location instead of the data sites.
    #[arg(long, value_name = "X,Y")]
    pub at: Option<Point>,

    /// Future covariates: `site_id,t,<covariates>` (or `t,<covariates>` with `--at`).
    #[arg(long, value_name = "PATH")]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KrigeArgs {
    #[arg(long, value_name = "X,Y")]
    pub at: Point,

    /// Covariates at the location for every observed day: `t,<covariates>`.
    #[arg(long, value_name = "PATH")]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AadbArgs {
    /// Site id as written in the data.
    #[arg(long, conflicts_with = "at", required_unless_present = "at")]
    pub site: Option<String>,

    /// A new location, kriged.
    #[arg(long, value_name = "X,Y")]
    pub at: Option<Point>,

    /// `all`, or an inclusive range `FIRST:LAST` of day labels.
    #[arg(long, default_value = "all")]
    pub period: String,

    /// Covariates at the new location: `t,<covariates>`.
    #[arg(long, value_name = "PATH")]
    pub covariates: Option<PathBuf>,
}

/// A location given as `X,Y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point(pub SpatialLocation);

impl FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let coord = |v: &str| match v.parse::<f64>() {
            Ok(c) if c.is_finite() => Ok(c),
            _ => Err(format!("'{v}' is not a finite coordinate")),
        };
        match parts.as_slice() {
            [x, y] => Ok(Point(SpatialLocation::new(coord(x)?, coord(y)?))),
            _ => Err(format!("expected X,Y, got '{s}'")),
        }
    }
}

pub fn parse_missingness(s: &str) -> Result<stdglm::simulate::Missingness, String> {
    use stdglm::simulate::Missingness;
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number"));
    let int = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("'{v}' is not a non-negative integer"));
    match kind {
        "none" if rest.is_empty() => Ok(Missingness::None),
        "cells" => Ok(Missingness::Cells(num(rest)?)),
        "blocks" => match rest.split(':').collect::<Vec<_>>().as_slice() {
            [p, lo, hi] => Ok(Missingness::Blocks { proportion: num(p)?, min_len: int(lo)?, max_len: int(hi)? }),
            _ => Err(format!("expected blocks:P:MIN:MAX, got '{s}'")),
        },
        "holdout" => rest.split(',').map(int).collect::<Result<Vec<_>, _>>().map(Missingness::Holdout),
        _ => Err(format!("unknown masking scenario '{s}'; use none, cells:P, blocks:P:MIN:MAX or holdout:I,J")),
    }
}
