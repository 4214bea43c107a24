//! Run configuration read from a TOML file with one table per concern.
//!
//! ```toml
//! output = "out"
//!
//! [model]
//! path = "sparse"          # or "dense"
//! nu = 1.0
//! period = 7
//! order = 1
//! covariates = ["temp", "rain"]   # default: every extra data column
//!
//! [mesh]
//! target_nodes = 150
//! padding = 0.5            # default: 20% of the site bounding-box diagonal
//! # file = "mesh.txt"
//!
//! [prior]
//! beta_variance = 10.0
//!
//! [chain]
//! iterations = 20000
//! burn_in = 15000
//! field_update = "collapsed"   # or "sequential"
//!
//! [predict]
//! level = 0.95
//!
//! [store]
//! max_state_draws = 1000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stdglm::predict::PredictConfig;
use stdglm::sampler::ChainConfig;
use stdglm::{ModelPath, PriorConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub path: ModelPath,
    pub nu: f64,
    pub period: usize,
    pub order: usize,
    /// Covariate columns to use, in order; `None` takes every extra column.
    pub covariates: Option<Vec<String>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { path: ModelPath::Sparse, nu: 1.0, period: 7, order: 1, covariates: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Mesh file; when absent a regular mesh is built around the sites.
    pub file: Option<PathBuf>,
    pub target_nodes: usize,
    /// Padding around the site bounding box, in coordinate units.
    pub padding: Option<f64>,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { file: None, target_nodes: 150, padding: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    /// Latent states are written for at most this many evenly spaced draws
    /// per chain; hyperparameter draws are always written in full.
    pub max_state_draws: usize,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self { max_state_draws: 1000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub model: ModelSection,
    pub mesh: MeshSection,
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub predict: PredictConfig,
    pub store: StoreSection,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub output: Option<PathBuf>,
    pub keep_lambda: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))
    }

    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut cfg = Self::parse(&text)?;
                // Relative mesh paths are relative to the config file.
                if let (Some(mesh), Some(dir)) = (cfg.mesh.file.as_mut(), p.parent()) {
                    if mesh.is_relative() {
                        *mesh = dir.join(&*mesh);
                    }
                }
                Ok(cfg)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.chain.seed = s;
            self.predict.seed = s;
        }
        if let Some(c) = o.chains {
            self.chain.n_chains = c;
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        if o.keep_lambda {
            self.chain.keep_lambda = true;
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("stdglm-out"))
    }

    pub fn n_states(&self) -> usize {
        2 * self.model.order
    }

    /// Checks everything that can be checked without the data.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.nu > 0.0 && m.nu.is_finite()) {
            return Err(CliError::Config(format!("model.nu must be positive, got {}", m.nu)));
        }
        if m.path == ModelPath::Sparse && m.nu != 1.0 {
            return Err(CliError::Config(format!("the sparse path represents nu = 1 only, got nu = {}", m.nu)));
        }
        stdglm::simulate::build_harmonics(m.period, m.order).map_err(config_error)?;
        if let Some(c) = &m.covariates {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = c.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(CliError::Config(format!("covariate '{dup}' listed twice")));
            }
        }
        if self.mesh.target_nodes < 4 {
            return Err(CliError::Config("mesh.target_nodes must be at least 4".into()));
        }
        if let Some(p) = self.mesh.padding {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CliError::Config(format!("mesh.padding must be positive, got {p}")));
            }
        }
        if self.store.max_state_draws == 0 {
            return Err(CliError::Config("store.max_state_draws must be at least 1".into()));
        }
        if !(self.predict.level > 0.0 && self.predict.level < 1.0) {
            return Err(CliError::Config(format!("predict.level must be in (0, 1), got {}", self.predict.level)));
        }
        self.chain.validate().map_err(config_error)?;
        self.prior.validate(self.n_states()).map_err(config_error)?;
        Ok(())
    }
}

fn config_error(e: stdglm::Error) -> CliError {
    CliError::Config(match e {
        stdglm::Error::Config(m) => m,
        other => other.to_string(),
    })
}
