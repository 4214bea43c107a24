//! On-disk layout of a fit directory.
//!
//! | file | contents |
//! |---|---|
//! | `fit.json` | model settings, priors, chain settings, labels, per-chain bookkeeping |
//! | `data.csv` | the ingested data, re-readable by `ingest` |
//! | `mesh.txt` | the mesh (sparse path only) |
//! | `summary.csv` | `parameter,mean,median,sd,ci_lower,ci_upper` |
//! | `draws_chain{c}.csv` | one row per kept draw, one column per monitored scalar |
//! | `states_chain{c}.bin` | `theta` and intercept weights for the stored subset of draws |
//! | `lambda_chain{c}.bin` | log-rates for the same subset, when kept |
//! | `diagnostics.csv`, `acceptance.csv` | convergence report |
//!
//! Binary files hold little-endian `f64` matrices in column-major order, one
//! draw after another.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use stdglm::sampler::{AcceptanceStats, ChainConfig, Diagnostics, PosteriorDraws, StepSizes};
use stdglm::summary::ParameterSummary;
use stdglm::{HyperState, PriorConfig};

use crate::config::ModelSection;
use crate::error::{CliError, Result};

pub const FIT_FILE: &str = "fit.json";
pub const DATA_FILE: &str = "data.csv";
pub const MESH_FILE: &str = "mesh.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ACCEPTANCE_FILE: &str = "acceptance.csv";

pub fn draws_file(chain: usize) -> String {
    format!("draws_chain{chain}.csv")
}

pub fn states_file(chain: usize) -> String {
    format!("states_chain{chain}.bin")
}

pub fn lambda_file(chain: usize) -> String {
    format!("lambda_chain{chain}.bin")
}

/// Output files are written into a hidden staging directory and moved into
/// place only when the whole command succeeds; dropping an uncommitted stage
/// deletes everything it holds.
pub struct Stage {
    target: PathBuf,
    created_target: bool,
    dir: PathBuf,
    committed: bool,
}

impl Stage {
    pub fn new(target: &Path) -> Result<Self> {
        let created_target = !target.exists();
        fs::create_dir_all(target).map_err(|e| CliError::io(target, e))?;
        let dir = target.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { target: target.to_path_buf(), created_target, dir, committed: false })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(name);
        fs::File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(p, e))
    }

    /// Moves every staged file into the target directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut moved = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(&self.dir, e))?;
            let dest = self.target.join(entry.file_name());
            fs::rename(entry.path(), &dest).map_err(|e| CliError::io(&dest, e))?;
            moved.push(dest);
        }
        fs::remove_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        self.committed = true;
        moved.sort();
        Ok(moved)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
            if self.created_target {
                // Only succeeds while the directory is still empty.
                let _ = fs::remove_dir(&self.target);
            }
        }
    }
}

/// Per-chain bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    pub n_draws: usize,
    /// Draw indices whose latent states are stored.
    pub state_draws: Vec<usize>,
    pub has_lambda: bool,
    pub acceptance: AcceptanceStats,
    pub final_steps: StepSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: ModelSection,
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub site_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// First calendar day when the data used dates.
    pub time_origin: Option<String>,
    pub n_sites: usize,
    pub n_times: usize,
    pub n_nodes: usize,
    pub n_states: usize,
    pub monitored_names: Vec<String>,
    pub chains: Vec<ChainRecord>,
    pub seconds: f64,
}

impl FitRecord {
    pub fn save(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| CliError::Store(format!("writing {FIT_FILE}: {e}")))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(FIT_FILE);
        if !p.exists() {
            return Err(CliError::Store(format!("no fit found: {} does not exist (run `stdglm fit` first)", p.display())));
        }
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Store(format!("{}: {e}", p.display())))
    }
}

/// Evenly spaced subset of `0..n` of size at most `max`, always including the last draw.
pub fn state_subset(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|k| ((k + 1) * n) / max - 1).collect()
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Store(format!("{}: {e}", path.display()))
}

pub fn write_draws(w: impl Write, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(names).map_err(|e| CliError::Store(e.to_string()))?;
    for r in rows {
        out.write_record(r.iter().map(f64::to_string)).map_err(|e| CliError::Store(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}

/// Reads a draws file; returns the header and the rows.
pub fn read_draws(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| store_err(path, e))?;
    let names: Vec<String> = r.headers().map_err(|e| store_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| store_err(path, e))?;
        if rec.len() != names.len() {
            return Err(store_err(path, format!("draw {k} has {} values for {} columns", rec.len(), names.len())));
        }
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| store_err(path, format!("draw {k}: '{v}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<DMatrix<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(DMatrix::from_vec(rows, cols, vals))
}

pub fn write_states(w: impl Write, draws: &PosteriorDraws, subset: &[usize]) -> Result<()> {
    let mut w = w;
    for &k in subset {
        write_matrix(&mut w, &draws.theta[k]).map_err(|e| CliError::Store(e.to_string()))?;
        write_matrix(&mut w, &draws.field[k]).map_err(|e| CliError::Store(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Store(e.to_string()))
}

pub fn write_lambda(w: impl Write, lambda: &[DMatrix<f64>], subset: &[usize]) -> Result<()> {
    let mut w = w;
    for &k in subset {
        write_matrix(&mut w, &lambda[k]).map_err(|e| CliError::Store(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Store(e.to_string()))
}

fn hypers_from_row(row: &[f64], p: usize, q: usize) -> HyperState {
    HyperState {
        kappa: row[0],
        sigma2: row[1],
        tau2: row[2],
        w: row[3..3 + p].to_vec(),
        beta: row[3 + p..3 + p + q].to_vec(),
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Rebuilds the draws of every chain that carry latent states.
pub fn load_chains(dir: &Path, fit: &FitRecord) -> Result<Vec<PosteriorDraws>> {
    let (p, q, nt) = (fit.n_states, fit.covariate_names.len(), fit.n_times);
    let mut out = Vec::with_capacity(fit.chains.len());
    for rec in &fit.chains {
        let path = dir.join(draws_file(rec.chain));
        let (names, rows) = read_draws(&path)?;
        if names != fit.monitored_names || rows.len() != rec.n_draws {
            return Err(store_err(&path, format!("expected {} draws of {:?}", rec.n_draws, fit.monitored_names)));
        }
        let states_path = dir.join(states_file(rec.chain));
        let mut states = open(&states_path)?;
        let mut lambda_reader = if rec.has_lambda { Some(open(&dir.join(lambda_file(rec.chain)))?) } else { None };
        let mut draws = PosteriorDraws {
            chain: rec.chain,
            hypers: Vec::new(),
            theta: Vec::new(),
            field: Vec::new(),
            lambda: rec.has_lambda.then(Vec::new),
            monitored_names: names.clone(),
            monitored: Vec::new(),
            acceptance: rec.acceptance,
            final_steps: rec.final_steps,
        };
        for &k in &rec.state_draws {
            let row = rows.get(k).ok_or_else(|| store_err(&path, format!("stored state refers to missing draw {k}")))?;
            draws.hypers.push(hypers_from_row(row, p, q));
            draws.monitored.push(row.clone());
            draws.theta.push(read_matrix(&mut states, p, nt).map_err(|e| store_err(&states_path, e))?);
            draws.field.push(read_matrix(&mut states, fit.n_nodes, nt).map_err(|e| store_err(&states_path, e))?);
            if let (Some(r), Some(l)) = (lambda_reader.as_mut(), draws.lambda.as_mut()) {
                l.push(read_matrix(r, fit.n_sites, nt).map_err(|e| CliError::Store(e.to_string()))?);
            }
        }
        out.push(draws);
    }
    Ok(out)
}

pub fn write_summary(w: impl Write, rows: &[ParameterSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Store(e.to_string());
    out.write_record(["parameter", "mean", "median", "sd", "ci_lower", "ci_upper"]).map_err(err)?;
    for r in rows {
        out.write_record([
            r.parameter.clone(),
            r.mean.to_string(),
            r.median.to_string(),
            r.sd.to_string(),
            r.ci_lower.to_string(),
            r.ci_upper.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}

pub fn write_diagnostics(w: impl Write, d: &Diagnostics) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Store(e.to_string());
    out.write_record(["parameter", "ess", "rhat", "flagged"]).map_err(err)?;
    for j in 0..d.names.len() {
        out.write_record([d.names[j].clone(), d.ess[j].to_string(), d.rhat[j].to_string(), d.flagged[j].to_string()])
            .map_err(err)?;
    }
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}

pub fn write_acceptance(w: impl Write, stats: &[AcceptanceStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Store(e.to_string());
    out.write_record(["chain", "kernel", "accepted", "proposed", "rate"]).map_err(err)?;
    for (c, s) in stats.iter().enumerate() {
        let kernels = [
            ("lambda", s.lambda_accepted, s.lambda_proposed),
            ("kappa", s.kappa_accepted, s.kappa_proposed),
            ("whitened_kappa", s.whitened_kappa_accepted, s.whitened_proposed),
            ("whitened_sigma2", s.whitened_sigma2_accepted, s.whitened_proposed),
            ("collapsed", s.collapsed_accepted, s.collapsed_proposed),
        ];
        for (name, a, p) in kernels {
            let rate = if p == 0 { 0.0 } else { a as f64 / p as f64 };
            out.write_record([c.to_string(), name.to_string(), a.to_string(), p.to_string(), rate.to_string()])
                .map_err(err)?;
        }
    }
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}
