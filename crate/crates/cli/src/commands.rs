//! Subcommand implementations. Each command validates its inputs, computes,
//! stages every output file and commits them only on success.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use stdglm::field::SpatialModel;
use stdglm::predict::{
    estimate_aadb, forecast, impute, krige, spacetime_predict, AadbEstimate, AadbSite, FutureInputs, NewSite,
    PredictiveSummary, TargetSite,
};
use stdglm::sampler::{diagnose, diagnose_table, run_chains, Diagnostics, ModelContext};
use stdglm::simulate::{build_harmonics, simulate_dataset, SimulationSpec};
use stdglm::spde::{auto_mesh, auto_mesh_padded, load_mesh, parse_mesh};
use stdglm::summary::{posterior_summary, ParameterSummary};
use stdglm::{HyperState, ModelPath, SpatialLocation};

use crate::cli::{AadbArgs, Cli, Command, FitArgs, ForecastArgs, KrigeArgs, SimulateArgs};
use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::ingest::{ingest, write_dataset, Calendar, Ingested};
use crate::store::{self, ChainRecord, FitRecord, Stage};

pub const TRUTH_FILE: &str = "truth.json";
pub const IMPUTE_FILE: &str = "impute.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const KRIGE_FILE: &str = "krige.csv";
pub const AADB_FILE: &str = "aadb.csv";

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply(&Overrides {
        seed: cli.seed,
        chains: cli.chains,
        output: cli.output.clone(),
        keep_lambda: cli.keep_lambda,
    });
    config.validate()?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Simulate(a) => simulate(&config, a, &mut out),
        Command::Fit(a) => fit(&config, a, &mut out),
        Command::Predict => predict(&config, &mut out),
        Command::Forecast(a) => forecast_cmd(&config, a, &mut out),
        Command::Krige(a) => krige_cmd(&config, a, &mut out),
        Command::Aadb(a) => aadb(&config, a, &mut out),
        Command::Diagnose => diagnose_cmd(&config, &mut out),
    }
}

fn say(out: &mut impl Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
}

/// Latent truth written next to a simulated dataset.
#[derive(Serialize)]
struct Truth<'a> {
    preset: &'a str,
    seed: u64,
    hypers: &'a HyperState,
    theta0: Vec<f64>,
    /// `[t][state]`
    theta: Vec<Vec<f64>>,
    /// `[t][site]`
    intercepts: Vec<Vec<f64>>,
    /// `[t][site]`
    log_rates: Vec<Vec<f64>>,
    /// `[t][site]`, including masked cells.
    counts: Vec<Vec<u64>>,
}

fn by_time(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn simulate(config: &RunConfig, a: &SimulateArgs, out: &mut impl Write) -> Result<()> {
    let seed = config.chain.seed;
    let mut spec = SimulationSpec::preset(&a.preset, seed)?;
    if let Some(n) = a.sites {
        spec.n_sites = n;
    }
    if let Some(t) = a.times {
        spec.n_times = t;
    }
    if let Some(m) = &a.missing {
        spec.missingness = m.clone();
    }
    let truth = simulate_dataset(&spec)?;
    let data = &truth.dataset;
    let ingested = Ingested {
        dataset: data.clone(),
        site_ids: (0..data.n_sites()).map(|i| i.to_string()).collect(),
        covariate_names: (1..=data.n_covariates()).map(|k| format!("cov{k}")).collect(),
        calendar: a.start_date.map_or(Calendar::Index, Calendar::Dates),
    };
    let (n, nt) = (data.n_sites(), data.n_times());
    let record = Truth {
        preset: &a.preset,
        seed,
        hypers: &truth.hypers,
        theta0: truth.theta0.iter().copied().collect(),
        theta: by_time(&truth.theta),
        intercepts: by_time(&truth.mu),
        log_rates: by_time(&truth.lambda),
        counts: (0..nt).map(|t| (0..n).map(|i| data.count(t, i)).collect()).collect(),
    };

    let dir = config.output_dir();
    let stage = Stage::new(&dir)?;
    write_dataset(stage.create(store::DATA_FILE)?, &ingested)?;
    serde_json::to_writer(stage.create(TRUTH_FILE)?, &record)
        .map_err(|e| CliError::Store(format!("writing {TRUTH_FILE}: {e}")))?;
    stage.commit()?;
    say(
        out,
        format!(
            "simulated {n} sites x {nt} days ({} observed) into {}",
            data.n_observed(),
            dir.join(store::DATA_FILE).display()
        ),
    )
}

fn spatial_model(config: &RunConfig, sites: &[SpatialLocation]) -> Result<SpatialModel> {
    match config.model.path {
        ModelPath::Dense => Ok(SpatialModel::dense(sites.to_vec(), config.model.nu)?),
        ModelPath::Sparse => {
            let mesh = match (&config.mesh.file, config.mesh.padding) {
                (Some(file), _) => load_mesh(file)?,
                (None, Some(pad)) => auto_mesh_padded(sites, config.mesh.target_nodes, pad)?,
                (None, None) => auto_mesh(sites, config.mesh.target_nodes)?,
            };
            Ok(SpatialModel::sparse(mesh, sites)?)
        }
    }
}

/// Removes per-chain files of an earlier fit so they cannot mix with a new one.
fn clear_chain_files(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let chain_file = ["draws_chain", "states_chain", "lambda_chain"].iter().any(|p| name.starts_with(p));
        if chain_file {
            fs::remove_file(entry.path()).map_err(|e| CliError::io(entry.path(), e))?;
        }
    }
    Ok(())
}

fn fit(config: &RunConfig, a: &FitArgs, out: &mut impl Write) -> Result<()> {
    let data = ingest(&a.data, &config.model)?;
    let spatial = spatial_model(config, data.dataset.sites())?;
    let mesh_text = spatial.mesh().map(|m| m.to_text());
    let n_nodes = spatial.n_nodes();
    let ctx = ModelContext::new(data.dataset.clone(), spatial, config.prior.clone())?;

    let dir = config.output_dir();
    let stage = Stage::new(&dir)?;
    let start = Instant::now();
    let chains = run_chains(&ctx, &config.chain)?;
    let seconds = start.elapsed().as_secs_f64();

    let summary = posterior_summary(&chains, config.predict.level)?;
    let diagnostics = diagnose(&chains)?;
    let mut records = Vec::with_capacity(chains.len());
    for d in &chains {
        let subset = store::state_subset(d.n_draws(), config.store.max_state_draws);
        store::write_draws(stage.create(&store::draws_file(d.chain))?, &d.monitored_names, &d.monitored)?;
        store::write_states(stage.create(&store::states_file(d.chain))?, d, &subset)?;
        if let Some(lambda) = &d.lambda {
            store::write_lambda(stage.create(&store::lambda_file(d.chain))?, lambda, &subset)?;
        }
        records.push(ChainRecord {
            chain: d.chain,
            n_draws: d.n_draws(),
            state_draws: subset,
            has_lambda: d.lambda.is_some(),
            acceptance: d.acceptance,
            final_steps: d.final_steps,
        });
    }
    let record = FitRecord {
        model: config.model.clone(),
        prior: config.prior.clone(),
        chain: config.chain.clone(),
        site_ids: data.site_ids.clone(),
        covariate_names: data.covariate_names.clone(),
        time_origin: data.calendar.origin().map(|d| d.format("%Y-%m-%d").to_string()),
        n_sites: data.dataset.n_sites(),
        n_times: data.dataset.n_times(),
        n_nodes,
        n_states: data.dataset.n_states(),
        monitored_names: chains[0].monitored_names.clone(),
        chains: records,
        seconds,
    };
    write_dataset(stage.create(store::DATA_FILE)?, &data)?;
    if let Some(text) = mesh_text {
        stage.create(store::MESH_FILE)?.write_all(text.as_bytes()).map_err(|e| CliError::io(store::MESH_FILE, e))?;
    }
    store::write_summary(stage.create(store::SUMMARY_FILE)?, &summary)?;
    store::write_diagnostics(stage.create(store::DIAGNOSTICS_FILE)?, &diagnostics)?;
    store::write_acceptance(stage.create(store::ACCEPTANCE_FILE)?, &diagnostics.acceptance)?;
    record.save(stage.create(store::FIT_FILE)?)?;
    clear_chain_files(&dir)?;
    stage.commit()?;

    say(out, format!("fitted {} chains in {seconds:.1}s; results in {}", chains.len(), dir.display()))?;
    print_summary(out, &summary)?;
    print_diagnostics(out, &diagnostics)
}

fn print_summary(out: &mut impl Write, rows: &[ParameterSummary]) -> Result<()> {
    say(out, format!("{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}", "parameter", "mean", "median", "sd", "ci_lower", "ci_upper"))?;
    for r in rows {
        say(
            out,
            format!(
                "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.parameter, r.mean, r.median, r.sd, r.ci_lower, r.ci_upper
            ),
        )?;
    }
    Ok(())
}

fn print_diagnostics(out: &mut impl Write, d: &Diagnostics) -> Result<()> {
    let flagged: Vec<&str> =
        d.names.iter().zip(&d.flagged).filter(|(_, f)| **f).map(|(n, _)| n.as_str()).collect();
    let rhat = if d.acceptance.len() > 1 { format!("{:.3}", d.max_rhat()) } else { "n/a (one chain)".into() };
    say(out, format!("max R-hat {rhat}; flagged: {}", if flagged.is_empty() { "none".into() } else { flagged.join(" ") }))
}

/// A stored fit reloaded for prediction.
struct Fitted {
    dir: PathBuf,
    record: FitRecord,
    data: Ingested,
    ctx: ModelContext,
    chains: Vec<stdglm::sampler::PosteriorDraws>,
}

fn load_fit(config: &RunConfig) -> Result<Fitted> {
    let dir = config.output_dir();
    let record = FitRecord::load(&dir)?;
    let data = ingest(&dir.join(store::DATA_FILE), &record.model)?;
    let sites = data.dataset.sites();
    let spatial = match record.model.path {
        ModelPath::Dense => SpatialModel::dense(sites.to_vec(), record.model.nu)?,
        ModelPath::Sparse => {
            let path = dir.join(store::MESH_FILE);
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            SpatialModel::sparse(parse_mesh(&text)?, sites)?
        }
    };
    if spatial.n_nodes() != record.n_nodes || data.dataset.n_sites() != record.n_sites {
        return Err(CliError::Store(format!("{} does not match the stored data and mesh", store::FIT_FILE)));
    }
    let ctx = ModelContext::new(data.dataset.clone(), spatial, record.prior.clone())?;
    let chains = store::load_chains(&dir, &record)?;
    Ok(Fitted { dir, record, data, ctx, chains })
}

fn site_label(data: &Ingested, site: &TargetSite) -> (String, SpatialLocation) {
    match site {
        TargetSite::Site(i) => (data.site_ids[*i].clone(), data.dataset.sites()[*i]),
        TargetSite::New(loc) => (String::new(), *loc),
    }
}

fn write_predictions(w: impl Write, data: &Ingested, p: &PredictiveSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Store(e.to_string());
    out.write_record(["site_id", "x", "y", "t", "mean", "median", "sd", "ci_lower", "ci_upper"]).map_err(err)?;
    for (j, target) in p.targets.iter().enumerate() {
        let (id, loc) = site_label(data, &target.site);
        out.write_record([
            id,
            loc.x.to_string(),
            loc.y.to_string(),
            data.calendar.label(target.t),
            p.mean[j].to_string(),
            p.median[j].to_string(),
            p.sd[j].to_string(),
            p.lower[j].to_string(),
            p.upper[j].to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}

fn save_predictions(fitted: &Fitted, name: &str, p: &PredictiveSummary, out: &mut impl Write) -> Result<()> {
    let stage = Stage::new(&fitted.dir)?;
    write_predictions(stage.create(name)?, &fitted.data, p)?;
    stage.commit()?;
    say(out, format!("{} predictions written to {}", p.targets.len(), fitted.dir.join(name).display()))
}

fn predict(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    let fitted = load_fit(config)?;
    if fitted.record.chains.iter().any(|c| !c.has_lambda) {
        return Err(CliError::Usage("imputation needs log-rate draws; rerun `fit` with --keep-lambda".into()));
    }
    let p = impute(&fitted.chains, &fitted.ctx, None, &config.predict)?;
    save_predictions(&fitted, IMPUTE_FILE, &p, out)
}

/// Reads a covariate table keyed by `keys` (e.g. `["t"]` or `["site_id", "t"]`),
/// returning each row's key fields and its covariates in model order.
fn read_keyed_table(path: &Path, keys: &[&str], names: &[String]) -> Result<Vec<(u64, Vec<String>, Vec<f64>)>> {
    let source = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(&source, e.to_string()))?;
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::data(&source, e.to_string()))?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(&source, format!("header lacks column '{name}'")))
    };
    let key_cols = keys.iter().map(|k| column(k)).collect::<Result<Vec<_>>>()?;
    let cov_cols = names.iter().map(|k| column(k)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::data(&source, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let keys = key_cols.iter().map(|&c| rec[c].to_string()).collect();
        let values = cov_cols
            .iter()
            .map(|&c| match rec[c].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::data(&source, format!("row {line}: column '{}': '{}' is not a finite number", header[c], &rec[c]))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, keys, values));
    }
    Ok(rows)
}

/// Covariates of a new location at the days in `times`, one row per day.
fn site_covariates(path: Option<&Path>, data: &Ingested, times: Range<usize>) -> Result<DMatrix<f64>> {
    let q = data.covariate_names.len();
    let Some(path) = path else {
        if q == 0 {
            return Ok(DMatrix::zeros(times.len(), 0));
        }
        return Err(CliError::Usage(format!(
            "the model has covariates ({}); pass them with --covariates",
            data.covariate_names.join(", ")
        )));
    };
    let source = path.display().to_string();
    let mut m = DMatrix::from_element(times.len(), q, f64::NAN);
    let mut seen: HashMap<usize, u64> = HashMap::new();
    for (line, keys, values) in read_keyed_table(path, &["t"], &data.covariate_names)? {
        let t = data.calendar.parse(&keys[0]).map_err(|e| CliError::data(&source, format!("row {line}: {e}")))?;
        if !times.contains(&t) {
            continue;
        }
        if let Some(first) = seen.insert(t, line) {
            return Err(CliError::data(&source, format!("rows {first} and {line} both give day {}", keys[0])));
        }
        for (k, v) in values.into_iter().enumerate() {
            m[(t - times.start, k)] = v;
        }
    }
    if let Some(t) = times.clone().find(|t| !seen.contains_key(t)) {
        return Err(CliError::data(&source, format!("no covariates for day {}", data.calendar.label(t))));
    }
    Ok(m)
}

/// Covariates at every data site for the forecast days, cell-major.
fn future_covariates(path: Option<&Path>, data: &Ingested, times: Range<usize>) -> Result<Vec<f64>> {
    let (n, q) = (data.dataset.n_sites(), data.covariate_names.len());
    let Some(path) = path else {
        if q == 0 {
            return Ok(Vec::new());
        }
        return Err(CliError::Usage(format!(
            "the model has covariates ({}); pass future values with --covariates",
            data.covariate_names.join(", ")
        )));
    };
    let source = path.display().to_string();
    let index: HashMap<&str, usize> = data.site_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = vec![f64::NAN; times.len() * n * q];
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    for (line, keys, values) in read_keyed_table(path, &["site_id", "t"], &data.covariate_names)? {
        let i = *index
            .get(keys[0].as_str())
            .ok_or_else(|| CliError::data(&source, format!("row {line}: unknown site '{}'", keys[0])))?;
        let t = data.calendar.parse(&keys[1]).map_err(|e| CliError::data(&source, format!("row {line}: {e}")))?;
        if !times.contains(&t) {
            continue;
        }
        if let Some(first) = seen.insert((t, i), line) {
            return Err(CliError::data(&source, format!("rows {first} and {line} both give site {} day {}", keys[0], keys[1])));
        }
        let cell = (t - times.start) * n + i;
        out[cell * q..(cell + 1) * q].copy_from_slice(&values);
    }
    for t in times.clone() {
        if let Some(i) = (0..n).find(|i| !seen.contains_key(&(t, *i))) {
            return Err(CliError::data(
                &source,
                format!("no covariates for site {} on day {}", data.site_ids[i], data.calendar.label(t)),
            ));
        }
    }
    Ok(out)
}

fn forecast_cmd(config: &RunConfig, a: &ForecastArgs, out: &mut impl Write) -> Result<()> {
    if a.horizon == 0 {
        return Err(CliError::Usage("--horizon must be at least 1".into()));
    }
    let fitted = load_fit(config)?;
    let nt = fitted.record.n_times;
    let times = nt..nt + a.horizon;
    let (f, _) = build_harmonics(fitted.record.model.period, fitted.record.model.order)?;
    let design = DMatrix::from_fn(a.horizon, f.len(), |_, j| f[j]);
    let p = match a.at {
        Some(point) => {
            let covariates = site_covariates(a.covariates.as_deref(), &fitted.data, times)?;
            let site = NewSite { location: point.0, covariates };
            spacetime_predict(&fitted.chains, &fitted.ctx, &site, &design, &config.predict)?
        }
        None => {
            let covariates = future_covariates(a.covariates.as_deref(), &fitted.data, times)?;
            forecast(&fitted.chains, &fitted.ctx, &FutureInputs { design, covariates }, &config.predict)?
        }
    };
    save_predictions(&fitted, FORECAST_FILE, &p, out)
}

fn krige_cmd(config: &RunConfig, a: &KrigeArgs, out: &mut impl Write) -> Result<()> {
    let fitted = load_fit(config)?;
    let covariates = site_covariates(a.covariates.as_deref(), &fitted.data, 0..fitted.record.n_times)?;
    let site = NewSite { location: a.at.0, covariates };
    let p = krige(&fitted.chains, &fitted.ctx, &site, &config.predict)?;
    save_predictions(&fitted, KRIGE_FILE, &p, out)
}

/// Parses `all` or an inclusive `FIRST:LAST` range of day labels.
pub fn parse_period(s: &str, calendar: &Calendar, n_times: usize) -> Result<Range<usize>> {
    if s == "all" {
        return Ok(0..n_times);
    }
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("--period must be 'all' or FIRST:LAST, got '{s}'")))?;
    let parse = |v: &str| calendar.parse(v.trim()).map_err(|e| CliError::Usage(format!("--period: {e}")));
    let (first, last) = (parse(a)?, parse(b)?);
    if first > last || last >= n_times {
        return Err(CliError::Usage(format!(
            "--period {s} is not a range within the {n_times} observed days ({} to {})",
            calendar.label(0),
            calendar.label(n_times.saturating_sub(1))
        )));
    }
    Ok(first..last + 1)
}

fn write_aadb(w: impl Write, data: &Ingested, e: &AadbEstimate) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Store(e.to_string());
    let (id, loc) = site_label(data, &e.site);
    out.write_record(["site_id", "x", "y", "first", "last", "mean", "median", "sd", "ci_lower", "ci_upper"])
        .map_err(err)?;
    out.write_record([
        id,
        loc.x.to_string(),
        loc.y.to_string(),
        data.calendar.label(e.period.0),
        data.calendar.label(e.period.1 - 1),
        e.mean.to_string(),
        e.median.to_string(),
        e.sd.to_string(),
        e.lower.to_string(),
        e.upper.to_string(),
    ])
    .map_err(err)?;
    out.flush().map_err(|e| CliError::Store(e.to_string()))
}

fn aadb(config: &RunConfig, a: &AadbArgs, out: &mut impl Write) -> Result<()> {
    let fitted = load_fit(config)?;
    let period = parse_period(&a.period, &fitted.data.calendar, fitted.record.n_times)?;
    let site = match (&a.site, a.at) {
        (Some(id), _) => {
            let i = fitted
                .data
                .site_ids
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| CliError::Usage(format!("unknown site '{id}'")))?;
            let hidden = period.clone().any(|t| !fitted.data.dataset.is_observed(t, i));
            if hidden && fitted.record.chains.iter().any(|c| !c.has_lambda) {
                return Err(CliError::Usage(format!(
                    "site {id} has missing days in the period; rerun `fit` with --keep-lambda"
                )));
            }
            AadbSite::Site(i)
        }
        (None, Some(point)) => {
            let covariates = site_covariates(a.covariates.as_deref(), &fitted.data, 0..fitted.record.n_times)?;
            AadbSite::New(NewSite { location: point.0, covariates })
        }
        (None, None) => return Err(CliError::Usage("give --site or --at".into())),
    };
    let e = estimate_aadb(&fitted.chains, &fitted.ctx, &site, period, &config.predict)?;
    let stage = Stage::new(&fitted.dir)?;
    write_aadb(stage.create(AADB_FILE)?, &fitted.data, &e)?;
    stage.commit()?;
    say(
        out,
        format!(
            "AADB {} [{}, {}] at level {}",
            e.mean, e.lower, e.upper, config.predict.level
        ),
    )
}

fn diagnose_cmd(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    let dir = config.output_dir();
    let record = FitRecord::load(&dir)?;
    let mut tables = Vec::with_capacity(record.chains.len());
    for c in &record.chains {
        let (names, rows) = store::read_draws(&dir.join(store::draws_file(c.chain)))?;
        if names != record.monitored_names {
            return Err(CliError::Store(format!("{} has unexpected columns", store::draws_file(c.chain))));
        }
        tables.push(rows);
    }
    let acceptance = record.chains.iter().map(|c| c.acceptance).collect();
    let d = diagnose_table(&record.monitored_names, &tables, acceptance)?;
    let stage = Stage::new(&dir)?;
    store::write_diagnostics(stage.create(store::DIAGNOSTICS_FILE)?, &d)?;
    store::write_acceptance(stage.create(store::ACCEPTANCE_FILE)?, &d.acceptance)?;
    stage.commit()?;
    say(out, format!("{} chains, {} draws each", tables.len(), d.n_draws))?;
    print_diagnostics(out, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn periods_are_inclusive_and_checked() {
        assert_eq!(parse_period("all", &Calendar::Index, 10).unwrap(), 0..10);
        assert_eq!(parse_period("2:4", &Calendar::Index, 10).unwrap(), 2..5);
        assert!(parse_period("4:2", &Calendar::Index, 10).is_err());
        assert!(parse_period("0:10", &Calendar::Index, 10).is_err());
        assert!(parse_period("3", &Calendar::Index, 10).is_err());
        let dates = Calendar::Dates(NaiveDate::from_ymd_opt(2024, 12, 30).unwrap());
        assert_eq!(parse_period("2024-12-31:2025-01-02", &dates, 10).unwrap(), 1..4);
        assert!(parse_period("1:3", &dates, 10).is_err());
    }
}
