//! Long-format count tables: one row per site and day,
//! `site_id,x,y,t,count,<covariates...>`.
//!
//! `t` is either a non-negative day index or an ISO date (`YYYY-MM-DD`);
//! dates become day offsets from the earliest date in the file. An empty
//! `count` marks a missing cell. Every site must have a row for every day.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use stdglm::simulate::build_harmonics;
use stdglm::{Dataset, SpatialLocation};

use crate::config::ModelSection;
use crate::error::{CliError, Result};

pub const KEY_COLUMNS: [&str; 5] = ["site_id", "x", "y", "t", "count"];

/// A dataset plus the labels needed to report results in the input's terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub site_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub calendar: Calendar,
}

/// How day indices map back to the labels used in the file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Calendar {
    Index,
    Dates(NaiveDate),
}

impl Calendar {
    pub fn label(&self, t: usize) -> String {
        match self {
            Self::Index => t.to_string(),
            Self::Dates(origin) => (*origin + chrono::Days::new(t as u64)).format("%Y-%m-%d").to_string(),
        }
    }

    /// Parses a time label written in this calendar's convention.
    pub fn parse(&self, s: &str) -> std::result::Result<usize, String> {
        match (self, parse_time(s)?) {
            (Self::Index, TimeLabel::Index(t)) => Ok(t),
            (Self::Dates(origin), TimeLabel::Date(d)) => {
                let days = (d - *origin).num_days();
                usize::try_from(days).map_err(|_| format!("date {d} precedes the first day {origin}"))
            }
            (Self::Index, TimeLabel::Date(_)) => Err(format!("'{s}' is a date but the data use day indices")),
            (Self::Dates(_), TimeLabel::Index(_)) => Err(format!("'{s}' is a day index but the data use dates")),
        }
    }

    pub fn origin(&self) -> Option<NaiveDate> {
        match self {
            Self::Index => None,
            Self::Dates(d) => Some(*d),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimeLabel {
    Index(usize),
    Date(NaiveDate),
}

fn parse_time(s: &str) -> std::result::Result<TimeLabel, String> {
    if let Ok(t) = s.parse::<usize>() {
        return Ok(TimeLabel::Index(t));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(TimeLabel::Date)
        .map_err(|_| format!("'{s}' is neither a day index nor an ISO date"))
}

fn parse_float(s: &str, column: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("column '{column}': '{s}' is not a finite number")),
    }
}

struct Row {
    line: u64,
    site: usize,
    time: TimeLabel,
    count: Option<u64>,
    covariates: Vec<f64>,
}

pub fn ingest(path: &Path, model: &ModelSection) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ingest_str(&text, &path.display().to_string(), model)
}

/// Parses CSV text; `source` names the input in error messages.
pub fn ingest_str(text: &str, source: &str, model: &ModelSection) -> Result<Ingested> {
    let err = |msg: String| CliError::data(source, msg);
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < KEY_COLUMNS.len() || header[..5] != KEY_COLUMNS {
        return Err(err(format!("header must start with {}, found {}", KEY_COLUMNS.join(","), header.join(","))));
    }
    let extra = &header[5..];
    let covariate_names: Vec<String> = match &model.covariates {
        None => extra.to_vec(),
        Some(names) => names.clone(),
    };
    let mut cov_columns = Vec::with_capacity(covariate_names.len());
    for name in &covariate_names {
        match extra.iter().position(|h| h == name) {
            Some(j) => cov_columns.push(5 + j),
            None => return Err(err(format!("covariate column '{name}' is not in the header"))),
        }
    }
    if let Some(dup) = (0..header.len()).find(|&j| header[..j].contains(&header[j])) {
        return Err(err(format!("column '{}' appears twice in the header", header[dup])));
    }

    let mut site_ids: Vec<String> = Vec::new();
    let mut site_info: HashMap<String, (usize, SpatialLocation, u64)> = HashMap::new();
    let mut rows: Vec<Row> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(format!("unreadable row: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let at = |msg: String| err(format!("row {line}: {msg}"));
        if record.len() != header.len() {
            return Err(at(format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(at("empty site_id".into()));
        }
        let x = parse_float(&record[1], "x").map_err(at)?;
        let y = parse_float(&record[2], "y").map_err(at)?;
        let time = parse_time(&record[3]).map_err(|m| at(format!("column 't': {m}")))?;
        let count = match &record[4] {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| at(format!("column 'count': '{s}' is not a non-negative integer")))?),
        };
        let covariates = cov_columns
            .iter()
            .map(|&j| parse_float(&record[j], &header[j]))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(at)?;
        let site = match site_info.get(&id) {
            Some(&(k, loc, first)) => {
                if loc.x != x || loc.y != y {
                    return Err(at(format!(
                        "site '{id}' at ({x}, {y}) but row {first} places it at ({}, {})",
                        loc.x, loc.y
                    )));
                }
                k
            }
            None => {
                let k = site_ids.len();
                site_info.insert(id.clone(), (k, SpatialLocation::new(x, y), line));
                site_ids.push(id);
                k
            }
        };
        rows.push(Row { line, site, time, count, covariates });
    }
    if rows.is_empty() {
        return Err(err("no data rows".into()));
    }

    let calendar = match rows[0].time {
        TimeLabel::Index(_) => Calendar::Index,
        TimeLabel::Date(_) => {
            let mut earliest = None;
            for r in &rows {
                match r.time {
                    TimeLabel::Date(d) => earliest = Some(earliest.map_or(d, |e: NaiveDate| e.min(d))),
                    TimeLabel::Index(_) => {
                        return Err(err(format!("row {}: day index mixed with dates in column 't'", r.line)))
                    }
                }
            }
            Calendar::Dates(earliest.expect("at least one row"))
        }
    };
    let index_of = |r: &Row| -> Result<usize> {
        match (r.time, calendar) {
            (TimeLabel::Index(t), Calendar::Index) => Ok(t),
            (TimeLabel::Date(d), Calendar::Dates(origin)) => Ok((d - origin).num_days() as usize),
            _ => Err(err(format!("row {}: dates mixed with day indices in column 't'", r.line))),
        }
    };
    let mut times = Vec::with_capacity(rows.len());
    for r in &rows {
        times.push(index_of(r)?);
    }
    let n_times = times.iter().max().expect("rows are non-empty") + 1;
    let n = site_ids.len();
    let q = covariate_names.len();

    let mut seen: Vec<Option<u64>> = vec![None; n * n_times];
    let mut counts = vec![0u64; n * n_times];
    let mut observed = vec![false; n * n_times];
    let mut covs = vec![0.0; n * n_times * q];
    for (r, &t) in rows.iter().zip(&times) {
        let cell = t * n + r.site;
        if let Some(first) = seen[cell] {
            return Err(err(format!(
                "rows {first} and {}: duplicate entry for site '{}' at t = {}",
                r.line,
                site_ids[r.site],
                calendar.label(t)
            )));
        }
        seen[cell] = Some(r.line);
        if let Some(c) = r.count {
            counts[cell] = c;
            observed[cell] = true;
        }
        covs[cell * q..(cell + 1) * q].copy_from_slice(&r.covariates);
    }
    if let Some(cell) = seen.iter().position(Option::is_none) {
        let missing = seen.iter().filter(|s| s.is_none()).count();
        return Err(err(format!(
            "site '{}' has no row for t = {} ({missing} site-day rows missing in total; \
             give missing counts as empty fields instead)",
            site_ids[cell % n],
            calendar.label(cell / n)
        )));
    }

    let sites: Vec<SpatialLocation> = site_ids.iter().map(|id| site_info[id].1).collect();
    let (f, g) = build_harmonics(model.period, model.order).map_err(|e| CliError::Config(e.to_string()))?;
    let design = DMatrix::from_fn(n_times, f.len(), |_, j| f[j]);
    let dataset = Dataset::new(sites, n_times, counts, observed, covs, q, design, g)?;
    Ok(Ingested { dataset, site_ids, covariate_names, calendar })
}

/// Writes `data` in the format [`ingest`] reads, rows ordered by day then site.
pub fn write_dataset<W: Write>(out: W, data: &Ingested) -> Result<()> {
    let d = &data.dataset;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for t in 0..d.n_times() {
        for i in 0..d.n_sites() {
            let s = d.sites()[i];
            let mut rec = vec![
                data.site_ids[i].clone(),
                s.x.to_string(),
                s.y.to_string(),
                data.calendar.label(t),
                if d.is_observed(t, i) { d.count(t, i).to_string() } else { String::new() },
            ];
            rec.extend(d.covariates_at(t, i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| CliError::Store(e.to_string()))?;
    Ok(())
}

pub fn save_dataset(path: &Path, data: &Ingested) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(std::io::BufWriter::new(file), data)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Store(format!("writing CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> ModelSection {
        ModelSection::default()
    }

    fn parse(text: &str) -> Result<Ingested> {
        ingest_str(text, "test.csv", &model())
    }

    const TWO_BY_THREE: &str = "site_id,x,y,t,count,temp\n\
        a,0,0,0,3,1.5\nb,1,0,0,4,2\na,0,0,1,5,0.5\nb,1,0,1,6,1\na,0,0,2,7,-1\nb,1,0,2,8,0\n";

    #[test]
    fn fully_observed_table() {
        let d = parse(TWO_BY_THREE).unwrap();
        assert_eq!((d.dataset.n_sites(), d.dataset.n_times(), d.dataset.n_covariates()), (2, 3, 1));
        assert!(d.dataset.observed().iter().all(|&o| o));
        assert_eq!(d.dataset.count(1, 1), 6);
        assert_eq!(d.dataset.covariates_at(2, 0), &[-1.0]);
        assert_eq!(d.site_ids, ["a", "b"]);
        assert_eq!(d.calendar, Calendar::Index);
        assert_eq!(d.dataset.n_states(), 2);
    }

    #[test]
    fn empty_count_is_missing_exactly_there() {
        let d = parse(&TWO_BY_THREE.replace("b,1,0,1,6,1", "b,1,0,1,,1")).unwrap();
        let missing: Vec<(usize, usize)> =
            (0..3).flat_map(|t| (0..2).map(move |i| (t, i))).filter(|&(t, i)| !d.dataset.is_observed(t, i)).collect();
        assert_eq!(missing, [(1, 1)]);
    }

    #[test]
    fn duplicate_rows_name_both_lines() {
        let text = format!("{TWO_BY_THREE}a,0,0,1,9,0\n");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("rows 4 and 8"), "{e}");
        assert!(e.contains("duplicate"), "{e}");
    }

    #[test]
    fn row_level_errors_carry_line_numbers() {
        let cases = [
            (TWO_BY_THREE.replace("b,1,0,0,4,2", "b,1,0,0,4"), "row 3: expected 6 fields, found 5"),
            (TWO_BY_THREE.replace("b,1,0,0,4,2", "b,1,0,0,four,2"), "row 3: column 'count'"),
            (TWO_BY_THREE.replace("b,1,0,0,4,2", "b,1,0,0,4,warm"), "row 3: column 'temp'"),
            (TWO_BY_THREE.replace("b,1,0,0,4,2", "b,1,0,0,-4,2"), "row 3: column 'count'"),
            (TWO_BY_THREE.replace("b,1,0,1,6,1", "b,1,1,1,6,1"), "row 5: site 'b' at (1, 1) but row 3"),
            (TWO_BY_THREE.replace("a,0,0,2,7,-1", "a,0,0,yesterday,7,-1"), "row 6: column 't'"),
        ];
        for (text, want) in cases {
            let e = parse(&text).unwrap_err();
            assert_eq!(e.kind(), "data");
            assert!(e.to_string().contains(want), "{e} should contain {want}");
        }
    }

    #[test]
    fn header_and_coverage_errors() {
        assert!(parse("site,x,y,t,count\n").unwrap_err().to_string().contains("header must start"));
        let e = parse(&TWO_BY_THREE.replace("b,1,0,2,8,0\n", "")).unwrap_err().to_string();
        assert!(e.contains("site 'b' has no row for t = 2"), "{e}");
        let m = ModelSection { covariates: Some(vec!["rain".into()]), ..model() };
        let e = ingest_str(TWO_BY_THREE, "x", &m).unwrap_err().to_string();
        assert!(e.contains("'rain' is not in the header"), "{e}");
    }

    #[test]
    fn covariate_mapping_selects_and_orders_columns() {
        let text = "site_id,x,y,t,count,a,b\ns,0,0,0,1,10,20\ns,0,0,1,2,11,21\n";
        let m = ModelSection { covariates: Some(vec!["b".into()]), ..model() };
        let d = ingest_str(text, "x", &m).unwrap();
        assert_eq!(d.covariate_names, ["b"]);
        assert_eq!(d.dataset.covariates_at(1, 0), &[21.0]);
    }

    #[test]
    fn iso_dates_become_day_offsets() {
        let text = "site_id,x,y,t,count\ns,0,0,2024-03-01,1\ns,0,0,2024-02-28,2\ns,0,0,2024-02-29,\n";
        let d = parse(text).unwrap();
        assert_eq!(d.dataset.n_times(), 3);
        assert_eq!(d.calendar, Calendar::Dates(NaiveDate::from_ymd_opt(2024, 2, 28).unwrap()));
        assert_eq!(d.dataset.count(0, 0), 2);
        assert_eq!(d.dataset.count(2, 0), 1);
        assert!(!d.dataset.is_observed(1, 0));
        assert_eq!(d.calendar.label(2), "2024-03-01");
        assert_eq!(d.calendar.parse("2024-02-29"), Ok(1));
        assert!(d.calendar.parse("5").is_err());
        let mixed = "site_id,x,y,t,count\ns,0,0,2024-03-01,1\ns,0,0,1,2\n";
        assert!(parse(mixed).unwrap_err().to_string().contains("row 3"));
    }

    proptest! {
        #[test]
        fn write_then_ingest_is_identity(
            n in 1usize..4,
            nt in 1usize..5,
            seed in any::<u64>(),
            dates in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut text = String::from("site_id,x,y,t,count,c1,c2\n");
            let origin = NaiveDate::from_ymd_opt(2023, 12, 30).unwrap();
            let sites: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>())).collect();
            for t in 0..nt {
                for (i, s) in sites.iter().enumerate() {
                    let label = if dates { (origin + chrono::Days::new(t as u64)).to_string() } else { t.to_string() };
                    let count = if rng.random::<f64>() < 0.3 { String::new() } else { rng.random_range(0..500u64).to_string() };
                    text += &format!("site{i},{},{},{label},{count},{},{}\n", s.0, s.1, rng.random::<f64>() - 0.5, rng.random::<f64>() * 1e-7);
                }
            }
            let first = parse(&text).unwrap();
            let mut buf = Vec::new();
            write_dataset(&mut buf, &first).unwrap();
            let second = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
