//! Individual records, datasets, per-signal standardization and the CSV
//! file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::longitudinal::ObservationSeries;
use crate::survival::{CovariateVector, EventKind, EventRecord};

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const EVENTS_FILE: &str = "events.csv";

pub const OBSERVATIONS_HEADER: [&str; 4] = ["individual_id", "signal_id", "time_min", "value"];
pub const COVARIATES_HEADER: [&str; 4] = ["individual_id", "time_min", "name", "value"];
pub const EVENTS_HEADER: [&str; 5] = ["individual_id", "kind", "t_event", "t_left", "t_right"];

/// A covariate recorded at change points; the value is carried forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CovariateSeries {
    /// Value in force at `t`; 0 (the standardized mean) before the first record.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 0.0,
            n => self.values[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: u64,
    /// One series per signal, index `d` holds signal id `d + 1`.
    pub series: Vec<ObservationSeries>,
    /// Aligned with [`Dataset::covariate_names`].
    pub covariates: Vec<CovariateSeries>,
    pub event: Option<EventRecord>,
}

impl IndividualRecord {
    pub fn covariates_at(&self, t: f64) -> CovariateVector {
        CovariateVector { x: self.covariates.iter().map(|c| c.value_at(t)).collect() }
    }

    /// Last observation time over all signals, if any.
    pub fn last_observation(&self) -> Option<f64> {
        self.series.iter().filter_map(|s| s.times.last().copied()).reduce(f64::max)
    }

    pub fn n_observations(&self) -> usize {
        self.series.iter().map(|s| s.len()).sum()
    }

    /// Observations and covariate changes up to and including `t`.
    pub fn truncated(&self, t: f64) -> Self {
        Self {
            id: self.id,
            series: self.series.iter().map(|s| s.truncated(t)).collect(),
            covariates: self
                .covariates
                .iter()
                .map(|c| {
                    let n = c.times.partition_point(|&x| x <= t);
                    CovariateSeries { times: c.times[..n].to_vec(), values: c.values[..n].to_vec() }
                })
                .collect(),
            event: self.event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_signals: usize,
    pub covariate_names: Vec<String>,
    pub individuals: Vec<IndividualRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.n_signals == 0 {
            return Err(Error::Validation("dataset has no signals".into()));
        }
        for r in &self.individuals {
            if r.series.len() != self.n_signals || r.covariates.len() != self.covariate_names.len() {
                return Err(Error::Validation(format!("individual {} has inconsistent dimensions", r.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&IndividualRecord> {
        self.individuals.iter().find(|r| r.id == id)
    }
}

/// Per-signal and per-covariate affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub signal_mean: Vec<f64>,
    pub signal_sd: Vec<f64>,
    pub covariate_mean: Vec<f64>,
    pub covariate_sd: Vec<f64>,
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 1.0);
    }
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn identity(n_signals: usize, n_covariates: usize) -> Self {
        Self {
            signal_mean: vec![0.0; n_signals],
            signal_sd: vec![1.0; n_signals],
            covariate_mean: vec![0.0; n_covariates],
            covariate_sd: vec![1.0; n_covariates],
        }
    }

    pub fn fit(data: &Dataset) -> Self {
        let (signal_mean, signal_sd) = (0..data.n_signals)
            .map(|d| mean_sd(data.individuals.iter().flat_map(|r| r.series[d].values.iter().copied())))
            .unzip();
        let (covariate_mean, covariate_sd) = (0..data.covariate_names.len())
            .map(|p| mean_sd(data.individuals.iter().flat_map(|r| r.covariates[p].values.iter().copied())))
            .unzip();
        Self { signal_mean, signal_sd, covariate_mean, covariate_sd }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if self.signal_mean.len() != data.n_signals || self.covariate_mean.len() != data.covariate_names.len() {
            return Err(Error::Validation("standardizer dimensions do not match the dataset".into()));
        }
        let mut out = data.clone();
        for r in &mut out.individuals {
            for (d, s) in r.series.iter_mut().enumerate() {
                for v in &mut s.values {
                    *v = (*v - self.signal_mean[d]) / self.signal_sd[d];
                }
            }
            for (p, c) in r.covariates.iter_mut().enumerate() {
                for v in &mut c.values {
                    *v = (*v - self.covariate_mean[p]) / self.covariate_sd[p];
                }
            }
        }
        Ok(out)
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(parse_err(path, 1, format!("expected header `{}`, found `{}`", header.join(","), got.join(","))));
    }
    Ok(rdr)
}

/// Iterates the data rows of a CSV file as `(line, fields)`.
pub(crate) fn for_each_row(
    path: &Path,
    header: &[&str],
    mut f: impl FnMut(u64, &csv::StringRecord) -> std::result::Result<(), String>,
) -> Result<()> {
    let mut rdr = open_csv(path, header)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        f(line, &rec).map_err(|m| parse_err(path, line, m))?;
    }
    Ok(())
}

pub(crate) fn field_f64(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<f64, String> {
    let s = &rec[i];
    let v: f64 = s.parse().map_err(|_| format!("{name}: cannot parse `{s}` as a number"))?;
    if !v.is_finite() {
        return Err(format!("{name}: value must be finite"));
    }
    Ok(v)
}

pub(crate) fn field_opt_f64(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<Option<f64>, String> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field_f64(rec, i, name).map(Some)
    }
}

pub(crate) fn field_id(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<u64, String> {
    rec[i].parse().map_err(|_| format!("{name}: `{}` is not a nonnegative integer", &rec[i]))
}

/// Parses `kind,t_event,t_left,t_right`.
pub fn parse_event(kind: &str, t_event: Option<f64>, t_left: Option<f64>, t_right: Option<f64>) -> std::result::Result<EventRecord, String> {
    let r = match kind {
        "observed" => {
            let t = t_event.ok_or("observed event needs t_event")?;
            if t_left.is_some_and(|l| l != t) {
                return Err("observed event needs t_left equal to t_event".into());
            }
            if t_right.is_some() {
                return Err("observed event must leave t_right empty".into());
            }
            EventRecord::observed(t)
        }
        "right" => {
            if t_event.is_some() || t_right.is_some() {
                return Err("right-censored record takes only t_left".into());
            }
            EventRecord::right_censored(t_left.ok_or("right-censored record needs t_left")?)
        }
        "interval" => {
            if t_event.is_some() {
                return Err("interval-censored record must leave t_event empty".into());
            }
            EventRecord::interval_censored(
                t_left.ok_or("interval record needs t_left")?,
                t_right.ok_or("interval record needs t_right")?,
            )
        }
        other => return Err(format!("unknown event kind `{other}`")),
    };
    r.map_err(|e| e.to_string())
}

pub fn read_events(path: &Path) -> Result<BTreeMap<u64, EventRecord>> {
    let mut out = BTreeMap::new();
    for_each_row(path, &EVENTS_HEADER, |_, rec| {
        let id = field_id(rec, 0, "individual_id")?;
        let ev = parse_event(
            &rec[1],
            field_opt_f64(rec, 2, "t_event")?,
            field_opt_f64(rec, 3, "t_left")?,
            field_opt_f64(rec, 4, "t_right")?,
        )?;
        if out.insert(id, ev).is_some() {
            return Err(format!("duplicate event row for individual {id}"));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Options for [`read_dataset`].
#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Fixes the number of signals; otherwise the largest signal id is used.
    pub n_signals: Option<usize>,
    /// Fixes the covariate columns; otherwise all names, sorted.
    pub covariate_names: Option<Vec<String>>,
    /// Fail when an individual has no events row.
    pub require_events: bool,
}

/// Reads `observations.csv`, and `covariates.csv` / `events.csv` when present.
/// Individuals are those appearing in any of the files, sorted by id.
pub fn read_dataset(dir: &Path, opts: &ReadOptions) -> Result<Dataset> {
    let obs_path = dir.join(OBSERVATIONS_FILE);
    let mut obs: BTreeMap<(u64, usize), Vec<(f64, f64, u64)>> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    let mut max_signal = 0usize;
    for_each_row(&obs_path, &OBSERVATIONS_HEADER, |line, rec| {
        let id = field_id(rec, 0, "individual_id")?;
        let d: usize = rec[1].parse().map_err(|_| format!("signal_id: `{}` is not a positive integer", &rec[1]))?;
        if d == 0 {
            return Err("signal_id is 1-based".into());
        }
        if opts.n_signals.is_some_and(|n| d > n) {
            return Err(format!("signal_id {d} exceeds the configured number of signals"));
        }
        let t = field_f64(rec, 2, "time_min")?;
        if t < 0.0 {
            return Err("time_min must be nonnegative".into());
        }
        let v = field_f64(rec, 3, "value")?;
        max_signal = max_signal.max(d);
        ids.insert(id);
        obs.entry((id, d)).or_default().push((t, v, line));
        Ok(())
    })?;
    let n_signals = opts.n_signals.unwrap_or(max_signal);

    let cov_path = dir.join(COVARIATES_FILE);
    let mut covs: BTreeMap<(u64, String), Vec<(f64, f64, u64)>> = BTreeMap::new();
    let mut names = BTreeSet::new();
    if cov_path.exists() {
        for_each_row(&cov_path, &COVARIATES_HEADER, |line, rec| {
            let id = field_id(rec, 0, "individual_id")?;
            let t = field_f64(rec, 1, "time_min")?;
            let name = rec[2].to_string();
            if name.is_empty() {
                return Err("covariate name is empty".into());
            }
            if let Some(fixed) = &opts.covariate_names {
                if !fixed.contains(&name) {
                    return Err(format!("unknown covariate `{name}`"));
                }
            }
            let v = field_f64(rec, 3, "value")?;
            names.insert(name.clone());
            ids.insert(id);
            covs.entry((id, name)).or_default().push((t, v, line));
            Ok(())
        })?;
    }
    let covariate_names = opts.covariate_names.clone().unwrap_or_else(|| names.into_iter().collect());

    let ev_path = dir.join(EVENTS_FILE);
    let events = if ev_path.exists() { read_events(&ev_path)? } else { BTreeMap::new() };
    if opts.require_events && !ev_path.exists() {
        return Err(parse_err(&ev_path, 0, "events file is required"));
    }
    ids.extend(events.keys().copied());

    let mut individuals = Vec::with_capacity(ids.len());
    for id in ids {
        let mut series = Vec::with_capacity(n_signals);
        for d in 1..=n_signals {
            let mut rows = obs.remove(&(id, d)).unwrap_or_default();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(parse_err(&obs_path, w[1].2, format!("duplicate time for individual {id}, signal {d}")));
            }
            let (times, values) = rows.iter().map(|r| (r.0, r.1)).unzip();
            series.push(ObservationSeries::new(d, times, values)?);
        }
        let mut covariates = Vec::with_capacity(covariate_names.len());
        for name in &covariate_names {
            let mut rows = covs.remove(&(id, name.clone())).unwrap_or_default();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(parse_err(&cov_path, w[1].2, format!("duplicate time for covariate `{name}` of individual {id}")));
            }
            let (times, values) = rows.iter().map(|r| (r.0, r.1)).unzip();
            covariates.push(CovariateSeries { times, values });
        }
        let event = events.get(&id).copied();
        if opts.require_events && event.is_none() {
            return Err(parse_err(&ev_path, 0, format!("no event row for individual {id}")));
        }
        individuals.push(IndividualRecord { id, series, covariates, event });
    }
    Ok(Dataset { n_signals, covariate_names, individuals })
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(File::create(path)?))
}

/// Writes a CSV file from preformatted rows.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn event_row(id: u64, e: &EventRecord) -> Vec<String> {
    let t_event = (e.kind == EventKind::Observed).then_some(e.t_left);
    vec![id.to_string(), e.kind.as_str().to_string(), opt(t_event), e.t_left.to_string(), opt(e.t_right)]
}

/// Writes the three dataset files into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join(OBSERVATIONS_FILE),
        &OBSERVATIONS_HEADER,
        data.individuals.iter().flat_map(|r| {
            r.series.iter().flat_map(move |s| {
                s.times.iter().zip(&s.values).map(move |(t, v)| {
                    vec![r.id.to_string(), s.signal_id.to_string(), t.to_string(), v.to_string()]
                })
            })
        }),
    )?;
    write_rows(
        &dir.join(COVARIATES_FILE),
        &COVARIATES_HEADER,
        data.individuals.iter().flat_map(|r| {
            r.covariates.iter().zip(&data.covariate_names).flat_map(move |(c, name)| {
                c.times.iter().zip(&c.values).map(move |(t, v)| {
                    vec![r.id.to_string(), t.to_string(), name.clone(), v.to_string()]
                })
            })
        }),
    )?;
    write_rows(
        &dir.join(EVENTS_FILE),
        &EVENTS_HEADER,
        data.individuals.iter().filter_map(|r| r.event.as_ref().map(|e| event_row(r.id, e))),
    )?;
    Ok(())
}
