//! Library form of the command-line pipeline (simulate, train, predict,
//! decide, evaluate, sweep) and its CSV formats. The binary only parses
//! arguments and calls these functions.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{field_f64, field_id, for_each_row, write_rows, Dataset, IndividualRecord, Standardizer};
use crate::error::{Error, Result};
use crate::evalharness::{
    auc_with_bootstrap, compute_metrics, ppv_frontier, roc_frontier, sweep, AucSummary, LabeledDist, MetricRow, Mode,
    Outcome, PredictionInstance, SweepGrid, SweepRow,
};
use crate::inference::checkpoint::LocalEntry;
use crate::inference::{fit_global, landmarks, predict::predict_schedule, Checkpoint, TrainConfig};
use crate::policy::{CostSpec, Decision, EventProbDist, Verdict};
use crate::rng::substream;

pub const DISTS_HEADER: [&str; 5] = ["individual_id", "time_min", "loc", "scale", "k"];
pub const DECISIONS_HEADER: [&str; 7] = ["individual_id", "time_min", "verdict", "h_lo", "h_hi", "tau_lo", "tau_hi"];
pub const METRICS_HEADER: [&str; 9] = ["mode", "L1", "L2", "q", "tpr", "fpr", "ppv", "decision_rate", "n_excluded"];
pub const TIMES_HEADER: [&str; 2] = ["individual_id", "time_min"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistRow {
    pub id: u64,
    pub t: f64,
    pub dist: EventProbDist,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRow {
    pub id: u64,
    pub t: f64,
    pub decision: Decision,
}

/// Fits the model on `data` (standardized internally) and packages the result.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    data.validate()?;
    if data.individuals.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let standardizer = Standardizer::fit(data);
    let scaled = standardizer.apply(data)?;
    let fit = fit_global(&scaled.individuals, cfg)?;
    let locals = scaled
        .individuals
        .iter()
        .zip(fit.locals)
        .filter_map(|(r, l)| l.map(|state| LocalEntry { id: r.id, state }))
        .collect();
    Ok(Checkpoint::new(
        cfg.clone(),
        data.n_signals,
        data.covariate_names.clone(),
        standardizer,
        fit.global,
        locals,
        fit.iterations,
        fit.converged,
    ))
}

/// Outcome used for labels and default schedules. Individuals without an
/// event row are event-free until their last observation.
pub fn outcome(record: &IndividualRecord) -> Outcome {
    Outcome::from_record(record.event, record.last_observation().unwrap_or(0.0))
}

/// Default prediction times: the five-point schedule before the outcome time.
pub fn default_times(record: &IndividualRecord) -> Result<Vec<f64>> {
    landmarks(outcome(record).end_time())
}

/// Event-probability distributions of one individual (raw data units) at
/// increasing `times`.
pub fn predict_individual(ck: &Checkpoint, record: &IndividualRecord, times: &[f64], horizon: f64) -> Result<Vec<DistRow>> {
    let one = Dataset { n_signals: ck.n_signals, covariate_names: ck.covariate_names.clone(), individuals: vec![record.clone()] };
    let scaled = ck.standardizer.apply(&one)?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let preds = predict_schedule(&ck.global, &scaled.individuals[0], &sorted, horizon, &ck.config)?;
    Ok(preds.into_iter().map(|p| DistRow { id: record.id, t: p.t, dist: p.dist }).collect())
}

/// Predictions for every individual, at `times` when given (individuals
/// absent from it are skipped) or at the default schedule.
pub fn predict(ck: &Checkpoint, data: &Dataset, times: Option<&BTreeMap<u64, Vec<f64>>>, horizon: f64) -> Result<Vec<DistRow>> {
    if data.n_signals != ck.n_signals || data.covariate_names != ck.covariate_names {
        return Err(Error::Validation("dataset signals or covariates differ from the checkpoint".into()));
    }
    if let Some(map) = times {
        if let Some(id) = map.keys().find(|id| data.get(**id).is_none()) {
            return Err(Error::Validation(format!("prediction times given for unknown individual {id}")));
        }
    }
    let rows: Vec<Vec<DistRow>> = data
        .individuals
        .par_iter()
        .map(|r| {
            let ts = match times {
                Some(map) => map.get(&r.id).cloned().unwrap_or_default(),
                None => default_times(r)?,
            };
            predict_individual(ck, r, &ts, horizon)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn decide(dists: &[DistRow], costs: &CostSpec, mode: Mode) -> Result<Vec<DecisionRow>> {
    let costs = CostSpec::new(costs.l1, costs.l2, costs.q)?;
    Ok(dists.iter().map(|d| DecisionRow { id: d.id, t: d.t, decision: mode.decide(&d.dist, &costs) }).collect())
}

fn label_for(data: &Dataset, id: u64, t: f64, horizon: f64) -> Result<Option<bool>> {
    let r = data.get(id).ok_or_else(|| Error::Validation(format!("no data for individual {id}")))?;
    Ok(outcome(r).label(t, horizon))
}

/// Metrics of decisions against labels from `data`; also returns the number
/// of instances whose label is indeterminable.
pub fn evaluate(decisions: &[DecisionRow], data: &Dataset, horizon: f64) -> Result<(MetricRow, usize)> {
    let mut inst = Vec::with_capacity(decisions.len());
    let mut excluded = 0;
    for d in decisions {
        match label_for(data, d.id, d.t, horizon)? {
            Some(label) => inst.push(PredictionInstance { id: d.id, t: d.t, label, decision: d.decision }),
            None => excluded += 1,
        }
    }
    Ok((compute_metrics(&inst)?, excluded))
}

/// Attaches labels; returns the labelled instances and the excluded count.
pub fn label_dists(dists: &[DistRow], data: &Dataset, horizon: f64) -> Result<(Vec<LabeledDist>, usize)> {
    let mut out = Vec::with_capacity(dists.len());
    let mut excluded = 0;
    for d in dists {
        match label_for(data, d.id, d.t, horizon)? {
            Some(label) => out.push(LabeledDist { id: d.id, t: d.t, label, dist: d.dist }),
            None => excluded += 1,
        }
    }
    Ok((out, excluded))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub roc: BTreeMap<Mode, Vec<(f64, f64)>>,
    pub ppv: BTreeMap<Mode, Vec<(f64, f64)>>,
    pub auc: BTreeMap<Mode, AucSummary>,
}

pub fn run_sweep(dists: &[DistRow], data: &Dataset, horizon: f64, grid: &SweepGrid, modes: &[Mode], seed: u64) -> Result<SweepOutput> {
    let (labelled, excluded) = label_dists(dists, data, horizon)?;
    let mut out = SweepOutput { rows: Vec::new(), roc: BTreeMap::new(), ppv: BTreeMap::new(), auc: BTreeMap::new() };
    for &mode in modes {
        let rows = sweep(&labelled, grid, mode, excluded)?;
        out.roc.insert(mode, roc_frontier(&rows));
        out.ppv.insert(mode, ppv_frontier(&rows));
        let mut rng = substream(seed, "bootstrap", mode as u64);
        out.auc.insert(mode, auc_with_bootstrap(&labelled, grid, mode, &mut rng)?);
        out.rows.extend(rows);
    }
    Ok(out)
}

// ---- file formats ----

pub fn write_dists(path: &Path, rows: &[DistRow]) -> Result<()> {
    write_rows(
        path,
        &DISTS_HEADER,
        rows.iter().map(|r| vec![r.id.to_string(), r.t.to_string(), r.dist.loc.to_string(), r.dist.scale.to_string(), r.dist.k.to_string()]),
    )
}

pub fn read_dists(path: &Path) -> Result<Vec<DistRow>> {
    let mut out = Vec::new();
    for_each_row(path, &DISTS_HEADER, |_, rec| {
        let dist = EventProbDist::new(field_f64(rec, 2, "loc")?, field_f64(rec, 3, "scale")?, field_f64(rec, 4, "k")?)
            .map_err(|e| e.to_string())?;
        out.push(DistRow { id: field_id(rec, 0, "individual_id")?, t: field_f64(rec, 1, "time_min")?, dist });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_decisions(path: &Path, rows: &[DecisionRow]) -> Result<()> {
    write_rows(
        path,
        &DECISIONS_HEADER,
        rows.iter().map(|r| {
            let d = &r.decision;
            vec![
                r.id.to_string(),
                r.t.to_string(),
                d.verdict.as_str().to_string(),
                d.h_lo.to_string(),
                d.h_hi.to_string(),
                d.tau_lo.to_string(),
                d.tau_hi.to_string(),
            ]
        }),
    )
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRow>> {
    let mut out = Vec::new();
    for_each_row(path, &DECISIONS_HEADER, |_, rec| {
        let verdict = Verdict::parse(&rec[2]).ok_or_else(|| format!("verdict: expected 0, 1 or a, got `{}`", &rec[2]))?;
        let decision = Decision {
            verdict,
            h_lo: field_f64(rec, 3, "h_lo")?,
            h_hi: field_f64(rec, 4, "h_hi")?,
            tau_lo: field_f64(rec, 5, "tau_lo")?,
            tau_hi: field_f64(rec, 6, "tau_hi")?,
        };
        out.push(DecisionRow { id: field_id(rec, 0, "individual_id")?, t: field_f64(rec, 1, "time_min")?, decision });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_times(path: &Path) -> Result<BTreeMap<u64, Vec<f64>>> {
    let mut out: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for_each_row(path, &TIMES_HEADER, |_, rec| {
        let t = field_f64(rec, 1, "time_min")?;
        if t < 0.0 {
            return Err("time_min must be nonnegative".into());
        }
        out.entry(field_id(rec, 0, "individual_id")?).or_default().push(t);
        Ok(())
    })?;
    Ok(out)
}

pub fn metrics_row(mode: Mode, costs: &CostSpec, m: &MetricRow, n_excluded: usize) -> Vec<String> {
    vec![
        mode.as_str().to_string(),
        costs.l1.to_string(),
        costs.l2.to_string(),
        costs.q.to_string(),
        m.tpr.to_string(),
        m.fpr.to_string(),
        m.ppv.map(|p| p.to_string()).unwrap_or_default(),
        m.decision_rate.to_string(),
        n_excluded.to_string(),
    ]
}

pub fn write_metrics(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, &METRICS_HEADER, rows.iter().map(|r| metrics_row(r.mode, &r.costs, &r.metrics, r.n_excluded)))
}

pub fn write_frontier(path: &Path, x_name: &str, pts: &[(f64, f64)]) -> Result<()> {
    write_rows(path, &[x_name, "tpr"], pts.iter().map(|(x, y)| vec![x.to_string(), y.to_string()]))
}

/// Writes `metrics.csv`, `roc_<mode>.csv`, `ppv_<mode>.csv` and `auc.csv`.
pub fn write_sweep(dir: &Path, out: &SweepOutput) -> Result<()> {
    write_metrics(&dir.join("metrics.csv"), &out.rows)?;
    for (mode, pts) in &out.roc {
        write_frontier(&dir.join(format!("roc_{}.csv", mode.as_str())), "fpr", pts)?;
    }
    for (mode, pts) in &out.ppv {
        write_frontier(&dir.join(format!("ppv_{}.csv", mode.as_str())), "ppv", pts)?;
    }
    write_rows(
        &dir.join("auc.csv"),
        &["mode", "auc", "boot_mean", "boot_sd"],
        out.auc.iter().map(|(m, a)| vec![m.as_str().to_string(), a.auc.to_string(), a.boot_mean.to_string(), a.boot_sd.to_string()]),
    )
}
