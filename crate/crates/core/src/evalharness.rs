//! Evaluation protocol: labelled prediction schedules, TPR/FPR/PPV/decision
//! rate, and sweeps over relative costs and risk quantiles with Pareto
//! frontiers.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inference::landmarks;
use crate::policy::{point_decide, robust_decide, CostSpec, Decision, EventProbDist, Verdict};
use crate::survival::{EventKind, EventRecord};

/// Prediction horizon, minutes.
pub const DEFAULT_HORIZON: f64 = 720.0;
/// Bootstrap resamples of individuals for the AUC spread.
pub const BOOTSTRAP_SAMPLES: usize = 10;

/// What is known about an individual's event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    /// No event during the stay, which ends at `stay_end`.
    EventFree { stay_end: f64 },
    Event(EventRecord),
}

impl Outcome {
    /// `None` from the data files means no event row, i.e. event-free.
    pub fn from_record(event: Option<EventRecord>, stay_end: f64) -> Self {
        match event {
            Some(e) => Outcome::Event(e),
            None => Outcome::EventFree { stay_end },
        }
    }

    /// Time the prediction schedule is anchored to.
    pub fn end_time(&self) -> f64 {
        match self {
            Outcome::EventFree { stay_end } => *stay_end,
            Outcome::Event(e) => e.t_left,
        }
    }

    /// Whether the event falls in `(t, t + delta]`; `None` when the data
    /// cannot tell.
    pub fn label(&self, t: f64, delta: f64) -> Option<bool> {
        let end = t + delta;
        match self {
            Outcome::EventFree { .. } => Some(false),
            Outcome::Event(e) => match e.kind {
                EventKind::Observed => Some(e.t_left > t && e.t_left <= end),
                EventKind::RightCensored => (e.t_left >= end).then_some(false),
                EventKind::IntervalCensored => {
                    let r = e.t_right.expect("interval record has a right end");
                    if e.t_left >= end {
                        Some(false)
                    } else if e.t_left >= t && r <= end {
                        Some(true)
                    } else {
                        None
                    }
                }
            },
        }
    }
}

/// One labelled landmark awaiting a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledPoint {
    pub id: u64,
    pub t: f64,
    pub label: Option<bool>,
}

/// The five-point schedule ending 15 minutes before `end_time`, labelled for
/// horizon `delta`.
pub fn schedule_predictions(id: u64, outcome: &Outcome, delta: f64) -> Result<Vec<ScheduledPoint>> {
    Ok(landmarks(outcome.end_time())?
        .into_iter()
        .map(|t| ScheduledPoint { id, t, label: outcome.label(t, delta) })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInstance {
    pub id: u64,
    pub t: f64,
    pub label: bool,
    pub decision: Decision,
}

/// Distribution and label of one instance, the input of sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledDist {
    pub id: u64,
    pub t: f64,
    pub label: bool,
    pub dist: EventProbDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub abstain_pos: usize,
    pub abstain_neg: usize,
}

impl Counts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_ + self.abstain_pos
    }
    pub fn negatives(&self) -> usize {
        self.fp + self.tn + self.abstain_neg
    }
    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }
    fn add(&mut self, label: bool, verdict: Verdict) {
        match (label, verdict) {
            (true, Verdict::Positive) => self.tp += 1,
            (true, Verdict::Negative) => self.fn_ += 1,
            (true, Verdict::Abstain) => self.abstain_pos += 1,
            (false, Verdict::Positive) => self.fp += 1,
            (false, Verdict::Negative) => self.tn += 1,
            (false, Verdict::Abstain) => self.abstain_neg += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub tpr: f64,
    pub fpr: f64,
    /// Absent when nothing was predicted positive.
    pub ppv: Option<f64>,
    pub decision_rate: f64,
    pub counts: Counts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn metrics_from_counts(c: Counts) -> MetricRow {
    let abstained = c.abstain_pos + c.abstain_neg;
    MetricRow {
        tpr: ratio(c.tp, c.positives()),
        fpr: ratio(c.fp, c.negatives()),
        ppv: (c.tp + c.fp > 0).then(|| ratio(c.tp, c.tp + c.fp)),
        decision_rate: 1.0 - ratio(abstained, c.total()),
        counts: c,
    }
}

/// Rates over all instances; abstentions stay in the TPR and FPR
/// denominators.
pub fn compute_metrics(instances: &[PredictionInstance]) -> Result<MetricRow> {
    if instances.is_empty() {
        return invalid("metrics need at least one instance");
    }
    let mut c = Counts::default();
    for i in instances {
        c.add(i.label, i.decision.verdict);
    }
    Ok(metrics_from_counts(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Quantile-risk rule on the full distribution.
    Robust,
    /// Expected-risk rule on the point value, uncertainty discarded.
    Point,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Robust => "robust",
            Mode::Point => "point",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "robust" => Some(Mode::Robust),
            "point" => Some(Mode::Point),
            _ => None,
        }
    }

    pub fn decide(&self, dist: &EventProbDist, costs: &CostSpec) -> Decision {
        match self {
            Mode::Robust => robust_decide(dist, costs),
            Mode::Point => point_decide(dist.point(), costs).expect("point value lies in [0, 1]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub q: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let l2 = (0..20).map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 19.0)).collect();
        Self { l1: vec![0.25, 0.5, 1.0, 2.0, 4.0], l2, q: vec![0.55, 0.75, 0.9, 0.95] }
    }
}

impl SweepGrid {
    pub fn costs(&self) -> Result<Vec<CostSpec>> {
        if self.l1.is_empty() || self.l2.is_empty() || self.q.is_empty() {
            return invalid("sweep grids must be nonempty");
        }
        let mut out = Vec::with_capacity(self.l1.len() * self.l2.len() * self.q.len());
        for &l1 in &self.l1 {
            for &l2 in &self.l2 {
                for &q in &self.q {
                    out.push(CostSpec::new(l1, l2, q)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub costs: CostSpec,
    pub metrics: MetricRow,
    pub n_excluded: usize,
}

/// Decides every instance under every cost triple of the grid.
pub fn sweep(instances: &[LabeledDist], grid: &SweepGrid, mode: Mode, n_excluded: usize) -> Result<Vec<SweepRow>> {
    if instances.is_empty() {
        return invalid("sweep needs at least one instance");
    }
    let costs = grid.costs()?;
    Ok(costs
        .par_iter()
        .map(|cs| {
            let mut c = Counts::default();
            for i in instances {
                c.add(i.label, mode.decide(&i.dist, cs).verdict);
            }
            SweepRow { mode, costs: *cs, metrics: metrics_from_counts(c), n_excluded }
        })
        .collect())
}

/// Upper staircase of `(x, TPR)` pairs: for each attained `x`, the best TPR
/// among rows at least as good in `x` (smaller when `lower_is_better`).
pub fn frontier(points: &[(f64, f64)], lower_is_better: bool) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    if !lower_is_better {
        pts.reverse();
    }
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for (x, y) in pts {
        if y > best {
            best = y;
            if out.last().is_some_and(|l| l.0 == x) {
                out.pop();
            }
            out.push((x, y));
        }
    }
    if !lower_is_better {
        out.reverse();
    }
    out
}

/// Maximum TPR at each FPR.
pub fn roc_frontier(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    frontier(&rows.iter().map(|r| (r.metrics.fpr, r.metrics.tpr)).collect::<Vec<_>>(), true)
}

/// Maximum TPR at each PPV.
pub fn ppv_frontier(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    frontier(&rows.iter().filter_map(|r| r.metrics.ppv.map(|p| (p, r.metrics.tpr))).collect::<Vec<_>>(), false)
}

/// Largest TPR among rows with PPV at least `min_ppv` (0 if none).
pub fn max_tpr_at_ppv(rows: &[SweepRow], min_ppv: f64) -> f64 {
    rows.iter().filter(|r| r.metrics.ppv.is_some_and(|p| p >= min_ppv)).map(|r| r.metrics.tpr).fold(0.0, f64::max)
}

/// Area under the ROC frontier, closed with (0, 0) and (1, 1).
pub fn frontier_auc(roc: &[(f64, f64)]) -> f64 {
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(roc.iter().copied());
    pts.push((1.0, 1.0));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub auc: f64,
    pub boot_mean: f64,
    pub boot_sd: f64,
}

/// Frontier AUC of a sweep plus a resampling spread over individuals.
pub fn auc_with_bootstrap<R: Rng + ?Sized>(instances: &[LabeledDist], grid: &SweepGrid, mode: Mode, rng: &mut R) -> Result<AucSummary> {
    let auc = frontier_auc(&roc_frontier(&sweep(instances, grid, mode, 0)?));
    let mut by_id: BTreeMap<u64, Vec<LabeledDist>> = BTreeMap::new();
    for i in instances {
        by_id.entry(i.id).or_default().push(*i);
    }
    let groups: Vec<&Vec<LabeledDist>> = by_id.values().collect();
    let mut aucs = Vec::with_capacity(BOOTSTRAP_SAMPLES);
    for _ in 0..BOOTSTRAP_SAMPLES {
        let resample: Vec<LabeledDist> =
            (0..groups.len()).flat_map(|_| groups[rng.random_range(0..groups.len())].iter().copied()).collect();
        aucs.push(frontier_auc(&roc_frontier(&sweep(&resample, grid, mode, 0)?)));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let sd = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(AucSummary { auc, boot_mean: mean, boot_sd: sd })
}

/// Average ranks, ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("rank correlation needs two equal-length samples of size at least 2");
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let m = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
