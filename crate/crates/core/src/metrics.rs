//! Time-dependent discrimination and calibration metrics for one cause of a
//! competing-risks model, all IPCW-adjusted with the censoring curve `G`.
//!
//! * `td_auc`: cumulative/dynamic AUC at a horizon. Cases fail from cause
//!   `k` by the horizon; controls are still event-free or failed from a
//!   competing cause.
//! * `td_ci`: time-dependent concordance comparing `F_k(T_i | x_i)` with
//!   `F_k(T_i | x_j)` for comparable pairs, truncated at the horizon.
//! * `brier`: IPCW Brier score of `F_k(t | x)` at the horizon.
//!
//! Score ties count one half. Undefined values are `None`, never 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::finegray::CifPrediction;
use crate::par;
use crate::survival::{event_order, time_quantile_grid, CensoringModel};

/// Horizons at which reports are produced.
pub const DEFAULT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

fn inv(g: f64, g_min: f64) -> f64 {
    1.0 / g.max(g_min)
}

fn check_lengths(scores: usize, time: &[f64], event: &[u32]) -> Result<()> {
    if scores != time.len() || time.len() != event.len() {
        return Err(Error::Shape(format!(
            "{scores} scores, {} times, {} events",
            time.len(),
            event.len()
        )));
    }
    Ok(())
}

/// Cumulative/dynamic AUC for `cause` at `horizon`. `scores` are risk
/// scores (higher = riskier), typically `F_k(horizon | x)`.
pub fn td_auc(
    scores: &[f64],
    time: &[f64],
    event: &[u32],
    cause: u32,
    g: &CensoringModel,
    horizon: f64,
    g_min: f64,
) -> Result<Option<f64>> {
    check_lengths(scores.len(), time, event)?;
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for j in 0..time.len() {
        if time[j] <= horizon && event[j] == cause {
            cases.push((scores[j], inv(g.left_limit(time[j]), g_min)));
        } else if time[j] > horizon {
            controls.push((scores[j], inv(g.eval(horizon), g_min)));
        } else if event[j] != 0 {
            controls.push((scores[j], inv(g.left_limit(time[j]), g_min)));
        }
    }
    if cases.is_empty() || controls.is_empty() {
        return Ok(None);
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    // below[i] = Σ weight of controls[..i]
    let mut below = Vec::with_capacity(controls.len() + 1);
    below.push(0.0);
    for c in &controls {
        below.push(below.last().copied().unwrap_or(0.0) + c.1);
    }
    let control_total = below[controls.len()];
    let mut num = 0.0;
    let mut case_total = 0.0;
    for &(s, w) in &cases {
        let lo = controls.partition_point(|c| c.0 < s);
        let hi = controls.partition_point(|c| c.0 <= s);
        num += w * (below[lo] + 0.5 * (below[hi] - below[lo]));
        case_total += w;
    }
    // A ratio of weighted counts; clamp away rounding past 1.
    Ok(Some((num / (case_total * control_total)).min(1.0)))
}

/// Time-dependent concordance for `cause`, counting cases with
/// `T_i <= horizon`. `pred` must contain every case time in its grid.
///
/// Pair `(i, j)` with `E_i = k` is comparable when `T_i < T_j` (weight
/// `1/(G(T_i-) G(T_i))`) or when `j` failed from a competing cause at
/// `T_j <= T_i` (weight `1/(G(T_i-) G(T_j-))`). It is concordant when
/// `F_k(T_i | x_i) > F_k(T_i | x_j)`.
pub fn td_ci(
    pred: &CifPrediction,
    time: &[f64],
    event: &[u32],
    cause: u32,
    g: &CensoringModel,
    horizon: f64,
    g_min: f64,
) -> Result<Option<f64>> {
    check_lengths(pred.n_subjects(), time, event)?;
    let order = event_order(time, event);
    let sorted_times: Vec<f64> = order.iter().map(|&i| time[i]).collect();
    // competing-cause subjects in ascending time
    let competing: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&j| event[j] != 0 && event[j] != cause)
        .collect();
    let cases: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| event[i] == cause && time[i] <= horizon)
        .collect();
    let grid_index = |t: f64| -> Result<usize> {
        let idx = pred.times.partition_point(|&s| s < t);
        if idx < pred.times.len() && pred.times[idx] == t {
            Ok(idx)
        } else {
            Err(Error::InvalidInput(format!(
                "CIF grid does not contain case time {t}"
            )))
        }
    };

    let terms = par::try_map_range(cases.len(), |c| {
        let i = cases[c];
        let ti = time[i];
        let col = grid_index(ti)?;
        let own = pred.get(i, cause, col);
        let gi = inv(g.left_limit(ti), g_min);
        let credit = |j: usize| {
            let other = pred.get(j, cause, col);
            if own > other {
                1.0
            } else if own == other {
                0.5
            } else {
                0.0
            }
        };
        let mut num = 0.0;
        let mut den = 0.0;
        let w_later = gi * inv(g.eval(ti), g_min);
        let start = sorted_times.partition_point(|&s| s <= ti);
        for &j in &order[start..] {
            num += w_later * credit(j);
            den += w_later;
        }
        for &j in competing.iter().take_while(|&&j| time[j] <= ti) {
            let w = gi * inv(g.left_limit(time[j]), g_min);
            num += w * credit(j);
            den += w;
        }
        Ok::<_, Error>((num, den))
    })?;
    let (num, den) = terms
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d));
    Ok((den > 0.0).then(|| (num / den).min(1.0)))
}

/// IPCW Brier score of `cif` (= `F_k(horizon | x)`) for `cause`.
pub fn brier(
    cif: &[f64],
    time: &[f64],
    event: &[u32],
    cause: u32,
    g: &CensoringModel,
    horizon: f64,
    g_min: f64,
) -> Result<Option<f64>> {
    check_lengths(cif.len(), time, event)?;
    if time.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for j in 0..time.len() {
        let (weight, outcome) = if time[j] <= horizon {
            if event[j] == 0 {
                (0.0, 0.0)
            } else {
                (
                    inv(g.left_limit(time[j]), g_min),
                    f64::from(u8::from(event[j] == cause)),
                )
            }
        } else {
            (inv(g.eval(horizon), g_min), 0.0)
        };
        total += weight * (outcome - cif[j]).powi(2);
    }
    Ok(Some(total / time.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TdAuc,
    TdCi,
    Brier,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::TdAuc, Metric::TdCi, Metric::Brier];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TdAuc => "td_auc",
            Metric::TdCi => "td_ci",
            Metric::Brier => "brier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub cause: u32,
    pub quantile: f64,
    pub horizon: f64,
    pub metric: Metric,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub quantiles: Vec<f64>,
    pub horizons: Vec<f64>,
    pub n: usize,
    /// Ordered by cause, then horizon, then metric.
    pub entries: Vec<MetricEntry>,
    /// Labels the concordance and AUC conventions used.
    pub convention: String,
}

impl MetricsReport {
    pub fn get(&self, cause: u32, horizon_index: usize, metric: Metric) -> Option<f64> {
        let q = self.quantiles.get(horizon_index)?;
        self.entries
            .iter()
            .find(|e| e.cause == cause && e.quantile == *q && e.metric == metric)
            .and_then(|e| e.value)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cause", "quantile", "horizon", "metric", "value", "n"])?;
        for e in &self.entries {
            w.write_record([
                e.cause.to_string(),
                format!("{}", e.quantile),
                format!("{}", e.horizon),
                e.metric.name().to_string(),
                e.value.map_or_else(|| "NA".to_string(), |v| format!("{v}")),
                self.n.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }
}

pub const CONVENTION: &str = "td_auc: IPCW cumulative/dynamic, competing events as controls; \
td_ci: IPCW time-dependent concordance on F_k(T_i|x), competing events comparable; \
brier: IPCW two-term weights";

/// Horizons from event-time quantiles of `dataset`.
pub fn default_horizons(dataset: &SurvivalDataset, quantiles: &[f64]) -> Result<Vec<f64>> {
    time_quantile_grid(&dataset.time, &dataset.event, quantiles)
}

/// Sorted distinct union of horizons and every event time up to the last
/// horizon; a CIF on this grid is sufficient for [`evaluate`].
pub fn evaluation_grid(dataset: &SurvivalDataset, horizons: &[f64]) -> Vec<f64> {
    let last = horizons.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut grid: Vec<f64> = horizons.to_vec();
    grid.extend(
        dataset
            .time
            .iter()
            .zip(&dataset.event)
            .filter(|(&t, &e)| e > 0 && t <= last)
            .map(|(&t, _)| t),
    );
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Full report for every cause at the given horizons.
pub fn evaluate(
    pred: &CifPrediction,
    dataset: &SurvivalDataset,
    g: &CensoringModel,
    quantiles: &[f64],
    horizons: &[f64],
    g_min: f64,
) -> Result<MetricsReport> {
    if quantiles.len() != horizons.len() {
        return Err(Error::Shape("one horizon per quantile required".into()));
    }
    if horizons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("horizons must be ascending".into()));
    }
    let mut entries = Vec::new();
    for cause in 1..=dataset.num_risks as u32 {
        for (&q, &h) in quantiles.iter().zip(horizons) {
            let col = pred
                .times
                .iter()
                .position(|&t| t == h)
                .ok_or_else(|| Error::InvalidInput(format!("CIF grid lacks horizon {h}")))?;
            let at_h = pred.at(cause, col);
            let values = [
                td_auc(&at_h, &dataset.time, &dataset.event, cause, g, h, g_min)?,
                td_ci(pred, &dataset.time, &dataset.event, cause, g, h, g_min)?,
                brier(&at_h, &dataset.time, &dataset.event, cause, g, h, g_min)?,
            ];
            for (metric, value) in Metric::ALL.into_iter().zip(values) {
                entries.push(MetricEntry {
                    cause,
                    quantile: q,
                    horizon: h,
                    metric,
                    value,
                });
            }
        }
    }
    Ok(MetricsReport {
        quantiles: quantiles.to_vec(),
        horizons: horizons.to_vec(),
        n: dataset.n(),
        entries,
        convention: CONVENTION.to_string(),
    })
}
