//! Competing-risks primitives: tie-aware event ordering, subdistribution risk
//! sets, the Kaplan–Meier censoring survival curve, IPCW and class weights.
//!
//! Event labels follow the dataset convention: `0` is censoring and
//! `1..=K` are causes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to censoring-survival values used as denominators.
pub const DEFAULT_G_MIN: f64 = 1e-4;

/// Subjects sorted by time (events before censorings at ties) together with
/// the distinct event times of every cause.
#[derive(Debug, Clone)]
pub struct EventIndex {
    time: Vec<f64>,
    event: Vec<u32>,
    num_risks: usize,
    order: Vec<usize>,
    /// `cause_times[k - 1]` holds `(time, d)` pairs in ascending time.
    cause_times: Vec<Vec<(f64, usize)>>,
}

/// Sort key placing events ahead of censorings at equal times.
pub fn event_order(time: &[f64], event: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| {
        time[a]
            .total_cmp(&time[b])
            .then_with(|| (event[a] == 0).cmp(&(event[b] == 0)))
            .then_with(|| a.cmp(&b))
    });
    order
}

impl EventIndex {
    pub fn new(time: &[f64], event: &[u32], num_risks: usize) -> Result<Self> {
        if time.len() != event.len() {
            return Err(Error::Shape(format!(
                "{} times vs {} events",
                time.len(),
                event.len()
            )));
        }
        let order = event_order(time, event);
        let mut cause_times: Vec<Vec<(f64, usize)>> = vec![Vec::new(); num_risks];
        for &i in &order {
            let e = event[i] as usize;
            if e == 0 {
                continue;
            }
            if e > num_risks {
                return Err(Error::InvalidInput(format!(
                    "subject {i} has event {e} > num_risks {num_risks}"
                )));
            }
            let times = &mut cause_times[e - 1];
            match times.last_mut() {
                Some((t, d)) if *t == time[i] => *d += 1,
                _ => times.push((time[i], 1)),
            }
        }
        Ok(EventIndex {
            time: time.to_vec(),
            event: event.to_vec(),
            num_risks,
            order,
            cause_times,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_risks(&self) -> usize {
        self.num_risks
    }

    /// Distinct event times of `cause` (1-based) with their event counts.
    pub fn event_times(&self, cause: u32) -> &[(f64, usize)] {
        &self.cause_times[cause as usize - 1]
    }

    /// Subjects in the cause-`k` subdistribution risk set at `t`: those
    /// still under observation plus those who failed earlier from a
    /// competing cause. Returned in ascending subject id.
    pub fn subdist_risk_set(&self, cause: u32, t: f64) -> Vec<usize> {
        subdist_risk_set(&self.time, &self.event, cause, t)
    }
}

/// Direct definition of the subdistribution risk set, `{j: T_j >= t} ∪
/// {j: T_j < t, E_j ∉ {0, k}}`.
pub fn subdist_risk_set(time: &[f64], event: &[u32], cause: u32, t: f64) -> Vec<usize> {
    (0..time.len())
        .filter(|&j| in_subdist_risk_set(time[j], event[j], cause, t))
        .collect()
}

#[inline]
pub fn in_subdist_risk_set(t_j: f64, e_j: u32, cause: u32, t: f64) -> bool {
    t_j >= t || (e_j != 0 && e_j != cause)
}

/// Kaplan–Meier estimate of the censoring survival function `G(t) = P(C > t)`.
/// Stored as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    /// Censoring times at which the curve drops, ascending.
    pub times: Vec<f64>,
    /// Value of `G` from each step time onward.
    pub values: Vec<f64>,
    /// Set when `G` falls to zero at time zero.
    pub degenerate: bool,
}

impl CensoringModel {
    /// `G ≡ 1`, i.e. no censoring adjustment.
    pub fn unit() -> Self {
        CensoringModel {
            times: Vec::new(),
            values: Vec::new(),
            degenerate: false,
        }
    }

    /// `G(t)`, right-continuous.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    /// `G(t-)`, the left limit.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "G"])?;
        w.write_record(["0", "1"])?;
        for (t, g) in self.times.iter().zip(&self.values) {
            w.write_record([format!("{t}"), format!("{g}")])?;
        }
        w.flush().map_err(|e| Error::io("<censoring>", e))?;
        Ok(())
    }
}

/// Product-limit estimate treating `E = 0` as the event of interest. The
/// at-risk count at `t` is every subject with `T >= t`.
pub fn fit_censoring_km(time: &[f64], event: &[u32]) -> Result<CensoringModel> {
    if time.is_empty() || time.len() != event.len() {
        return Err(Error::InvalidInput(
            "censoring model needs matching, nonempty time/event vectors".into(),
        ));
    }
    let order = event_order(time, event);
    let n = order.len();
    let mut g = 1.0;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < n {
        let t = time[order[i]];
        let at_risk = n - i;
        let mut censored = 0usize;
        let mut j = i;
        while j < n && time[order[j]] == t {
            censored += usize::from(event[order[j]] == 0);
            j += 1;
        }
        if censored > 0 {
            g *= 1.0 - censored as f64 / at_risk as f64;
            times.push(t);
            values.push(g);
        }
        i = j;
    }
    let degenerate = times.first() == Some(&0.0) && values.first() == Some(&0.0);
    if degenerate {
        log::warn!("censoring survival drops to zero at time 0; IPCW weights are degenerate");
    }
    Ok(CensoringModel {
        times,
        values,
        degenerate,
    })
}

/// IPCW weight of subject `j` in a risk set evaluated at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub value: f64,
    /// The denominator was raised to the floor.
    pub clamped: bool,
}

/// `w_j(t) = I(admissible) · G(t-) / G(min(T_j, t)-)`.
///
/// Subjects with `T_j >= t` get weight 1. Subjects who failed from some
/// cause before `t` get `G(t-)/G(T_j-)`; subjects censored before `t` get 0.
/// Cause membership is the caller's concern (see [`subdist_risk_set`]).
pub fn ipcw_weight(g: &CensoringModel, t_j: f64, e_j: u32, t: f64, g_min: f64) -> Weight {
    if t_j >= t {
        return Weight {
            value: 1.0,
            clamped: false,
        };
    }
    if e_j == 0 {
        return Weight {
            value: 0.0,
            clamped: false,
        };
    }
    let denom = g.left_limit(t_j);
    let clamped = denom < g_min;
    Weight {
        value: g.left_limit(t) / denom.max(g_min),
        clamped,
    }
}

/// Per-cause class-balancing weights `ω_k = n / (K · n_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskWeights(pub Vec<f64>);

impl RiskWeights {
    pub fn uniform(num_risks: usize) -> Self {
        RiskWeights(vec![1.0; num_risks])
    }

    /// Weight of `cause` (1-based).
    pub fn get(&self, cause: u32) -> f64 {
        self.0[cause as usize - 1]
    }
}

pub fn class_weights(event: &[u32], num_risks: usize) -> Result<RiskWeights> {
    let n = event.len();
    let mut counts = vec![0usize; num_risks];
    for &e in event {
        if e as usize > num_risks {
            return Err(Error::InvalidInput(format!(
                "event {e} exceeds num_risks {num_risks}"
            )));
        }
        if e > 0 {
            counts[e as usize - 1] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, &nk)| {
            if nk == 0 {
                Err(Error::InvalidInput(format!(
                    "no events of cause {}; class weight undefined",
                    k + 1
                )))
            } else {
                Ok(n as f64 / (num_risks as f64 * nk as f64))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(RiskWeights)
}

/// Empirical quantiles (linear interpolation between order statistics) of
/// the observed event times of any cause.
pub fn time_quantile_grid(time: &[f64], event: &[u32], quantiles: &[f64]) -> Result<Vec<f64>> {
    if quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidInput("quantiles must lie in (0, 1)".into()));
    }
    if quantiles.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("quantiles must be ascending".into()));
    }
    let mut sorted: Vec<f64> = time
        .iter()
        .zip(event)
        .filter(|(_, &e)| e > 0)
        .map(|(&t, _)| t)
        .collect();
    if sorted.is_empty() {
        return Err(Error::InvalidInput(
            "no observed events; cannot place horizons".into(),
        ));
    }
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    Ok(quantiles
        .iter()
        .map(|&q| {
            let h = q * last as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(last);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}
