//! IPCW-weighted Fine–Gray partial likelihood, its gradient with respect to
//! the risk scores, Breslow baseline estimation and CIF prediction.
//!
//! For cause `k` and a cause-`k` event at time `t`, the weighted risk-set sum
//! is
//!
//! ```text
//! S_k(t) = Σ_{T_j ≥ t} e^{η_jk} + G(t-) Σ_{T_j < t, E_j ∉ {0,k}} e^{η_jk} / G(T_j-)
//! ```
//!
//! Both pieces are prefix/suffix sums over subjects sorted by time, so the
//! loss, gradient and baseline are `O(n log n)` per cause.

use std::io::Write;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::survival::{event_order, CensoringModel, RiskWeights, DEFAULT_G_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgLossConfig {
    /// Coefficient of the `‖Θ‖²` penalty.
    pub l2: f64,
    pub class_weights: bool,
    pub g_min: f64,
}

impl Default for FgLossConfig {
    fn default() -> Self {
        FgLossConfig {
            l2: 0.0,
            class_weights: true,
            g_min: DEFAULT_G_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgLoss {
    /// `Σ_k ω_k L_k + γ‖Θ‖²`.
    pub total: f64,
    /// Unweighted `L_k`.
    pub per_cause: Vec<f64>,
    /// Competing-event denominators raised to the `g_min` floor.
    pub clamped: usize,
}

/// Per-cause risk-set bookkeeping shared by the loss, gradient and baseline.
struct CauseSums {
    /// Max-shift used for `exp`.
    shift: f64,
    /// `exp(η_j - shift)` for each subject.
    scaled: Vec<f64>,
    /// Distinct event times of this cause with counts and scaled `S`.
    event_times: Vec<(f64, usize, f64)>,
    clamped: usize,
}

struct Sorted {
    order: Vec<usize>,
    times: Vec<f64>,
}

impl Sorted {
    fn new(time: &[f64], event: &[u32]) -> Self {
        let order = event_order(time, event);
        let times = order.iter().map(|&i| time[i]).collect();
        Sorted { order, times }
    }

    /// First sorted position with `T >= t`.
    fn first_at_or_after(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }
}

fn check_inputs(eta: &ArrayView2<'_, f64>, time: &[f64], event: &[u32]) -> Result<()> {
    let n = eta.nrows();
    if time.len() != n || event.len() != n {
        return Err(Error::Shape(format!(
            "η has {n} rows but {} times and {} events",
            time.len(),
            event.len()
        )));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("η contains non-finite values".into()));
    }
    let k = eta.ncols();
    if let Some(i) = event.iter().position(|&e| e as usize > k) {
        return Err(Error::InvalidInput(format!(
            "subject {i} has event {} but η has {k} columns",
            event[i]
        )));
    }
    Ok(())
}

fn cause_sums(
    sorted: &Sorted,
    eta: &ArrayView2<'_, f64>,
    time: &[f64],
    event: &[u32],
    g: &CensoringModel,
    cause: u32,
    g_min: f64,
) -> Result<CauseSums> {
    let n = time.len();
    let col = eta.column(cause as usize - 1);
    let shift = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = col.iter().map(|&v| (v - shift).exp()).collect();

    // suffix[pos] = Σ_{q >= pos} scaled[order[q]]
    let mut suffix = vec![0.0; n + 1];
    for pos in (0..n).rev() {
        suffix[pos] = suffix[pos + 1] + scaled[sorted.order[pos]];
    }
    // competing[pos] = Σ_{q < pos, competing} scaled / G(T-)
    let mut competing = vec![0.0; n + 1];
    let mut clamped = 0;
    for pos in 0..n {
        let j = sorted.order[pos];
        let c = if event[j] != 0 && event[j] != cause {
            let den = g.left_limit(time[j]);
            if den < g_min {
                clamped += 1;
            }
            scaled[j] / den.max(g_min)
        } else {
            0.0
        };
        competing[pos + 1] = competing[pos] + c;
    }

    let mut event_times: Vec<(f64, usize, f64)> = Vec::new();
    for &j in &sorted.order {
        if event[j] != cause {
            continue;
        }
        match event_times.last_mut() {
            Some((t, d, _)) if *t == time[j] => *d += 1,
            _ => event_times.push((time[j], 1, 0.0)),
        }
    }
    for (t, _, s) in &mut event_times {
        let pos = sorted.first_at_or_after(*t);
        *s = suffix[pos] + g.left_limit(*t) * competing[pos];
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::EmptyRiskSet { cause, time: *t });
        }
    }
    Ok(CauseSums {
        shift,
        scaled,
        event_times,
        clamped,
    })
}

fn omega(weights: &RiskWeights, cfg: &FgLossConfig, cause: u32) -> f64 {
    if cfg.class_weights {
        weights.get(cause)
    } else {
        1.0
    }
}

/// Negative log partial likelihood. `param_norm_sq` is `‖Θ‖²` as computed
/// by the caller.
pub fn fg_loss(
    eta: ArrayView2<'_, f64>,
    time: &[f64],
    event: &[u32],
    g: &CensoringModel,
    cfg: &FgLossConfig,
    weights: &RiskWeights,
    param_norm_sq: f64,
) -> Result<FgLoss> {
    check_inputs(&eta, time, event)?;
    let sorted = Sorted::new(time, event);
    let k_risks = eta.ncols();
    let per = par::try_map_range(k_risks, |k| {
        let cause = k as u32 + 1;
        let sums = cause_sums(&sorted, &eta, time, event, g, cause, cfg.g_min)?;
        let mut log_s = Vec::with_capacity(sums.event_times.len());
        for &(t, _, s) in &sums.event_times {
            log_s.push((t, s.ln()));
        }
        let mut loss = 0.0;
        for &j in &sorted.order {
            if event[j] != cause {
                continue;
            }
            let r = log_s.partition_point(|&(t, _)| t < time[j]);
            loss -= eta[[j, k]] - sums.shift - log_s[r].1;
        }
        Ok::<_, Error>((loss, sums.clamped))
    })?;
    let per_cause: Vec<f64> = per.iter().map(|p| p.0).collect();
    let total = per_cause
        .iter()
        .enumerate()
        .map(|(k, l)| omega(weights, cfg, k as u32 + 1) * l)
        .sum::<f64>()
        + cfg.l2 * param_norm_sq;
    Ok(FgLoss {
        total,
        per_cause,
        clamped: per.iter().map(|p| p.1).sum(),
    })
}

/// `∂L/∂η`, `n × K`. The `γ‖Θ‖²` term does not depend on η and is left to
/// the caller.
pub fn fg_loss_grad(
    eta: ArrayView2<'_, f64>,
    time: &[f64],
    event: &[u32],
    g: &CensoringModel,
    cfg: &FgLossConfig,
    weights: &RiskWeights,
) -> Result<Array2<f64>> {
    check_inputs(&eta, time, event)?;
    let sorted = Sorted::new(time, event);
    let n = eta.nrows();
    let k_risks = eta.ncols();
    let columns = par::try_map_range(k_risks, |k| {
        let cause = k as u32 + 1;
        let sums = cause_sums(&sorted, &eta, time, event, g, cause, cfg.g_min)?;
        let q = sums.event_times.len();
        // prefix[r] = Σ_{r' < r} d/S ; tail[r] = Σ_{r' >= r} d·G(t-)/S
        let mut prefix = vec![0.0; q + 1];
        for (r, &(_, d, s)) in sums.event_times.iter().enumerate() {
            prefix[r + 1] = prefix[r] + d as f64 / s;
        }
        let mut tail = vec![0.0; q + 1];
        for r in (0..q).rev() {
            let (t, d, s) = sums.event_times[r];
            tail[r] = tail[r + 1] + d as f64 * g.left_limit(t) / s;
        }
        let w = omega(weights, cfg, cause);
        let mut col = vec![0.0; n];
        for m in 0..n {
            // event times <= T_m see subject m with weight 1
            let r = sums.event_times.partition_point(|&(t, _, _)| t <= time[m]);
            let mut acc = prefix[r];
            if event[m] != 0 && event[m] != cause {
                acc += tail[r] / g.left_limit(time[m]).max(cfg.g_min);
            }
            let observed = if event[m] == cause { 1.0 } else { 0.0 };
            col[m] = -w * (observed - sums.scaled[m] * acc);
        }
        Ok::<_, Error>(col)
    })?;
    let mut grad = Array2::zeros((n, k_risks));
    for (k, col) in columns.into_iter().enumerate() {
        for (m, v) in col.into_iter().enumerate() {
            grad[[m, k]] = v;
        }
    }
    Ok(grad)
}

/// Step function of the cumulative baseline subdistribution hazard of one
/// cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseBaseline {
    pub times: Vec<f64>,
    pub cum_hazard: Vec<f64>,
}

impl CauseBaseline {
    /// `Λ_0k(t)`, right-continuous, 0 before the first event.
    pub fn cum_hazard_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.cum_hazard[idx - 1]
        }
    }

    /// `F_0k(t) = 1 - exp(-Λ_0k(t))`.
    pub fn cif_at(&self, t: f64) -> f64 {
        -(-self.cum_hazard_at(t)).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCif {
    pub causes: Vec<CauseBaseline>,
    /// Largest observed time in the fitting data.
    pub max_time: f64,
}

impl BaselineCif {
    pub fn num_risks(&self) -> usize {
        self.causes.len()
    }

    pub fn cause(&self, cause: u32) -> &CauseBaseline {
        &self.causes[cause as usize - 1]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cause", "time", "cum_hazard", "baseline_cif"])?;
        for (k, c) in self.causes.iter().enumerate() {
            for (t, h) in c.times.iter().zip(&c.cum_hazard) {
                w.write_record([
                    (k + 1).to_string(),
                    format!("{t}"),
                    format!("{h}"),
                    format!("{}", -(-h).exp_m1()),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<baseline>", e))?;
        Ok(())
    }
}

/// Breslow estimate `Λ_0k(t) = Σ_{t_r ≤ t} d_r / S_k(t_r)` with the same
/// IPCW-weighted risk sets as the loss.
pub fn fit_baseline(
    eta: ArrayView2<'_, f64>,
    time: &[f64],
    event: &[u32],
    g: &CensoringModel,
    g_min: f64,
) -> Result<BaselineCif> {
    check_inputs(&eta, time, event)?;
    let sorted = Sorted::new(time, event);
    let causes = par::try_map_range(eta.ncols(), |k| {
        let sums = cause_sums(&sorted, &eta, time, event, g, k as u32 + 1, g_min)?;
        let back = (-sums.shift).exp();
        let mut acc = 0.0;
        let mut times = Vec::with_capacity(sums.event_times.len());
        let mut cum_hazard = Vec::with_capacity(sums.event_times.len());
        for (t, d, s) in sums.event_times {
            acc += d as f64 * back / s;
            times.push(t);
            cum_hazard.push(acc);
        }
        Ok::<_, Error>(CauseBaseline { times, cum_hazard })
    })?;
    Ok(BaselineCif {
        causes,
        max_time: time.iter().copied().fold(0.0, f64::max),
    })
}

/// Predicted cumulative incidence, `subjects × causes × times`.
#[derive(Debug, Clone, PartialEq)]
pub struct CifPrediction {
    pub times: Vec<f64>,
    pub values: Array3<f64>,
    /// Time lies beyond the fitting data; the last baseline value was used.
    pub beyond_range: Vec<bool>,
}

impl CifPrediction {
    pub fn n_subjects(&self) -> usize {
        self.values.dim().0
    }

    /// `F_k(times[t] | x_subject)`.
    pub fn get(&self, subject: usize, cause: u32, t: usize) -> f64 {
        self.values[[subject, cause as usize - 1, t]]
    }

    /// Column of cause-`k` incidence at grid index `t` for every subject.
    pub fn at(&self, cause: u32, t: usize) -> Vec<f64> {
        (0..self.n_subjects())
            .map(|s| self.get(s, cause, t))
            .collect()
    }

    /// Number of (subject, time) cells whose incidences sum above 1. Not an
    /// error under the subdistribution model.
    pub fn excess_mass_count(&self) -> usize {
        let (n, k, q) = self.values.dim();
        (0..n)
            .flat_map(|s| (0..q).map(move |t| (s, t)))
            .filter(|&(s, t)| (0..k).map(|c| self.values[[s, c, t]]).sum::<f64>() > 1.0)
            .count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subject_id", "cause", "time", "cif", "beyond_range"])?;
        let (n, k, q) = self.values.dim();
        for s in 0..n {
            for c in 0..k {
                for t in 0..q {
                    w.write_record([
                        s.to_string(),
                        (c + 1).to_string(),
                        format!("{}", self.times[t]),
                        format!("{}", self.values[[s, c, t]]),
                        u8::from(self.beyond_range[t]).to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<cif>", e))?;
        Ok(())
    }
}

/// `F_k(t|x) = 1 - (1 - F_0k(t))^{exp(η_k(x))} = 1 - exp(-Λ_0k(t) e^{η_k})`.
pub fn predict_cif(
    baseline: &BaselineCif,
    eta: ArrayView2<'_, f64>,
    times: &[f64],
) -> Result<CifPrediction> {
    if eta.ncols() != baseline.num_risks() {
        return Err(Error::Shape(format!(
            "η has {} causes, baseline has {}",
            eta.ncols(),
            baseline.num_risks()
        )));
    }
    if times
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt()))
    {
        return Err(Error::InvalidInput(
            "prediction times must be ascending".into(),
        ));
    }
    let (n, k) = eta.dim();
    let q = times.len();
    let hazards: Vec<Vec<f64>> = baseline
        .causes
        .iter()
        .map(|c| times.iter().map(|&t| c.cum_hazard_at(t)).collect())
        .collect();
    let rows = par::map_range(n, |s| {
        let mut row = Vec::with_capacity(k * q);
        for (c, hz) in hazards.iter().enumerate() {
            let scale = eta[[s, c]].exp();
            for &h in hz {
                row.push(-(-h * scale).exp_m1());
            }
        }
        row
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array3::from_shape_vec((n, k, q), flat).expect("sized above");
    Ok(CifPrediction {
        times: times.to_vec(),
        values,
        beyond_range: times.iter().map(|&t| t > baseline.max_time).collect(),
    })
}
