//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Pass a substring to run only matching criteria.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use fgnam::data::kfold_split;
use fgnam::finegray::{
    fg_loss, fg_loss_grad, fit_baseline, predict_cif, BaselineCif, CauseBaseline, CifPrediction,
    FgLossConfig,
};
use fgnam::interpret::{importance, infer_columns, shape_curves};
use fgnam::metrics::{brier, td_auc, td_ci, Metric, DEFAULT_QUANTILES};
use fgnam::nam::{Architecture, Masks, Mode, NamModel};
use fgnam::survival::{
    class_weights, fit_censoring_km, ipcw_weight, subdist_risk_set, CensoringModel, RiskWeights,
    DEFAULT_G_MIN,
};
use fgnam::synth::{generate, SynthSpec};
use fgnam::trainer::{
    cross_validate, train_with_holdout, train_with_validator, StopReason, TrainConfig,
};
use fgnam::SurvivalDataset;
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let models = 120;
    for m in 0..models {
        let p = rng.random_range(1..=4);
        let k = rng.random_range(1..=3usize);
        let n = rng.random_range((k + 2)..=20);
        let depth = rng.random_range(1..=2);
        let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=5)).collect();
        let arch = Architecture {
            dropout: if rng.random_bool(0.5) { 0.3 } else { 0.0 },
            feature_dropout: if rng.random_bool(0.3) { 0.25 } else { 0.0 },
            batch_norm: rng.random_bool(0.3),
            ..Architecture::new(p, k, widths)
        };
        let mut model = NamModel::init(arch.clone(), m).map_err(|e| e.to_string())?;
        let jitter: Vec<f64> = model
            .flat_params()
            .iter()
            .map(|v| v + 0.2 * normal(&mut rng))
            .collect();
        model.set_flat_params(&jitter).map_err(|e| e.to_string())?;

        let x = Array2::from_shape_fn((n, p), |_| normal(&mut rng));
        let time: Vec<f64> = (0..n).map(|_| rng.random_range(1..=6) as f64).collect();
        let event: Vec<u32> = (0..n)
            .map(|i| {
                if i < k {
                    i as u32 + 1
                } else {
                    rng.random_range(0..=k as u32)
                }
            })
            .collect();
        let masks = Masks::sample(&arch, n, &mut rng);
        let g = fit_censoring_km(&time, &event).map_err(|e| e.to_string())?;
        let weights = class_weights(&event, k).map_err(|e| e.to_string())?;
        let cfg = FgLossConfig {
            l2: rng.random_range(0.0..0.05),
            ..FgLossConfig::default()
        };

        let objective = |theta: &[f64]| -> f64 {
            let mut mm = model.clone();
            mm.set_flat_params(theta).unwrap();
            let tr = mm.forward_batch(x.view(), Mode::Train(&masks)).unwrap();
            fg_loss(
                tr.eta.view(),
                &time,
                &event,
                &g,
                &cfg,
                &weights,
                mm.param_norm_sq(),
            )
            .unwrap()
            .total
        };
        let trace = model
            .forward_batch(x.view(), Mode::Train(&masks))
            .map_err(|e| e.to_string())?;
        let d_eta = fg_loss_grad(trace.eta.view(), &time, &event, &g, &cfg, &weights)
            .map_err(|e| e.to_string())?;
        let theta = model.flat_params();
        let analytic: Vec<f64> = model
            .backward(&trace, d_eta.view())
            .map_err(|e| e.to_string())?
            .flatten()
            .iter()
            .zip(&theta)
            .map(|(g, t)| g + 2.0 * cfg.l2 * t)
            .collect();
        let mut probe = theta.clone();
        for idx in 0..theta.len() {
            probe[idx] = theta[idx] + h;
            let up = objective(&probe);
            probe[idx] = theta[idx] - h;
            let down = objective(&probe);
            probe[idx] = theta[idx];
            let fd = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "{models} models, {checked} partials, max rel err {worst:.2e}, {secs:.1} s"
    ))
}

// ---------------------------------------------------------------- 2

fn fixture_d5() -> Outcome {
    let time = [2.0, 3.0, 3.0, 5.0, 7.0];
    let event = [1, 2, 0, 1, 0];
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    ensure!(
        sorted(subdist_risk_set(&time, &event, 1, 5.0)) == vec![1, 3, 4],
        "risk set (k=1, t=5)"
    );
    ensure!(
        sorted(subdist_risk_set(&time, &event, 2, 7.0)) == vec![0, 3, 4],
        "risk set (k=2, t=7)"
    );
    let g = fit_censoring_km(&time, &event).map_err(|e| e.to_string())?;
    for (t, want) in [
        (0.0, 1.0),
        (2.0, 1.0),
        (2.99, 1.0),
        (3.0, 0.75),
        (6.99, 0.75),
        (7.0, 0.0),
        (9.0, 0.0),
    ] {
        ensure!(g.eval(t) == want, "G({t}) = {} != {want}", g.eval(t));
    }
    ensure!(
        g.left_limit(3.0) == 1.0 && g.left_limit(7.0) == 0.75,
        "G left limits"
    );
    let w = ipcw_weight(&g, 3.0, 2, 5.0, DEFAULT_G_MIN);
    ensure!(
        w.value == 0.75,
        "IPCW weight of subject 2 at t=5: {}",
        w.value
    );
    ensure!(
        ipcw_weight(&g, 5.0, 1, 5.0, DEFAULT_G_MIN).value == 1.0,
        "at-risk weight"
    );
    ensure!(
        ipcw_weight(&g, 3.0, 0, 5.0, DEFAULT_G_MIN).value == 0.0,
        "censored weight"
    );
    let cw = class_weights(&event, 2).map_err(|e| e.to_string())?;
    ensure!(cw.0 == vec![1.25, 2.5], "class weights {:?}", cw.0);
    let eta = Array2::zeros((5, 2));
    let base = fit_baseline(
        eta.view(),
        &time,
        &event,
        &CensoringModel::unit(),
        DEFAULT_G_MIN,
    )
    .map_err(|e| e.to_string())?;
    let c1 = base.cause(1);
    ensure!(
        c1.times == vec![2.0, 5.0],
        "cause-1 event times {:?}",
        c1.times
    );
    ensure!(
        c1.cum_hazard == vec![0.2, 0.2 + 1.0 / 3.0],
        "cause-1 baseline {:?}",
        c1.cum_hazard
    );
    Ok("risk sets, G steps 1/0.75/0, weight 0.75, omega (1.25, 2.5), increments (0.2, 1/3)".into())
}

// ---------------------------------------------------------------- 3

fn cox_nll(eta: &[f64], time: &[f64], event: &[u32]) -> f64 {
    let mut nll = 0.0;
    for i in 0..eta.len() {
        if event[i] == 1 {
            let s: f64 = (0..eta.len())
                .filter(|&j| time[j] >= time[i])
                .map(|j| eta[j].exp())
                .sum();
            nll -= eta[i] - s.ln();
        }
    }
    nll
}

fn cox_grad(eta: &[f64], time: &[f64], event: &[u32]) -> Vec<f64> {
    (0..eta.len())
        .map(|m| {
            let mut g = if event[m] == 1 { -1.0 } else { 0.0 };
            for i in 0..eta.len() {
                if event[i] == 1 && time[m] >= time[i] {
                    let s: f64 = (0..eta.len())
                        .filter(|&j| time[j] >= time[i])
                        .map(|j| eta[j].exp())
                        .sum();
                    g += eta[m].exp() / s;
                }
            }
            g
        })
        .collect()
}

fn cox_reduction() -> Outcome {
    let cfg = FgLossConfig {
        class_weights: false,
        ..FgLossConfig::default()
    };
    let unit = RiskWeights::uniform(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_loss: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut cases = 0usize;
    let mut check = |time: &[f64], event: &[u32], eta: &[f64]| -> Result<(), String> {
        let n = time.len();
        let eta2 = Array2::from_shape_vec((n, 1), eta.to_vec()).unwrap();
        let g = fit_censoring_km(time, event).map_err(|e| e.to_string())?;
        let loss = fg_loss(eta2.view(), time, event, &g, &cfg, &unit, 0.0)
            .map_err(|e| e.to_string())?
            .total;
        let grad =
            fg_loss_grad(eta2.view(), time, event, &g, &cfg, &unit).map_err(|e| e.to_string())?;
        worst_loss = worst_loss.max((loss - cox_nll(eta, time, event)).abs());
        for (a, b) in grad.column(0).iter().zip(cox_grad(eta, time, event)) {
            worst_grad = worst_grad.max((a - b).abs());
        }
        cases += 1;
        Ok(())
    };
    // exhaustive: n <= 6, times from {1,2,3}, every censoring pattern
    for n in 1..=6usize {
        let combos = 3usize.pow(n as u32);
        for code in 0..combos {
            let mut c = code;
            let time: Vec<f64> = (0..n)
                .map(|_| {
                    let t = (c % 3) as f64 + 1.0;
                    c /= 3;
                    t
                })
                .collect();
            let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            for mask in 0..(1u32 << n) {
                let event: Vec<u32> = (0..n).map(|i| (mask >> i) & 1).collect();
                check(&time, &event, &eta)?;
            }
        }
    }
    // random, n <= 15
    for _ in 0..2000 {
        let n = rng.random_range(1..=15);
        let time: Vec<f64> = (0..n)
            .map(|_| rng.random_range(1..=8) as f64 * 0.5)
            .collect();
        let eta: Vec<f64> = (0..n).map(|_| 2.0 * normal(&mut rng)).collect();
        let censored = rng.random_bool(0.5);
        let event: Vec<u32> = (0..n)
            .map(|_| u32::from(!censored || rng.random_bool(0.7)))
            .collect();
        check(&time, &event, &eta)?;
    }
    ensure!(worst_loss <= 1e-10, "loss gap {worst_loss:.3e}");
    ensure!(worst_grad <= 1e-10, "gradient gap {worst_grad:.3e}");
    Ok(format!(
        "{cases} cases, max loss gap {worst_loss:.1e}, max gradient gap {worst_grad:.1e}"
    ))
}

// ---------------------------------------------------------------- 4

fn projection_normalization() -> Outcome {
    let data = generate(&SynthSpec {
        n: 400,
        seed: 4,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let ds = &data.dataset;
    let cfg = TrainConfig {
        max_epochs: 15,
        seed: 4,
        ..Default::default()
    };
    let all: Vec<usize> = (0..ds.n()).collect();
    let model = train_with_holdout(ds, &all, &cfg)
        .map_err(|e| e.to_string())?
        .model;
    let mut worst_norm: f64 = 0.0;
    for i in 0..model.num_features() {
        for k in 0..model.num_risks() {
            let raw = model.projection(i, k);
            if raw.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-6 {
                let w = model.normalized_projection(i, k);
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_norm = worst_norm.max((norm - 1.0).abs());
            }
        }
    }
    ensure!(worst_norm < 1e-6, "|‖w̃‖ - 1| = {worst_norm:.3e}");
    let eta = model.eta(ds.x.view()).map_err(|e| e.to_string())?;
    let mut worst_shift: f64 = 0.0;
    for i in 0..model.num_features() {
        for k in 0..model.num_risks() {
            let mut scaled = model.clone();
            scaled
                .projections
                .slice_mut(ndarray::s![i, k, ..])
                .mapv_inplace(|v| v * 10.0);
            let e2 = scaled.eta(ds.x.view()).map_err(|e| e.to_string())?;
            let d = (&e2 - &eta).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            worst_shift = worst_shift.max(d);
        }
    }
    ensure!(worst_shift <= 1e-8, "η moved by {worst_shift:.3e}");
    Ok(format!(
        "max norm deviation {worst_norm:.1e}, max η change under 10x scaling {worst_shift:.1e}"
    ))
}

// ---------------------------------------------------------------- 5

fn random_baseline(rng: &mut ChaCha8Rng, k: usize) -> BaselineCif {
    let causes = (0..k)
        .map(|_| {
            let m = rng.random_range(1..=8);
            let mut t = 0.0;
            let mut h = 0.0;
            let mut times = Vec::new();
            let mut cum = Vec::new();
            for _ in 0..m {
                t += rng.random_range(0.05..1.0);
                h += rng.random_range(0.0..0.6);
                times.push(t);
                cum.push(h);
            }
            CauseBaseline {
                times,
                cum_hazard: cum,
            }
        })
        .collect::<Vec<_>>();
    let max_time = causes
        .iter()
        .map(|c| *c.times.last().unwrap())
        .fold(0.0, f64::max);
    BaselineCif { causes, max_time }
}

fn cif_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 1000;
    let mut checked = 0usize;
    for _ in 0..draws {
        let k = rng.random_range(1..=3);
        let base = random_baseline(&mut rng, k);
        let n = rng.random_range(1..=5);
        let mut eta = Array2::from_shape_fn((n, k), |_| rng.random_range(-6.0..6.0));
        eta.row_mut(0).fill(0.0);
        let mut times: Vec<f64> = (0..rng.random_range(1..=12))
            .map(|_| rng.random_range(0.0..(base.max_time * 1.5)))
            .collect();
        times.sort_by(f64::total_cmp);
        let pred = predict_cif(&base, eta.view(), &times).map_err(|e| e.to_string())?;
        for s in 0..n {
            for c in 1..=k as u32 {
                let mut prev = f64::NEG_INFINITY;
                for (t, &time) in times.iter().enumerate() {
                    let v = pred.get(s, c, t);
                    ensure!((-1e-12..=1.0 + 1e-12).contains(&v), "CIF {v} out of [0,1]");
                    ensure!(v >= prev - 1e-12, "CIF decreases: {prev} -> {v}");
                    prev = v;
                    if s == 0 {
                        let b = base.cause(c).cif_at(time);
                        ensure!(v == b, "η=0 gives {v}, baseline {b}");
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{draws} draws, {checked} CIF values"))
}

// ---------------------------------------------------------------- 6

fn shift_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let trials = 200;
    for _ in 0..trials {
        let n = rng.random_range(6..=40);
        let k = 2;
        let time: Vec<f64> = (0..n)
            .map(|_| rng.random_range(1..=12) as f64 * 0.25)
            .collect();
        let event: Vec<u32> = (0..n)
            .map(|i| {
                if i < k {
                    i as u32 + 1
                } else {
                    rng.random_range(0..=2)
                }
            })
            .collect();
        let eta = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.5..1.5));
        let shift: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut shifted = eta.clone();
        for (c, mut col) in shifted.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v + shift[c]);
        }
        let g = fit_censoring_km(&time, &event).map_err(|e| e.to_string())?;
        let w = class_weights(&event, k).map_err(|e| e.to_string())?;
        let cfg = FgLossConfig::default();
        let a = fg_loss(eta.view(), &time, &event, &g, &cfg, &w, 0.0).map_err(|e| e.to_string())?;
        let b =
            fg_loss(shifted.view(), &time, &event, &g, &cfg, &w, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((a.total - b.total).abs());

        let mut base = random_baseline(&mut rng, k);
        for c in &mut base.causes {
            let top = *c.cum_hazard.last().unwrap();
            c.cum_hazard.iter_mut().for_each(|h| *h /= top.max(1.0));
        }
        let mut grid = time.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let p1 = predict_cif(&base, eta.view(), &grid).map_err(|e| e.to_string())?;
        let p2 = predict_cif(&base, shifted.view(), &grid).map_err(|e| e.to_string())?;
        for cause in 1..=k as u32 {
            for (col, &h) in grid.iter().enumerate() {
                let auc1 = td_auc(
                    &p1.at(cause, col),
                    &time,
                    &event,
                    cause,
                    &g,
                    h,
                    DEFAULT_G_MIN,
                );
                let auc2 = td_auc(
                    &p2.at(cause, col),
                    &time,
                    &event,
                    cause,
                    &g,
                    h,
                    DEFAULT_G_MIN,
                );
                ensure!(
                    auc1.as_ref().ok() == auc2.as_ref().ok(),
                    "td_auc changed at t={h}"
                );
                let ci1 = td_ci(&p1, &time, &event, cause, &g, h, DEFAULT_G_MIN);
                let ci2 = td_ci(&p2, &time, &event, cause, &g, h, DEFAULT_G_MIN);
                ensure!(
                    ci1.as_ref().ok() == ci2.as_ref().ok(),
                    "td_ci changed at t={h}"
                );
            }
        }
    }
    ensure!(worst < 1e-10, "loss changed by {worst:.3e}");
    Ok(format!(
        "{trials} datasets, max loss change {worst:.1e}, metrics identical"
    ))
}

// ---------------------------------------------------------------- 7

fn inv(g: f64) -> f64 {
    1.0 / g.max(DEFAULT_G_MIN)
}

fn auc_oracle(
    s: &[f64],
    time: &[f64],
    event: &[u32],
    k: u32,
    g: &CensoringModel,
    t: f64,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        if !(event[i] == k && time[i] <= t) {
            continue;
        }
        for j in 0..s.len() {
            let wj = if time[j] > t {
                inv(g.eval(t))
            } else if event[j] != 0 && event[j] != k {
                inv(g.left_limit(time[j]))
            } else {
                continue;
            };
            let w = inv(g.left_limit(time[i])) * wj;
            den += w;
            num += w * if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    (den > 0.0).then(|| num / den)
}

fn ci_oracle(
    pred: &CifPrediction,
    time: &[f64],
    event: &[u32],
    k: u32,
    g: &CensoringModel,
    t: f64,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    let n = time.len();
    for i in 0..n {
        if !(event[i] == k && time[i] <= t) {
            continue;
        }
        let col = pred.times.iter().position(|&s| s == time[i]).unwrap();
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = if time[i] < time[j] {
                inv(g.left_limit(time[i])) * inv(g.eval(time[i]))
            } else if event[j] != 0 && event[j] != k && time[j] <= time[i] {
                inv(g.left_limit(time[i])) * inv(g.left_limit(time[j]))
            } else {
                continue;
            };
            let (fi, fj) = (pred.get(i, k, col), pred.get(j, k, col));
            den += w;
            num += w * if fi > fj {
                1.0
            } else if fi == fj {
                0.5
            } else {
                0.0
            };
        }
    }
    (den > 0.0).then(|| num / den)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        _ => false,
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut datasets = 0usize;
    let mut defined = 0usize;
    for n in 1..=8usize {
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let event: Vec<u32> = (0..n)
                .map(|_| {
                    let e = (c % 3) as u32;
                    c /= 3;
                    e
                })
                .collect();
            let time: Vec<f64> = (0..n).map(|_| rng.random_range(1..=5) as f64).collect();
            let horizon =
                rng.random_range(1..=5) as f64 - if rng.random_bool(0.3) { 0.5 } else { 0.0 };
            let mut grid = time.clone();
            grid.push(horizon);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let levels = [0.1, 0.2, 0.3, 0.4, 0.5];
            let values =
                Array3::from_shape_fn((n, 2, grid.len()), |_| levels[rng.random_range(0..5)]);
            let pred = CifPrediction {
                beyond_range: vec![false; grid.len()],
                times: grid.clone(),
                values,
            };
            let g = fit_censoring_km(&time, &event).map_err(|e| e.to_string())?;
            let col = grid.iter().position(|&s| s == horizon).unwrap();
            for k in 1..=2u32 {
                let scores = pred.at(k, col);
                let a = td_auc(&scores, &time, &event, k, &g, horizon, DEFAULT_G_MIN)
                    .map_err(|e| e.to_string())?;
                let ao = auc_oracle(&scores, &time, &event, k, &g, horizon);
                ensure!(
                    close(a, ao),
                    "td_auc {a:?} vs oracle {ao:?} (T={time:?}, E={event:?})"
                );
                let ci = td_ci(&pred, &time, &event, k, &g, horizon, DEFAULT_G_MIN)
                    .map_err(|e| e.to_string())?;
                let co = ci_oracle(&pred, &time, &event, k, &g, horizon);
                ensure!(
                    close(ci, co),
                    "td_ci {ci:?} vs oracle {co:?} (T={time:?}, E={event:?})"
                );
                defined += usize::from(a.is_some()) + usize::from(ci.is_some());
            }
            datasets += 1;
        }
    }

    let unit = CensoringModel::unit();
    let b = brier(
        &[0.8, 0.6, 0.4, 0.2],
        &[1.0, 2.0, 3.0, 4.0],
        &[1, 1, 2, 2],
        1,
        &unit,
        5.0,
        DEFAULT_G_MIN,
    )
    .map_err(|e| e.to_string())?
    .unwrap();
    ensure!((b - 0.10).abs() < 1e-12, "brier hand case {b}");
    // D5 at t=4, cause 1: weights 1, 1, 0, 1/0.75, 1/0.75
    let time = [2.0, 3.0, 3.0, 5.0, 7.0];
    let event = [1, 2, 0, 1, 0];
    let g = fit_censoring_km(&time, &event).map_err(|e| e.to_string())?;
    let pred = [0.6, 0.2, 0.5, 0.3, 0.1];
    let direct = (0.4f64.powi(2) + 0.2f64.powi(2) + (0.3f64.powi(2) + 0.1f64.powi(2)) / 0.75) / 5.0;
    let b = brier(&pred, &time, &event, 1, &g, 4.0, DEFAULT_G_MIN)
        .map_err(|e| e.to_string())?
        .unwrap();
    ensure!(
        (b - direct).abs() < 1e-12,
        "brier censored case {b} vs {direct}"
    );
    Ok(format!(
        "{datasets} exhaustive datasets (n <= 8), {defined} defined values match; brier hand cases exact"
    ))
}

// ---------------------------------------------------------------- 8

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn permuted(ds: &SurvivalDataset, seed: u64) -> SurvivalDataset {
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = ds.clone();
    out.x = ds.x.select(Axis(0), &order);
    out
}

fn cv_ci(ds: &SurvivalDataset, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        seed,
        ..Default::default()
    };
    let folds = kfold_split(&ds.event, 5, seed, true).map_err(|e| e.to_string())?;
    let cv = cross_validate(ds, &folds, &cfg, &DEFAULT_QUANTILES).map_err(|e| e.to_string())?;
    DEFAULT_QUANTILES
        .iter()
        .map(|&q| {
            cv.mean(1, q, Metric::TdCi)
                .ok_or_else(|| "TD-CI undefined".to_string())
        })
        .collect()
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let seeds = 5u64;
    let mut min_r: f64 = 1.0;
    let mut last_count = 0;
    let mut ci = vec![0.0; DEFAULT_QUANTILES.len()];
    let mut ci_perm = vec![0.0; DEFAULT_QUANTILES.len()];
    for seed in 0..seeds {
        let spec = SynthSpec {
            n: 4000,
            seed,
            ..Default::default()
        };
        let data = generate(&spec).map_err(|e| e.to_string())?;
        let ds = &data.dataset;
        let cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        let all: Vec<usize> = (0..ds.n()).collect();
        let model = train_with_holdout(ds, &all, &cfg)
            .map_err(|e| e.to_string())?
            .model;
        let cols = infer_columns(&ds.feature_names, ds.x.view());
        let curves = shape_curves(&model, &cols, ds.x.view(), 100).map_err(|e| e.to_string())?;
        for c in curves.iter().filter(|c| c.risk == 1 && c.feature < 2) {
            let truth: Vec<f64> = c
                .x_scaled
                .iter()
                .map(|&x| spec.contribution(c.feature, 1, x))
                .collect();
            min_r = min_r.min(pearson(&c.values, &truth));
        }
        let imp = importance(&model, &ds.feature_names, ds.x.view()).map_err(|e| e.to_string())?;
        if imp.rank(2, 1) == 3 {
            last_count += 1;
        }
        for (acc, v) in ci.iter_mut().zip(cv_ci(ds, seed)?) {
            *acc += v / seeds as f64;
        }
        for (acc, v) in ci_perm
            .iter_mut()
            .zip(cv_ci(&permuted(ds, seed + 100), seed)?)
        {
            *acc += v / seeds as f64;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "min r {min_r:.3}; I_3,1 last in {last_count}/5; TD-CI {ci:.3?}; permuted {ci_perm:.3?}; {secs:.0} s"
    );
    ensure!(min_r >= 0.9, "(a) shape correlation below 0.9: {detail}");
    ensure!(last_count >= 4, "(b) importance rank: {detail}");
    ensure!(ci.iter().all(|&v| v >= 0.65), "(c) TD-CI: {detail}");
    ensure!(
        ci_perm.iter().all(|&v| (v - 0.5).abs() <= 0.05),
        "(c) permuted TD-CI: {detail}"
    );
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn run_cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fgnam"))
        .current_dir(cwd)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`fgnam {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = root.path();
    fs::write(
        r.join("schema.toml"),
        "time_col = \"time\"\nevent_col = \"event\"\nnum_risks = 2\n",
    )
    .map_err(|e| e.to_string())?;
    fs::write(
        r.join("run.toml"),
        "[train]\nmax_epochs = 25\nbatch_size = 64\n\n[simulate]\nn = 300\n\n[explain]\ngrid_size = 25\nplot_features = 2\n",
    )
    .map_err(|e| e.to_string())?;
    // Identical command lines, each run in its own directory.
    let steps: [&[&str]; 6] = [
        &["simulate", "--out", "sim"],
        &["train", "--data", "sim/dataset.csv", "--out", "model"],
        &[
            "predict",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--times",
            "0.5,1,2",
            "--out",
            "pred",
        ],
        &[
            "evaluate",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--out",
            "eval",
        ],
        &[
            "explain",
            "--checkpoint",
            "model/checkpoint.json",
            "--data",
            "sim/dataset.csv",
            "--out",
            "explain",
        ],
        &[
            "cv",
            "--data",
            "sim/dataset.csv",
            "--folds",
            "3",
            "--out",
            "cv",
        ],
    ];
    for run in ["a", "b"] {
        let dir = r.join(run);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for step in steps {
            let mut args = vec![
                "--config",
                "../run.toml",
                "--schema",
                "../schema.toml",
                "--seed",
                "9",
                "--jobs",
                "1",
            ];
            args.extend_from_slice(step);
            run_cli(&dir, &args)?;
        }
    }
    // train_report.json records wall-clock time; everything else must match.
    let a = artifacts(&r.join("a"));
    let b = artifacts(&r.join("b"));
    ensure!(
        a.iter().map(|f| &f.0).eq(b.iter().map(|f| &f.0)),
        "artifact sets differ"
    );
    let mut compared = 0;
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if name.ends_with("train_report.json") {
            continue;
        }
        ensure!(x == y, "{name} differs between runs");
        compared += 1;
    }
    let kinds = |ext: &str| a.iter().filter(|f| f.0.ends_with(ext)).count();
    ensure!(
        kinds(".svg") >= 4 && kinds(".csv") >= 8,
        "missing artifacts"
    );
    Ok(format!(
        "{compared} artifacts byte-identical ({} svg, {} csv, checkpoint)",
        kinds(".svg"),
        kinds(".csv")
    ))
}

// ---------------------------------------------------------------- 10

fn early_stopping() -> Outcome {
    let data = generate(&SynthSpec {
        n: 300,
        seed: 10,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let ds = &data.dataset;
    let cfg = TrainConfig {
        patience: 10,
        max_epochs: 100,
        seed: 10,
        ..Default::default()
    };
    let all: Vec<usize> = (0..ds.n()).collect();
    let mut first: Option<Vec<f64>> = None;
    let mut validator = |model: &NamModel, epoch: usize| -> fgnam::Result<(f64, usize)> {
        if epoch == 1 {
            first = Some(model.flat_params());
        }
        Ok((epoch as f64, 0))
    };
    let out = train_with_validator(ds, &all, &cfg, &mut validator).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure!(r.epochs.len() == 11, "ran {} epochs", r.epochs.len());
    ensure!(
        r.stop_reason == StopReason::Patience,
        "stop reason {:?}",
        r.stop_reason
    );
    ensure!(
        r.best_epoch == 1 && r.best_val_loss == 1.0,
        "best epoch {}",
        r.best_epoch
    );
    ensure!(
        first.as_deref() == Some(out.model.flat_params().as_slice()),
        "returned parameters are not the epoch-1 parameters"
    );
    Ok("stopped after 11 epochs with epoch-1 parameters restored".into())
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 10] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 fixture D5", fixture_d5),
        ("3 Cox reduction", cox_reduction),
        ("4 projection normalization", projection_normalization),
        ("5 CIF validity", cif_validity),
        ("6 shift invariance", shift_invariance),
        ("7 metric oracles", metric_oracles),
        ("8 recovery on synthetic data", recovery),
        ("9 CLI determinism", determinism),
        ("10 early-stopping contract", early_stopping),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
