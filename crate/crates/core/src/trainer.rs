//! Mini-batch training with early stopping, and the cross-validation driver.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_preprocess, fit_preprocess, stratified_holdout, Fold, PreprocessPlan, RawTable, Schema,
    SurvivalDataset,
};
use crate::error::{Error, Result};
use crate::finegray::{
    fg_loss, fg_loss_grad, fit_baseline, predict_cif, BaselineCif, FgLossConfig,
};
use crate::metrics::{self, evaluation_grid, Metric, MetricsReport};
use crate::nam::{Architecture, Masks, Mode, NamModel};
use crate::optim::AdamW;
use crate::par;
use crate::survival::{
    class_weights, fit_censoring_km, time_quantile_grid, CensoringModel, RiskWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay; also the `γ` of the reported `γ‖Θ‖²` term.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub feature_dropout: f64,
    pub batch_norm: bool,
    pub widths: Vec<usize>,
    pub class_weights: bool,
    pub g_min: f64,
    /// Fraction of the training rows held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            dropout: 0.0,
            feature_dropout: 0.0,
            batch_norm: false,
            widths: vec![32, 32],
            class_weights: true,
            g_min: crate::survival::DEFAULT_G_MIN,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.patience < 1 {
            return bad("patience must be >= 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }

    pub fn architecture(&self, num_features: usize, num_risks: usize) -> Architecture {
        Architecture {
            num_features,
            num_risks,
            widths: self.widths.clone(),
            dropout: self.dropout,
            feature_dropout: self.feature_dropout,
            batch_norm: self.batch_norm,
        }
    }

    fn loss_config(&self, l2: f64) -> FgLossConfig {
        FgLossConfig {
            l2,
            class_weights: self.class_weights,
            g_min: self.g_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub skipped_batches: usize,
    /// Competing-event IPCW denominators raised to the floor, summed over
    /// every loss evaluation.
    pub clamped_weights: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// The report with timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NamModel,
    pub baseline: BaselineCif,
    pub censoring: CensoringModel,
    pub report: TrainReport,
}

/// Tracks the best validation loss; ties keep the earliest epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `true` when it is the new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Trains on `train_idx` and early-stops on the full-sample loss over
/// `val_idx`.
pub fn train(
    dataset: &SurvivalDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if val_idx.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let mut in_train = vec![false; dataset.n()];
    for &i in train_idx {
        in_train[i] = true;
    }
    if val_idx.iter().any(|&i| in_train[i]) {
        return Err(Error::InvalidInput(
            "validation split overlaps the training split".into(),
        ));
    }
    let train_set = dataset.subset(train_idx);
    let val_set = dataset.subset(val_idx);
    let g = fit_censoring_km(&train_set.time, &train_set.event)?;
    let weights = class_weights(&train_set.event, dataset.num_risks)?;
    let cfg = config.loss_config(config.weight_decay);
    let mut validator = |model: &NamModel, _epoch: usize| -> Result<(f64, usize)> {
        full_loss(model, &val_set, &g, &cfg, &weights)
    };
    train_with_validator(dataset, train_idx, config, &mut validator)
}

/// Splits `train_idx` into a stratified inner training part and a
/// `val_fraction` validation part, then trains.
pub fn train_with_holdout(
    dataset: &SurvivalDataset,
    train_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let (inner, val) = stratified_holdout(
        train_idx,
        &dataset.event,
        config.val_fraction,
        config.seed ^ 0x7a11_da7e,
    );
    train(dataset, &inner, &val, config)
}

/// `Σ_k ω_k L_k + γ‖Θ‖²` on a whole split in eval mode.
pub fn full_loss(
    model: &NamModel,
    set: &SurvivalDataset,
    g: &CensoringModel,
    cfg: &FgLossConfig,
    weights: &RiskWeights,
) -> Result<(f64, usize)> {
    let eta = model.eta(set.x.view())?;
    let loss = fg_loss(
        eta.view(),
        &set.time,
        &set.event,
        g,
        cfg,
        weights,
        model.param_norm_sq(),
    )?;
    Ok((loss.total, loss.clamped))
}

/// Training loop with a caller-supplied validation loss. The validator sees
/// the model after each epoch and returns `(loss, clamp count)`.
pub fn train_with_validator<V>(
    dataset: &SurvivalDataset,
    train_idx: &[usize],
    config: &TrainConfig,
    validator: &mut V,
) -> Result<TrainOutcome>
where
    V: FnMut(&NamModel, usize) -> Result<(f64, usize)>,
{
    config.validate()?;
    let started = Instant::now();
    let train_set = dataset.subset(train_idx);
    train_set.require_all_causes()?;
    let g = fit_censoring_km(&train_set.time, &train_set.event)?;
    let weights = class_weights(&train_set.event, dataset.num_risks)?;
    let batch_cfg = config.loss_config(0.0);
    let report_cfg = config.loss_config(config.weight_decay);

    let arch = config.architecture(dataset.p(), dataset.num_risks);
    let mut model = NamModel::init(arch.clone(), config.seed)?;
    let mut opt = AdamW::new(
        model.num_params(),
        config.learning_rate,
        config.weight_decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_model = model.clone();
    let mut epochs = Vec::new();
    let mut skipped = 0usize;
    let mut clamped = 0usize;
    let mut positions: Vec<usize> = (0..train_set.n()).collect();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        positions.shuffle(&mut rng);
        for (b, batch) in batches(&positions, config.batch_size)
            .into_iter()
            .enumerate()
        {
            let time: Vec<f64> = batch.iter().map(|&i| train_set.time[i]).collect();
            let event: Vec<u32> = batch.iter().map(|&i| train_set.event[i]).collect();
            if event.iter().all(|&e| e == 0) {
                skipped += 1;
                continue;
            }
            let x = train_set.x.select(Axis(0), batch);
            let masks = Masks::sample(&arch, batch.len(), &mut rng);
            let trace = model.forward_batch(x.view(), Mode::Train(&masks))?;
            let loss = fg_loss(
                trace.eta.view(),
                &time,
                &event,
                &g,
                &batch_cfg,
                &weights,
                0.0,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            clamped += loss.clamped;
            let d_eta = fg_loss_grad(trace.eta.view(), &time, &event, &g, &batch_cfg, &weights)?;
            let grad = model.backward(&trace, d_eta.view())?.flatten();
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            model.update_batch_norm(&trace);
            let mut flat = model.flat_params();
            opt.step(&mut flat, &grad);
            model.set_flat_params(&flat)?;
        }

        let (train_loss, c1) = full_loss(&model, &train_set, &g, &report_cfg, &weights)?;
        let (val_loss, c2) = validator(&model, epoch)?;
        clamped += c1 + c2;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if stopper.observe(epoch, val_loss) {
            best_model = model.clone();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let (best_epoch, best_val_loss) = stopper.best();
    let model = best_model;
    let eta = model.eta(train_set.x.view())?;
    let baseline = fit_baseline(
        eta.view(),
        &train_set.time,
        &train_set.event,
        &g,
        config.g_min,
    )?;
    Ok(TrainOutcome {
        model,
        baseline,
        censoring: g,
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_loss,
            stop_reason,
            skipped_batches: skipped,
            clamped_weights: clamped,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Consecutive chunks of `batch_size`; a trailing singleton joins the
/// previous batch so no batch has fewer than two subjects.
fn batches(positions: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = positions.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("len > 1") = &positions[start..];
    }
    out
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: MetricsReport,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cause: u32,
    pub quantile: f64,
    pub horizon: f64,
    pub metric: Metric,
    pub mean: Option<f64>,
    /// Sample standard deviation across folds (0 with a single fold).
    pub std: Option<f64>,
    pub n_folds: usize,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub skipped_folds: Vec<usize>,
    pub aggregate: Vec<AggregateRow>,
}

impl CvResult {
    pub fn mean(&self, cause: u32, quantile: f64, metric: Metric) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|r| r.cause == cause && r.quantile == quantile && r.metric == metric)
            .and_then(|r| r.mean)
    }

    pub fn write_fold_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "fold", "cause", "quantile", "horizon", "metric", "value", "n",
        ])?;
        for f in &self.folds {
            for e in &f.metrics.entries {
                w.write_record([
                    f.fold.to_string(),
                    e.cause.to_string(),
                    format!("{}", e.quantile),
                    format!("{}", e.horizon),
                    e.metric.name().to_string(),
                    e.value.map_or_else(|| "NA".into(), |v| format!("{v}")),
                    f.metrics.n.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<cv>", e))?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "cause", "quantile", "horizon", "metric", "mean", "std", "n_folds",
        ])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        for r in &self.aggregate {
            w.write_record([
                r.cause.to_string(),
                format!("{}", r.quantile),
                format!("{}", r.horizon),
                r.metric.name().to_string(),
                fmt(r.mean),
                fmt(r.std),
                r.n_folds.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<cv>", e))?;
        Ok(())
    }
}

/// Mean and sample standard deviation over per-fold values.
pub fn aggregate(reports: &[&MetricsReport]) -> Vec<AggregateRow> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .entries
        .iter()
        .map(|e| {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| {
                    r.entries
                        .iter()
                        .find(|o| {
                            o.cause == e.cause && o.quantile == e.quantile && o.metric == e.metric
                        })
                        .and_then(|o| o.value)
                })
                .collect();
            let n = values.len();
            let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
            let std = mean.map(|m| {
                if n < 2 {
                    0.0
                } else {
                    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            });
            AggregateRow {
                cause: e.cause,
                quantile: e.quantile,
                horizon: e.horizon,
                metric: e.metric,
                mean,
                std,
                n_folds: n,
            }
        })
        .collect()
}

/// Cross-validation where `prepare` builds the (train, test) datasets for a
/// fold, e.g. refitting preprocessing on the fold's training rows.
/// Horizons come from event-time quantiles of the full data so that every
/// fold is scored at the same times.
pub fn cross_validate_with<P>(
    time: &[f64],
    event: &[u32],
    folds: &[Fold],
    config: &TrainConfig,
    quantiles: &[f64],
    prepare: P,
) -> Result<CvResult>
where
    P: Fn(&Fold) -> Result<(SurvivalDataset, SurvivalDataset)> + Sync + Send,
{
    let horizons = time_quantile_grid(time, event, quantiles)?;
    let results = par::try_map_range(folds.len(), |f| -> Result<Option<FoldResult>> {
        let (train_set, test_set) = prepare(&folds[f])?;
        if let Err(err) = train_set.require_all_causes() {
            log::warn!("fold {f} skipped: {err}");
            return Ok(None);
        }
        let fold_cfg = TrainConfig {
            seed: config.seed.wrapping_add(1_000_003 * f as u64),
            ..config.clone()
        };
        let all: Vec<usize> = (0..train_set.n()).collect();
        let outcome = train_with_holdout(&train_set, &all, &fold_cfg)?;
        let metrics = score(&outcome, &test_set, quantiles, &horizons, config.g_min)?;
        Ok(Some(FoldResult {
            fold: f,
            metrics,
            train_report: outcome.report,
        }))
    })?;
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (f, r) in results.into_iter().enumerate() {
        match r {
            Some(r) => done.push(r),
            None => skipped.push(f),
        }
    }
    let refs: Vec<&MetricsReport> = done.iter().map(|r| &r.metrics).collect();
    let aggregate = aggregate(&refs);
    Ok(CvResult {
        folds: done,
        skipped_folds: skipped,
        aggregate,
    })
}

/// Cross-validation on an already preprocessed dataset.
pub fn cross_validate(
    dataset: &SurvivalDataset,
    folds: &[Fold],
    config: &TrainConfig,
    quantiles: &[f64],
) -> Result<CvResult> {
    cross_validate_with(
        &dataset.time,
        &dataset.event,
        folds,
        config,
        quantiles,
        |fold| Ok((dataset.subset(&fold.train), dataset.subset(&fold.test))),
    )
}

fn outcomes(table: &RawTable) -> Result<(&[f64], &[u32])> {
    match (&table.time, &table.event) {
        (Some(t), Some(e)) => Ok((t, e)),
        _ => Err(Error::Schema(format!(
            "`{}` has no `{}`/`{}` outcome columns",
            table.source, table.time_col, table.event_col
        ))),
    }
}

/// Cross-validation on raw rows; preprocessing is refit on every fold's
/// training part so no test-fold statistics leak into the plan.
pub fn cross_validate_table(
    table: &RawTable,
    schema: &Schema,
    folds: &[Fold],
    config: &TrainConfig,
    quantiles: &[f64],
) -> Result<CvResult> {
    let (time, event) = outcomes(table)?;
    cross_validate_with(time, event, folds, config, quantiles, |fold| {
        let train = table.select_rows(&fold.train, "train");
        let test = table.select_rows(&fold.test, "test");
        let plan = fit_preprocess(&train, schema)?;
        Ok((
            apply_preprocess(&plan, &train)?,
            apply_preprocess(&plan, &test)?,
        ))
    })
}

/// Fits preprocessing on the whole table and trains with an internal
/// validation holdout.
pub fn train_table(
    table: &RawTable,
    schema: &Schema,
    config: &TrainConfig,
) -> Result<(PreprocessPlan, SurvivalDataset, TrainOutcome)> {
    outcomes(table)?;
    let plan = fit_preprocess(table, schema)?;
    let dataset = apply_preprocess(&plan, table)?;
    let all: Vec<usize> = (0..dataset.n()).collect();
    let outcome = train_with_holdout(&dataset, &all, config)?;
    Ok((plan, dataset, outcome))
}

/// Metrics of a trained model on held-out data. The censoring curve for the
/// IPCW adjustment is estimated on the held-out data itself.
pub fn score(
    outcome: &TrainOutcome,
    test_set: &SurvivalDataset,
    quantiles: &[f64],
    horizons: &[f64],
    g_min: f64,
) -> Result<MetricsReport> {
    let eta: Array2<f64> = outcome.model.eta(test_set.x.view())?;
    let grid = evaluation_grid(test_set, horizons);
    let pred = predict_cif(&outcome.baseline, eta.view(), &grid)?;
    let g_test = fit_censoring_km(&test_set.time, &test_set.event)?;
    metrics::evaluate(&pred, test_set, &g_test, quantiles, horizons, g_min)
}
