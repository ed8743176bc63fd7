use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fgnam::data::{apply_preprocess, kfold_split, load_csv, load_csv_with, Outcomes, RawTable};
use fgnam::finegray::predict_cif;
use fgnam::interpret::{self, ShapeCurve};
use fgnam::metrics::{evaluate as evaluate_metrics, evaluation_grid};
use fgnam::survival::{fit_censoring_km, time_quantile_grid};
use fgnam::synth;
use fgnam::trainer::{cross_validate_table, train_table};
use fgnam::{Checkpoint, Schema, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{CliError, Common};

type CmdResult = Result<(), CliError>;

/// Config file values with command-line overrides applied.
pub struct RunContext {
    pub cfg: RunConfig,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
}

impl RunContext {
    pub fn new(flags: &Common) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let seed = flags.seed.or(cfg.seed).unwrap_or(cfg.train.seed);
        cfg.train.seed = seed;
        if flags.seed.is_some() || cfg.seed.is_some() {
            cfg.simulate.seed = seed;
        }
        if let Some(folds) = flags.folds {
            cfg.cv.folds = folds;
        }
        if let Some(times) = &flags.times {
            cfg.predict.times = Some(times.clone());
        }
        if let Some(g) = flags.grid_size {
            cfg.explain.grid_size = g;
        }
        cfg.train.validate()?;
        if cfg.explain.grid_size < 2 {
            return Err(CliError::usage("grid size must be at least 2"));
        }
        let checkpoint = flags
            .checkpoint
            .clone()
            .or_else(|| cfg.predict.checkpoint.clone())
            .or_else(|| cfg.explain.checkpoint.clone());
        Ok(RunContext {
            data: flags.data.clone().or_else(|| cfg.data.clone()),
            schema: flags.schema.clone().or_else(|| cfg.schema.clone()),
            out: flags.out.clone().or_else(|| cfg.out.clone()),
            jobs: flags.jobs.or(cfg.jobs).unwrap_or(0),
            checkpoint,
            seed,
            cfg,
        })
    }

    fn data(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::usage("missing --data"))
    }

    fn schema(&self) -> Result<Schema, CliError> {
        let path = self
            .schema
            .as_deref()
            .ok_or_else(|| CliError::usage("missing --schema"))?;
        Ok(Schema::from_file(path)?)
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .ok_or_else(|| CliError::usage("missing --out"))?;
        fs::create_dir_all(&dir).map_err(|e| {
            CliError::usage(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(dir)
    }

    fn checkpoint(&self) -> Result<Checkpoint, CliError> {
        let path = self
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::usage("missing --checkpoint"))?;
        Ok(Checkpoint::load(path)?)
    }

    /// Schema for reading data against a checkpoint: `--schema` wins,
    /// otherwise the one stored at training time.
    fn schema_for(&self, ck: &Checkpoint) -> Result<Schema, CliError> {
        if self.schema.is_some() {
            return self.schema();
        }
        ck.schema
            .clone()
            .ok_or_else(|| CliError::usage("checkpoint carries no schema; pass --schema"))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| fgnam::Error::io(path, e).into())
}

fn plan_of(ck: &Checkpoint) -> Result<&fgnam::PreprocessPlan, CliError> {
    ck.plan
        .as_ref()
        .ok_or_else(|| CliError::usage("checkpoint has no preprocessing plan"))
}

pub fn train(ctx: &RunContext) -> CmdResult {
    let schema = ctx.schema()?;
    let table = load_csv(ctx.data()?, &schema)?;
    let out = ctx.out_dir()?;
    let config = &ctx.cfg.train;
    let (plan, dataset, outcome) = train_table(&table, &schema, config)?;
    log::info!(
        "trained {} epochs, best epoch {} (validation loss {:.6})",
        outcome.report.epochs.len(),
        outcome.report.best_epoch,
        outcome.report.best_val_loss
    );
    let ck = Checkpoint::new(
        dataset.feature_names.clone(),
        Some(schema),
        Some(plan),
        outcome.model,
        outcome.baseline.clone(),
        outcome.censoring,
        config.clone(),
    );
    ck.save(&out.join("checkpoint.json"))?;
    outcome
        .baseline
        .write_csv(create(&out.join("baseline.csv"))?)?;
    let report = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| CliError::from(fgnam::Error::from(e)))?;
    let path = out.join("train_report.json");
    fs::write(&path, report + "\n").map_err(|e| fgnam::Error::io(&path, e))?;
    Ok(())
}

fn folds_for(ctx: &RunContext, table: &RawTable) -> Result<Vec<fgnam::data::Fold>, CliError> {
    let event = table
        .event
        .as_ref()
        .ok_or_else(|| CliError::usage("data has no event column"))?;
    Ok(kfold_split(
        event,
        ctx.cfg.cv.folds,
        ctx.seed,
        ctx.cfg.cv.stratified,
    )?)
}

pub fn cv(ctx: &RunContext) -> CmdResult {
    let schema = ctx.schema()?;
    let table = load_csv(ctx.data()?, &schema)?;
    let out = ctx.out_dir()?;
    let folds = folds_for(ctx, &table)?;
    let result = cross_validate_table(
        &table,
        &schema,
        &folds,
        &ctx.cfg.train,
        &ctx.cfg.cv.quantiles,
    )?;
    if !result.skipped_folds.is_empty() {
        log::warn!("skipped folds: {:?}", result.skipped_folds);
    }
    result.write_fold_csv(create(&out.join("cv_folds.csv"))?)?;
    result.write_aggregate_csv(create(&out.join("cv_aggregate.csv"))?)?;
    Ok(())
}

pub fn predict(ctx: &RunContext) -> CmdResult {
    let ck = ctx.checkpoint()?;
    let schema = ctx.schema_for(&ck)?;
    let times = ctx
        .cfg
        .predict
        .times
        .clone()
        .ok_or_else(|| CliError::usage("missing --times"))?;
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(CliError::usage("times must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CliError::usage("times must be ascending"));
    }
    let table = load_csv_with(ctx.data()?, &schema, Outcomes::Optional)?;
    let out = ctx.out_dir()?;
    let x = plan_of(&ck)?.transform(&table)?.x;
    let eta = ck.model.eta(x.view())?;
    let pred = predict_cif(&ck.baseline, eta.view(), &times)?;
    let excess = pred.excess_mass_count();
    if excess > 0 {
        log::warn!("{excess} (subject, time) cells have incidences summing above 1");
    }
    pred.write_csv(create(&out.join("cif.csv"))?)?;
    Ok(())
}

pub fn evaluate(ctx: &RunContext) -> CmdResult {
    let ck = ctx.checkpoint()?;
    let schema = ctx.schema_for(&ck)?;
    let table = load_csv(ctx.data()?, &schema)?;
    let out = ctx.out_dir()?;
    let ds = apply_preprocess(plan_of(&ck)?, &table)?;
    let quantiles = &ctx.cfg.cv.quantiles;
    let horizons = time_quantile_grid(&ds.time, &ds.event, quantiles)?;
    let eta = ck.model.eta(ds.x.view())?;
    let pred = predict_cif(&ck.baseline, eta.view(), &evaluation_grid(&ds, &horizons))?;
    let g = fit_censoring_km(&ds.time, &ds.event)?;
    let report = evaluate_metrics(&pred, &ds, &g, quantiles, &horizons, ck.config.g_min)?;
    report.write_csv(create(&out.join("metrics.csv"))?)?;
    Ok(())
}

pub fn explain(ctx: &RunContext) -> CmdResult {
    let ck = ctx.checkpoint()?;
    let schema = ctx.schema_for(&ck)?;
    let table = load_csv_with(ctx.data()?, &schema, Outcomes::Optional)?;
    let out = ctx.out_dir()?;
    let plan = plan_of(&ck)?;
    let x = plan.transform(&table)?.x;
    let columns = plan.output_columns();
    let ex = &ctx.cfg.explain;
    let curves = interpret::shape_curves(&ck.model, &columns, x.view(), ex.grid_size)?;
    let table = interpret::importance(&ck.model, &ck.feature_names, x.view())?;
    interpret::write_shape_csv(create(&out.join("shapes.csv"))?, &curves)?;
    interpret::write_importance_csv(create(&out.join("importance.csv"))?, &table)?;
    for risk in 1..=table.num_risks() as u32 {
        let ranked = table.ordered(risk);
        let top = &ranked[..ex.top.clamp(1, ranked.len())];
        let mut chosen = ranked.clone();
        if let Some(count) = ex.plot_features {
            chosen = top.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(u64::from(risk)));
            chosen.shuffle(&mut rng);
            chosen.truncate(count.max(1));
            chosen.sort_by_key(|&i| table.rank(i, risk));
        }
        let panels: Vec<ShapeCurve> = chosen
            .iter()
            .filter_map(|&i| {
                curves
                    .iter()
                    .find(|c| c.feature == i && c.risk == risk)
                    .cloned()
            })
            .collect();
        let svg = interpret::render_shapes_svg(&panels, &format!("Shape functions, risk {risk}"))?;
        interpret::write_text(&out.join(format!("shapes_risk{risk}.svg")), &svg)?;
        let svg = interpret::render_importance_svg(&table, risk, top)?;
        interpret::write_text(&out.join(format!("importance_risk{risk}.svg")), &svg)?;
    }
    Ok(())
}

pub fn simulate(ctx: &RunContext) -> CmdResult {
    let out = ctx.out_dir()?;
    let data = synth::generate(&ctx.cfg.simulate)?;
    log::info!("achieved censoring rate {:.4}", data.achieved_censoring);
    data.write_dataset_csv(create(&out.join("dataset.csv"))?)?;
    data.write_truth_csv(create(&out.join("truth.csv"))?)?;
    Ok(())
}

fn or_current<T: Clone>(list: &[T], current: T) -> Vec<T> {
    if list.is_empty() {
        vec![current]
    } else {
        list.to_vec()
    }
}

fn sweep_grid(base: &TrainConfig, sweep: &crate::config::SweepSection) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for lr in or_current(&sweep.learning_rate, base.learning_rate) {
        for wd in or_current(&sweep.weight_decay, base.weight_decay) {
            for widths in or_current(&sweep.widths, base.widths.clone()) {
                for dropout in or_current(&sweep.dropout, base.dropout) {
                    for fd in or_current(&sweep.feature_dropout, base.feature_dropout) {
                        for bs in or_current(&sweep.batch_size, base.batch_size) {
                            out.push(TrainConfig {
                                learning_rate: lr,
                                weight_decay: wd,
                                widths: widths.clone(),
                                dropout,
                                feature_dropout: fd,
                                batch_size: bs,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn sweep(ctx: &RunContext) -> CmdResult {
    let schema = ctx.schema()?;
    let table = load_csv(ctx.data()?, &schema)?;
    let out = ctx.out_dir()?;
    let folds = folds_for(ctx, &table)?;
    let grid = sweep_grid(&ctx.cfg.train, &ctx.cfg.sweep);
    for cfg in &grid {
        cfg.validate()?;
    }
    let mut w = csv::Writer::from_writer(create(&out.join("sweep.csv"))?);
    let record = |w: &mut csv::Writer<_>, row: &[String]| -> CmdResult {
        w.write_record(row)
            .map_err(|e| CliError::from(fgnam::Error::from(e)))
    };
    record(
        &mut w,
        &[
            "combo",
            "learning_rate",
            "weight_decay",
            "widths",
            "dropout",
            "feature_dropout",
            "batch_size",
            "cause",
            "quantile",
            "horizon",
            "metric",
            "mean",
            "std",
            "n_folds",
        ]
        .map(String::from),
    )?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
    for (c, cfg) in grid.iter().enumerate() {
        log::info!("sweep combination {}/{}", c + 1, grid.len());
        let result = cross_validate_table(&table, &schema, &folds, cfg, &ctx.cfg.cv.quantiles)?;
        let widths = cfg
            .widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("x");
        for r in &result.aggregate {
            record(
                &mut w,
                &[
                    c.to_string(),
                    format!("{}", cfg.learning_rate),
                    format!("{}", cfg.weight_decay),
                    widths.clone(),
                    format!("{}", cfg.dropout),
                    format!("{}", cfg.feature_dropout),
                    cfg.batch_size.to_string(),
                    r.cause.to_string(),
                    format!("{}", r.quantile),
                    format!("{}", r.horizon),
                    r.metric.name().to_string(),
                    fmt(r.mean),
                    fmt(r.std),
                    r.n_folds.to_string(),
                ],
            )?;
        }
    }
    w.flush()
        .map_err(|e| CliError::from(fgnam::Error::io(out.join("sweep.csv"), e)))?;
    Ok(())
}
