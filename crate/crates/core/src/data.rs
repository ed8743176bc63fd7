//! Tabular ingestion: CSV loading, column preprocessing and fold assignment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value substituted for missing cells under the missing-indicator method.
pub const MISSING_SENTINEL: f64 = -1.0;

/// Per-column preprocessing strategy as written in a schema file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Numeric columns are standardized with mean imputation, text columns
    /// one-hot encoded with mode imputation.
    #[default]
    Auto,
    Standardize,
    OneHot,
    MeanImpute,
    ModeImpute,
    /// Missing-indicator method: standardized value or sentinel, plus a 0/1
    /// missingness column.
    Mim,
    Passthrough,
    Drop,
}

/// Column roles for a survival CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub time_col: String,
    pub event_col: String,
    pub num_risks: usize,
    #[serde(default)]
    pub default_strategy: Strategy,
    #[serde(default)]
    pub strategy: BTreeMap<String, Strategy>,
}

impl Schema {
    pub fn new(time_col: &str, event_col: &str, num_risks: usize) -> Self {
        Schema {
            time_col: time_col.to_string(),
            event_col: event_col.to_string(),
            num_risks,
            default_strategy: Strategy::Auto,
            strategy: BTreeMap::new(),
        }
    }

    pub fn with_strategy(mut self, column: &str, strategy: Strategy) -> Self {
        self.strategy.insert(column.to_string(), strategy);
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
        if schema.num_risks == 0 {
            return Err(Error::Schema("num_risks must be at least 1".into()));
        }
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn strategy_for(&self, column: &str) -> Strategy {
        self.strategy
            .get(column)
            .copied()
            .unwrap_or(self.default_strategy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn parse(raw: &str) -> Cell {
        let s = raw.trim();
        if s.is_empty() {
            return Cell::Missing;
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Number(v),
            _ => Cell::Text(s.to_string()),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Category label used by one-hot encoding.
    fn category(&self) -> Option<String> {
        match self {
            Cell::Number(v) => Some(format!("{v}")),
            Cell::Text(s) => Some(s.clone()),
            Cell::Missing => None,
        }
    }
}

/// Parsed CSV with covariate cells kept untyped-but-tagged and the outcome
/// columns split out.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub source: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub time_col: String,
    pub event_col: String,
    pub num_risks: usize,
    /// `None` when the file carried no outcome columns (prediction input).
    pub time: Option<Vec<f64>>,
    pub event: Option<Vec<u32>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn missing_count(&self) -> usize {
        self.rows
            .iter()
            .flatten()
            .filter(|c| c.is_missing())
            .count()
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn select_rows(&self, indices: &[usize], label: &str) -> RawTable {
        RawTable {
            source: format!("{}[{label}]", self.source),
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            time_col: self.time_col.clone(),
            event_col: self.event_col.clone(),
            num_risks: self.num_risks,
            time: self
                .time
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            event: self
                .event
                .as_ref()
                .map(|e| indices.iter().map(|&i| e[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcomes {
    Required,
    Optional,
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    load_csv_with(path, schema, Outcomes::Required)
}

pub fn load_csv_with(path: &Path, schema: &Schema, outcomes: Outcomes) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = read_csv(file, schema, outcomes)?;
    table.source = path.display().to_string();
    Ok(table)
}

/// Parses RFC-4180 CSV with a header row. Empty cells are missing.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, outcomes: Outcomes) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate column name `{h}`")));
        }
    }
    let time_idx = header.iter().position(|h| *h == schema.time_col);
    let event_idx = header.iter().position(|h| *h == schema.event_col);
    let has_outcomes = match (time_idx, event_idx, outcomes) {
        (Some(_), Some(_), _) => true,
        (None, None, Outcomes::Optional) => false,
        (None, _, _) => {
            return Err(Error::Schema(format!(
                "time column `{}` not found in header",
                schema.time_col
            )))
        }
        (_, None, _) => {
            return Err(Error::Schema(format!(
                "event column `{}` not found in header",
                schema.event_col
            )))
        }
    };

    let covariate_idx: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != time_idx && Some(i) != event_idx)
        .collect();
    let columns: Vec<String> = covariate_idx.iter().map(|&i| header[i].clone()).collect();

    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if has_outcomes {
            let ti = time_idx.unwrap_or_default();
            let ei = event_idx.unwrap_or_default();
            times.push(parse_time(&record[ti], row, &schema.time_col)?);
            events.push(parse_event(
                &record[ei],
                row,
                &schema.event_col,
                schema.num_risks,
            )?);
        }
        rows.push(
            covariate_idx
                .iter()
                .map(|&i| Cell::parse(&record[i]))
                .collect(),
        );
    }

    Ok(RawTable {
        source: "<reader>".into(),
        columns,
        rows,
        time_col: schema.time_col.clone(),
        event_col: schema.event_col.clone(),
        num_risks: schema.num_risks,
        time: has_outcomes.then_some(times),
        event: has_outcomes.then_some(events),
    })
}

fn parse_time(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
        _ => Err(Error::Cell {
            row,
            column: column.to_string(),
            message: format!("time `{raw}` is not a finite nonnegative number"),
        }),
    }
}

fn parse_event(raw: &str, row: usize, column: &str, num_risks: usize) -> Result<u32> {
    let bad = |message: String| Error::Cell {
        row,
        column: column.to_string(),
        message,
    };
    let e: u32 = raw
        .trim()
        .parse()
        .map_err(|_| bad(format!("event `{raw}` is not a nonnegative integer")))?;
    if e as usize > num_risks {
        return Err(bad(format!("event {e} exceeds num_risks = {num_risks}")));
    }
    Ok(e)
}

/// Fitted transformation of one input column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    Standardize {
        mean: f64,
        std: f64,
    },
    MeanImpute {
        mean: f64,
        std: f64,
    },
    OneHot {
        categories: Vec<String>,
    },
    ModeImpute {
        categories: Vec<String>,
        mode: String,
    },
    MissingIndicator {
        mean: f64,
        std: f64,
        sentinel: f64,
    },
    Passthrough,
    Drop,
}

impl Rule {
    fn width(&self) -> usize {
        match self {
            Rule::Standardize { .. } | Rule::MeanImpute { .. } | Rule::Passthrough => 1,
            Rule::MissingIndicator { .. } => 2,
            Rule::OneHot { categories } | Rule::ModeImpute { categories, .. } => categories.len(),
            Rule::Drop => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRule {
    pub name: String,
    #[serde(flatten)]
    pub rule: Rule,
}

/// How an output (model-facing) column relates to raw values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnKind {
    /// `scaled = (raw - mean) / std`.
    Continuous {
        mean: f64,
        std: f64,
    },
    /// Takes values in {0, 1}.
    Binary,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputColumn {
    pub name: String,
    pub source: String,
    pub kind: ColumnKind,
}

impl OutputColumn {
    pub fn to_raw(&self, scaled: f64) -> f64 {
        match self.kind {
            ColumnKind::Continuous { mean, std } => scaled * std + mean,
            _ => scaled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub columns: Vec<ColumnRule>,
    pub fitted_on: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Fits per-column statistics on the training rows.
pub fn fit_preprocess(train: &RawTable, schema: &Schema) -> Result<PreprocessPlan> {
    if train.n_rows() == 0 {
        return Err(Error::InvalidInput(
            "cannot fit preprocessing on an empty table".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut columns = Vec::with_capacity(train.columns.len());
    for (c, name) in train.columns.iter().enumerate() {
        let cells: Vec<&Cell> = train.rows.iter().map(|r| &r[c]).collect();
        let numeric = cells.iter().all(|cell| !matches!(cell, Cell::Text(_)));
        let any_missing = cells.iter().any(|cell| cell.is_missing());
        let strategy = match schema.strategy_for(name) {
            Strategy::Auto if numeric && any_missing => Strategy::MeanImpute,
            Strategy::Auto if numeric => Strategy::Standardize,
            Strategy::Auto if any_missing => Strategy::ModeImpute,
            Strategy::Auto => Strategy::OneHot,
            s => s,
        };
        let needs_numeric = matches!(
            strategy,
            Strategy::Standardize | Strategy::MeanImpute | Strategy::Mim | Strategy::Passthrough
        );
        if needs_numeric && !numeric {
            return Err(Error::Schema(format!(
                "column `{name}` contains text and cannot use strategy {strategy:?}"
            )));
        }
        let rule = match strategy {
            Strategy::Standardize | Strategy::MeanImpute | Strategy::Mim => {
                let values: Vec<f64> = cells
                    .iter()
                    .filter_map(|cell| match cell {
                        Cell::Number(v) => Some(*v),
                        _ => None,
                    })
                    .collect();
                let (mean, std) = mean_std(&values);
                let std = if std > 0.0 && std.is_finite() {
                    std
                } else {
                    let msg = format!("column `{name}` has zero variance; using stddev 1");
                    log::warn!("{msg}");
                    warnings.push(msg);
                    1.0
                };
                match strategy {
                    Strategy::Standardize => Rule::Standardize { mean, std },
                    Strategy::MeanImpute => Rule::MeanImpute { mean, std },
                    _ => Rule::MissingIndicator {
                        mean,
                        std,
                        sentinel: MISSING_SENTINEL,
                    },
                }
            }
            Strategy::OneHot | Strategy::ModeImpute => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for cell in &cells {
                    if let Some(cat) = cell.category() {
                        *counts.entry(cat).or_default() += 1;
                    }
                }
                let categories: Vec<String> = counts.keys().cloned().collect();
                if strategy == Strategy::OneHot {
                    Rule::OneHot { categories }
                } else {
                    // BTreeMap iteration is sorted, so max_by_key keeps the
                    // last maximum; reverse to prefer the smallest label.
                    let mode = counts
                        .iter()
                        .rev()
                        .max_by_key(|(_, &n)| n)
                        .map(|(k, _)| k.clone())
                        .ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "column `{name}` has no observed values to impute from"
                            ))
                        })?;
                    Rule::ModeImpute { categories, mode }
                }
            }
            Strategy::Passthrough => Rule::Passthrough,
            Strategy::Drop => Rule::Drop,
            Strategy::Auto => unreachable!("auto resolved above"),
        };
        columns.push(ColumnRule {
            name: name.clone(),
            rule,
        });
    }
    Ok(PreprocessPlan {
        columns,
        fitted_on: format!("{} ({} rows)", train.source, train.n_rows()),
        warnings,
    })
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Covariates after preprocessing, without outcome columns.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub x: Array2<f64>,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl PreprocessPlan {
    pub fn output_width(&self) -> usize {
        self.columns.iter().map(|c| c.rule.width()).sum()
    }

    pub fn input_columns(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn output_columns(&self) -> Vec<OutputColumn> {
        let mut out = Vec::with_capacity(self.output_width());
        for col in &self.columns {
            let source = col.name.clone();
            match &col.rule {
                Rule::Standardize { mean, std } | Rule::MeanImpute { mean, std } => {
                    out.push(OutputColumn {
                        name: source.clone(),
                        source,
                        kind: ColumnKind::Continuous {
                            mean: *mean,
                            std: *std,
                        },
                    })
                }
                Rule::MissingIndicator { mean, std, .. } => {
                    out.push(OutputColumn {
                        name: source.clone(),
                        source: source.clone(),
                        kind: ColumnKind::Continuous {
                            mean: *mean,
                            std: *std,
                        },
                    });
                    out.push(OutputColumn {
                        name: format!("{source}_missing"),
                        source,
                        kind: ColumnKind::Binary,
                    });
                }
                Rule::OneHot { categories } | Rule::ModeImpute { categories, .. } => {
                    for cat in categories {
                        out.push(OutputColumn {
                            name: format!("{source}={cat}"),
                            source: source.clone(),
                            kind: ColumnKind::Binary,
                        });
                    }
                }
                Rule::Passthrough => out.push(OutputColumn {
                    name: source.clone(),
                    source,
                    kind: ColumnKind::Raw,
                }),
                Rule::Drop => {}
            }
        }
        out
    }

    /// Applies the plan to covariates only.
    pub fn transform(&self, table: &RawTable) -> Result<Transformed> {
        let mut positions = Vec::with_capacity(self.columns.len());
        let mut absent = Vec::new();
        for col in &self.columns {
            match table.column_index(&col.name) {
                Some(i) => positions.push(i),
                None if col.rule == Rule::Drop => positions.push(usize::MAX),
                None => absent.push(col.name.clone()),
            }
        }
        if !absent.is_empty() {
            return Err(Error::Schema(format!(
                "input is missing plan columns: {}",
                absent.join(", ")
            )));
        }

        let width = self.output_width();
        let mut x = Array2::<f64>::zeros((table.n_rows(), width));
        let mut unseen: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (r, row) in table.rows.iter().enumerate() {
            let mut out = x.row_mut(r);
            let mut o = 0;
            for (col, &pos) in self.columns.iter().zip(&positions) {
                if col.rule == Rule::Drop {
                    continue;
                }
                let cell = &row[pos];
                let missing_err = || Error::Cell {
                    row: r,
                    column: col.name.clone(),
                    message: "missing value with no imputation rule".into(),
                };
                let numeric = |cell: &Cell| -> Result<Option<f64>> {
                    match cell {
                        Cell::Number(v) => Ok(Some(*v)),
                        Cell::Missing => Ok(None),
                        Cell::Text(s) => Err(Error::Cell {
                            row: r,
                            column: col.name.clone(),
                            message: format!("expected a number, found `{s}`"),
                        }),
                    }
                };
                match &col.rule {
                    Rule::Standardize { mean, std } => {
                        let v = numeric(cell)?.ok_or_else(missing_err)?;
                        out[o] = (v - mean) / std;
                        o += 1;
                    }
                    Rule::MeanImpute { mean, std } => {
                        let v = numeric(cell)?.unwrap_or(*mean);
                        out[o] = (v - mean) / std;
                        o += 1;
                    }
                    Rule::MissingIndicator {
                        mean,
                        std,
                        sentinel,
                    } => {
                        match numeric(cell)? {
                            Some(v) => {
                                out[o] = (v - mean) / std;
                                out[o + 1] = 0.0;
                            }
                            None => {
                                out[o] = *sentinel;
                                out[o + 1] = 1.0;
                            }
                        }
                        o += 2;
                    }
                    Rule::OneHot { categories } | Rule::ModeImpute { categories, .. } => {
                        let cat = match (cell.category(), &col.rule) {
                            (Some(c), _) => c,
                            (None, Rule::ModeImpute { mode, .. }) => mode.clone(),
                            (None, _) => return Err(missing_err()),
                        };
                        match categories.iter().position(|c| *c == cat) {
                            Some(j) => out[o + j] = 1.0,
                            None => *unseen.entry((col.name.clone(), cat)).or_default() += 1,
                        }
                        o += categories.len();
                    }
                    Rule::Passthrough => {
                        out[o] = numeric(cell)?.ok_or_else(missing_err)?;
                        o += 1;
                    }
                    Rule::Drop => {}
                }
            }
        }

        let warnings: Vec<String> = unseen
            .into_iter()
            .map(|((column, cat), n)| {
                let msg = format!(
                    "column `{column}`: unseen category `{cat}` in {n} row(s) encoded as all zeros"
                );
                log::warn!("{msg}");
                msg
            })
            .collect();
        Ok(Transformed {
            x,
            feature_names: self.output_columns().into_iter().map(|c| c.name).collect(),
            warnings,
        })
    }
}

/// Applies a fitted plan to a table with outcomes.
pub fn apply_preprocess(plan: &PreprocessPlan, table: &RawTable) -> Result<SurvivalDataset> {
    let t = plan.transform(table)?;
    let (Some(time), Some(event)) = (&table.time, &table.event) else {
        return Err(Error::Schema(format!(
            "table has no `{}`/`{}` outcome columns",
            table.time_col, table.event_col
        )));
    };
    let mut ds = SurvivalDataset::new(
        t.x,
        time.clone(),
        event.clone(),
        table.num_risks,
        t.feature_names,
    )?;
    ds.warnings = t.warnings;
    Ok(ds)
}

/// Model-ready competing-risks data: covariates, observed time and event
/// label (0 = censored, 1..=K = cause).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub x: Array2<f64>,
    pub time: Vec<f64>,
    pub event: Vec<u32>,
    pub num_risks: usize,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(
        x: Array2<f64>,
        time: Vec<f64>,
        event: Vec<u32>,
        num_risks: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if time.len() != n || event.len() != n {
            return Err(Error::Shape(format!(
                "{} covariate rows, {} times, {} events",
                n,
                time.len(),
                event.len()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        if num_risks == 0 {
            return Err(Error::InvalidInput("num_risks must be at least 1".into()));
        }
        if let Some(i) = time.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidInput(format!(
                "row {i}: time {} is not finite and nonnegative",
                time[i]
            )));
        }
        if let Some(i) = event.iter().position(|&e| e as usize > num_risks) {
            return Err(Error::InvalidInput(format!(
                "row {i}: event {} exceeds num_risks {num_risks}",
                event[i]
            )));
        }
        if let Some((i, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite covariate at row {}, column {}",
                i.0, i.1
            )));
        }
        Ok(SurvivalDataset {
            x,
            time,
            event,
            num_risks,
            feature_names,
            warnings: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            x: self.x.select(Axis(0), indices),
            time: indices.iter().map(|&i| self.time[i]).collect(),
            event: indices.iter().map(|&i| self.event[i]).collect(),
            num_risks: self.num_risks,
            feature_names: self.feature_names.clone(),
            warnings: Vec::new(),
        }
    }

    pub fn cause_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_risks + 1];
        for &e in &self.event {
            counts[e as usize] += 1;
        }
        counts
    }

    /// Fails unless every cause 1..=K has at least one observed event.
    pub fn require_all_causes(&self) -> Result<()> {
        let counts = self.cause_counts();
        match (1..=self.num_risks).find(|&k| counts[k] == 0) {
            Some(k) => Err(Error::InvalidInput(format!(
                "no events of cause {k}; the cause cannot be modeled"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `0..n` into `folds` disjoint test sets. When `stratified`, each
/// event label is shuffled and dealt round-robin so per-fold class counts
/// differ by at most one.
pub fn kfold_split(event: &[u32], folds: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>> {
    let n = event.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidInput(format!(
            "folds must be in 2..={n}, got {folds}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let labels: BTreeSet<u32> = event.iter().copied().collect();
        labels
            .into_iter()
            .map(|label| {
                let members: Vec<usize> = (0..n).filter(|&i| event[i] == label).collect();
                if members.len() < folds {
                    log::warn!(
                        "event label {label} has {} member(s), fewer than {folds} folds",
                        members.len()
                    );
                }
                members
            })
            .collect()
    } else {
        vec![(0..n).collect()]
    };

    let mut assignment = vec![0usize; n];
    let mut next = 0usize;
    for mut members in groups {
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok((0..folds)
        .map(|f| Fold {
            train: (0..n).filter(|&i| assignment[i] != f).collect(),
            test: (0..n).filter(|&i| assignment[i] == f).collect(),
        })
        .collect())
}

/// Splits indices into (kept, held-out) with roughly `fraction` of every
/// event label held out.
pub fn stratified_holdout(
    indices: &[usize],
    event: &[u32],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: BTreeSet<u32> = indices.iter().map(|&i| event[i]).collect();
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for label in labels {
        let mut members: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| event[i] == label)
            .collect();
        members.shuffle(&mut rng);
        let take = ((members.len() as f64) * fraction).round() as usize;
        // Leave at least one member of every label in the kept part.
        let take = take.min(members.len().saturating_sub(1));
        held.extend_from_slice(&members[..take]);
        kept.extend_from_slice(&members[take..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

/// Writes `row_index,fold` for every test assignment.
pub fn write_folds<W: Write>(writer: W, folds: &[Fold]) -> Result<()> {
    let mut rows: Vec<(usize, usize)> = folds
        .iter()
        .enumerate()
        .flat_map(|(f, fold)| fold.test.iter().map(move |&i| (i, f)))
        .collect();
    rows.sort_unstable();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row_index", "fold"])?;
    for (i, f) in rows {
        w.write_record([i.to_string(), f.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<folds>", e))?;
    Ok(())
}
