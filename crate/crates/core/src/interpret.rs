//! Shape functions, feature importance and their CSV / SVG exports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::data::{ColumnKind, OutputColumn};
use crate::error::{Error, Result};
use crate::nam::NamModel;
use crate::par;

pub const DEFAULT_GRID_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCurve {
    pub feature: usize,
    pub feature_name: String,
    /// 1-based cause.
    pub risk: u32,
    pub x_scaled: Vec<f64>,
    pub x_raw: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub feature_names: Vec<String>,
    /// `features × risks`.
    pub values: Array2<f64>,
    /// `ranks[[i, k]]` is 1 for the most important feature of risk `k`.
    pub ranks: Array2<usize>,
}

impl ImportanceTable {
    pub fn num_risks(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, feature: usize, risk: u32) -> f64 {
        self.values[[feature, risk as usize - 1]]
    }

    pub fn rank(&self, feature: usize, risk: u32) -> usize {
        self.ranks[[feature, risk as usize - 1]]
    }

    /// Features of `risk` from most to least important.
    pub fn ordered(&self, risk: u32) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.nrows()).collect();
        idx.sort_by_key(|&i| self.rank(i, risk));
        idx
    }
}

/// Columns described only by their values: {0,1}-valued columns are binary,
/// everything else is taken as already on the model scale.
pub fn infer_columns(names: &[String], x: ArrayView2<'_, f64>) -> Vec<OutputColumn> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let binary = x.column(i).iter().all(|&v| v == 0.0 || v == 1.0);
            OutputColumn {
                name: name.clone(),
                source: name.clone(),
                kind: if binary {
                    ColumnKind::Binary
                } else {
                    ColumnKind::Raw
                },
            }
        })
        .collect()
}

fn grid_for(
    column: &OutputColumn,
    values: ArrayView2<'_, f64>,
    feature: usize,
    size: usize,
) -> Vec<f64> {
    if column.kind == ColumnKind::Binary {
        return vec![0.0, 1.0];
    }
    let col = values.column(feature);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if size < 2 || lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (size - 1) as f64;
    (0..size)
        .map(|g| {
            if g + 1 == size {
                hi
            } else {
                lo + step * g as f64
            }
        })
        .collect()
}

/// Curves for every (feature, risk) on `grid_size` evenly spaced points
/// between the observed min and max of each continuous column of `x`.
pub fn shape_curves(
    model: &NamModel,
    columns: &[OutputColumn],
    x: ArrayView2<'_, f64>,
    grid_size: usize,
) -> Result<Vec<ShapeCurve>> {
    let p = model.num_features();
    if columns.len() != p || x.ncols() != p {
        return Err(Error::Shape(format!(
            "model has {p} features, plan {} columns, data {} columns",
            columns.len(),
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput(
            "shape curves need at least one row".into(),
        ));
    }
    let k_risks = model.num_risks();
    let per_feature = par::try_map_range(p, |i| {
        let grid = grid_for(&columns[i], x, i, grid_size);
        let raw: Vec<f64> = grid.iter().map(|&v| columns[i].to_raw(v)).collect();
        (0..k_risks)
            .map(|k| {
                Ok(ShapeCurve {
                    feature: i,
                    feature_name: columns[i].name.clone(),
                    risk: k as u32 + 1,
                    x_scaled: grid.clone(),
                    x_raw: raw.clone(),
                    values: model.shape_values(i, k, &grid)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_feature.into_iter().flatten().collect())
}

/// `I_{i,k} = mean_j |s_{i,k}(x_ji)|` over the rows of `x`.
pub fn importance(
    model: &NamModel,
    feature_names: &[String],
    x: ArrayView2<'_, f64>,
) -> Result<ImportanceTable> {
    let p = model.num_features();
    if x.ncols() != p || feature_names.len() != p {
        return Err(Error::Shape(format!(
            "model has {p} features, data {} columns, {} names",
            x.ncols(),
            feature_names.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput(
            "importance needs a nonempty dataset".into(),
        ));
    }
    let k_risks = model.num_risks();
    let n = x.nrows() as f64;
    let rows = par::try_map_range(p, |i| {
        let col: Vec<f64> = x.column(i).to_vec();
        (0..k_risks)
            .map(|k| {
                let s = model.shape_values(i, k, &col)?;
                Ok(s.iter().map(|v| v.abs()).sum::<f64>() / n)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut values = Array2::zeros((p, k_risks));
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            values[[i, k]] = v;
        }
    }
    let ranks = rank_columns(&values);
    Ok(ImportanceTable {
        feature_names: feature_names.to_vec(),
        values,
        ranks,
    })
}

/// Descending ranks per column; ties keep feature order.
fn rank_columns(values: &Array2<f64>) -> Array2<usize> {
    let (p, k_risks) = values.dim();
    let mut ranks = Array2::zeros((p, k_risks));
    for k in 0..k_risks {
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| values[[b, k]].total_cmp(&values[[a, k]]).then(a.cmp(&b)));
        for (r, i) in idx.into_iter().enumerate() {
            ranks[[i, k]] = r + 1;
        }
    }
    ranks
}

/// Pointwise mean of curve sets that share grids, e.g. one set per fold.
pub fn average_curves(sets: &[Vec<ShapeCurve>]) -> Result<Vec<ShapeCurve>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidInput("no curve sets to average".into()))?;
    let mut out = first.clone();
    for set in &sets[1..] {
        if set.len() != out.len() {
            return Err(Error::Shape("curve sets differ in length".into()));
        }
        for (acc, c) in out.iter_mut().zip(set) {
            if acc.feature != c.feature || acc.risk != c.risk || acc.x_scaled != c.x_scaled {
                return Err(Error::Shape(format!(
                    "curve for feature {} risk {} has a different grid",
                    c.feature_name, c.risk
                )));
            }
            for (a, v) in acc.values.iter_mut().zip(&c.values) {
                *a += v;
            }
        }
    }
    let m = sets.len() as f64;
    for c in &mut out {
        for v in &mut c.values {
            *v /= m;
        }
    }
    Ok(out)
}

/// `feature,risk,x_raw,x_scaled,s_value`.
pub fn write_shape_csv<W: Write>(writer: W, curves: &[ShapeCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "risk", "x_raw", "x_scaled", "s_value"])?;
    for c in curves {
        for ((raw, scaled), v) in c.x_raw.iter().zip(&c.x_scaled).zip(&c.values) {
            w.write_record([
                c.feature_name.clone(),
                c.risk.to_string(),
                format!("{raw}"),
                format!("{scaled}"),
                format!("{v}"),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<shapes>", e))?;
    Ok(())
}

/// `feature,risk,importance,rank`.
pub fn write_importance_csv<W: Write>(writer: W, table: &ImportanceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "risk", "importance", "rank"])?;
    for k in 1..=table.num_risks() as u32 {
        for i in table.ordered(k) {
            w.write_record([
                table.feature_names[i].clone(),
                k.to_string(),
                format!("{}", table.get(i, k)),
                table.rank(i, k).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<importance>", e))?;
    Ok(())
}

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 180.0;
const MARGIN: f64 = 36.0;
const COLS: usize = 4;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.5;
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// One panel per curve with a dashed zero line, laid out in a grid.
pub fn render_shapes_svg(curves: &[ShapeCurve], title: &str) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("no shape curves to render".into()));
    }
    let rows = curves.len().div_ceil(COLS);
    let cols = curves.len().min(COLS);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (idx, c) in curves.iter().enumerate() {
        let ox = (idx % COLS) as f64 * PANEL_W;
        let oy = 30.0 + (idx / COLS) as f64 * PANEL_H;
        let (x0, x1) = span(c.x_raw.iter().copied());
        let (y0, y1) = span(c.values.iter().copied().chain([0.0]));
        let inner_w = PANEL_W - 2.0 * MARGIN;
        let inner_h = PANEL_H - 2.0 * MARGIN;
        let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * inner_w;
        let py = |y: f64| oy + MARGIN + (y1 - y) / (y1 - y0) * inner_h;
        let _ = writeln!(
            s,
            r##"<g><rect x="{:.2}" y="{:.2}" width="{inner_w:.2}" height="{inner_h:.2}" fill="none" stroke="#999"/>"##,
            ox + MARGIN,
            oy + MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{} (risk {})</text>"#,
            ox + PANEL_W / 2.0,
            oy + MARGIN - 8.0,
            escape(&c.feature_name),
            c.risk
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            ox + MARGIN,
            py(0.0),
            ox + PANEL_W - MARGIN,
            py(0.0)
        );
        let points: Vec<String> = if c.values.len() == 1 {
            vec![
                format!("{:.2},{:.2}", ox + MARGIN, py(c.values[0])),
                format!("{:.2},{:.2}", ox + PANEL_W - MARGIN, py(c.values[0])),
            ]
        } else {
            c.x_raw
                .iter()
                .zip(&c.values)
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect()
        };
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9">{y1:.3}</text><text x="{:.2}" y="{:.2}" font-size="9">{y0:.3}</text>"#,
            ox + 2.0,
            oy + MARGIN + 8.0,
            ox + 2.0,
            oy + PANEL_H - MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9">{x0:.3}</text><text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{x1:.3}</text></g>"#,
            ox + MARGIN,
            oy + PANEL_H - MARGIN + 12.0,
            ox + PANEL_W - MARGIN,
            oy + PANEL_H - MARGIN + 12.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Horizontal bars of `features` (in the given order) for one risk.
pub fn render_importance_svg(
    table: &ImportanceTable,
    risk: u32,
    features: &[usize],
) -> Result<String> {
    if features.is_empty() || risk == 0 || risk as usize > table.num_risks() {
        return Err(Error::InvalidInput("nothing to render".into()));
    }
    let bar_h = 18.0;
    let label_w = 160.0;
    let plot_w = 320.0;
    let width = label_w + plot_w + 80.0;
    let height = 40.0 + bar_h * features.len() as f64 + 10.0;
    let max = features
        .iter()
        .map(|&i| table.get(i, risk))
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { plot_w / max } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">Feature importance, risk {risk}</text>"#,
        width / 2.0
    );
    for (row, &i) in features.iter().enumerate() {
        let y = 32.0 + row as f64 * bar_h;
        let v = table.get(i, risk);
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.2}" font-size="11" text-anchor="end">{}</text><rect x="{label_w:.1}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c"/><text x="{:.2}" y="{:.2}" font-size="10">{v:.4}</text>"##,
            label_w - 6.0,
            y + bar_h * 0.7,
            escape(&table.feature_names[i]),
            y + 2.0,
            v * scale,
            bar_h - 4.0,
            label_w + v * scale + 4.0,
            y + bar_h * 0.7
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
