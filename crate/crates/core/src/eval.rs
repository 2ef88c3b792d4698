//! Metrics and map products.
//!
//! Dice generalizes to K classes one-vs-rest: `Dice_c = 2·TP_c / (2·TP_c + FP_c + FN_c)`,
//! and the macro score is the unweighted mean over classes where it is
//! defined. A class with no true and no predicted instances has no Dice
//! score and is left out of the mean.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, GridShape};
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<i64>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Builds a matrix directly from counts.
    pub fn from_counts(labels: Vec<i64>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if k == 0 || counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be K x K with K >= 1"));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_count(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn predicted_count(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.labels.len()).map(|k| self.counts[k][k]).sum();
        diag as f64 / self.total() as f64
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        let t = self.true_count(k);
        (t > 0).then(|| self.counts[k][k] as f64 / t as f64)
    }

    pub fn precision(&self, k: usize) -> Option<f64> {
        let p = self.predicted_count(k);
        (p > 0).then(|| self.counts[k][k] as f64 / p as f64)
    }
}

pub fn confusion_matrix(labels: &[i64], truth: &[i64], pred: &[i64]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no labels to evaluate"));
    }
    let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(k, &l)| (l, k)).collect();
    if index.len() != labels.len() {
        return Err(Error::invalid("duplicate class label"));
    }
    let lookup = |l: i64| {
        index
            .get(&l)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown label {l} (classes {labels:?})")))
    };
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[lookup(t)?][lookup(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    /// `None` when the class never occurs in truth or prediction.
    pub per_class: Vec<Option<f64>>,
    pub macro_dice: Option<f64>,
}

pub fn dice_scores(cm: &ConfusionMatrix) -> DiceScores {
    let per_class: Vec<Option<f64>> = (0..cm.labels.len())
        .map(|k| {
            let tp = cm.counts[k][k] as f64;
            let fn_ = cm.true_count(k) as f64 - tp;
            let fp = cm.predicted_count(k) as f64 - tp;
            let denom = 2.0 * tp + fp + fn_;
            (denom > 0.0).then(|| 2.0 * tp / denom)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_dice = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    DiceScores { per_class, macro_dice }
}

pub fn rmse(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::invalid(format!(
            "{} true values but {} estimates",
            truth.len(),
            est.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no values to evaluate"));
    }
    let sse: f64 = truth.iter().zip(est).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub evaluated: usize,
    pub confusion: Option<ConfusionMatrix>,
    pub dice: Option<DiceScores>,
    pub accuracy: Option<f64>,
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    /// g/m²; regression runs only.
    pub rmse: Option<f64>,
}

impl EvalReport {
    pub fn classification(cm: ConfusionMatrix) -> Self {
        let k = cm.labels.len();
        EvalReport {
            evaluated: cm.total() as usize,
            dice: Some(dice_scores(&cm)),
            accuracy: Some(cm.accuracy()),
            recall: (0..k).map(|i| cm.recall(i)).collect(),
            precision: (0..k).map(|i| cm.precision(i)).collect(),
            confusion: Some(cm),
            rmse: None,
        }
    }

    pub fn regression(truth: &[f64], est: &[f64]) -> Result<Self> {
        Ok(EvalReport {
            evaluated: truth.len(),
            confusion: None,
            dice: None,
            accuracy: None,
            recall: vec![],
            precision: vec![],
            rmse: Some(rmse(truth, est)?),
        })
    }

    pub fn with_rmse(mut self, truth: &[f64], est: &[f64]) -> Result<Self> {
        self.rmse = Some(rmse(truth, est)?);
        Ok(self)
    }

    pub fn macro_dice(&self) -> Option<f64> {
        self.dice.as_ref().and_then(|d| d.macro_dice)
    }

    /// Human-readable table and summary.
    pub fn to_text(&self, class_names: &dyn Fn(i64) -> String) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "evaluated traces: {}", self.evaluated);
        if let (Some(cm), Some(dice)) = (&self.confusion, &self.dice) {
            let names: Vec<String> = cm.labels.iter().map(|&l| class_names(l)).collect();
            let width = names.iter().map(String::len).max().unwrap_or(0).max(10);
            let _ = writeln!(out, "\nconfusion matrix (rows: truth, columns: predicted)");
            let _ = write!(out, "{:width$}", "");
            for n in &names {
                let _ = write!(out, " {n:>width$}");
            }
            out.push('\n');
            for (k, row) in cm.counts.iter().enumerate() {
                let _ = write!(out, "{:width$}", names[k]);
                for c in row {
                    let _ = write!(out, " {c:>width$}");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "\n{:width$} {:>9} {:>9} {:>9}", "class", "dice", "recall", "precision");
            for (k, n) in names.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{n:width$} {:>9} {:>9} {:>9}",
                    fmt(dice.per_class[k]),
                    fmt(self.recall[k]),
                    fmt(self.precision[k])
                );
            }
            let _ = writeln!(out, "\nmacro dice: {}", fmt(dice.macro_dice));
            let _ = writeln!(out, "accuracy:   {}", fmt(self.accuracy));
        }
        if let Some(r) = self.rmse {
            let _ = writeln!(out, "rmse (g/m2): {r:.4}");
        }
        out
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "evaluated={}", self.evaluated);
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        if let (Some(cm), Some(dice)) = (&self.confusion, &self.dice) {
            let _ = writeln!(out, "accuracy={}", opt(self.accuracy));
            let _ = writeln!(out, "macro_dice={}", opt(dice.macro_dice));
            for (k, l) in cm.labels.iter().enumerate() {
                let _ = writeln!(out, "dice.{l}={}", opt(dice.per_class[k]));
                let _ = writeln!(out, "recall.{l}={}", opt(self.recall[k]));
                let _ = writeln!(out, "precision.{l}={}", opt(self.precision[k]));
            }
            let rows: Vec<String> = cm
                .counts
                .iter()
                .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
                .collect();
            let labels: Vec<String> = cm.labels.iter().map(i64::to_string).collect();
            let _ = writeln!(out, "labels={}", labels.join(","));
            let _ = writeln!(out, "confusion={}", rows.join(";"));
        }
        if let Some(r) = self.rmse {
            let _ = writeln!(out, "rmse={r}");
        }
        out
    }
}

/// What a map's cells hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MapKind {
    /// Class labels, ascending.
    Classes(Vec<i64>),
    /// Quantities in g/m².
    Quantities,
}

/// Per-node predictions; `None` marks nodes no trace was assigned to.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub kind: MapKind,
    pub cells: Grid<Option<f64>>,
}

impl ClassMap {
    pub fn shape(&self) -> GridShape {
        self.cells.shape()
    }

    pub fn filled_count(&self) -> usize {
        self.cells.values().iter().filter(|v| v.is_some()).count()
    }
}

/// Places each prediction at the grid node nearest its position. When two
/// predictions land on the same node the later one wins and a warning is
/// logged. Returns the map and the number of overwritten nodes.
pub fn assemble_map(
    shape: GridShape,
    kind: MapKind,
    positions: &[(f64, f64)],
    values: &[f64],
) -> Result<(ClassMap, usize)> {
    if positions.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} positions but {} values",
            positions.len(),
            values.len()
        )));
    }
    let mut cells = Grid::filled(shape, None);
    let mut conflicts = 0;
    for (&(x, y), &v) in positions.iter().zip(values) {
        let (i, j) = shape.snap(x, y).ok_or_else(|| {
            Error::invalid(format!("position ({x}, {y}) lies outside the scene grid"))
        })?;
        if cells.get(i, j).is_some() {
            conflicts += 1;
            log::debug!("node ({i}, {j}) at ({x}, {y}) assigned twice; keeping the later prediction");
        }
        cells.set(i, j, Some(v));
    }
    Ok((ClassMap { kind, cells }, conflicts))
}

fn format_cell(kind: &MapKind, v: f64) -> String {
    match kind {
        MapKind::Classes(_) => format!("{}", v as i64),
        MapKind::Quantities => format!("{v}"),
    }
}

/// One line per grid row (`y = j·step`, `j` ascending), one cell per column;
/// no-data is an empty cell.
pub fn map_to_csv(map: &ClassMap) -> String {
    let shape = map.shape();
    let mut out = String::new();
    for j in 0..shape.ny {
        let line: Vec<String> = map
            .cells
            .row(j)
            .iter()
            .map(|c| c.map_or_else(String::new, |v| format_cell(&map.kind, v)))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn map_from_csv(text: &str, step: f64, kind: MapKind, path: &Path) -> Result<ClassMap> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    if rows.is_empty() {
        return Err(Error::parse(path, "empty map"));
    }
    let mut data = Vec::new();
    let mut nx = None;
    for (j, line) in rows.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if *nx.get_or_insert(cells.len()) != cells.len() {
            return Err(Error::parse(path, format!("row {} has {} cells", j + 1, cells.len())));
        }
        for c in cells {
            let c = c.trim();
            data.push(if c.is_empty() {
                None
            } else {
                Some(c.parse::<f64>().map_err(|_| {
                    Error::parse(path, format!("row {}: '{c}' is not a number", j + 1))
                })?)
            });
        }
    }
    let shape = GridShape {
        nx: nx.unwrap_or(0),
        ny: rows.len(),
        step,
    };
    Ok(ClassMap {
        kind,
        cells: Grid::from_vec(shape, data)?,
    })
}

/// Gray level of every cell: class `k` of `K` maps to `round(255·(k+1)/K)`,
/// quantities scale linearly onto 1..=255, no-data is 0.
pub fn gray_levels(map: &ClassMap) -> Vec<u8> {
    match &map.kind {
        MapKind::Classes(labels) => {
            let k = labels.len().max(1) as f64;
            map.cells
                .values()
                .iter()
                .map(|c| match c {
                    None => 0,
                    Some(v) => match labels.iter().position(|&l| l == *v as i64) {
                        Some(idx) => (255.0 * (idx + 1) as f64 / k).round() as u8,
                        None => 0,
                    },
                })
                .collect()
        }
        MapKind::Quantities => {
            let present: Vec<f64> = map.cells.values().iter().flatten().copied().collect();
            let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            map.cells
                .values()
                .iter()
                .map(|c| match c {
                    None => 0,
                    Some(_) if hi <= lo => 255,
                    Some(v) => (1.0 + 254.0 * (v - lo) / (hi - lo)).round() as u8,
                })
                .collect()
        }
    }
}

/// Binary (P5) portable graymap, rows in the same order as the CSV export.
pub fn map_to_pgm(map: &ClassMap) -> Vec<u8> {
    let shape = map.shape();
    let mut out = format!("P5\n{} {}\n255\n", shape.nx, shape.ny).into_bytes();
    out.extend(gray_levels(map));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

pub fn export_map(map: &ClassMap, format: MapFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        MapFormat::Csv => map_to_csv(map).into_bytes(),
        MapFormat::Pgm => map_to_pgm(map),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn import_map_csv(path: &Path, step: f64, kind: MapKind) -> Result<ClassMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    map_from_csv(&text, step, kind, path)
}
