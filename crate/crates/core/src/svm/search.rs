use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binary::{predict_binary, train_binary};
use super::kernel::KernelSpec;
use super::multiclass::{predict_multiclass, train_multiclass};
use super::smo::SolverOptions;
use super::svr::{predict_svr, train_svr};
use super::TrainingSet;
use crate::eval::{confusion_matrix, dice_scores, rmse};
use crate::{Error, Result};

/// Validation metric. Accuracy and macro Dice are maximized, RMSE minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    MacroDice,
    Rmse,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Rmse)
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroDice => "macro-dice",
            Metric::Rmse => "rmse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "macro-dice" => Ok(Metric::MacroDice),
            "rmse" => Ok(Metric::Rmse),
            other => Err(Error::config(format!(
                "unknown metric '{other}' (expected accuracy, macro-dice or rmse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub c: f64,
    pub kernel: KernelSpec,
    /// Tube half-width; regression only.
    pub epsilon: Option<f64>,
}

impl Hyperparameters {
    pub fn describe(&self) -> String {
        let mut s = format!("C={} kernel={}", self.c, self.kernel.describe());
        if let Some(e) = self.epsilon {
            s.push_str(&format!(" epsilon={e}"));
        }
        s
    }

    fn order_key(&self) -> (f64, f64, f64) {
        (self.c, self.kernel.gamma(), self.epsilon.unwrap_or(0.0))
    }
}

/// Cartesian grid of candidate hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub c: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
    /// Ignored for classification.
    pub epsilon: Vec<f64>,
}

impl ParamGrid {
    /// RBF with `γ ∈ {2⁻⁷, …, 2³}/D`, `C ∈ {2⁻³, …, 2⁷}`, `ε ∈ {1, 5, 10, 25}` g/m².
    pub fn default_for(dim: usize) -> Self {
        let d = dim.max(1) as f64;
        ParamGrid {
            c: (-3..=7).map(|e| 2f64.powi(e)).collect(),
            kernels: (-7..=3).map(|e| KernelSpec::Rbf { gamma: 2f64.powi(e) / d }).collect(),
            epsilon: vec![1.0, 5.0, 10.0, 25.0],
        }
    }

    /// All cells, ordered by C, then gamma, then ε (ascending). On equal
    /// scores the first cell in this order wins.
    pub fn cells(&self, regression: bool) -> Vec<Hyperparameters> {
        let eps: Vec<Option<f64>> = if regression {
            self.epsilon.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let mut cells: Vec<Hyperparameters> = self
            .c
            .iter()
            .flat_map(|&c| {
                let eps = &eps;
                self.kernels
                    .iter()
                    .flat_map(move |&kernel| eps.iter().map(move |&epsilon| Hyperparameters { c, kernel, epsilon }))
            })
            .collect();
        cells.sort_by(|a, b| {
            let (x, y) = (a.order_key(), b.order_key());
            x.0.total_cmp(&y.0)
                .then(x.1.total_cmp(&y.1))
                .then(x.2.total_cmp(&y.2))
        });
        cells
    }

    pub fn validate(&self, regression: bool) -> Result<()> {
        if self.c.is_empty() || self.kernels.is_empty() || (regression && self.epsilon.is_empty()) {
            return Err(Error::config("hyperparameter grid has an empty axis"));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        Ok(())
    }
}

/// Data to search over, tagged with the task.
#[derive(Debug, Clone, Copy)]
pub enum SearchTarget<'a> {
    /// Labels ±1.
    Binary(&'a TrainingSet<i64>),
    MultiClass(&'a TrainingSet<i64>),
    Regression(&'a TrainingSet<f64>),
}

impl SearchTarget<'_> {
    fn len(&self) -> usize {
        match self {
            SearchTarget::Binary(s) | SearchTarget::MultiClass(s) => s.len(),
            SearchTarget::Regression(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub params: Hyperparameters,
    pub fold_scores: Vec<f64>,
    /// `None` when any fold failed to train.
    pub mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparameters,
    pub best_score: f64,
    pub metric: Metric,
    /// Fold of every example, in input order.
    pub folds: Vec<usize>,
    pub cells: Vec<CellScore>,
}

/// Stratified fold assignment: each class is shuffled with a seeded RNG and
/// dealt round-robin, continuing the deal across classes so fold sizes stay
/// within one of each other.
pub fn stratified_fold_assignment(labels: &[i64], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((l, members)) = by_class.iter().find(|(_, m)| m.len() < folds) {
        return Err(Error::invalid(format!(
            "cannot stratify {folds} folds: class {l} has only {} examples",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Plain shuffled k-fold assignment.
pub fn kfold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("cannot split {n} examples into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

fn classification_score(metric: Metric, labels: &[i64], truth: &[i64], pred: &[i64]) -> Result<f64> {
    match metric {
        Metric::Accuracy => Ok(truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64),
        Metric::MacroDice => dice_scores(&confusion_matrix(labels, truth, pred)?)
            .macro_dice
            .ok_or_else(|| Error::invalid("macro Dice undefined on validation fold")),
        Metric::Rmse => Err(Error::config("rmse is a regression metric")),
    }
}

fn score_fold(
    target: SearchTarget<'_>,
    params: &Hyperparameters,
    train: &[usize],
    valid: &[usize],
    metric: Metric,
    opts: &SolverOptions,
) -> Result<f64> {
    match target {
        SearchTarget::Binary(set) | SearchTarget::MultiClass(set) => {
            let mut labels = set.targets.clone();
            labels.sort_unstable();
            labels.dedup();
            let tr = set.subset(train);
            let truth: Vec<i64> = valid.iter().map(|&i| set.targets[i]).collect();
            let pred: Vec<i64> = if matches!(target, SearchTarget::Binary(_)) {
                let m = train_binary(&tr, params.c, &params.kernel, opts)?;
                valid
                    .iter()
                    .map(|&i| predict_binary(&m, &set.vectors[i]).map(|p| p.0))
                    .collect::<Result<_>>()?
            } else {
                let m = train_multiclass(&tr, params.c, &params.kernel, opts)?;
                valid
                    .iter()
                    .map(|&i| predict_multiclass(&m, &set.vectors[i]).map(|p| p.label))
                    .collect::<Result<_>>()?
            };
            classification_score(metric, &labels, &truth, &pred)
        }
        SearchTarget::Regression(set) => {
            if metric != Metric::Rmse {
                return Err(Error::config("regression search requires the rmse metric"));
            }
            let eps = params
                .epsilon
                .ok_or_else(|| Error::config("regression cell without epsilon"))?;
            let m = train_svr(&set.subset(train), params.c, eps, &params.kernel, opts)?;
            let truth: Vec<f64> = valid.iter().map(|&i| set.targets[i]).collect();
            let est: Vec<f64> = valid
                .iter()
                .map(|&i| predict_svr(&m, &set.vectors[i]))
                .collect::<Result<_>>()?;
            rmse(&truth, &est)
        }
    }
}

/// k-fold cross-validated search. Classification folds are stratified,
/// regression folds plain; both are fixed by `seed`. Cells are scored in
/// parallel. A cell whose training fails on any fold is kept in the log
/// with its error and never selected.
pub fn grid_search_cv(
    target: SearchTarget<'_>,
    grid: &ParamGrid,
    folds: usize,
    metric: Metric,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SearchResult> {
    let regression = matches!(target, SearchTarget::Regression(_));
    grid.validate(regression)?;
    let assignment = match target {
        SearchTarget::Binary(s) | SearchTarget::MultiClass(s) => stratified_fold_assignment(&s.targets, folds, seed)?,
        SearchTarget::Regression(_) => kfold_assignment(target.len(), folds, seed)?,
    };
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..assignment.len()).partition(|&i| assignment[i] == f);
            (train, valid)
        })
        .collect();
    let cells = grid.cells(regression);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let outcomes: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| score_fold(target, &cells[c], &splits[f].0, &splits[f].1, metric, opts))
        .collect();

    let mut scored = Vec::with_capacity(cells.len());
    for (c, params) in cells.iter().enumerate() {
        let mut fold_scores = Vec::with_capacity(folds);
        let mut error = None;
        for outcome in &outcomes[c * folds..(c + 1) * folds] {
            match outcome {
                Ok(s) => fold_scores.push(*s),
                Err(e) => {
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        let mean = error
            .is_none()
            .then(|| fold_scores.iter().sum::<f64>() / folds as f64);
        scored.push(CellScore {
            params: *params,
            fold_scores,
            mean,
            error,
        });
    }

    let mut best: Option<(usize, f64)> = None;
    for (c, cell) in scored.iter().enumerate() {
        let Some(m) = cell.mean else { continue };
        let better = match best {
            None => true,
            Some((_, b)) if metric.higher_is_better() => m > b,
            Some((_, b)) => m < b,
        };
        if better {
            best = Some((c, m));
        }
    }
    let (idx, best_score) = best.ok_or_else(|| {
        let first = scored.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        Error::invalid(format!("every grid cell failed to train (first error: {first})"))
    })?;
    Ok(SearchResult {
        best: scored[idx].params,
        best_score,
        metric,
        folds: assignment,
        cells: scored,
    })
}
