//! Soft-margin SVMs trained from scratch by sequential minimal optimization.
//!
//! * [`train_binary`] / [`predict_binary`]: two-class C-SVC on labels ±1.
//! * [`train_multiclass`] / [`predict_multiclass`]: one-vs-one voting over
//!   all class pairs.
//! * [`train_svr`] / [`predict_svr`]: ε-insensitive regression.
//! * [`grid_search_cv`]: k-fold search over `(C, kernel, ε)`.
//!
//! Training works on the feature space it is given. Models may carry the
//! [`Normalizer`](crate::features::Normalizer) that produced their training
//! vectors; prediction then expects raw vectors and normalizes them first.

mod binary;
mod kernel;
mod multiclass;
mod search;
mod smo;
mod svr;

pub use binary::{kkt_residuals, predict_binary, train_binary, BinarySvmModel, TrainingDiagnostics};
pub use kernel::{kernel_eval, KernelSpec};
pub use multiclass::{
    predict_multiclass, resolve_votes, train_multiclass, MultiClassModel, MultiClassPrediction,
    PairDecision, PairModel, TIE_BREAK_RULE,
};
pub use search::{
    grid_search_cv, kfold_assignment, stratified_fold_assignment, CellScore, Hyperparameters,
    Metric, ParamGrid, SearchResult, SearchTarget,
};
pub use smo::SolverOptions;
pub use svr::{predict_svr, svr_kkt_residuals, train_svr, SvrModel};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, Normalizer};
use crate::{Error, Result};

/// Feature vectors with one target each: class labels (`i64`) or real
/// regression targets (`f64`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet<T> {
    pub vectors: Vec<FeatureVector>,
    pub targets: Vec<T>,
}

impl<T> TrainingSet<T> {
    pub fn new(vectors: Vec<FeatureVector>, targets: Vec<T>) -> Result<Self> {
        if vectors.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} vectors but {} targets",
                vectors.len(),
                targets.len()
            )));
        }
        if vectors.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let dim = vectors[0].dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        Ok(TrainingSet { vectors, targets })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.dim())
    }

    pub fn subset(&self, indices: &[usize]) -> Self
    where
        T: Clone,
    {
        TrainingSet {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

/// Indices sorted by target then vector, so the solver sees the same problem
/// whatever order the caller supplied.
fn canonical_order<T>(set: &TrainingSet<T>, cmp_target: impl Fn(&T, &T) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        cmp_target(&set.targets[a], &set.targets[b]).then_with(|| {
            set.vectors[a]
                .0
                .iter()
                .zip(&set.vectors[b].0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    });
    order
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    Ok(())
}

/// Expansion `Σ coef_i K(sv_i, x) + bias`.
fn expansion(kernel: &KernelSpec, support: &[Vec<f64>], coef: &[f64], bias: f64, x: &[f64]) -> f64 {
    support
        .iter()
        .zip(coef)
        .map(|(sv, a)| a * kernel.eval(sv, x))
        .sum::<f64>()
        + bias
}

/// Applies `normalizer` when present and checks the dimension.
fn prepare_input<'a>(
    normalizer: Option<&Normalizer>,
    dim: usize,
    x: &'a FeatureVector,
) -> Result<std::borrow::Cow<'a, [f64]>> {
    if x.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.dim(),
        });
    }
    Ok(match normalizer {
        Some(n) => std::borrow::Cow::Owned(n.apply(x)?.0),
        None => std::borrow::Cow::Borrowed(x.as_slice()),
    })
}
