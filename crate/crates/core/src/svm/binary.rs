use serde::{Deserialize, Serialize};

use super::kernel::{KernelMatrix, KernelSpec};
use super::smo::{self, DualProblem, SolverOptions};
use super::{canonical_order, check_c, expansion, prepare_input, TrainingSet};
use crate::features::{FeatureVector, Normalizer};
use crate::{Error, Result};

/// Solver statistics kept with a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    /// Minimization form `½ αᵀQα + pᵀα` at the returned solution.
    pub dual_objective: f64,
    pub max_kkt_residual: f64,
    /// Training examples with positive slack (inside the margin or misclassified).
    pub margin_violations: usize,
    pub tol: f64,
}

/// Two-class C-SVC. Labels are −1 and +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i·y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    /// Position of each support vector in the training set.
    pub support_indices: Vec<usize>,
    pub normalizer: Option<Normalizer>,
    pub diagnostics: TrainingDiagnostics,
}

impl BinarySvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors
            .first()
            .map(Vec::len)
            .or_else(|| self.normalizer.as_ref().map(Normalizer::dim))
            .unwrap_or(0)
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    /// Decision value on an already-normalized vector.
    pub(crate) fn decision_raw(&self, x: &[f64]) -> f64 {
        expansion(&self.kernel, &self.support_vectors, &self.dual_coef, self.bias, x)
    }

    pub fn decision_value(&self, x: &FeatureVector) -> Result<f64> {
        let dim = if self.support_vectors.is_empty() { x.dim() } else { self.dim() };
        let input = prepare_input(self.normalizer.as_ref(), dim, x)?;
        Ok(self.decision_raw(&input))
    }
}

/// Sign of a decision value; zero counts as +1.
pub(crate) fn label_of(decision: f64) -> i64 {
    if decision >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn train_binary(
    set: &TrainingSet<i64>,
    c: f64,
    kernel: &KernelSpec,
    opts: &SolverOptions,
) -> Result<BinarySvmModel> {
    check_c(c)?;
    kernel.validate()?;
    if let Some(bad) = set.targets.iter().find(|y| **y != 1 && **y != -1) {
        return Err(Error::invalid(format!("binary labels must be -1 or +1, found {bad}")));
    }
    if !set.targets.contains(&1) || !set.targets.contains(&-1) {
        return Err(Error::invalid("binary training needs examples of both classes"));
    }
    let order = canonical_order(set, |a, b| a.cmp(b));
    let points: Vec<&[f64]> = order.iter().map(|&i| set.vectors[i].as_slice()).collect();
    let gram = KernelMatrix::compute(kernel, &points);
    let labels: Vec<f64> = order.iter().map(|&i| set.targets[i] as f64).collect();
    let problem = DualProblem {
        kernel: &gram,
        point: (0..order.len()).collect(),
        sign: labels.clone(),
        linear: vec![-1.0; order.len()],
        c,
    };
    let solution = smo::solve(&problem, opts)?;
    let residuals = solution.kkt_residuals(&problem);

    // y_i f(x_i) = 1 + y_i (b − score_i); slack where it falls below 1.
    let margin_violations = (0..order.len())
        .filter(|&t| {
            let score = -labels[t] * solution.gradient[t];
            1.0 + labels[t] * (solution.bias - score) < 1.0 - 1e-12
        })
        .count();

    let mut support: Vec<(usize, f64, Vec<f64>)> = order
        .iter()
        .enumerate()
        .filter(|(t, _)| solution.alpha[*t] > 0.0)
        .map(|(t, &orig)| (orig, solution.alpha[t] * labels[t], set.vectors[orig].0.clone()))
        .collect();
    support.sort_by_key(|(orig, _, _)| *orig);

    Ok(BinarySvmModel {
        kernel: *kernel,
        c,
        support_indices: support.iter().map(|s| s.0).collect(),
        dual_coef: support.iter().map(|s| s.1).collect(),
        support_vectors: support.into_iter().map(|s| s.2).collect(),
        bias: solution.bias,
        normalizer: None,
        diagnostics: TrainingDiagnostics {
            iterations: solution.iterations,
            dual_objective: solution.objective(&problem),
            max_kkt_residual: residuals.iter().copied().fold(0.0, f64::max),
            margin_violations,
            tol: opts.tol,
        },
    })
}

/// Label (±1, zero maps to +1) and decision value.
pub fn predict_binary(model: &BinarySvmModel, x: &FeatureVector) -> Result<(i64, f64)> {
    let d = model.decision_value(x)?;
    Ok((label_of(d), d))
}

/// KKT violation of every training example, recomputed from the model's
/// decision function: `α = 0 ⇒ y f ≥ 1`, `0 < α < C ⇒ y f = 1`,
/// `α = C ⇒ y f ≤ 1`.
pub fn kkt_residuals(model: &BinarySvmModel, set: &TrainingSet<i64>) -> Result<Vec<f64>> {
    let mut alpha = vec![0.0; set.len()];
    for (&i, &coef) in model.support_indices.iter().zip(&model.dual_coef) {
        let slot = alpha
            .get_mut(i)
            .ok_or_else(|| Error::invalid("model was not trained on this set"))?;
        *slot = coef.abs();
    }
    Ok(set
        .vectors
        .iter()
        .zip(&set.targets)
        .zip(&alpha)
        .map(|((x, &y), &a)| {
            let margin = y as f64 * model.decision_raw(x.as_slice());
            if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= model.c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            }
        })
        .collect())
}
