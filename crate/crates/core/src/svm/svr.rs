use serde::{Deserialize, Serialize};

use super::binary::TrainingDiagnostics;
use super::kernel::{KernelMatrix, KernelSpec};
use super::smo::{self, DualProblem, SolverOptions};
use super::{canonical_order, check_c, expansion, prepare_input, TrainingSet};
use crate::features::{FeatureVector, Normalizer};
use crate::{Error, Result};

/// ε-insensitive support vector regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub epsilon: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i − α_i*` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub normalizer: Option<Normalizer>,
    pub diagnostics: TrainingDiagnostics,
}

impl SvrModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors
            .first()
            .map(Vec::len)
            .or_else(|| self.normalizer.as_ref().map(Normalizer::dim))
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    fn value_raw(&self, x: &[f64]) -> f64 {
        expansion(&self.kernel, &self.support_vectors, &self.dual_coef, self.bias, x)
    }
}

/// Dual in 2M variables: `α_i` (sign +1, linear term ε − y_i) followed by
/// `α_i*` (sign −1, linear term ε + y_i).
pub fn train_svr(
    set: &TrainingSet<f64>,
    c: f64,
    epsilon: f64,
    kernel: &KernelSpec,
    opts: &SolverOptions,
) -> Result<SvrModel> {
    check_c(c)?;
    kernel.validate()?;
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if set.len() < 2 {
        return Err(Error::invalid("regression needs at least 2 examples"));
    }
    if let Some(y) = set.targets.iter().find(|y| !y.is_finite()) {
        return Err(Error::invalid(format!("non-finite regression target {y}")));
    }
    let order = canonical_order(set, |a, b| a.total_cmp(b));
    let m = order.len();
    let points: Vec<&[f64]> = order.iter().map(|&i| set.vectors[i].as_slice()).collect();
    let gram = KernelMatrix::compute(kernel, &points);
    let y: Vec<f64> = order.iter().map(|&i| set.targets[i]).collect();
    let problem = DualProblem {
        kernel: &gram,
        point: (0..2 * m).map(|t| t % m).collect(),
        sign: (0..2 * m).map(|t| if t < m { 1.0 } else { -1.0 }).collect(),
        linear: (0..2 * m)
            .map(|t| if t < m { epsilon - y[t] } else { epsilon + y[t - m] })
            .collect(),
        c,
    };
    let solution = smo::solve(&problem, opts)?;
    let residuals = solution.kkt_residuals(&problem);

    // score of α_t is y_t − ε − f_nb(x_t), so y_t − f(x_t) = score + ε − b.
    let margin_violations = (0..m)
        .filter(|&t| {
            let err = -solution.gradient[t] + epsilon - solution.bias;
            err.abs() > epsilon + 1e-12
        })
        .count();

    let mut support: Vec<(usize, f64, Vec<f64>)> = order
        .iter()
        .enumerate()
        .map(|(t, &orig)| (orig, solution.alpha[t] - solution.alpha[t + m]))
        .filter(|(_, beta)| *beta != 0.0)
        .map(|(orig, beta)| (orig, beta, set.vectors[orig].0.clone()))
        .collect();
    support.sort_by_key(|s| s.0);

    Ok(SvrModel {
        kernel: *kernel,
        c,
        epsilon,
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

pub fn predict_svr(model: &SvrModel, x: &FeatureVector) -> Result<f64> {
    let dim = model.dim().unwrap_or(x.dim());
    let input = prepare_input(model.normalizer.as_ref(), dim, x)?;
    Ok(model.value_raw(&input))
}

/// KKT violation per training example from the model's regression function,
/// with `α = max(β, 0)` and `α* = max(−β, 0)`.
pub fn svr_kkt_residuals(model: &SvrModel, set: &TrainingSet<f64>) -> Result<Vec<f64>> {
    let mut beta = vec![0.0; set.len()];
    for (&i, &b) in model.support_indices.iter().zip(&model.dual_coef) {
        *beta
            .get_mut(i)
            .ok_or_else(|| Error::invalid("model was not trained on this set"))? = b;
    }
    let eps = model.epsilon;
    let c = model.c;
    let side = |a: f64, excess: f64| -> f64 {
        // excess = signed error − ε on the side this multiplier controls.
        if a <= 0.0 {
            excess.max(0.0)
        } else if a >= c {
            (-excess).max(0.0)
        } else {
            excess.abs()
        }
    };
    Ok(set
        .vectors
        .iter()
        .zip(&set.targets)
        .zip(&beta)
        .map(|((x, &y), &b)| {
            let err = y - model.value_raw(x.as_slice());
            side(b.max(0.0), err - eps).max(side((-b).max(0.0), -err - eps))
        })
        .collect())
}
