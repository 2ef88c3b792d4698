//! Sequential minimal optimization for box- and equality-constrained QPs.
//!
//! Solves
//!
//! ```text
//! min_α  ½ αᵀQα + pᵀα   s.t.  sᵀα = const,  0 ≤ α_t ≤ C
//! ```
//!
//! with `Q_tu = s_t s_u K(x_t, x_u)` and `s_t ∈ {−1, +1}`. Both the C-SVC dual
//! (`s = y`, `p = −1`) and the ε-SVR dual (two variables per example) take
//! this form. Each step updates the maximal-violating pair
//!
//! ```text
//! i = argmax_{t ∈ I_up}  −s_t ∇_t,   j = argmin_{t ∈ I_low} −s_t ∇_t
//! ```
//!
//! and stops once `max − min ≤ tol`.

use serde::{Deserialize, Serialize};

use super::kernel::KernelMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Cap on pair updates.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

pub(crate) struct DualProblem<'a> {
    pub kernel: &'a KernelMatrix,
    /// Kernel row of each variable.
    pub point: Vec<usize>,
    pub sign: Vec<f64>,
    pub linear: Vec<f64>,
    pub c: f64,
}

impl DualProblem<'_> {
    #[inline]
    fn q(&self, t: usize, u: usize) -> f64 {
        self.sign[t] * self.sign[u] * self.kernel.get(self.point[t], self.point[u])
    }

    fn len(&self) -> usize {
        self.sign.len()
    }

    fn in_up(&self, t: usize, alpha: f64) -> bool {
        if self.sign[t] > 0.0 {
            alpha < self.c
        } else {
            alpha > 0.0
        }
    }

    fn in_low(&self, t: usize, alpha: f64) -> bool {
        if self.sign[t] > 0.0 {
            alpha > 0.0
        } else {
            alpha < self.c
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Multiplier of the equality constraint; the bias of the decision function.
    pub bias: f64,
    pub iterations: usize,
}

impl DualSolution {
    /// `½ αᵀQα + pᵀα`.
    pub fn objective(&self, problem: &DualProblem<'_>) -> f64 {
        self.alpha
            .iter()
            .zip(&self.gradient)
            .zip(&problem.linear)
            .map(|((a, g), p)| a * (g + p))
            .sum::<f64>()
            * 0.5
    }

    /// KKT violation of every variable given the bias.
    pub fn kkt_residuals(&self, problem: &DualProblem<'_>) -> Vec<f64> {
        (0..problem.len())
            .map(|t| {
                let score = -problem.sign[t] * self.gradient[t];
                let mut r: f64 = 0.0;
                if problem.in_up(t, self.alpha[t]) {
                    r = r.max(score - self.bias);
                }
                if problem.in_low(t, self.alpha[t]) {
                    r = r.max(self.bias - score);
                }
                r
            })
            .collect()
    }
}

/// Maximal-violating pair and the current gap.
fn select_pair(problem: &DualProblem<'_>, alpha: &[f64], gradient: &[f64]) -> (usize, usize, f64) {
    let mut i = usize::MAX;
    let mut j = usize::MAX;
    let mut up_max = f64::NEG_INFINITY;
    let mut low_min = f64::INFINITY;
    for t in 0..problem.len() {
        let score = -problem.sign[t] * gradient[t];
        if problem.in_up(t, alpha[t]) && score > up_max {
            up_max = score;
            i = t;
        }
        if problem.in_low(t, alpha[t]) && score < low_min {
            low_min = score;
            j = t;
        }
    }
    (i, j, up_max - low_min)
}

pub(crate) fn solve(problem: &DualProblem<'_>, opts: &SolverOptions) -> Result<DualSolution> {
    opts.validate()?;
    let n = problem.len();
    let c = problem.c;
    let mut alpha = vec![0.0; n];
    let mut gradient = problem.linear.clone();
    let diag: Vec<f64> = (0..n).map(|t| problem.q(t, t)).collect();
    const TAU: f64 = 1e-12;

    let mut iterations = 0;
    loop {
        let (i, j, gap) = select_pair(problem, &alpha, &gradient);
        if i == usize::MAX || j == usize::MAX || gap <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                max_violation: gap,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let q_ij = problem.q(i, j);
        if problem.sign[i] != problem.sign[j] {
            let quad = (diag[i] + diag[j] + 2.0 * q_ij).max(TAU);
            let delta = (-gradient[i] - gradient[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * q_ij).max(TAU);
            let delta = (gradient[i] - gradient[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let d_i = alpha[i] - old_i;
        let d_j = alpha[j] - old_j;
        let row_i = problem.kernel.row(problem.point[i]);
        let row_j = problem.kernel.row(problem.point[j]);
        let si = problem.sign[i] * d_i;
        let sj = problem.sign[j] * d_j;
        for t in 0..n {
            let p = problem.point[t];
            gradient[t] += problem.sign[t] * (si * row_i[p] + sj * row_j[p]);
        }
    }

    let bias = compute_bias(problem, &alpha, &gradient);
    Ok(DualSolution {
        alpha,
        gradient,
        bias,
        iterations,
    })
}

/// Mean score of free variables, or the midpoint of the feasible interval.
fn compute_bias(problem: &DualProblem<'_>, alpha: &[f64], gradient: &[f64]) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut up_max = f64::NEG_INFINITY;
    let mut low_min = f64::INFINITY;
    for t in 0..problem.len() {
        let score = -problem.sign[t] * gradient[t];
        if alpha[t] > 0.0 && alpha[t] < problem.c {
            free_sum += score;
            free_count += 1;
        }
        if problem.in_up(t, alpha[t]) {
            up_max = up_max.max(score);
        }
        if problem.in_low(t, alpha[t]) {
            low_min = low_min.min(score);
        }
    }
    if free_count > 0 {
        // Free scores lie in [low_min, up_max]; clamp guards rounding.
        let mean = free_sum / free_count as f64;
        if up_max.is_finite() && low_min.is_finite() {
            mean.clamp(low_min.min(up_max), low_min.max(up_max))
        } else {
            mean
        }
    } else {
        match (up_max.is_finite(), low_min.is_finite()) {
            (true, true) => 0.5 * (up_max + low_min),
            (true, false) => up_max,
            (false, true) => low_min,
            (false, false) => 0.0,
        }
    }
}
