use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `u·v`
    Linear,
    /// `exp(-γ‖u − v‖²)`
    Rbf { gamma: f64 },
    /// `(u·v + coef0)^degree`
    Polynomial { degree: u32, coef0: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => Err(Error::invalid(format!(
                "rbf gamma must be positive, got {gamma}"
            ))),
            // coef0 < 0 can break positive semi-definiteness.
            KernelSpec::Polynomial { degree, coef0 } if degree >= 1 && coef0 >= 0.0 && coef0.is_finite() => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => Err(Error::invalid(format!(
                "polynomial kernel needs degree >= 1 and coef0 >= 0, got {degree}, {coef0}"
            ))),
        }
    }

    /// RBF width, if any. Used to order grid cells.
    pub fn gamma(&self) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => gamma,
            _ => 0.0,
        }
    }

    pub(crate) fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(u, v),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Polynomial { degree, coef0 } => (dot(u, v) + coef0).powi(degree as i32),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Rbf { gamma } => format!("rbf(gamma={gamma})"),
            KernelSpec::Polynomial { degree, coef0 } => format!("poly(degree={degree},coef0={coef0})"),
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn kernel_eval(kernel: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    kernel.validate()?;
    Ok(kernel.eval(u, v))
}

/// Dense Gram matrix of a training set. Built single-threaded; callers
/// parallelize across independent problems instead.
#[derive(Debug, Clone)]
pub(crate) struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub(crate) fn compute(kernel: &KernelSpec, points: &[&[f64]]) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(points[i], points[j]);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        KernelMatrix { n, data }
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}
