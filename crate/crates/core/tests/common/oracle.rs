//! Dense QP oracle for the SVM duals.
//!
//! Minimizes `½ zᵀQz + pᵀz` subject to `sᵀz = 0`, `0 ≤ z ≤ C` by
//! accelerated projected gradient with restarts. Projection onto the feasible
//! set is exact: the equality multiplier is found between the breakpoints of
//! the clipped map.

pub struct Qp {
    pub q: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub c: f64,
}

impl Qp {
    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = z.len();
        let mut f = 0.0;
        for i in 0..n {
            let qz: f64 = (0..n).map(|j| self.q[i][j] * z[j]).sum();
            f += 0.5 * z[i] * qz + self.p[i] * z[i];
        }
        f
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |lambda: f64| -> Vec<f64> {
            v.iter()
                .zip(&self.s)
                .map(|(vi, si)| (vi - lambda * si).clamp(0.0, self.c))
                .collect()
        };
        let residual = |lambda: f64| at(lambda).iter().zip(&self.s).map(|(a, b)| a * b).sum::<f64>();
        // residual is piecewise linear and non-increasing in λ, with kinks
        // where a coordinate hits a bound
        let mut kinks: Vec<f64> = v
            .iter()
            .zip(&self.s)
            .flat_map(|(vi, si)| [vi / si, (vi - self.c) / si])
            .collect();
        kinks.sort_by(f64::total_cmp);
        let values: Vec<f64> = kinks.iter().map(|&k| residual(k)).collect();
        if values[0] <= 0.0 {
            return at(kinks[0]);
        }
        for w in 0..kinks.len() - 1 {
            let (r0, r1) = (values[w], values[w + 1]);
            if r0 >= 0.0 && r1 <= 0.0 {
                if r0 == r1 {
                    return at(kinks[w]);
                }
                let lambda = kinks[w] + (kinks[w + 1] - kinks[w]) * r0 / (r0 - r1);
                return at(lambda);
            }
        }
        at(*kinks.last().unwrap())
    }

    pub fn solve(&self) -> f64 {
        let n = self.p.len();
        let lipschitz = (0..n)
            .map(|i| self.q[i].iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            .max(1e-12);
        let step = 1.0 / lipschitz;
        let mut z = vec![0.0; n];
        let mut y = z.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let grad: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| self.q[i][j] * y[j]).sum::<f64>() + self.p[i])
                .collect();
            let v: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - step * gi).collect();
            let next = self.project(&v);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            let moved = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < 1e-13 {
                z = next;
                break;
            }
            // restart when the objective goes up; a plain step that cannot
            // decrease it means z is optimal to round-off
            if self.objective(&next) > self.objective(&z) {
                if t == 1.0 {
                    break;
                }
                t = 1.0;
                y = z.clone();
                continue;
            }
            y = next.iter().zip(&z).map(|(a, b)| a + momentum * (a - b)).collect();
            z = next;
            t = t_next;
        }
        self.objective(&z)
    }
}

/// Binary dual: `Q = yᵢyⱼK`, `p = -1`.
pub fn binary_dual(k: &[Vec<f64>], y: &[i64], c: f64) -> Qp {
    let s: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    let n = s.len();
    Qp {
        q: (0..n).map(|i| (0..n).map(|j| s[i] * s[j] * k[i][j]).collect()).collect(),
        p: vec![-1.0; n],
        s,
        c,
    }
}

/// ε-regression dual over `(α, α*)`.
pub fn regression_dual(k: &[Vec<f64>], y: &[f64], c: f64, epsilon: f64) -> Qp {
    let n = y.len();
    let s: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    Qp {
        q: (0..2 * n)
            .map(|i| (0..2 * n).map(|j| s[i] * s[j] * k[i % n][j % n]).collect())
            .collect(),
        p: (0..2 * n)
            .map(|i| if i < n { epsilon - y[i] } else { epsilon + y[i - n] })
            .collect(),
        s,
        c,
    }
}
