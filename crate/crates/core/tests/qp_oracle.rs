//! SMO against an independent dense QP solver on small random problems.

mod common;

use common::oracle::{binary_dual, regression_dual};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tackcoat::features::FeatureVector;
use tackcoat::svm::{
    kernel_eval, kkt_residuals, svr_kkt_residuals, train_binary, train_svr, KernelSpec, SolverOptions,
    TrainingSet,
};

const TOL: f64 = 1e-9;

fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    match rng.random_range(0..3) {
        0 => KernelSpec::Linear,
        1 => KernelSpec::Rbf {
            gamma: rng.random_range(0.1..2.0),
        },
        _ => KernelSpec::Polynomial {
            degree: 2,
            coef0: 1.0,
        },
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| FeatureVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn gram(kernel: &KernelSpec, x: &[FeatureVector]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| x.iter().map(|b| kernel_eval(kernel, a.as_slice(), b.as_slice()).unwrap()).collect())
        .collect()
}

#[test]
fn binary_dual_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions::with_tol(TOL);
    let mut checked = 0;
    while checked < 60 {
        let n = rng.random_range(2..=8);
        let x = random_points(&mut rng, n, 2);
        let y: Vec<i64> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        if y.iter().all(|&l| l == y[0]) {
            continue;
        }
        let kernel = random_kernel(&mut rng);
        let c = rng.random_range(0.1..10.0);
        let set = TrainingSet::new(x.clone(), y.clone()).unwrap();
        let model = train_binary(&set, c, &kernel, &opts).unwrap();

        let k = gram(&kernel, &x);
        let oracle = binary_dual(&k, &y, c).solve();
        let smo = model.diagnostics.dual_objective;
        assert!(
            (smo - oracle).abs() <= 1e-6,
            "case {checked}: smo {smo} vs oracle {oracle} (n {n}, C {c}, {kernel:?})"
        );
        let residuals = kkt_residuals(&model, &set).unwrap();
        assert!(residuals.iter().all(|&r| r <= TOL), "case {checked}: {residuals:?}");
        checked += 1;
    }
}

#[test]
fn regression_dual_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let opts = SolverOptions::with_tol(TOL);
    for case in 0..60 {
        let n = rng.random_range(2..=8);
        let x = random_points(&mut rng, n, 2);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kernel = random_kernel(&mut rng);
        let c = rng.random_range(0.1..10.0);
        let epsilon = rng.random_range(0.0..0.5);
        let set = TrainingSet::new(x.clone(), y.clone()).unwrap();
        let model = train_svr(&set, c, epsilon, &kernel, &opts).unwrap();

        let k = gram(&kernel, &x);
        let oracle = regression_dual(&k, &y, c, epsilon).solve();
        let smo = model.diagnostics.dual_objective;
        assert!(
            (smo - oracle).abs() <= 1e-6,
            "case {case}: smo {smo} vs oracle {oracle} (n {n}, C {c}, eps {epsilon}, {kernel:?})"
        );
        let residuals = svr_kkt_residuals(&model, &set).unwrap();
        assert!(residuals.iter().all(|&r| r <= TOL), "case {case}: {residuals:?}");
    }
}
