use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tackcoat::features::FeatureVector;
use tackcoat::svm::{
    grid_search_cv, kernel_eval, kkt_residuals, predict_binary, predict_multiclass, predict_svr, svr_kkt_residuals,
    train_binary, train_multiclass, train_svr, BinarySvmModel, KernelSpec, Metric, MultiClassModel, ParamGrid,
    SearchTarget, SolverOptions, SvrModel, TrainingSet,
};

fn points(n: usize, dim: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| FeatureVector((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()))
        .collect()
}

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Linear),
        (0.05f64..3.0).prop_map(|gamma| KernelSpec::Rbf { gamma }),
        (1u32..4, 0.0f64..2.0).prop_map(|(degree, coef0)| KernelSpec::Polynomial { degree, coef0 }),
    ]
}

fn binary_set(n: usize, seed: u64) -> TrainingSet<i64> {
    let x = points(n, 3, seed);
    let mut y: Vec<i64> = x
        .iter()
        .map(|v| if v.0[0] + 0.5 * v.0[1] * v.0[2] > 0.0 { 1 } else { -1 })
        .collect();
    // Some label noise, and both classes always present.
    y[0] = 1;
    y[1] = -1;
    if n > 6 {
        y[2] = -y[2];
    }
    TrainingSet::new(x, y).unwrap()
}

fn regression_set(n: usize, seed: u64) -> TrainingSet<f64> {
    let x = points(n, 2, seed);
    let y = x.iter().map(|v| (2.0 * v.0[0]).sin() + 0.3 * v.0[1]).collect();
    TrainingSet::new(x, y).unwrap()
}

/// Three Gaussian clusters, σ = 0.1, centers 1.0 apart.
fn clusters(per_class: usize, seed: u64) -> TrainingSet<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let centers = [(0, [0.0, 0.0]), (1, [1.0, 0.0]), (2, [0.5, 0.866])];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (label, c) in centers {
        for _ in 0..per_class {
            x.push(FeatureVector(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]));
            y.push(label);
        }
    }
    TrainingSet::new(x, y).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn assert_binary_feasible(model: &BinarySvmModel, set: &TrainingSet<i64>, tol: f64) {
    for &a in &model.dual_coef {
        assert!(a != 0.0, "zero coefficient stored");
        assert!(a.abs() <= model.c * (1.0 + 1e-12), "|coef| {a} > C {}", model.c);
    }
    let sum: f64 = model.dual_coef.iter().sum();
    assert!(sum.abs() <= 1e-8, "sum of coefficients {sum}");
    let residuals = kkt_residuals(model, set).unwrap();
    assert!(residuals.iter().all(|&r| r <= tol), "max KKT residual {:?}", residuals.iter().cloned().fold(0.0, f64::max));
}

fn assert_svr_feasible(model: &SvrModel, set: &TrainingSet<f64>, tol: f64) {
    for &a in &model.dual_coef {
        assert!(a.abs() <= model.c * (1.0 + 1e-12), "|coef| {a} > C {}", model.c);
    }
    let sum: f64 = model.dual_coef.iter().sum();
    assert!(sum.abs() <= 1e-8, "sum of coefficients {sum}");
    let residuals = svr_kkt_residuals(model, set).unwrap();
    assert!(residuals.iter().all(|&r| r <= tol));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_training_is_feasible(
        n in 4usize..40,
        seed in any::<u64>(),
        kernel in kernel_strategy(),
        c in 0.05f64..50.0,
        tol in prop_oneof![Just(1e-3), Just(1e-6)],
    ) {
        let set = binary_set(n, seed);
        let model = train_binary(&set, c, &kernel, &SolverOptions::with_tol(tol)).unwrap();
        assert_binary_feasible(&model, &set, tol);
    }

    #[test]
    fn regression_training_is_feasible(
        n in 2usize..40,
        seed in any::<u64>(),
        kernel in kernel_strategy(),
        c in 0.05f64..50.0,
        epsilon in 0.0f64..0.5,
        tol in prop_oneof![Just(1e-3), Just(1e-6)],
    ) {
        let set = regression_set(n, seed);
        let model = train_svr(&set, c, epsilon, &kernel, &SolverOptions::with_tol(tol)).unwrap();
        assert_svr_feasible(&model, &set, tol);
    }

    #[test]
    fn kernels_are_symmetric_and_psd(
        n in 2usize..16,
        dim in 1usize..5,
        seed in any::<u64>(),
        kernel in kernel_strategy(),
    ) {
        let x = points(n, dim, seed);
        let k: Vec<Vec<f64>> = x
            .iter()
            .map(|a| x.iter().map(|b| kernel_eval(&kernel, a.as_slice(), b.as_slice()).unwrap()).collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(k[i][j], k[j][i]);
            }
        }
        let scale = k.iter().map(|row| row.iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(1.0f64, f64::max);
        let min = symmetric_eigenvalues(k).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-9 * scale * n as f64, "smallest eigenvalue {}", min);
    }

    #[test]
    fn training_order_does_not_matter(n in 6usize..30, seed in any::<u64>(), kernel in kernel_strategy()) {
        let set = binary_set(n, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left((seed % n as u64) as usize);
        let shuffled = set.subset(&perm);
        let opts = SolverOptions::default();
        let a = train_binary(&set, 2.0, &kernel, &opts).unwrap();
        let b = train_binary(&shuffled, 2.0, &kernel, &opts).unwrap();
        for x in points(20, 3, seed ^ 1) {
            let (la, da) = predict_binary(&a, &x).unwrap();
            let (lb, db) = predict_binary(&b, &x).unwrap();
            prop_assert!((da - db).abs() <= 1e-6, "{} vs {}", da, db);
            prop_assert_eq!(la, lb);
        }

        let reg = regression_set(n, seed);
        let reg_shuffled = reg.subset(&perm);
        let a = train_svr(&reg, 2.0, 0.1, &kernel, &opts).unwrap();
        let b = train_svr(&reg_shuffled, 2.0, 0.1, &kernel, &opts).unwrap();
        for x in points(20, 2, seed ^ 2) {
            let (fa, fb) = (predict_svr(&a, &x).unwrap(), predict_svr(&b, &x).unwrap());
            prop_assert!((fa - fb).abs() <= 1e-6, "{} vs {}", fa, fb);
        }
    }

    #[test]
    fn rbf_is_invariant_to_feature_scaling(n in 6usize..30, seed in any::<u64>(), s in 0.1f64..10.0) {
        let set = binary_set(n, seed);
        let scaled = TrainingSet::new(
            set.vectors.iter().map(|v| FeatureVector(v.0.iter().map(|x| x * s).collect())).collect(),
            set.targets.clone(),
        )
        .unwrap();
        let opts = SolverOptions::with_tol(1e-9);
        let a = train_binary(&set, 1.0, &KernelSpec::Rbf { gamma: 0.7 }, &opts).unwrap();
        let b = train_binary(&scaled, 1.0, &KernelSpec::Rbf { gamma: 0.7 / (s * s) }, &opts).unwrap();
        for x in points(20, 3, seed ^ 3) {
            let xs = FeatureVector(x.0.iter().map(|v| v * s).collect());
            let da = a.decision_value(&x).unwrap();
            let db = b.decision_value(&xs).unwrap();
            prop_assert!((da - db).abs() <= 1e-6, "{} vs {}", da, db);
        }
    }
}

#[test]
fn models_survive_json_round_trip() {
    let opts = SolverOptions::default();
    let probe = points(100, 3, 99);

    let binary = train_binary(&binary_set(40, 5), 3.0, &KernelSpec::Rbf { gamma: 0.37 }, &opts).unwrap();
    let back: BinarySvmModel = serde_json::from_str(&serde_json::to_string(&binary).unwrap()).unwrap();
    assert_eq!(back, binary);
    for x in &probe {
        let (a, b) = (binary.decision_value(x).unwrap(), back.decision_value(x).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    let set = clusters(15, 6);
    let multi = train_multiclass(&set, 1.0, &KernelSpec::Rbf { gamma: 1.3 }, &opts).unwrap();
    let back: MultiClassModel = serde_json::from_str(&serde_json::to_string(&multi).unwrap()).unwrap();
    assert_eq!(back, multi);
    for x in points(100, 2, 98) {
        let (a, b) = (predict_multiclass(&multi, &x).unwrap(), predict_multiclass(&back, &x).unwrap());
        assert_eq!(a.label, b.label);
        for (p, q) in a.contests.iter().zip(&b.contests) {
            assert_eq!(p.decision.to_bits(), q.decision.to_bits());
        }
    }

    let svr = train_svr(&regression_set(40, 7), 5.0, 0.05, &KernelSpec::Rbf { gamma: 0.9 }, &opts).unwrap();
    let back: SvrModel = serde_json::from_str(&serde_json::to_string(&svr).unwrap()).unwrap();
    assert_eq!(back, svr);
    for x in points(100, 2, 97) {
        assert_eq!(predict_svr(&svr, &x).unwrap().to_bits(), predict_svr(&back, &x).unwrap().to_bits());
    }
}

#[test]
fn separated_clusters_are_learned_exactly() {
    let set = clusters(30, 1);
    let model = train_multiclass(&set, 10.0, &KernelSpec::Rbf { gamma: 2.0 }, &SolverOptions::default()).unwrap();
    assert_eq!(model.pairs.len(), 3);
    for (x, &y) in set.vectors.iter().zip(&set.targets) {
        let p = predict_multiclass(&model, x).unwrap();
        assert_eq!(p.label, y);
        assert_eq!(p.votes.iter().map(|v| v.1).sum::<usize>(), 3);
        for class in &model.classes {
            let n = p.contests.iter().filter(|c| c.negative == *class || c.positive == *class).count();
            assert_eq!(n, 2);
        }
    }
}

#[test]
fn two_class_multiclass_reduces_to_binary() {
    let base = binary_set(40, 8);
    let relabeled = TrainingSet::new(
        base.vectors.clone(),
        base.targets.iter().map(|&y| if y > 0 { 7 } else { 3 }).collect(),
    )
    .unwrap();
    let kernel = KernelSpec::Rbf { gamma: 0.5 };
    let opts = SolverOptions::default();
    let binary = train_binary(&base, 2.0, &kernel, &opts).unwrap();
    let multi = train_multiclass(&relabeled, 2.0, &kernel, &opts).unwrap();
    assert_eq!(multi.pairs.len(), 1);
    for x in points(100, 3, 123) {
        let (label, decision) = predict_binary(&binary, &x).unwrap();
        let p = predict_multiclass(&multi, &x).unwrap();
        assert_eq!(p.label, if label > 0 { 7 } else { 3 });
        assert_eq!(p.contests[0].decision.to_bits(), decision.to_bits());
        assert_eq!(p.votes.iter().map(|v| v.1).sum::<usize>(), 1);
    }
}

#[test]
fn single_cell_grid_returns_that_cell() {
    let set = binary_set(30, 2);
    let grid = ParamGrid {
        c: vec![4.0],
        kernels: vec![KernelSpec::Rbf { gamma: 0.25 }],
        epsilon: vec![],
    };
    let r = grid_search_cv(SearchTarget::Binary(&set), &grid, 3, Metric::Accuracy, 0, &SolverOptions::default())
        .unwrap();
    assert_eq!(r.best, grid.cells(false)[0]);
    assert_eq!(r.cells.len(), 1);
}

#[test]
fn search_is_deterministic_and_beats_corner_cells() {
    let set = clusters(20, 3);
    let grid = ParamGrid {
        c: vec![0.01, 1.0, 100.0],
        kernels: vec![
            KernelSpec::Rbf { gamma: 0.001 },
            KernelSpec::Rbf { gamma: 1.0 },
            KernelSpec::Rbf { gamma: 1000.0 },
        ],
        epsilon: vec![],
    };
    let opts = SolverOptions::default();
    let run = || grid_search_cv(SearchTarget::MultiClass(&set), &grid, 4, Metric::Accuracy, 17, &opts).unwrap();
    let first = run();
    let second = run();
    assert_eq!(first.folds, second.folds);
    assert_eq!(first.best, second.best);

    // Re-evaluate the four corners on the same folds, independently of the search.
    let cells = grid.cells(false);
    let corners = [cells[0], cells[2], cells[6], cells[8]];
    for corner in corners {
        let mut scores = Vec::new();
        for f in 0..4 {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| first.folds[i] == f);
            let model = train_multiclass(&set.subset(&train), corner.c, &corner.kernel, &opts).unwrap();
            let correct = valid
                .iter()
                .filter(|&&i| predict_multiclass(&model, &set.vectors[i]).unwrap().label == set.targets[i])
                .count();
            scores.push(correct as f64 / valid.len() as f64);
        }
        for s in &scores {
            assert!(first.best_score >= *s - 1e-12, "corner {} scored {s} on a fold", corner.describe());
        }
    }
    assert!(first.best_score >= 0.99);
}
