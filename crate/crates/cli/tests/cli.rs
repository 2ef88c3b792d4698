use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tackcoat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tackcoat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

/// simulate, features and train in `out` under `config`.
fn run_through_train(dir: &Path, config: &str, out: &str) {
    for stage in ["simulate", "features", "train"] {
        let o = tackcoat(dir, &["--config", config, "--out", out, stage]);
        assert_eq!(code(&o), 0, "{stage} failed: {}", stderr(&o));
    }
}

fn sub_model_count(model: &Path) -> usize {
    let text = fs::read_to_string(model).unwrap();
    // Binary models have one "dual_coef" array; multiclass ones one per pair.
    text.matches("\"dual_coef\"").count()
}

#[test]
fn simulate_numerical_study_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = tackcoat(dir.path(), &["--out", "run", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("traces: 4221"));
    assert!(stdout(&o).contains("seed: 0"));
    let table = fs::read_to_string(dir.path().join("run/traces.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4221);
    assert!(dir.path().join("run/truth_quantity.csv").exists());
}

#[test]
fn simulate_vendee_profiles_into_new_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.cfg", "preset = vendee\n");
    let o = tackcoat(dir.path(), &["--config", &cfg, "--out", "a/b/c", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("a/b/c/traces.csv")).unwrap();
    let mut per_offset = std::collections::BTreeMap::new();
    for line in table.lines().skip(1) {
        let y = line.split(',').nth(1).unwrap().to_string();
        *per_offset.entry(y).or_insert(0usize) += 1;
    }
    // Longitudinal profiles carry almost every trace; the rest are transverse.
    let mut busiest: Vec<(usize, String)> = per_offset.into_iter().map(|(y, n)| (n, y)).collect();
    busiest.sort_by(|a, b| b.cmp(a));
    let offsets: BTreeSet<String> = busiest.iter().take(3).map(|(_, y)| y.clone()).collect();
    assert_eq!(offsets, ["1.2", "2.5", "3.8"].iter().map(|s| s.to_string()).collect());
}

#[test]
fn ingest_checks_rows_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.cfg", "preset = vendee\n");
    let o = tackcoat(dir.path(), &["--config", &cfg, "--out", "sim", "simulate"]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(dir.path().join("sim/traces.csv")).unwrap();
    let lines: Vec<&str> = table.lines().take(11).collect();
    let meta = dir.path().join("sim/traces.meta");

    // Ten labeled traces.
    fs::write(dir.path().join("ten.csv"), lines.join("\n") + "\n").unwrap();
    let o = tackcoat(dir.path(), &["--out", "ten", "ingest", "ten.csv", meta.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("traces: 10"));
    assert!(stdout(&o).contains("labeled: true"));

    // Row 4 loses its last sample.
    let mut ragged: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    let cut = ragged[4].rfind(',').unwrap();
    ragged[4].truncate(cut);
    fs::write(dir.path().join("ragged.csv"), ragged.join("\n") + "\n").unwrap();
    let o = tackcoat(dir.path(), &["--out", "ragged", "ingest", "ragged.csv", meta.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));

    // Without the quantity column: prediction-only, and training refuses it.
    let unlabeled: Vec<String> = lines
        .iter()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            [&cells[..2], &cells[3..]].concat().join(",")
        })
        .collect();
    fs::write(dir.path().join("unlabeled.csv"), unlabeled.join("\n") + "\n").unwrap();
    let o = tackcoat(dir.path(), &["--out", "unl", "ingest", "unlabeled.csv", meta.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("labeled: false"));
    let o = tackcoat(dir.path(), &["--config", &cfg, "--out", "unl", "features"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tackcoat(dir.path(), &["--config", &cfg, "--out", "unl", "train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("label"), "{}", stderr(&o));

    // Missing dt in the metadata.
    fs::write(dir.path().join("nodt.meta"), "samples = 2048\n").unwrap();
    let o = tackcoat(dir.path(), &["--out", "nodt", "ingest", "ten.csv", "nodt.meta"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dt"), "{}", stderr(&o));
}

#[test]
fn carousel_stages_match_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "preset = carousel\ntask = tcsvm\n");
    let o = tackcoat(dir.path(), &["--out", "whole", "reproduce", "carousel"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("result = PASS"));

    run_through_train(dir.path(), &cfg, "stages");
    assert_eq!(sub_model_count(&dir.path().join("stages/model.json")), 1);
    assert!(dir.path().join("stages/search_log.csv").exists());
    for stage in ["predict", "map"] {
        let o = tackcoat(dir.path(), &["--out", "stages", stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let o = tackcoat(dir.path(), &["--config", &cfg, "--out", "stages", "evaluate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("confusion matrix"));
    assert!(report.contains("absent (-1)") && report.contains("present (1)"));

    for file in ["metrics.txt", "predictions.csv", "report.txt", "map.csv"] {
        let a = fs::read(dir.path().join("whole/tcsvm").join(file)).unwrap();
        let b = fs::read(dir.path().join("stages").join(file)).unwrap();
        assert!(a == b, "{file} differs between reproduce and individual stages");
    }

    // Two classes on the map: two gray levels plus no-data between profiles.
    let pgm = fs::read(dir.path().join("stages/map.pgm")).unwrap();
    let header_end = pgm.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(2).unwrap().0;
    let levels: BTreeSet<u8> = pgm[header_end + 1..].iter().copied().collect();
    assert_eq!(levels, BTreeSet::from([0, 128, 255]));

    // Leakage guard.
    let all = write_config(dir.path(), "all.cfg", "preset = carousel\ntask = tcsvm\neval.subset = all\n");
    let o = tackcoat(dir.path(), &["--config", &all, "--out", "stages", "evaluate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("allow-train-eval"), "{}", stderr(&o));
    let o = tackcoat(dir.path(), &["--config", &all, "--out", "stages", "--allow-train-eval", "evaluate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // Features with a different dimension than the model.
    let narrow = write_config(
        dir.path(),
        "narrow.cfg",
        "preset = carousel\ntask = tcsvm\nfeatures.include = window_energy, peak_time\n",
    );
    let o = tackcoat(dir.path(), &["--config", &narrow, "--out", "narrow", "features", "--dataset", "stages/manifest.txt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tackcoat(
        dir.path(),
        &["--out", "narrow", "predict", "--model", "stages/model.json", "--features", "narrow/features.csv"],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("expected 40") && err.contains("got 9"), "{err}");
}

#[test]
fn vendee_multiclass_and_regression() {
    let dir = tempfile::tempdir().unwrap();
    let mc = write_config(dir.path(), "mc.cfg", "preset = vendee\ntask = mcsvm\n");
    run_through_train(dir.path(), &mc, "mc");
    assert_eq!(sub_model_count(&dir.path().join("mc/model.json")), 3);

    let svr = write_config(dir.path(), "svr.cfg", "preset = vendee\ntask = svr\n");
    let o = tackcoat(dir.path(), &["--config", &svr, "--out", "svr", "train", "--features", "mc/features.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tackcoat(
        dir.path(),
        &["--out", "svr", "predict", "--model", "svr/model.json", "--features", "mc/features.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tackcoat(dir.path(), &["--config", &svr, "--out", "svr", "evaluate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rmse: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("rmse (g/m2):"))
        .expect("report has an RMSE line")
        .trim()
        .parse()
        .unwrap();
    assert!(rmse <= 43.0, "rmse {rmse}");
    let preds = fs::read_to_string(dir.path().join("svr/predictions.csv")).unwrap();
    let estimates: Vec<f64> = preds.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((200.0..500.0).contains(&mean), "mean estimate {mean} g/m2");
}

#[test]
fn config_errors_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "preset = carousel\nsvm.colour = blue\n");
    let o = tackcoat(dir.path(), &["--config", &bad, "--out", "x", "simulate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("svm.colour"), "{}", stderr(&o));

    let o = tackcoat(dir.path(), &["--out", "x", "reproduce", "moon-landing"]);
    assert_eq!(code(&o), 1);

    let mismatch = write_config(dir.path(), "m.cfg", "preset = carousel\ntask = mcsvm\nscene.scheme = binary\n");
    let o = tackcoat(dir.path(), &["--config", &mismatch, "--out", "x", "simulate"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let o = tackcoat(dir.path(), &["--out", "x", "simulate", "--frobnicate"]);
    assert_eq!(code(&o), 1);

    let o = tackcoat(dir.path(), &["--out", "missing", "predict"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
