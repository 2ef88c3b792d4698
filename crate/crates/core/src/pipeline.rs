//! Stage runners over the on-disk formats, and the study reproductions.
//!
//! Each stage reads its inputs from files, writes its outputs into a
//! directory and returns a small summary:
//!
//! | stage | reads | writes |
//! |-------|-------|--------|
//! | [`simulate`] | config | `traces.csv`, `traces.meta`, `manifest.txt`, `truth_quantity.csv`, `truth_class.csv` |
//! | [`ingest`] | trace table + metadata | `manifest.txt` |
//! | [`extract`] | `manifest.txt` | `features.csv`, `features.meta` |
//! | [`train`] | `features.csv` | `model.json`, `search_log.csv` |
//! | [`predict`] | `model.json`, `features.csv` | `predictions.csv`, `predictions.meta` |
//! | [`evaluate`] | `predictions.csv` | `report.txt`, `metrics.txt` |
//! | [`map`] | `predictions.csv` | `map.csv`, `map.pgm`, `truth_map.csv`, `truth_map.pgm` |
//!
//! [`reproduce`] chains them for a study preset and writes `summary.txt`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SplitMode, Task};
use crate::dataset::{
    read_text, sha256_file, write_file, DatasetManifest, FeatureRow, FeatureTable, Metadata, Provenance,
    TraceTable, MANIFEST_FILE,
};
use crate::em_forward::simulate_survey;
use crate::eval::{
    assemble_map, confusion_matrix, export_map, ClassMap, EvalReport, MapFormat, MapKind,
};
use crate::features::{extract_features, fit_normalizer, FeatureConfig, FeatureVector};
use crate::grid::Grid;
use crate::scene::{build_scene, ClassScheme};
use crate::svm::{
    grid_search_cv, predict_binary, predict_multiclass, predict_svr, train_binary, train_multiclass,
    train_svr, BinarySvmModel, Hyperparameters, Metric, MultiClassModel, SearchResult, SearchTarget,
    SvrModel, TrainingSet,
};
use crate::{Error, Result};

pub const TRACES_FILE: &str = "traces.csv";
pub const TRACES_META: &str = "traces.meta";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_META: &str = "features.meta";
pub const MODEL_FILE: &str = "model.json";
pub const SEARCH_LOG: &str = "search_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PREDICTIONS_META: &str = "predictions.meta";
pub const REPORT_FILE: &str = "report.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutcome {
    pub trace_count: usize,
    pub seed: u64,
    pub manifest: PathBuf,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateOutcome> {
    stage("simulate", || {
        cfg.validate()?;
        ensure_dir(out)?;
        let scene = build_scene(&cfg.scene)?;
        let survey = simulate_survey(&scene, &cfg.pulse, &cfg.acquisition)?;
        let table = TraceTable::from_survey(&survey, &scene);
        let traces = out.join(TRACES_FILE);
        let meta = out.join(TRACES_META);
        table.write(&traces, &meta)?;
        let manifest = DatasetManifest::new(&traces, &meta, &table, Provenance::Simulated)?;
        let manifest_path = out.join(MANIFEST_FILE);
        manifest.save(&manifest_path)?;

        let quantity = ClassMap {
            kind: MapKind::Quantities,
            cells: scene.quantity().map(|q| Some(*q)),
        };
        export_map(&quantity, MapFormat::Csv, &out.join("truth_quantity.csv"))?;
        let scheme = scene.scheme();
        let classes = ClassMap {
            kind: MapKind::Classes(scheme.labels()),
            cells: scene
                .ground_truth_class()
                .map(|c| Some(c.code(scheme) as f64)),
        };
        export_map(&classes, MapFormat::Csv, &out.join("truth_class.csv"))?;
        export_map(&classes, MapFormat::Pgm, &out.join("truth_class.pgm"))?;
        Ok(SimulateOutcome {
            trace_count: table.rows.len(),
            seed: cfg.acquisition.seed,
            manifest: manifest_path,
        })
    })
}

/// Validates an external trace table and writes a manifest for it.
pub fn ingest(traces: &Path, meta: &Path, out: &Path) -> Result<DatasetManifest> {
    stage("ingest", || {
        ensure_dir(out)?;
        let absolute = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
        let traces = absolute(traces)?;
        let meta = absolute(meta)?;
        let table = TraceTable::read(&traces, &meta)?;
        let manifest = DatasetManifest::new(&traces, &meta, &table, Provenance::Ingested)?;
        manifest.save(&out.join(MANIFEST_FILE))?;
        Ok(manifest)
    })
}

/// Feature extraction for every trace of a dataset.
pub fn extract(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<PathBuf> {
    stage("features", || {
        cfg.features.validate()?;
        let manifest = DatasetManifest::load(manifest_path)?;
        let table = manifest.load_table()?;
        let rows = (0..table.rows.len())
            .into_par_iter()
            .map(|i| {
                let ascan = table.ascan(i);
                let features = extract_features(&ascan, &cfg.features).map_err(|e| {
                    Error::invalid(format!("trace {} at ({}, {}): {e}", i + 1, ascan.position.0, ascan.position.1))
                })?;
                Ok(FeatureRow {
                    x: ascan.position.0,
                    y: ascan.position.1,
                    label: ascan.truth_quantity,
                    features,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = table.meta.carry_over();
        meta.set("dimension", cfg.features.dimension());
        meta.set("columns", cfg.features.column_names().join(","));
        meta.set("source.checksum", &manifest.checksum);
        meta.set("source.provenance", manifest.provenance.name());
        meta.set(
            "features.config",
            serde_json::to_string(&cfg.features).map_err(|e| Error::invalid(e.to_string()))?,
        );
        ensure_dir(out)?;
        let path = out.join(FEATURES_FILE);
        FeatureTable { rows, meta }.write(&path, &out.join(FEATURES_META))?;
        Ok(path)
    })
}

fn meta_path_for(path: &Path, meta_name: &str) -> PathBuf {
    path.with_file_name(meta_name)
}

/// Trained model of any task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainedModel {
    Binary(BinarySvmModel),
    Multiclass(MultiClassModel),
    Regression(SvrModel),
}

impl TrainedModel {
    pub fn sub_model_count(&self) -> usize {
        match self {
            TrainedModel::Binary(_) | TrainedModel::Regression(_) => 1,
            TrainedModel::Multiclass(m) => m.pairs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub metric: Metric,
    pub folds: usize,
    pub best_score: f64,
    pub cells: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    /// SHA-256 of the feature table the model was trained from.
    pub checksum: String,
    pub rows: usize,
    /// Rows of the training split (the rest is held out).
    pub train_indices: Vec<usize>,
}

/// Everything needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub task: Task,
    pub scheme: String,
    pub class_labels: Vec<i64>,
    pub feature_config: FeatureConfig,
    pub hyperparameters: Hyperparameters,
    pub search: SearchSummary,
    pub dataset: DatasetRef,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::parse(
                    path,
                    format!("unsupported model format version {other:?} (expected {MODEL_FORMAT_VERSION})"),
                ))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn scheme(&self) -> Result<ClassScheme> {
        ClassScheme::parse(&self.scheme)
    }

    pub fn dim(&self) -> usize {
        self.feature_config.dimension()
    }

    /// Predicted label or quantity, plus named decision values.
    pub fn predict(&self, x: &FeatureVector) -> Result<(f64, Vec<f64>)> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        match &self.model {
            TrainedModel::Binary(m) => {
                let (label, d) = predict_binary(m, x)?;
                Ok((label as f64, vec![d]))
            }
            TrainedModel::Multiclass(m) => {
                let p = predict_multiclass(m, x)?;
                Ok((p.label as f64, p.contests.iter().map(|c| c.decision).collect()))
            }
            TrainedModel::Regression(m) => Ok((predict_svr(m, x)?, vec![])),
        }
    }

    pub fn decision_columns(&self) -> Vec<String> {
        match &self.model {
            TrainedModel::Binary(_) => vec!["decision".into()],
            TrainedModel::Multiclass(m) => m
                .pairs
                .iter()
                .map(|p| format!("decision_{}_{}", p.negative, p.positive))
                .collect(),
            TrainedModel::Regression(_) => vec![],
        }
    }
}

/// Train/test split of `labels` (one class code per row).
pub fn split_indices(
    labels: &[i64],
    xs: &[f64],
    spec: &crate::config::SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = labels.len();
    let mut is_train = vec![false; n];
    match spec.mode {
        SplitMode::Random => {
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_class.entry(l).or_default().push(i);
            }
            for (label, members) in by_class.iter_mut() {
                let n_train = (spec.train_fraction * members.len() as f64).round() as usize;
                if n_train == 0 || n_train == members.len() {
                    return Err(Error::invalid(format!(
                        "degenerate split: class {label} has {} traces, cannot put some on both sides",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                for &i in &members[..n_train] {
                    is_train[i] = true;
                }
            }
        }
        SplitMode::SpatialBlock { block_length } => {
            let block = |x: f64| (x / block_length).floor() as i64;
            let mut blocks: Vec<i64> = xs.iter().map(|&x| block(x)).collect();
            blocks.sort_unstable();
            blocks.dedup();
            blocks.shuffle(&mut rng);
            let target_test = ((1.0 - spec.train_fraction) * n as f64).round() as usize;
            let mut test_blocks = HashSet::new();
            let mut test_count = 0;
            for b in blocks {
                if test_count >= target_test {
                    break;
                }
                test_count += xs.iter().filter(|&&x| block(x) == b).count();
                test_blocks.insert(b);
            }
            for (i, &x) in xs.iter().enumerate() {
                is_train[i] = !test_blocks.contains(&block(x));
            }
            let classes: HashSet<i64> = labels.iter().copied().collect();
            let train_classes: HashSet<i64> = (0..n).filter(|&i| is_train[i]).map(|i| labels[i]).collect();
            if train_classes != classes || test_count == 0 || test_count == n {
                return Err(Error::invalid(
                    "degenerate split: spatial blocks leave a class out of training or an empty side",
                ));
            }
        }
    }
    let train = (0..n).filter(|&i| is_train[i]).collect();
    let test = (0..n).filter(|&i| !is_train[i]).collect();
    Ok((train, test))
}

/// Class-proportional subsample of `indices` of at most `max` rows
/// (`max = 0` keeps all), returned in ascending order.
pub fn stratified_subsample(indices: &[usize], labels: &[i64], max: usize, seed: u64) -> Vec<usize> {
    if max == 0 || indices.len() <= max {
        return indices.to_vec();
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let n = indices.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(max);
    for members in by_class.values_mut() {
        let quota = ((max * members.len() + n / 2) / n).clamp(1, members.len());
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..quota]);
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub search: SearchResult,
    pub train_rows: usize,
    pub held_out_rows: usize,
}

/// Split, normalize, grid search and final fit.
pub fn train(cfg: &RunConfig, features_path: &Path, out: &Path) -> Result<TrainOutcome> {
    stage("train", || {
        cfg.validate()?;
        let table = FeatureTable::read(features_path, &meta_path_for(features_path, FEATURES_META))?;
        if !table.labeled() {
            return Err(Error::invalid(
                "dataset is prediction-only (no truth labels); it cannot be used for training",
            ));
        }
        let dim = cfg.features.dimension();
        if table.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: table.dim(),
            });
        }
        let scheme = &cfg.scene.scheme;
        cfg.task.check_scheme(scheme)?;
        let quantities: Vec<f64> = table.rows.iter().map(|r| r.label.unwrap_or(0.0)).collect();
        let labels: Vec<i64> = quantities
            .iter()
            .map(|&q| scheme.label_of(q))
            .collect::<Result<_>>()?;
        let xs: Vec<f64> = table.rows.iter().map(|r| r.x).collect();
        let (train_idx, test_idx) = split_indices(&labels, &xs, &cfg.split)?;
        if cfg.task != Task::Svr {
            let present: HashSet<i64> = train_idx.iter().map(|&i| labels[i]).collect();
            if present.len() < 2 {
                return Err(Error::invalid(format!(
                    "training split holds a single class; task {} needs at least 2",
                    cfg.task.name()
                )));
            }
        }

        let train_vectors: Vec<FeatureVector> = train_idx.iter().map(|&i| table.rows[i].features.clone()).collect();
        let normalizer = fit_normalizer(&train_vectors)?;
        let normalized: Vec<FeatureVector> = table
            .rows
            .iter()
            .map(|r| normalizer.apply(&r.features))
            .collect::<Result<_>>()?;

        let fit_idx = stratified_subsample(&train_idx, &labels, cfg.train_max_samples, cfg.split.seed ^ 0x5eed);
        let cv_idx = stratified_subsample(&fit_idx, &labels, cfg.search.max_samples, cfg.search.seed ^ 0xc0de);
        let class_set = |idx: &[usize]| TrainingSet::new(
            idx.iter().map(|&i| normalized[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        );
        let quantity_set = |idx: &[usize]| TrainingSet::new(
            idx.iter().map(|&i| normalized[i].clone()).collect(),
            idx.iter().map(|&i| quantities[i]).collect(),
        );
        let grid = cfg.search.param_grid(dim);
        let metric = cfg.metric();
        let search = match cfg.task {
            Task::Tcsvm => grid_search_cv(SearchTarget::Binary(&class_set(&cv_idx)?), &grid, cfg.search.folds, metric, cfg.search.seed, &cfg.solver)?,
            Task::Mcsvm => grid_search_cv(SearchTarget::MultiClass(&class_set(&cv_idx)?), &grid, cfg.search.folds, metric, cfg.search.seed, &cfg.solver)?,
            Task::Svr => grid_search_cv(SearchTarget::Regression(&quantity_set(&cv_idx)?), &grid, cfg.search.folds, metric, cfg.search.seed, &cfg.solver)?,
        };
        let best = search.best;
        log::info!(
            "{}: best {} with cv {} = {}",
            cfg.task.name(),
            best.describe(),
            metric.name(),
            search.best_score
        );
        let model = match cfg.task {
            Task::Tcsvm => TrainedModel::Binary(
                train_binary(&class_set(&fit_idx)?, best.c, &best.kernel, &cfg.solver)?.with_normalizer(normalizer),
            ),
            Task::Mcsvm => TrainedModel::Multiclass(
                train_multiclass(&class_set(&fit_idx)?, best.c, &best.kernel, &cfg.solver)?.with_normalizer(normalizer),
            ),
            Task::Svr => TrainedModel::Regression(
                train_svr(
                    &quantity_set(&fit_idx)?,
                    best.c,
                    best.epsilon.unwrap_or(0.0),
                    &best.kernel,
                    &cfg.solver,
                )?
                .with_normalizer(normalizer),
            ),
        };
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            task: cfg.task,
            scheme: scheme.to_config_string(),
            class_labels: scheme.labels(),
            feature_config: cfg.features.clone(),
            hyperparameters: best,
            search: SearchSummary {
                metric,
                folds: cfg.search.folds,
                best_score: search.best_score,
                cells: search.cells.len(),
                samples: cv_idx.len(),
            },
            dataset: DatasetRef {
                checksum: sha256_file(features_path)?,
                rows: table.rows.len(),
                train_indices: train_idx.clone(),
            },
            model,
        };
        ensure_dir(out)?;
        let model_path = out.join(MODEL_FILE);
        file.save(&model_path)?;
        write_file(&out.join(SEARCH_LOG), search_log(&search).as_bytes())?;
        Ok(TrainOutcome {
            model_path,
            search,
            train_rows: train_idx.len(),
            held_out_rows: test_idx.len(),
        })
    })
}

fn search_log(search: &SearchResult) -> String {
    let mut out = String::from("c,kernel,gamma,epsilon,mean_score,fold_scores,error\n");
    for cell in &search.cells {
        let kernel = match cell.params.kernel {
            crate::svm::KernelSpec::Linear => "linear",
            crate::svm::KernelSpec::Rbf { .. } => "rbf",
            crate::svm::KernelSpec::Polynomial { .. } => "polynomial",
        };
        let folds: Vec<String> = cell.fold_scores.iter().map(f64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell.params.c,
            kernel,
            cell.params.kernel.gamma(),
            cell.params.epsilon.map_or_else(String::new, |e| e.to_string()),
            cell.mean.map_or_else(String::new, |m| m.to_string()),
            folds.join(";"),
            cell.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub x: f64,
    pub y: f64,
    /// Class code, or quantity for regression; `None` when unlabeled.
    pub truth: Option<f64>,
    pub predicted: f64,
    pub held_out: bool,
    pub decisions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub task: Task,
    pub class_labels: Vec<i64>,
    pub decision_columns: Vec<String>,
    pub rows: Vec<PredictionRow>,
    pub meta: Metadata,
}

impl Predictions {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,truth,predicted,held_out");
        for c in &self.decision_columns {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.x,
                r.y,
                r.truth.map_or_else(String::new, |t| t.to_string()),
                r.predicted,
                u8::from(r.held_out)
            );
            for d in &r.decisions {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path_for(path, PREDICTIONS_META);
        let meta = Metadata::load(&meta_path)?;
        let task = Task::parse(meta.get("task").ok_or_else(|| Error::parse(&meta_path, "no task"))?)?;
        let class_labels = match meta.get("class_labels") {
            None | Some("") => vec![],
            Some(v) => v
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::parse(&meta_path, format!("bad class label '{s}'"))))
                .collect::<Result<_>>()?,
        };
        let text = read_text(path)?;
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::parse(path, "empty predictions"))?.split(',').collect();
        if header.len() < 5 || header[..5] != ["x", "y", "truth", "predicted", "held_out"] {
            return Err(Error::parse(path, "header must start with x,y,truth,predicted,held_out"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::parse(path, format!("ragged row {}", i + 1)));
            }
            let num = |c: &str| -> Result<f64> {
                c.parse().map_err(|_| Error::parse(path, format!("row {}: '{c}' is not a number", i + 1)))
            };
            rows.push(PredictionRow {
                x: num(cells[0])?,
                y: num(cells[1])?,
                truth: if cells[2].is_empty() { None } else { Some(num(cells[2])?) },
                predicted: num(cells[3])?,
                held_out: cells[4] == "1",
                decisions: cells[5..].iter().map(|c| num(c)).collect::<Result<_>>()?,
            });
        }
        Ok(Predictions {
            task,
            class_labels,
            decision_columns: header[5..].iter().map(|s| s.to_string()).collect(),
            rows,
            meta,
        })
    }
}

/// Applies a model to every row of a feature table.
pub fn predict(model_path: &Path, features_path: &Path, out: &Path) -> Result<Predictions> {
    stage("predict", || {
        let model = ModelFile::load(model_path)?;
        let table = FeatureTable::read(features_path, &meta_path_for(features_path, FEATURES_META))?;
        if table.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: table.dim(),
            });
        }
        let scheme = model.scheme()?;
        let same_dataset = sha256_file(features_path)? == model.dataset.checksum;
        let train: HashSet<usize> = if same_dataset {
            model.dataset.train_indices.iter().copied().collect()
        } else {
            HashSet::new()
        };
        let rows = table
            .rows
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let (predicted, decisions) = model.predict(&r.features)?;
                let truth = match (r.label, model.task) {
                    (None, _) => None,
                    (Some(q), Task::Svr) => Some(q),
                    (Some(q), _) => Some(scheme.label_of(q)? as f64),
                };
                Ok(PredictionRow {
                    x: r.x,
                    y: r.y,
                    truth,
                    predicted,
                    held_out: !train.contains(&i),
                    decisions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = table.meta.carry_over();
        meta.set("task", model.task.name());
        meta.set("scheme", &model.scheme);
        let labels: Vec<String> = model.class_labels.iter().map(i64::to_string).collect();
        meta.set("class_labels", labels.join(","));
        meta.set("same_dataset", same_dataset);
        let predictions = Predictions {
            task: model.task,
            class_labels: if model.task == Task::Svr { vec![] } else { model.class_labels.clone() },
            decision_columns: model.decision_columns(),
            rows,
            meta,
        };
        ensure_dir(out)?;
        write_file(&out.join(PREDICTIONS_FILE), predictions.to_csv().as_bytes())?;
        predictions.meta.save(&out.join(PREDICTIONS_META))?;
        Ok(predictions)
    })
}

/// Metrics on held-out traces (or all traces when `eval.subset = all`, which
/// requires `allow_train_eval` if any of them were used for training).
pub fn evaluate(cfg: &RunConfig, predictions_path: &Path, out: &Path, allow_train_eval: bool) -> Result<EvalReport> {
    stage("evaluate", || {
        let preds = Predictions::load(predictions_path)?;
        let training_rows = preds.rows.iter().filter(|r| !r.held_out).count();
        if cfg.eval_all && training_rows > 0 && !allow_train_eval {
            return Err(Error::invalid(format!(
                "evaluation would include {training_rows} traces used for training; \
                 pass --allow-train-eval to permit this"
            )));
        }
        let boundaries = preds.meta.section_boundaries(predictions_path)?;
        let margin = cfg.exclusion_margin;
        let selected: Vec<&PredictionRow> = preds
            .rows
            .iter()
            .filter(|r| cfg.eval_all || r.held_out)
            .filter(|r| margin <= 0.0 || boundaries.iter().all(|b| (r.x - b).abs() >= margin))
            .collect();
        if selected.is_empty() {
            return Err(Error::invalid("no held-out traces to evaluate"));
        }
        if selected.iter().any(|r| r.truth.is_none()) {
            return Err(Error::invalid("traces without truth labels cannot be evaluated"));
        }
        let truth: Vec<f64> = selected.iter().map(|r| r.truth.unwrap_or(0.0)).collect();
        let predicted: Vec<f64> = selected.iter().map(|r| r.predicted).collect();
        let report = match preds.task {
            Task::Svr => EvalReport::regression(&truth, &predicted)?,
            _ => {
                let t: Vec<i64> = truth.iter().map(|&v| v as i64).collect();
                let p: Vec<i64> = predicted.iter().map(|&v| v as i64).collect();
                EvalReport::classification(confusion_matrix(&preds.class_labels, &t, &p)?)
            }
        };
        let scheme = preds.meta.get("scheme").map(ClassScheme::parse).transpose()?;
        let names = |label: i64| match scheme.as_ref().and_then(|s| s.class_of_label(label)) {
            Some(c) => format!("{} ({label})", c.name()),
            None => label.to_string(),
        };
        let mut text = format!("task: {}\n", preds.task.name());
        if margin > 0.0 {
            let _ = writeln!(text, "exclusion margin: {margin} m around section boundaries");
        }
        text.push_str(&report.to_text(&names));
        ensure_dir(out)?;
        write_file(&out.join(REPORT_FILE), text.as_bytes())?;
        let mut kv = format!("task={}\n", preds.task.name());
        kv.push_str(&report.to_key_values());
        write_file(&out.join(METRICS_FILE), kv.as_bytes())?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutcome {
    pub map: ClassMap,
    pub conflicts: usize,
}

/// Predicted (and, when known, true) maps of every trace.
pub fn map(predictions_path: &Path, out: &Path) -> Result<MapOutcome> {
    stage("map", || {
        let preds = Predictions::load(predictions_path)?;
        let shape = preds
            .meta
            .grid_shape(predictions_path)?
            .ok_or_else(|| Error::invalid("predictions carry no grid shape (grid.nx, grid.ny, grid.step)"))?;
        let kind = match preds.task {
            Task::Svr => MapKind::Quantities,
            _ => MapKind::Classes(preds.class_labels.clone()),
        };
        let positions: Vec<(f64, f64)> = preds.rows.iter().map(|r| (r.x, r.y)).collect();
        let values: Vec<f64> = preds.rows.iter().map(|r| r.predicted).collect();
        let (map, conflicts) = assemble_map(shape, kind.clone(), &positions, &values)?;
        if conflicts > 0 {
            log::warn!("{conflicts} grid nodes hold more than one trace; the later trace was kept");
        }
        ensure_dir(out)?;
        export_map(&map, MapFormat::Csv, &out.join("map.csv"))?;
        export_map(&map, MapFormat::Pgm, &out.join("map.pgm"))?;
        if preds.rows.iter().all(|r| r.truth.is_some()) {
            let truth: Vec<f64> = preds.rows.iter().map(|r| r.truth.unwrap_or(0.0)).collect();
            let (truth_map, _) = assemble_map(shape, kind, &positions, &truth)?;
            export_map(&truth_map, MapFormat::Csv, &out.join("truth_map.csv"))?;
            export_map(&truth_map, MapFormat::Pgm, &out.join("truth_map.pgm"))?;
        }
        Ok(MapOutcome { map, conflicts })
    })
}

/// One trained-and-evaluated task of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTask {
    pub task: Task,
    pub scheme: ClassScheme,
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    MinMacroDice(f64),
    MaxRmse(f64),
}

/// Tasks run by `reproduce` for a study.
pub fn study_plan(study: &str) -> Result<Vec<StudyTask>> {
    let base = RunConfig::preset(study)?.scene.scheme;
    Ok(match study {
        "numerical-study" => vec![
            StudyTask {
                task: Task::Tcsvm,
                scheme: ClassScheme::Binary,
                threshold: Some(Threshold::MinMacroDice(0.90)),
            },
            StudyTask {
                task: Task::Mcsvm,
                scheme: base.clone(),
                threshold: Some(Threshold::MinMacroDice(0.80)),
            },
            StudyTask {
                task: Task::Svr,
                scheme: base,
                threshold: None,
            },
        ],
        "carousel" => vec![StudyTask {
            task: Task::Tcsvm,
            scheme: base,
            threshold: Some(Threshold::MinMacroDice(0.90)),
        }],
        "vendee" => vec![
            StudyTask {
                task: Task::Mcsvm,
                scheme: base.clone(),
                threshold: Some(Threshold::MinMacroDice(0.90)),
            },
            StudyTask {
                task: Task::Svr,
                scheme: base,
                threshold: Some(Threshold::MaxRmse(43.0)),
            },
        ],
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

/// Config of one study task: the study preset with the task's label scheme.
pub fn task_config(base: &RunConfig, task: &StudyTask) -> RunConfig {
    let mut cfg = base.clone();
    cfg.task = task.task;
    cfg.scene.scheme = task.scheme.clone();
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOutcome {
    pub summary: String,
    pub passed: bool,
}

/// Full pipeline of a study with fixed seeds; `summary.txt` lists every
/// metric against its threshold.
pub fn reproduce(base: &RunConfig, out: &Path) -> Result<ReproduceOutcome> {
    let study = base
        .preset
        .clone()
        .ok_or_else(|| Error::config("reproduce needs a study preset"))?;
    let plan = study_plan(&study)?;
    let sim = simulate(base, out)?;
    let features = extract(base, &sim.manifest, out)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "study = {study}");
    let _ = writeln!(summary, "seed = {}", base.acquisition.seed);
    let _ = writeln!(summary, "traces = {}", sim.trace_count);
    let mut passed = true;
    for task in &plan {
        let cfg = task_config(base, task);
        let dir = out.join(task.task.name());
        let trained = train(&cfg, &features, &dir)?;
        predict(&trained.model_path, &features, &dir)?;
        let report = evaluate(&cfg, &dir.join(PREDICTIONS_FILE), &dir, false)?;
        map(&dir.join(PREDICTIONS_FILE), &dir)?;

        let name = task.task.name();
        let _ = writeln!(summary, "{name}.scheme = {}", task.scheme.to_config_string());
        let _ = writeln!(summary, "{name}.evaluated = {}", report.evaluated);
        if let (Some(cm), Some(dice)) = (&report.confusion, &report.dice) {
            for (label, d) in cm.labels.iter().zip(&dice.per_class) {
                let _ = writeln!(
                    summary,
                    "{name}.dice.{label} = {}",
                    d.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
                );
            }
            let _ = writeln!(summary, "{name}.accuracy = {:.6}", report.accuracy.unwrap_or(0.0));
        }
        let (value, line) = match task.threshold {
            Some(Threshold::MinMacroDice(min)) => {
                let v = report.macro_dice().unwrap_or(0.0);
                (v >= min, format!("{name}.macro_dice = {v:.6} (required >= {min}) "))
            }
            Some(Threshold::MaxRmse(max)) => {
                let v = report.rmse.unwrap_or(f64::INFINITY);
                (v <= max, format!("{name}.rmse = {v:.6} (required <= {max}) "))
            }
            None => {
                let line = match (report.macro_dice(), report.rmse) {
                    (Some(d), _) => format!("{name}.macro_dice = {d:.6} (reported) "),
                    (None, Some(r)) => format!("{name}.rmse = {r:.6} (reported) "),
                    _ => String::new(),
                };
                (true, line)
            }
        };
        if task.threshold.is_some() {
            let _ = writeln!(summary, "{line}{}", if value { "PASS" } else { "FAIL" });
            passed &= value;
        } else {
            let _ = writeln!(summary, "{}", line.trim_end());
        }
    }
    let _ = writeln!(summary, "result = {}", if passed { "PASS" } else { "FAIL" });
    write_file(&out.join(SUMMARY_FILE), summary.as_bytes())?;
    Ok(ReproduceOutcome { summary, passed })
}

/// Loads the truth quantity map written by [`simulate`].
pub fn load_truth_quantity(dir: &Path, step: f64) -> Result<Grid<Option<f64>>> {
    Ok(crate::eval::import_map_csv(&dir.join("truth_quantity.csv"), step, MapKind::Quantities)?.cells)
}
