//! Run configuration: a flat text file of `dotted.key = value` lines.
//!
//! `#` starts a comment. A `preset = NAME` line (wherever it appears) loads a
//! study preset first; `seed = N` then seeds every random stage; every other
//! line overrides one field. Unknown keys are errors.
//!
//! | key | value |
//! |-----|-------|
//! | `preset` | `numerical-study`, `carousel`, `vendee` |
//! | `seed` | integer, sets `acq.seed`, `split.seed`, `cv.seed` |
//! | `task` | `tcsvm`, `mcsvm`, `svr` |
//! | `scene.name`, `scene.length`, `scene.width`, `scene.step` | text / metres |
//! | `scene.scheme` | `binary`, `four-class`, `quantity:250,300,450` |
//! | `scene.layers` | `name:thickness:eps:sigma, ...`, last layer `name:half:eps:sigma` |
//! | `scene.tack_below` | index of the layer above the tack coat |
//! | `scene.sections` | `name:start:end:quantity[:d1/d2/...], ...` |
//! | `scene.field.mean_x`, `.mean_y`, `.cov_xx`, `.cov_xy`, `.cov_yy`, `.d_min`, `.d_max` | thickness surface |
//! | `scene.layout` | `grid`, `profiles` |
//! | `scene.profiles` | `name:y, ...` |
//! | `scene.transverse_inset` | metres or `none` |
//! | `tack.film_thickness_per_gsm`, `tack.eps_base`, `tack.eps_slope`, `tack.conductivity` | film model |
//! | `pulse.center_frequency`, `pulse.amplitude`, `pulse.delay` | Hz / - / s |
//! | `acq.time_window`, `acq.samples`, `acq.traces_per_meter` | s / count / 1/m |
//! | `acq.snr_db` | dB or `none` |
//! | `acq.seed`, `acq.direct_wave_amplitude` | |
//! | `features.gate` | `auto` or `window` |
//! | `features.gate.offset`, `.width`, `.start`, `.end` | s |
//! | `features.windows`, `features.bands`, `features.band_base`, `features.raw_count`, `features.fft_len`, `features.arrival_threshold` | |
//! | `features.include` | comma list of family names |
//! | `svm.kernel` | `rbf`, `linear`, `polynomial` |
//! | `svm.degree`, `svm.coef0` | polynomial kernel |
//! | `svm.tol`, `svm.max_iter` | solver |
//! | `grid.c`, `grid.epsilon` | comma lists |
//! | `grid.gamma` | comma list of multipliers of `1/D` |
//! | `cv.folds`, `cv.metric`, `cv.max_samples`, `cv.seed` | search |
//! | `split.train_fraction`, `split.seed`, `split.mode`, `split.block_length` | train/test split |
//! | `train.max_samples` | cap on the final fit (0 = none) |
//! | `eval.exclusion_margin` | metres around section boundaries |
//! | `eval.subset` | `held-out` or `all` |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em_forward::{AcquisitionSpec, PulseSpec};
use crate::features::{FeatureConfig, FeatureFamily, Gate};
use crate::scene::{
    self, ClassScheme, Layer, QuantitySource, SceneConfig, Section, SurveyLayout, ThicknessFieldSpec,
    ThicknessMode,
};
use crate::svm::{KernelSpec, Metric, ParamGrid, SolverOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tcsvm,
    Mcsvm,
    Svr,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Tcsvm => "tcsvm",
            Task::Mcsvm => "mcsvm",
            Task::Svr => "svr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tcsvm" => Ok(Task::Tcsvm),
            "mcsvm" => Ok(Task::Mcsvm),
            "svr" => Ok(Task::Svr),
            other => Err(Error::config(format!("unknown task '{other}' (expected tcsvm, mcsvm or svr)"))),
        }
    }

    /// tcsvm needs the binary scheme, mcsvm a multi-class one; svr regresses
    /// quantities under any scheme.
    pub fn check_scheme(self, scheme: &ClassScheme) -> Result<()> {
        match (self, scheme) {
            (Task::Tcsvm, ClassScheme::Binary) | (Task::Svr, _) => Ok(()),
            (Task::Mcsvm, ClassScheme::FourClass | ClassScheme::Quantity(_)) => Ok(()),
            (task, scheme) => Err(Error::config(format!(
                "task {} is incompatible with label scheme {}",
                task.name(),
                scheme.to_config_string()
            ))),
        }
    }

    pub fn default_metric(self) -> Metric {
        match self {
            Task::Svr => Metric::Rmse,
            _ => Metric::MacroDice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Stratified per-trace split.
    Random,
    /// Whole blocks of `block_length` metres along x go to one side.
    SpatialBlock { block_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub c: Vec<f64>,
    /// RBF widths as multiples of `1/D`.
    pub gamma_scale: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// Kernel family searched over; `rbf` uses `gamma_scale`.
    pub kernel: KernelSpec,
    pub folds: usize,
    pub metric: Option<Metric>,
    /// Training examples used for the search (0 = all).
    pub max_samples: usize,
    pub seed: u64,
}

impl SearchSpec {
    pub fn param_grid(&self, dim: usize) -> ParamGrid {
        let d = dim.max(1) as f64;
        let kernels = match self.kernel {
            KernelSpec::Rbf { .. } => self
                .gamma_scale
                .iter()
                .map(|s| KernelSpec::Rbf { gamma: s / d })
                .collect(),
            other => vec![other],
        };
        ParamGrid {
            c: self.c.clone(),
            kernels,
            epsilon: self.epsilon.clone(),
        }
    }
}

impl Default for SearchSpec {
    fn default() -> Self {
        let full = ParamGrid::default_for(1);
        SearchSpec {
            c: full.c,
            gamma_scale: full.kernels.iter().map(KernelSpec::gamma).collect(),
            epsilon: full.epsilon,
            kernel: KernelSpec::Rbf { gamma: 1.0 },
            folds: 5,
            metric: None,
            max_samples: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub scene: SceneConfig,
    pub pulse: PulseSpec,
    pub acquisition: AcquisitionSpec,
    pub features: FeatureConfig,
    pub task: Task,
    pub search: SearchSpec,
    pub solver: SolverOptions,
    pub split: SplitSpec,
    /// Cap on the final training fit (0 = none).
    pub train_max_samples: usize,
    pub exclusion_margin: f64,
    /// Evaluate every trace instead of only held-out ones.
    pub eval_all: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset("numerical-study").expect("built-in preset")
    }
}

impl RunConfig {
    /// Full run configuration of a named study.
    pub fn preset(name: &str) -> Result<Self> {
        let scene = scene::preset(name)?;
        let mut cfg = RunConfig {
            preset: Some(name.to_string()),
            scene,
            pulse: PulseSpec::default(),
            acquisition: AcquisitionSpec {
                noise_snr_db: Some(20.0),
                traces_per_meter: 4.0,
                ..AcquisitionSpec::default()
            },
            features: FeatureConfig::default(),
            task: Task::Mcsvm,
            search: SearchSpec {
                max_samples: 600,
                ..SearchSpec::default()
            },
            solver: SolverOptions::default(),
            split: SplitSpec {
                train_fraction: 0.7,
                seed: 0,
                mode: SplitMode::Random,
            },
            train_max_samples: 0,
            exclusion_margin: 0.0,
            eval_all: false,
        };
        if name == "carousel" {
            cfg.task = Task::Tcsvm;
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.acquisition.seed = seed;
        self.split.seed = seed;
        self.search.seed = seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            entries.push((n + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let presets: Vec<&(usize, String, String)> = entries.iter().filter(|e| e.1 == "preset").collect();
        if presets.len() > 1 {
            return Err(Error::config("preset given more than once"));
        }
        let mut cfg = match presets.first() {
            Some((_, _, name)) => RunConfig::preset(name)?,
            None => RunConfig::default(),
        };
        if let Some((line, _, v)) = entries.iter().find(|e| e.1 == "seed") {
            cfg.set_seed(parse_num(*line, "seed", v)?);
        }
        for (line, key, value) in &entries {
            if key == "preset" || key == "seed" {
                continue;
            }
            cfg.apply(*line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.check_scheme(&self.scene.scheme)?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if let SplitMode::SpatialBlock { block_length } = self.split.mode {
            if !(block_length > 0.0) {
                return Err(Error::config("split.block_length must be positive"));
            }
        }
        if self.search.folds < 2 {
            return Err(Error::config("cv.folds must be at least 2"));
        }
        if !(self.exclusion_margin >= 0.0) {
            return Err(Error::config("eval.exclusion_margin must be >= 0"));
        }
        self.pulse.validate()?;
        self.acquisition.validate()?;
        self.features.validate()?;
        self.search.param_grid(self.features.dimension()).validate(self.task == Task::Svr)?;
        Ok(())
    }

    pub fn metric(&self) -> Metric {
        self.search.metric.unwrap_or_else(|| self.task.default_metric())
    }

    fn apply(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let num = |v: &str| parse_num::<f64>(line, key, v);
        let count = |v: &str| parse_num::<usize>(line, key, v);
        let list = |v: &str| -> Result<Vec<f64>> { v.split(',').map(|s| parse_num(line, key, s.trim())).collect() };
        match key {
            "task" => self.task = Task::parse(v)?,
            "scene.name" => self.scene.name = v.to_string(),
            "scene.length" => self.scene.length = num(v)?,
            "scene.width" => self.scene.width = num(v)?,
            "scene.step" => self.scene.step = num(v)?,
            "scene.scheme" => self.scene.scheme = ClassScheme::parse(v)?,
            "scene.layers" => self.scene.base_stack = parse_layers(line, v)?,
            "scene.tack_below" => self.scene.tack_below = count(v)?,
            "scene.sections" => self.scene.source = QuantitySource::Sections(parse_sections(line, v)?),
            "scene.layout" => {
                self.scene.layout = match v {
                    "grid" => SurveyLayout::Grid,
                    "profiles" => match &self.scene.layout {
                        SurveyLayout::Profiles { .. } => self.scene.layout.clone(),
                        SurveyLayout::Grid => SurveyLayout::Profiles {
                            longitudinal: vec![],
                            transverse_inset: None,
                        },
                    },
                    other => return Err(bad(line, key, other)),
                }
            }
            "scene.profiles" => {
                let parsed = parse_named_list(line, key, v)?;
                match &mut self.scene.layout {
                    SurveyLayout::Profiles { longitudinal, .. } => *longitudinal = parsed,
                    SurveyLayout::Grid => {
                        self.scene.layout = SurveyLayout::Profiles {
                            longitudinal: parsed,
                            transverse_inset: None,
                        }
                    }
                }
            }
            "scene.transverse_inset" => {
                let inset = if v == "none" { None } else { Some(num(v)?) };
                match &mut self.scene.layout {
                    SurveyLayout::Profiles { transverse_inset, .. } => *transverse_inset = inset,
                    SurveyLayout::Grid => {
                        return Err(Error::config(format!(
                            "line {line}: scene.transverse_inset needs scene.layout = profiles"
                        )))
                    }
                }
            }
            k if k.starts_with("scene.field.") => {
                let field = self.field_mut();
                let value = num(v)?;
                match &k["scene.field.".len()..] {
                    "mean_x" => field.mean.0 = value,
                    "mean_y" => field.mean.1 = value,
                    "cov_xx" => field.covariance[0][0] = value,
                    "cov_yy" => field.covariance[1][1] = value,
                    "cov_xy" => {
                        field.covariance[0][1] = value;
                        field.covariance[1][0] = value;
                    }
                    "d_min" => field.d_min = value,
                    "d_max" => field.d_max = value,
                    _ => return Err(unknown(line, key)),
                }
            }
            "tack.film_thickness_per_gsm" => self.scene.tack.film_thickness_per_gsm = num(v)?,
            "tack.eps_base" => self.scene.tack.eps_base = num(v)?,
            "tack.eps_slope" => self.scene.tack.eps_slope = num(v)?,
            "tack.conductivity" => self.scene.tack.conductivity = num(v)?,
            "pulse.center_frequency" => self.pulse.center_frequency = num(v)?,
            "pulse.amplitude" => self.pulse.amplitude = num(v)?,
            "pulse.delay" => self.pulse.delay = num(v)?,
            "acq.time_window" => self.acquisition.time_window = num(v)?,
            "acq.samples" => self.acquisition.samples_per_trace = count(v)?,
            "acq.traces_per_meter" => self.acquisition.traces_per_meter = num(v)?,
            "acq.snr_db" => self.acquisition.noise_snr_db = if v == "none" { None } else { Some(num(v)?) },
            "acq.seed" => self.acquisition.seed = parse_num(line, key, v)?,
            "acq.direct_wave_amplitude" => self.acquisition.direct_wave_amplitude = num(v)?,
            "features.gate" => {
                self.features.gate = match v {
                    "auto" => Gate::Auto {
                        offset: 0.95e-9,
                        width: 1.3e-9,
                    },
                    "window" => Gate::Window {
                        start: 0.0,
                        end: self.acquisition.time_window,
                    },
                    other => return Err(bad(line, key, other)),
                }
            }
            "features.gate.offset" | "features.gate.width" => match &mut self.features.gate {
                Gate::Auto { offset, width } => {
                    *(if key.ends_with("offset") { offset } else { width }) = num(v)?;
                }
                Gate::Window { .. } => {
                    return Err(Error::config(format!("line {line}: {key} needs features.gate = auto")))
                }
            },
            "features.gate.start" | "features.gate.end" => match &mut self.features.gate {
                Gate::Window { start, end } => {
                    *(if key.ends_with("start") { start } else { end }) = num(v)?;
                }
                Gate::Auto { .. } => {
                    return Err(Error::config(format!("line {line}: {key} needs features.gate = window")))
                }
            },
            "features.windows" => self.features.window_count = count(v)?,
            "features.bands" => self.features.band_count = count(v)?,
            "features.band_base" => self.features.band_base = num(v)?,
            "features.raw_count" => self.features.raw_count = count(v)?,
            "features.fft_len" => self.features.fft_len = count(v)?,
            "features.arrival_threshold" => self.features.arrival_threshold = num(v)?,
            "features.include" => {
                let mut fams = v
                    .split(',')
                    .map(FeatureFamily::parse)
                    .collect::<Result<Vec<_>>>()?;
                fams.sort();
                fams.dedup();
                self.features.include = fams;
            }
            "svm.kernel" => {
                self.search.kernel = match v {
                    "rbf" => KernelSpec::Rbf { gamma: 1.0 },
                    "linear" => KernelSpec::Linear,
                    "polynomial" => KernelSpec::Polynomial { degree: 3, coef0: 1.0 },
                    other => return Err(bad(line, key, other)),
                }
            }
            "svm.degree" | "svm.coef0" => match &mut self.search.kernel {
                KernelSpec::Polynomial { degree, coef0 } => {
                    if key == "svm.degree" {
                        *degree = parse_num(line, key, v)?;
                    } else {
                        *coef0 = num(v)?;
                    }
                }
                _ => return Err(Error::config(format!("line {line}: {key} needs svm.kernel = polynomial"))),
            },
            "svm.tol" => self.solver.tol = num(v)?,
            "svm.max_iter" => self.solver.max_iter = count(v)?,
            "grid.c" => self.search.c = list(v)?,
            "grid.gamma" => self.search.gamma_scale = list(v)?,
            "grid.epsilon" => self.search.epsilon = list(v)?,
            "cv.folds" => self.search.folds = count(v)?,
            "cv.metric" => self.search.metric = Some(Metric::parse(v)?),
            "cv.max_samples" => self.search.max_samples = count(v)?,
            "cv.seed" => self.search.seed = parse_num(line, key, v)?,
            "split.train_fraction" => self.split.train_fraction = num(v)?,
            "split.seed" => self.split.seed = parse_num(line, key, v)?,
            "split.mode" => {
                self.split.mode = match v {
                    "random" => SplitMode::Random,
                    "spatial-block" => SplitMode::SpatialBlock { block_length: 5.0 },
                    other => return Err(bad(line, key, other)),
                }
            }
            "split.block_length" => match &mut self.split.mode {
                SplitMode::SpatialBlock { block_length } => *block_length = num(v)?,
                SplitMode::Random => {
                    return Err(Error::config(format!(
                        "line {line}: split.block_length needs split.mode = spatial-block"
                    )))
                }
            },
            "train.max_samples" => self.train_max_samples = count(v)?,
            "eval.exclusion_margin" => self.exclusion_margin = num(v)?,
            "eval.subset" => {
                self.eval_all = match v {
                    "held-out" => false,
                    "all" => true,
                    other => return Err(bad(line, key, other)),
                }
            }
            _ => return Err(unknown(line, key)),
        }
        Ok(())
    }

    fn field_mut(&mut self) -> &mut ThicknessFieldSpec {
        if !matches!(self.scene.source, QuantitySource::Field(_)) {
            self.scene.source = QuantitySource::Field(ThicknessFieldSpec {
                mode: ThicknessMode::BivariateNormalSurface,
                ..ThicknessFieldSpec::constant(0.0)
            });
        }
        match &mut self.scene.source {
            QuantitySource::Field(f) => f,
            QuantitySource::Sections(_) => unreachable!(),
        }
    }
}

fn unknown(line: usize, key: &str) -> Error {
    Error::config(format!("line {line}: unknown key '{key}'"))
}

fn bad(line: usize, key: &str, value: &str) -> Error {
    Error::config(format!("line {line}: invalid value '{value}' for {key}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(line, key, v))
}

fn parse_named_list(line: usize, key: &str, v: &str) -> Result<Vec<(String, f64)>> {
    v.split(',')
        .map(|item| {
            let (name, value) = item.trim().split_once(':').ok_or_else(|| bad(line, key, item))?;
            Ok((name.trim().to_string(), parse_num(line, key, value)?))
        })
        .collect()
}

fn parse_layers(line: usize, v: &str) -> Result<Vec<Layer>> {
    let key = "scene.layers";
    v.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').map(str::trim).collect();
            let [name, thickness, eps, sigma] = parts[..] else {
                return Err(bad(line, key, item));
            };
            let eps = parse_num(line, key, eps)?;
            let sigma = parse_num(line, key, sigma)?;
            if thickness == "half" {
                Layer::half_space(name, eps, sigma)
            } else {
                Layer::new(name, parse_num(line, key, thickness)?, eps, sigma)
            }
        })
        .collect()
}

fn parse_sections(line: usize, v: &str) -> Result<Vec<Section>> {
    let key = "scene.sections";
    v.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').map(str::trim).collect();
            if parts.len() != 4 && parts.len() != 5 {
                return Err(bad(line, key, item));
            }
            let section = Section::new(
                parts[0],
                parse_num(line, key, parts[1])?,
                parse_num(line, key, parts[2])?,
                parse_num(line, key, parts[3])?,
            );
            match parts.get(4) {
                Some(t) => Ok(section.with_thicknesses(
                    t.split('/').map(|d| parse_num(line, key, d)).collect::<Result<_>>()?,
                )),
                None => Ok(section),
            }
        })
        .collect()
}
