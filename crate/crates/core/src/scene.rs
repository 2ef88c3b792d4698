//! Pavement structures, tack-coat proportioning and ground-truth maps.
//!
//! A scene is a rectangular pavement of `length × width` metres surveyed on a
//! regular grid. Its structure is a base layer stack (wearing course, binder
//! course, ..., half-space) into which a tack-coat film is inserted below the
//! wearing course wherever emulsion was applied. The applied quantity (g/m²)
//! comes either from a list of longitudinal sections or from a smooth
//! thickness surface, and is classed under one [`ClassScheme`].

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, GridShape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    /// Metres. Ignored for a half-space.
    pub thickness: f64,
    pub rel_permittivity: f64,
    /// S/m.
    pub conductivity: f64,
    pub half_space: bool,
}

impl Layer {
    pub fn new(
        name: impl Into<String>,
        thickness: f64,
        rel_permittivity: f64,
        conductivity: f64,
    ) -> Result<Self> {
        let layer = Layer {
            name: name.into(),
            thickness,
            rel_permittivity,
            conductivity,
            half_space: false,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn half_space(
        name: impl Into<String>,
        rel_permittivity: f64,
        conductivity: f64,
    ) -> Result<Self> {
        let layer = Layer {
            name: name.into(),
            thickness: f64::INFINITY,
            rel_permittivity,
            conductivity,
            half_space: true,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_permittivity >= 1.0) || !self.rel_permittivity.is_finite() {
            return Err(Error::invalid(format!(
                "layer '{}': relative permittivity must be >= 1, got {}",
                self.name, self.rel_permittivity
            )));
        }
        if !(self.conductivity >= 0.0) || !self.conductivity.is_finite() {
            return Err(Error::invalid(format!(
                "layer '{}': conductivity must be >= 0, got {}",
                self.name, self.conductivity
            )));
        }
        if !self.half_space && (!(self.thickness >= 0.0) || !self.thickness.is_finite()) {
            return Err(Error::invalid(format!(
                "layer '{}': thickness must be finite and >= 0, got {}",
                self.name, self.thickness
            )));
        }
        Ok(())
    }
}

/// Checks a layer stack: at least two layers, only the last one a half-space.
pub fn validate_stack(stack: &[Layer]) -> Result<()> {
    if stack.len() < 2 {
        return Err(Error::invalid(format!(
            "a layer stack needs at least 2 layers, got {}",
            stack.len()
        )));
    }
    for (k, layer) in stack.iter().enumerate() {
        layer.validate()?;
        let last = k + 1 == stack.len();
        if layer.half_space != last {
            return Err(Error::invalid(format!(
                "layer '{}': exactly the last layer of a stack must be a half-space",
                layer.name
            )));
        }
    }
    Ok(())
}

/// Residual-film model linking applied emulsion to an equivalent layer.
///
/// Thickness grows linearly with quantity (`film_thickness_per_gsm` metres per
/// g/m²) and so does permittivity (`eps_base + eps_slope·q`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TackCoatModel {
    pub film_thickness_per_gsm: f64,
    pub eps_base: f64,
    pub eps_slope: f64,
    pub conductivity: f64,
}

impl Default for TackCoatModel {
    fn default() -> Self {
        TackCoatModel {
            film_thickness_per_gsm: 1e-6,
            eps_base: 6.0,
            eps_slope: 0.01,
            conductivity: 0.0,
        }
    }
}

impl TackCoatModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.film_thickness_per_gsm > 0.0) {
            return Err(Error::invalid("tack film thickness per g/m² must be positive"));
        }
        if !(self.eps_base >= 1.0) || !(self.eps_slope >= 0.0) || !(self.conductivity >= 0.0) {
            return Err(Error::invalid(
                "tack permittivity needs eps_base >= 1, eps_slope >= 0, conductivity >= 0",
            ));
        }
        Ok(())
    }

    /// `(thickness m, relative permittivity)` of the film for `q` g/m².
    pub fn layer_properties(&self, quantity: f64) -> Result<(f64, f64)> {
        check_quantity(quantity)?;
        Ok((
            quantity * self.film_thickness_per_gsm,
            self.eps_base + self.eps_slope * quantity,
        ))
    }

    /// The film as a layer, or `None` when no emulsion was applied.
    pub fn layer(&self, quantity: f64) -> Result<Option<Layer>> {
        let (thickness, eps) = self.layer_properties(quantity)?;
        if thickness == 0.0 {
            return Ok(None);
        }
        Layer::new("tack coat", thickness, eps, self.conductivity).map(Some)
    }

    /// Inverse of the thickness rule.
    pub fn quantity_for_thickness(&self, thickness: f64) -> f64 {
        thickness.max(0.0) / self.film_thickness_per_gsm
    }
}

/// Film thickness and permittivity for `q` g/m² under the default model.
pub fn quantity_to_layer(quantity: f64) -> Result<(f64, f64)> {
    TackCoatModel::default().layer_properties(quantity)
}

fn check_quantity(quantity: f64) -> Result<()> {
    if !(quantity >= 0.0) || !quantity.is_finite() {
        return Err(Error::invalid(format!(
            "emulsion quantity must be finite and >= 0 g/m², got {quantity}"
        )));
    }
    Ok(())
}

/// Lower bound of the "correct" band of the 4-class scheme, g/m².
pub const CORRECT_MIN: f64 = 250.0;
/// Upper bound (inclusive) of the "correct" band, g/m².
pub const CORRECT_MAX: f64 = 350.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassScheme {
    /// Absent / Present.
    Binary,
    /// Absent / Under / Correct / Over.
    FourClass,
    /// Nearest applied quantity among the listed g/m² labels.
    Quantity(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmulsionClass {
    Absent,
    Present,
    Under,
    Correct,
    Over,
    Quantity(u32),
}

impl EmulsionClass {
    /// Integer label used in files and by the classifiers.
    ///
    /// Binary: Absent = -1, Present = +1. Four-class: Absent = 0 .. Over = 3.
    /// Quantity classes use their g/m² value.
    pub fn code(&self, scheme: &ClassScheme) -> i64 {
        match (scheme, self) {
            (ClassScheme::Binary, EmulsionClass::Absent) => -1,
            (ClassScheme::Binary, _) => 1,
            (_, EmulsionClass::Absent) => 0,
            (_, EmulsionClass::Under) => 1,
            (_, EmulsionClass::Correct) => 2,
            (_, EmulsionClass::Over) => 3,
            (_, EmulsionClass::Present) => 1,
            (_, EmulsionClass::Quantity(q)) => *q as i64,
        }
    }

    pub fn name(&self) -> String {
        match self {
            EmulsionClass::Absent => "absent".into(),
            EmulsionClass::Present => "present".into(),
            EmulsionClass::Under => "under".into(),
            EmulsionClass::Correct => "correct".into(),
            EmulsionClass::Over => "over".into(),
            EmulsionClass::Quantity(q) => format!("{q} g/m2"),
        }
    }
}

impl ClassScheme {
    pub fn validate(&self) -> Result<()> {
        if let ClassScheme::Quantity(labels) = self {
            if labels.is_empty() {
                return Err(Error::invalid("quantity scheme needs at least one label"));
            }
            if labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(
                    "quantity scheme labels must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn classify(&self, quantity: f64) -> Result<EmulsionClass> {
        check_quantity(quantity)?;
        Ok(match self {
            ClassScheme::Binary => {
                if quantity == 0.0 {
                    EmulsionClass::Absent
                } else {
                    EmulsionClass::Present
                }
            }
            ClassScheme::FourClass => {
                if quantity == 0.0 {
                    EmulsionClass::Absent
                } else if quantity < CORRECT_MIN {
                    EmulsionClass::Under
                } else if quantity <= CORRECT_MAX {
                    EmulsionClass::Correct
                } else {
                    EmulsionClass::Over
                }
            }
            ClassScheme::Quantity(labels) => {
                // Strict `<` keeps the lower label on ties.
                let mut best = *labels
                    .first()
                    .ok_or_else(|| Error::invalid("quantity scheme has no labels"))?;
                for &label in &labels[1..] {
                    if (quantity - label as f64).abs() < (quantity - best as f64).abs() {
                        best = label;
                    }
                }
                EmulsionClass::Quantity(best)
            }
        })
    }

    pub fn classes(&self) -> Vec<EmulsionClass> {
        match self {
            ClassScheme::Binary => vec![EmulsionClass::Absent, EmulsionClass::Present],
            ClassScheme::FourClass => vec![
                EmulsionClass::Absent,
                EmulsionClass::Under,
                EmulsionClass::Correct,
                EmulsionClass::Over,
            ],
            ClassScheme::Quantity(labels) => {
                labels.iter().map(|&q| EmulsionClass::Quantity(q)).collect()
            }
        }
    }

    /// Ordered integer labels of all classes.
    pub fn labels(&self) -> Vec<i64> {
        self.classes().iter().map(|c| c.code(self)).collect()
    }

    /// Integer label of the class of `quantity`.
    pub fn label_of(&self, quantity: f64) -> Result<i64> {
        Ok(self.classify(quantity)?.code(self))
    }

    pub fn class_of_label(&self, label: i64) -> Option<EmulsionClass> {
        self.classes().into_iter().find(|c| c.code(self) == label)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "binary" => Ok(ClassScheme::Binary),
            "four-class" => Ok(ClassScheme::FourClass),
            _ => {
                let Some(list) = text.strip_prefix("quantity:") else {
                    return Err(Error::config(format!(
                        "unknown class scheme '{text}' (binary, four-class, quantity:a,b,...)"
                    )));
                };
                let mut labels = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::config(format!("bad quantity label '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                labels.sort_unstable();
                labels.dedup();
                let scheme = ClassScheme::Quantity(labels);
                scheme.validate()?;
                Ok(scheme)
            }
        }
    }

    pub fn to_config_string(&self) -> String {
        match self {
            ClassScheme::Binary => "binary".into(),
            ClassScheme::FourClass => "four-class".into(),
            ClassScheme::Quantity(labels) => format!(
                "quantity:{}",
                labels
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        }
    }
}

/// Class of `q` g/m² under `scheme`.
pub fn quantity_to_class(quantity: f64, scheme: &ClassScheme) -> Result<EmulsionClass> {
    scheme.classify(quantity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThicknessMode {
    Constant,
    BivariateNormalSurface,
}

/// Smooth tack-coat thickness field over the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessFieldSpec {
    pub mode: ThicknessMode,
    /// Peak position (m).
    pub mean: (f64, f64),
    /// Shape of the surface (m²), symmetric positive-definite.
    pub covariance: [[f64; 2]; 2],
    pub d_min: f64,
    pub d_max: f64,
    /// Recorded with the field for provenance; both modes are deterministic.
    pub seed: u64,
}

impl ThicknessFieldSpec {
    pub fn constant(thickness: f64) -> Self {
        ThicknessFieldSpec {
            mode: ThicknessMode::Constant,
            mean: (0.0, 0.0),
            covariance: [[1.0, 0.0], [0.0, 1.0]],
            d_min: thickness,
            d_max: thickness,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min <= self.d_max) {
            return Err(Error::invalid(format!(
                "thickness field needs d_min <= d_max, got {} > {}",
                self.d_min, self.d_max
            )));
        }
        if self.mode == ThicknessMode::BivariateNormalSurface {
            self.inverse_covariance()?;
        }
        Ok(())
    }

    fn inverse_covariance(&self) -> Result<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.covariance;
        let det = a * d - b * c;
        if b != c || !(a > 0.0) || !(det > 0.0) || !det.is_finite() {
            return Err(Error::invalid(format!(
                "covariance {:?} is not symmetric positive-definite",
                self.covariance
            )));
        }
        Ok([[d / det, -b / det], [-c / det, a / det]])
    }

    /// Field value at `(x, y)` metres.
    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64> {
        match self.mode {
            ThicknessMode::Constant => Ok(self.d_min),
            ThicknessMode::BivariateNormalSurface => {
                let inv = self.inverse_covariance()?;
                Ok(self.surface(&inv, x, y))
            }
        }
    }

    fn surface(&self, inv: &[[f64; 2]; 2], x: f64, y: f64) -> f64 {
        let dx = x - self.mean.0;
        let dy = y - self.mean.1;
        let mahalanobis = dx * (inv[0][0] * dx + inv[0][1] * dy) + dy * (inv[1][0] * dx + inv[1][1] * dy);
        self.d_min + (self.d_max - self.d_min) * (-0.5 * mahalanobis).exp()
    }
}

/// Thickness (m) at every node of `shape`.
pub fn sample_thickness_map(spec: &ThicknessFieldSpec, shape: GridShape) -> Result<Grid<f64>> {
    spec.validate()?;
    match spec.mode {
        ThicknessMode::Constant => Ok(Grid::filled(shape, spec.d_min)),
        ThicknessMode::BivariateNormalSurface => {
            let inv = spec.inverse_covariance()?;
            Ok(Grid::from_fn(shape, |i, j| {
                let (x, y) = shape.position(i, j);
                spec.surface(&inv, x, y)
            }))
        }
    }
}

/// A longitudinal stretch `[start, end)` with one applied quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub start: f64,
    pub end: f64,
    /// g/m².
    pub quantity: f64,
    /// Replacement thicknesses for the finite base layers, top to bottom.
    pub layer_thicknesses: Option<Vec<f64>>,
}

impl Section {
    pub fn new(name: impl Into<String>, start: f64, end: f64, quantity: f64) -> Self {
        Section {
            name: name.into(),
            start,
            end,
            quantity,
            layer_thicknesses: None,
        }
    }

    pub fn with_thicknesses(mut self, thicknesses: Vec<f64>) -> Self {
        self.layer_thicknesses = Some(thicknesses);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QuantitySource {
    Sections(Vec<Section>),
    /// Tack thickness surface; negative values mean no emulsion.
    Field(ThicknessFieldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub axis: ProfileAxis,
    /// y (m) of a longitudinal profile, x (m) of a transverse one.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileAxis {
    Longitudinal,
    Transverse,
}

/// Where traces are recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurveyLayout {
    /// One trace per grid node.
    Grid,
    /// Longitudinal profiles at fixed y plus, when `transverse_inset` is set,
    /// two transverse profiles per section located that far inside its ends.
    Profiles {
        longitudinal: Vec<(String, f64)>,
        transverse_inset: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub name: String,
    pub length: f64,
    pub width: f64,
    pub step: f64,
    /// Wearing course first, half-space last, no tack coat.
    pub base_stack: Vec<Layer>,
    /// The tack coat goes below `base_stack[tack_below]`.
    pub tack_below: usize,
    pub tack: TackCoatModel,
    pub scheme: ClassScheme,
    pub source: QuantitySource,
    pub layout: SurveyLayout,
}

pub fn default_stack() -> Vec<Layer> {
    vec![
        Layer::new("wearing course", 0.05, 5.0, 0.005).expect("valid default"),
        Layer::new("binder course", 0.08, 7.0, 0.01).expect("valid default"),
        Layer::half_space("subgrade", 9.0, 0.01).expect("valid default"),
    ]
}

pub const PRESETS: [&str; 3] = ["numerical-study", "carousel", "vendee"];

/// Scene configuration of a named study layout.
pub fn preset(name: &str) -> Result<SceneConfig> {
    match name {
        // Two-layer structure: both courses sit below the film permittivity, so
        // the film response grows monotonically with quantity.
        "numerical-study" => Ok(SceneConfig {
            name: name.into(),
            length: 50.0,
            width: 5.0,
            step: 0.25,
            base_stack: vec![
                Layer::new("wearing course", 0.05, 4.0, 0.005)?,
                Layer::half_space("binder course", 5.0, 0.01)?,
            ],
            tack_below: 0,
            tack: TackCoatModel::default(),
            scheme: ClassScheme::FourClass,
            source: QuantitySource::Field(ThicknessFieldSpec {
                mode: ThicknessMode::BivariateNormalSurface,
                mean: (25.0, 2.5),
                covariance: [[144.0, 0.0], [0.0, 6.25]],
                d_min: -0.25e-3,
                d_max: 0.55e-3,
                seed: 0,
            }),
            layout: SurveyLayout::Grid,
        }),
        "carousel" => {
            // BBM (thin) wearing course on S1, BBSG on S2; S2c has a thicker binder.
            let bbm = vec![0.03, 0.08];
            let bbsg = vec![0.06, 0.08];
            let bbsg_thick_binder = vec![0.06, 0.10];
            Ok(SceneConfig {
                name: name.into(),
                length: 60.0,
                width: 3.5,
                step: 0.25,
                base_stack: default_stack(),
                tack_below: 0,
                tack: TackCoatModel::default(),
                scheme: ClassScheme::Binary,
                source: QuantitySource::Sections(vec![
                    Section::new("S1a", 0.0, 12.0, 300.0).with_thicknesses(bbm.clone()),
                    Section::new("S1b", 12.0, 23.0, 0.0).with_thicknesses(bbm),
                    Section::new("S2a", 23.0, 34.0, 0.0).with_thicknesses(bbsg.clone()),
                    Section::new("S2b", 34.0, 47.0, 300.0).with_thicknesses(bbsg),
                    Section::new("S2c", 47.0, 60.0, 300.0).with_thicknesses(bbsg_thick_binder),
                ]),
                layout: SurveyLayout::Profiles {
                    longitudinal: vec![
                        ("P1".into(), 0.8),
                        ("P2".into(), 1.5),
                        ("P3".into(), 1.9),
                        ("P4".into(), 2.65),
                    ],
                    transverse_inset: Some(3.0),
                },
            })
        }
        "vendee" => Ok(SceneConfig {
            name: name.into(),
            length: 120.0,
            width: 5.0,
            step: 0.25,
            base_stack: default_stack(),
            tack_below: 0,
            tack: TackCoatModel::default(),
            scheme: ClassScheme::Quantity(vec![250, 300, 450]),
            source: QuantitySource::Sections(vec![
                Section::new("Z450", 0.0, 40.0, 450.0),
                Section::new("Z250", 40.0, 80.0, 250.0),
                Section::new("Z300", 80.0, 120.0, 300.0),
            ]),
            layout: SurveyLayout::Profiles {
                longitudinal: vec![("P1".into(), 1.2), ("P2".into(), 2.5), ("P3".into(), 3.8)],
                transverse_inset: Some(3.0),
            },
        }),
        other => Err(Error::UnknownPreset(other.into())),
    }
}

/// Immutable pavement description with its ground-truth grids.
#[derive(Debug, Clone, PartialEq)]
pub struct PavementScene {
    config: SceneConfig,
    shape: GridShape,
    quantity: Grid<f64>,
    ground_truth_class: Grid<EmulsionClass>,
}

pub fn build_scene(config: &SceneConfig) -> Result<PavementScene> {
    let shape = GridShape::from_extent(config.length, config.width, config.step)?;
    validate_stack(&config.base_stack)?;
    if config.tack_below + 1 >= config.base_stack.len() {
        return Err(Error::invalid(
            "the tack coat must sit between two layers of the base stack",
        ));
    }
    config.tack.validate()?;
    config.scheme.validate()?;
    let finite_layers = config.base_stack.len() - 1;
    match &config.source {
        QuantitySource::Sections(sections) => {
            validate_sections(sections, config.length, finite_layers)?
        }
        QuantitySource::Field(spec) => spec.validate()?,
    }
    if let SurveyLayout::Profiles {
        longitudinal,
        transverse_inset,
    } = &config.layout
    {
        for (name, y) in longitudinal {
            if !(*y >= 0.0 && *y <= config.width) {
                return Err(Error::invalid(format!(
                    "profile {name} at y = {y} m lies outside the {} m wide scene",
                    config.width
                )));
            }
        }
        if let Some(inset) = transverse_inset {
            let QuantitySource::Sections(sections) = &config.source else {
                return Err(Error::invalid("transverse profiles require a sectioned scene"));
            };
            if sections.iter().any(|s| 2.0 * inset > s.end - s.start) {
                return Err(Error::invalid(format!(
                    "transverse inset {inset} m does not fit inside every section"
                )));
            }
        }
    }

    let mut scene = PavementScene {
        config: config.clone(),
        shape,
        quantity: Grid::filled(shape, 0.0),
        ground_truth_class: Grid::filled(shape, EmulsionClass::Absent),
    };
    let mut quantities = Vec::with_capacity(shape.len());
    for j in 0..shape.ny {
        for i in 0..shape.nx {
            let (x, y) = shape.position(i, j);
            quantities.push(scene.quantity_at(x, y)?);
        }
    }
    let classes = quantities
        .iter()
        .map(|&q| config.scheme.classify(q))
        .collect::<Result<Vec<_>>>()?;
    scene.quantity = Grid::from_vec(shape, quantities)?;
    scene.ground_truth_class = Grid::from_vec(shape, classes)?;
    Ok(scene)
}

fn validate_sections(sections: &[Section], length: f64, finite_layers: usize) -> Result<()> {
    const EPS: f64 = 1e-9;
    if sections.is_empty() {
        return Err(Error::invalid("scene has no sections"));
    }
    let mut cursor = 0.0;
    for s in sections {
        if (s.start - cursor).abs() > EPS || !(s.end > s.start) {
            return Err(Error::invalid(format!(
                "section {} [{}, {}) must start where the previous one ended ({cursor}) and have positive length",
                s.name, s.start, s.end
            )));
        }
        check_quantity(s.quantity)?;
        if let Some(t) = &s.layer_thicknesses {
            if t.len() != finite_layers || t.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
                return Err(Error::invalid(format!(
                    "section {} needs {finite_layers} positive layer thicknesses",
                    s.name
                )));
            }
        }
        cursor = s.end;
    }
    if (cursor - length).abs() > EPS {
        return Err(Error::invalid(format!(
            "section lengths sum to {cursor} m but the scene is {length} m long"
        )));
    }
    Ok(())
}

impl PavementScene {
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn grid_shape(&self) -> GridShape {
        self.shape
    }

    pub fn scheme(&self) -> &ClassScheme {
        &self.config.scheme
    }

    /// Applied quantity (g/m²) at each grid node.
    pub fn quantity(&self) -> &Grid<f64> {
        &self.quantity
    }

    pub fn ground_truth_class(&self) -> &Grid<EmulsionClass> {
        &self.ground_truth_class
    }

    pub fn sections(&self) -> &[Section] {
        match &self.config.source {
            QuantitySource::Sections(s) => s,
            QuantitySource::Field(_) => &[],
        }
    }

    /// Section containing `x`; the last section includes the scene end.
    pub fn section_at(&self, x: f64) -> Option<&Section> {
        let sections = self.sections();
        let last = sections.len().checked_sub(1)?;
        sections
            .iter()
            .enumerate()
            .find(|(k, s)| x >= s.start && (x < s.end || (*k == last && x <= s.end)))
            .map(|(_, s)| s)
    }

    /// Interior section boundaries along x.
    pub fn section_boundaries(&self) -> Vec<f64> {
        let sections = self.sections();
        sections.iter().skip(1).map(|s| s.start).collect()
    }

    /// Applied quantity (g/m²) at an arbitrary point of the scene.
    pub fn quantity_at(&self, x: f64, y: f64) -> Result<f64> {
        self.check_inside(x, y)?;
        match &self.config.source {
            QuantitySource::Sections(_) => Ok(self
                .section_at(x)
                .map(|s| s.quantity)
                .ok_or_else(|| Error::invalid(format!("x = {x} m is in no section")))?),
            QuantitySource::Field(spec) => {
                Ok(self.config.tack.quantity_for_thickness(spec.evaluate(x, y)?))
            }
        }
    }

    /// Local layer stack at `(x, y)`, tack coat included when present.
    pub fn stack_at(&self, x: f64, y: f64) -> Result<Vec<Layer>> {
        let mut stack = self.config.base_stack.clone();
        if let Some(thicknesses) = self.section_at(x).and_then(|s| s.layer_thicknesses.as_ref()) {
            for (layer, &d) in stack.iter_mut().zip(thicknesses) {
                layer.thickness = d;
            }
        }
        if let Some(tack) = self.config.tack.layer(self.quantity_at(x, y)?)? {
            stack.insert(self.config.tack_below + 1, tack);
        }
        Ok(stack)
    }

    fn check_inside(&self, x: f64, y: f64) -> Result<()> {
        const EPS: f64 = 1e-9;
        if x < -EPS || y < -EPS || x > self.config.length + EPS || y > self.config.width + EPS {
            return Err(Error::invalid(format!(
                "position ({x}, {y}) lies outside the {} x {} m scene",
                self.config.length, self.config.width
            )));
        }
        Ok(())
    }

    /// Survey profiles implied by the layout (grid rows in grid mode).
    pub fn profiles(&self) -> Vec<Profile> {
        match &self.config.layout {
            SurveyLayout::Grid => (0..self.shape.ny)
                .map(|j| Profile {
                    name: format!("row{j}"),
                    axis: ProfileAxis::Longitudinal,
                    offset: self.shape.position(0, j).1,
                })
                .collect(),
            SurveyLayout::Profiles {
                longitudinal,
                transverse_inset,
            } => {
                let mut out: Vec<Profile> = longitudinal
                    .iter()
                    .map(|(name, y)| Profile {
                        name: name.clone(),
                        axis: ProfileAxis::Longitudinal,
                        offset: *y,
                    })
                    .collect();
                if let Some(inset) = transverse_inset {
                    for s in self.sections() {
                        for (tag, x) in [("start", s.start + inset), ("end", s.end - inset)] {
                            out.push(Profile {
                                name: format!("{}-{tag}", s.name),
                                axis: ProfileAxis::Transverse,
                                offset: x,
                            });
                        }
                    }
                }
                out
            }
        }
    }
}
