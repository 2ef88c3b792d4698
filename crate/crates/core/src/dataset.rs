//! On-disk datasets.
//!
//! * Trace table `traces.csv`: header `x,y,quantity,s0,...,s{N-1}`, one row
//!   per A-scan, samples as decimal text. `quantity` (truth, g/m²) may be
//!   absent from the header entirely, which makes the table prediction-only.
//! * Sidecar `traces.meta`: `key = value` lines; `dt` is required, other keys
//!   (`time_zero`, `pulse.*`, `acq.*`, `grid.*`, `section_boundaries`) are
//!   carried along.
//! * `manifest.txt`: paths of the two files, SHA-256 of the table,
//!   provenance (`simulated` or `ingested`), trace count and label flag.
//! * Feature table `features.csv`: header `x,y,label,f0,...`, `label` being
//!   the truth quantity or empty; sidecar `features.meta`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::em_forward::{AScan, Survey};
use crate::features::FeatureVector;
use crate::grid::GridShape;
use crate::scene::PavementScene;
use crate::{Error, Result};

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub BTreeMap<String, String>);

impl Metadata {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str, path: &Path) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("{key} = '{v}' is not a number")))
            })
            .transpose()
    }

    pub fn to_text(&self) -> String {
        self.0.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k} = {v}");
            out
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("line {}: expected key = value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Metadata(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    /// Grid shape stored under `grid.nx`, `grid.ny`, `grid.step`.
    pub fn grid_shape(&self, path: &Path) -> Result<Option<GridShape>> {
        let (Some(nx), Some(ny), Some(step)) = (
            self.get_f64("grid.nx", path)?,
            self.get_f64("grid.ny", path)?,
            self.get_f64("grid.step", path)?,
        ) else {
            return Ok(None);
        };
        Ok(Some(GridShape {
            nx: nx as usize,
            ny: ny as usize,
            step,
        }))
    }

    pub fn set_grid_shape(&mut self, shape: GridShape) {
        self.set("grid.nx", shape.nx);
        self.set("grid.ny", shape.ny);
        self.set("grid.step", shape.step);
    }

    pub fn section_boundaries(&self, path: &Path) -> Result<Vec<f64>> {
        match self.get("section_boundaries") {
            None | Some("") => Ok(vec![]),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::parse(path, format!("bad section boundary '{s}'")))
                })
                .collect(),
        }
    }

    /// Copies the keys later stages need (grid, boundaries).
    pub fn carry_over(&self) -> Metadata {
        let mut m = Metadata::default();
        for (k, v) in &self.0 {
            if k.starts_with("grid.") || k == "section_boundaries" {
                m.0.insert(k.clone(), v.clone());
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub x: f64,
    pub y: f64,
    pub quantity: Option<f64>,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub rows: Vec<TraceRow>,
    pub dt: f64,
    pub labeled: bool,
    pub meta: Metadata,
}

impl TraceTable {
    pub fn from_survey(survey: &Survey, scene: &PavementScene) -> Self {
        let acq = &survey.acquisition;
        let pulse = &survey.pulse;
        let mut meta = Metadata::default();
        meta.set("dt", acq.dt());
        meta.set("samples", acq.samples_per_trace);
        meta.set("time_zero", pulse.delay);
        meta.set("pulse.kind", "ricker");
        meta.set("pulse.center_frequency", pulse.center_frequency);
        meta.set("pulse.amplitude", pulse.amplitude);
        meta.set("pulse.delay", pulse.delay);
        meta.set("acq.time_window", acq.time_window);
        meta.set("acq.samples", acq.samples_per_trace);
        meta.set("acq.traces_per_meter", acq.traces_per_meter);
        meta.set(
            "acq.snr_db",
            acq.noise_snr_db.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        meta.set("acq.seed", acq.seed);
        meta.set("acq.direct_wave_amplitude", acq.direct_wave_amplitude);
        meta.set("scene.name", scene.name());
        meta.set("scene.scheme", scene.scheme().to_config_string());
        meta.set_grid_shape(scene.grid_shape());
        let boundaries: Vec<String> = scene.section_boundaries().iter().map(f64::to_string).collect();
        meta.set("section_boundaries", boundaries.join(","));
        TraceTable {
            rows: survey
                .traces()
                .map(|a| TraceRow {
                    x: a.position.0,
                    y: a.position.1,
                    quantity: a.truth_quantity,
                    samples: a.samples.clone(),
                })
                .collect(),
            dt: acq.dt(),
            labeled: true,
            meta,
        }
    }

    pub fn ascan(&self, i: usize) -> AScan {
        let r = &self.rows[i];
        AScan {
            samples: r.samples.clone(),
            dt: self.dt,
            position: (r.x, r.y),
            truth_quantity: r.quantity,
        }
    }

    /// CSV text; samples are written at single precision.
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.samples.len());
        let mut out = String::from("x,y");
        if self.labeled {
            out.push_str(",quantity");
        }
        for k in 0..n {
            let _ = write!(out, ",s{k}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.x, r.y);
            if self.labeled {
                out.push(',');
                if let Some(q) = r.quantity {
                    let _ = write!(out, "{q}");
                }
            }
            for s in &r.samples {
                let _ = write!(out, ",{}", *s as f32);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, table_path: &Path, meta_path: &Path) -> Result<()> {
        write_file(table_path, self.to_csv().as_bytes())?;
        self.meta.save(meta_path)
    }

    /// Reads and validates a trace table and its metadata.
    pub fn read(table_path: &Path, meta_path: &Path) -> Result<Self> {
        let meta = Metadata::load(meta_path)?;
        let dt = meta
            .get_f64("dt", meta_path)?
            .ok_or_else(|| Error::parse(meta_path, "metadata has no dt"))?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::parse(meta_path, format!("dt must be positive, got {dt}")));
        }
        let text = read_text(table_path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(table_path, "empty trace table"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "x" || cols[1] != "y" {
            return Err(Error::parse(table_path, "header must start with x,y"));
        }
        let labeled = cols[2] == "quantity";
        let first_sample = if labeled { 3 } else { 2 };
        for (k, c) in cols[first_sample..].iter().enumerate() {
            if *c != format!("s{k}") {
                return Err(Error::parse(table_path, format!("column {} should be s{k}, found '{c}'", first_sample + k + 1)));
            }
        }
        let n_samples = cols.len() - first_sample;
        if n_samples < 2 {
            return Err(Error::parse(table_path, "trace table needs at least 2 samples per trace"));
        }
        let mut rows = Vec::new();
        for (row_index, (line_no, line)) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            let row_no = row_index + 1;
            if cells.len() != cols.len() {
                return Err(Error::parse(
                    table_path,
                    format!(
                        "ragged row {row_no} (line {}): {} fields, header has {}",
                        line_no + 1,
                        cells.len(),
                        cols.len()
                    ),
                ));
            }
            let num = |k: usize| -> Result<f64> {
                let c = cells[k].trim();
                c.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::parse(
                        table_path,
                        format!("row {row_no}, column {}: '{c}' is not a finite number", cols[k]),
                    )
                })
            };
            let quantity = if labeled && !cells[2].trim().is_empty() { Some(num(2)?) } else { None };
            rows.push(TraceRow {
                x: num(0)?,
                y: num(1)?,
                quantity,
                samples: (first_sample..cells.len()).map(num).collect::<Result<_>>()?,
            });
        }
        if rows.is_empty() {
            return Err(Error::parse(table_path, "trace table has no rows"));
        }
        let labeled = labeled && rows.iter().all(|r| r.quantity.is_some());
        Ok(TraceTable { rows, dt, labeled, meta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Ingested,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Ingested => "ingested",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub traces: PathBuf,
    pub meta: PathBuf,
    /// Hex SHA-256 of the trace table.
    pub checksum: String,
    pub provenance: Provenance,
    pub trace_count: usize,
    /// False for prediction-only datasets.
    pub labeled: bool,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl DatasetManifest {
    pub fn new(traces: &Path, meta: &Path, table: &TraceTable, provenance: Provenance) -> Result<Self> {
        Ok(DatasetManifest {
            traces: traces.to_path_buf(),
            meta: meta.to_path_buf(),
            checksum: sha256_file(traces)?,
            provenance,
            trace_count: table.rows.len(),
            labeled: table.labeled,
        })
    }

    /// Writes the manifest; paths inside the manifest's directory are stored
    /// relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| -> String {
            p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
        };
        let mut m = Metadata::default();
        m.set("traces", rel(&self.traces));
        m.set("meta", rel(&self.meta));
        m.set("checksum", format!("sha256:{}", self.checksum));
        m.set("provenance", self.provenance.name());
        m.set("trace_count", self.trace_count);
        m.set("labeled", self.labeled);
        m.save(path)
    }

    /// Loads a manifest and verifies the trace-table checksum.
    pub fn load(path: &Path) -> Result<Self> {
        let m = Metadata::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let field = |k: &str| m.get(k).ok_or_else(|| Error::parse(path, format!("manifest has no {k}")));
        let checksum = field("checksum")?
            .strip_prefix("sha256:")
            .ok_or_else(|| Error::parse(path, "checksum must start with sha256:"))?
            .to_string();
        let manifest = DatasetManifest {
            traces: dir.join(field("traces")?),
            meta: dir.join(field("meta")?),
            checksum,
            provenance: match field("provenance")? {
                "simulated" => Provenance::Simulated,
                "ingested" => Provenance::Ingested,
                other => return Err(Error::parse(path, format!("unknown provenance '{other}'"))),
            },
            trace_count: field("trace_count")?
                .parse()
                .map_err(|_| Error::parse(path, "bad trace_count"))?,
            labeled: field("labeled")? == "true",
        };
        let actual = sha256_file(&manifest.traces)?;
        if actual != manifest.checksum {
            return Err(Error::parse(
                &manifest.traces,
                format!("checksum mismatch: manifest says {}, file is {actual}", manifest.checksum),
            ));
        }
        Ok(manifest)
    }

    pub fn load_table(&self) -> Result<TraceTable> {
        let table = TraceTable::read(&self.traces, &self.meta)?;
        if table.rows.len() != self.trace_count {
            return Err(Error::parse(
                &self.traces,
                format!("manifest lists {} traces, table has {}", self.trace_count, table.rows.len()),
            ));
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub x: f64,
    pub y: f64,
    /// Truth quantity (g/m²), if known.
    pub label: Option<f64>,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub meta: Metadata,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.dim())
    }

    pub fn labeled(&self) -> bool {
        self.rows.iter().all(|r| r.label.is_some())
    }

    /// Features at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,label");
        for k in 0..self.dim() {
            let _ = write!(out, ",f{k}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},", r.x, r.y);
            if let Some(l) = r.label {
                let _ = write!(out, "{l}");
            }
            for f in &r.features.0 {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, meta_path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())?;
        self.meta.save(meta_path)
    }

    pub fn read(path: &Path, meta_path: &Path) -> Result<Self> {
        let meta = if meta_path.exists() { Metadata::load(meta_path)? } else { Metadata::default() };
        let text = read_text(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::parse(path, "empty feature table"))?
            .split(',')
            .collect();
        if header.len() < 4 || header[..3] != ["x", "y", "label"] {
            return Err(Error::parse(path, "header must be x,y,label,f0,..."));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::parse(path, format!("ragged row {}: {} fields", i + 1, cells.len())));
            }
            let num = |c: &str| -> Result<f64> {
                c.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, format!("row {}: '{c}' is not a number", i + 1)))
            };
            rows.push(FeatureRow {
                x: num(cells[0])?,
                y: num(cells[1])?,
                label: if cells[2].trim().is_empty() { None } else { Some(num(cells[2])?) },
                features: FeatureVector(cells[3..].iter().map(|c| num(c)).collect::<Result<_>>()?),
            });
        }
        if rows.is_empty() {
            return Err(Error::parse(path, "feature table has no rows"));
        }
        Ok(FeatureTable { rows, meta })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
