//! A-scan feature extraction and z-score normalization.
//!
//! Features are computed on a gated segment of the trace that isolates the
//! echoes around the tack-coat interface. The families are, in output order:
//!
//! | family                   | values            |
//! |--------------------------|-------------------|
//! | `window_energy`          | `window_count`    |
//! | `window_peak_amplitude`  | `window_count`    |
//! | `peak_time`              | 1                 |
//! | `spectral_centroid`      | 1                 |
//! | `spectral_band_energies` | `band_count`      |
//! | `raw_decimated`          | `raw_count`       |
//!
//! so `D = W·[energy] + W·[peak] + [time] + [centroid] + B·[bands] + R·[raw]`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::em_forward::AScan;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    /// Fixed `[start, end]` in seconds from the start of the trace.
    Window { start: f64, end: f64 },
    /// Centered `offset` seconds after the first-arrival envelope peak.
    Auto { offset: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    WindowEnergy,
    WindowPeakAmplitude,
    PeakTime,
    SpectralCentroid,
    SpectralBandEnergies,
    RawDecimated,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 6] = [
        FeatureFamily::WindowEnergy,
        FeatureFamily::WindowPeakAmplitude,
        FeatureFamily::PeakTime,
        FeatureFamily::SpectralCentroid,
        FeatureFamily::SpectralBandEnergies,
        FeatureFamily::RawDecimated,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureFamily::WindowEnergy => "window_energy",
            FeatureFamily::WindowPeakAmplitude => "window_peak_amplitude",
            FeatureFamily::PeakTime => "peak_time",
            FeatureFamily::SpectralCentroid => "spectral_centroid",
            FeatureFamily::SpectralBandEnergies => "spectral_band_energies",
            FeatureFamily::RawDecimated => "raw_decimated",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name.trim())
            .ok_or_else(|| Error::config(format!("unknown feature family '{name}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub gate: Gate,
    pub window_count: usize,
    /// Enabled families; output order is always that of [`FeatureFamily::ALL`].
    pub include: Vec<FeatureFamily>,
    /// Lower edge of the first octave band (Hz).
    pub band_base: f64,
    pub band_count: usize,
    pub raw_count: usize,
    /// Minimum zero-padded FFT length for the spectral families.
    pub fft_len: usize,
    /// Fraction of the envelope maximum a local peak must reach to count as
    /// the first arrival.
    pub arrival_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            gate: Gate::Auto {
                offset: 0.95e-9,
                width: 1.3e-9,
            },
            window_count: 8,
            include: vec![
                FeatureFamily::WindowEnergy,
                FeatureFamily::WindowPeakAmplitude,
                FeatureFamily::PeakTime,
                FeatureFamily::SpectralCentroid,
                FeatureFamily::SpectralBandEnergies,
                FeatureFamily::RawDecimated,
            ],
            band_base: 325e6,
            band_count: 6,
            raw_count: 16,
            fft_len: 1024,
            arrival_threshold: 0.5,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.include.is_empty() {
            return Err(Error::invalid("at least one feature family must be enabled"));
        }
        if self.window_count == 0 {
            return Err(Error::invalid("window_count must be positive"));
        }
        if self.has(FeatureFamily::SpectralBandEnergies) && (self.band_count == 0 || !(self.band_base > 0.0)) {
            return Err(Error::invalid("band energies need band_count > 0 and band_base > 0"));
        }
        if self.has(FeatureFamily::RawDecimated) && self.raw_count == 0 {
            return Err(Error::invalid("raw_decimated needs raw_count > 0"));
        }
        if !(self.arrival_threshold > 0.0 && self.arrival_threshold <= 1.0) {
            return Err(Error::invalid("arrival_threshold must lie in (0, 1]"));
        }
        match self.gate {
            Gate::Window { start, end } if !(start < end) => Err(Error::invalid(format!(
                "inverted gate: start {start} s is not before end {end} s"
            ))),
            Gate::Auto { width, .. } if !(width > 0.0) => {
                Err(Error::invalid("automatic gate width must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn has(&self, family: FeatureFamily) -> bool {
        self.include.contains(&family)
    }

    /// Feature dimension `D`, a function of the config alone.
    pub fn dimension(&self) -> usize {
        FeatureFamily::ALL
            .iter()
            .filter(|f| self.has(**f))
            .map(|f| match f {
                FeatureFamily::WindowEnergy | FeatureFamily::WindowPeakAmplitude => self.window_count,
                FeatureFamily::PeakTime | FeatureFamily::SpectralCentroid => 1,
                FeatureFamily::SpectralBandEnergies => self.band_count,
                FeatureFamily::RawDecimated => self.raw_count,
            })
            .sum()
    }

    /// Column names `family[k]` in output order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dimension());
        for f in FeatureFamily::ALL.iter().filter(|f| self.has(**f)) {
            let count = match f {
                FeatureFamily::WindowEnergy | FeatureFamily::WindowPeakAmplitude => self.window_count,
                FeatureFamily::PeakTime | FeatureFamily::SpectralCentroid => 1,
                FeatureFamily::SpectralBandEnergies => self.band_count,
                FeatureFamily::RawDecimated => self.raw_count,
            };
            for k in 0..count {
                names.push(format!("{}[{k}]", f.name()));
            }
        }
        names
    }
}

/// Fixed-dimension feature vector of one A-scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

/// Envelope `|x + j·H{x}|` of a real trace via the FFT analytic signal.
pub fn envelope(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // Keep DC (and Nyquist), double positive frequencies, drop negative ones.
    for (k, c) in buf.iter_mut().enumerate() {
        let weight = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= weight;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}

/// Time (s) of the first envelope peak reaching `threshold` of the maximum.
pub fn first_arrival(ascan: &AScan, threshold: f64) -> Result<f64> {
    let env = envelope(&ascan.samples);
    let max = env.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::NoArrival);
    }
    let level = threshold * max;
    let n = env.len();
    let idx = (0..n)
        .find(|&k| {
            env[k] >= level
                && (k == 0 || env[k] >= env[k - 1])
                && (k + 1 == n || env[k] >= env[k + 1])
        })
        .ok_or(Error::NoArrival)?;
    Ok(idx as f64 * ascan.dt)
}

/// A trace with everything outside the gate zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedTrace {
    pub samples: Vec<f64>,
    /// First sample index inside the gate.
    pub start: usize,
    /// One past the last sample inside the gate.
    pub end: usize,
}

impl GatedTrace {
    pub fn segment(&self) -> &[f64] {
        &self.samples[self.start..self.end]
    }
}

/// Resolves `gate` against `ascan` and zeroes samples outside it.
pub fn gate_trace(ascan: &AScan, gate: &Gate) -> Result<GatedTrace> {
    gate_trace_with_threshold(ascan, gate, FeatureConfig::default().arrival_threshold)
}

fn gate_trace_with_threshold(ascan: &AScan, gate: &Gate, threshold: f64) -> Result<GatedTrace> {
    let window = ascan.time_window();
    let (t_start, t_end) = match *gate {
        Gate::Window { start, end } => {
            if !(start < end) {
                return Err(Error::invalid(format!(
                    "inverted gate: start {start} s is not before end {end} s"
                )));
            }
            if start < 0.0 || end > window * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "gate [{start}, {end}] s exceeds the trace window [0, {window}] s"
                )));
            }
            (start, end)
        }
        Gate::Auto { offset, width } => {
            let center = first_arrival(ascan, threshold)? + offset;
            ((center - 0.5 * width).max(0.0), (center + 0.5 * width).min(window))
        }
    };
    let n = ascan.samples.len();
    let start = ((t_start / ascan.dt) - 1e-9).ceil().max(0.0) as usize;
    let end = (((t_end / ascan.dt) + 1e-9).floor() as usize + 1).min(n);
    if start >= end {
        return Err(Error::invalid(format!(
            "gate [{t_start}, {t_end}] s contains no samples"
        )));
    }
    let samples = ascan
        .samples
        .iter()
        .enumerate()
        .map(|(k, &s)| if k >= start && k < end { s } else { 0.0 })
        .collect();
    Ok(GatedTrace { samples, start, end })
}

/// Splits `0..len` into `parts` contiguous ranges of near-equal size.
fn partition(len: usize, parts: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..parts).map(move |i| (i * len / parts)..((i + 1) * len / parts))
}

pub fn extract_features(ascan: &AScan, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    if ascan.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("trace contains non-finite samples"));
    }
    let gated = gate_trace_with_threshold(ascan, &cfg.gate, cfg.arrival_threshold)?;
    let seg = gated.segment();
    let len = seg.len();
    let mut out = Vec::with_capacity(cfg.dimension());

    if (cfg.has(FeatureFamily::WindowEnergy) || cfg.has(FeatureFamily::WindowPeakAmplitude))
        && len < cfg.window_count
    {
        return Err(Error::invalid(format!(
            "gate holds {len} samples, fewer than window_count = {}",
            cfg.window_count
        )));
    }
    if cfg.has(FeatureFamily::WindowEnergy) {
        out.extend(partition(len, cfg.window_count).map(|r| seg[r].iter().map(|v| v * v).sum::<f64>()));
    }
    if cfg.has(FeatureFamily::WindowPeakAmplitude) {
        out.extend(partition(len, cfg.window_count).map(|r| signed_peak(&seg[r]).1));
    }
    if cfg.has(FeatureFamily::PeakTime) {
        let (k, _) = signed_peak(seg);
        out.push((gated.start + k) as f64 * ascan.dt);
    }
    if cfg.has(FeatureFamily::SpectralCentroid) || cfg.has(FeatureFamily::SpectralBandEnergies) {
        let nfft = cfg.fft_len.max(len).next_power_of_two();
        let mut buf: Vec<Complex64> = seg.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        FftPlanner::<f64>::new().plan_fft_forward(nfft).process(&mut buf);
        let df = 1.0 / (nfft as f64 * ascan.dt);
        let power: Vec<(f64, f64)> = buf[..=nfft / 2]
            .iter()
            .enumerate()
            .map(|(k, c)| (k as f64 * df, c.norm_sqr()))
            .collect();
        if cfg.has(FeatureFamily::SpectralCentroid) {
            let total: f64 = power.iter().map(|(_, p)| p).sum();
            let weighted: f64 = power.iter().map(|(f, p)| f * p).sum();
            out.push(if total > 0.0 { weighted / total } else { 0.0 });
        }
        if cfg.has(FeatureFamily::SpectralBandEnergies) {
            for b in 0..cfg.band_count {
                let lo = cfg.band_base * 2f64.powi(b as i32);
                let hi = 2.0 * lo;
                out.push(power.iter().filter(|(f, _)| *f >= lo && *f < hi).map(|(_, p)| p).sum());
            }
        }
    }
    if cfg.has(FeatureFamily::RawDecimated) {
        if len < cfg.raw_count {
            return Err(Error::invalid(format!(
                "gate holds {len} samples, fewer than raw_count = {}",
                cfg.raw_count
            )));
        }
        out.extend(
            partition(len, cfg.raw_count).map(|r| seg[r.clone()].iter().sum::<f64>() / r.len() as f64),
        );
    }
    debug_assert_eq!(out.len(), cfg.dimension());
    Ok(FeatureVector(out))
}

/// Index and signed value of the largest-magnitude sample (first on ties).
fn signed_peak(values: &[f64]) -> (usize, f64) {
    let mut best = (0, 0.0f64);
    for (k, &v) in values.iter().enumerate() {
        if v.abs() > best.1.abs() {
            best = (k, v);
        }
    }
    best
}

/// Per-column z-score fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero-variance columns; they pass through unchanged.
    pub degenerate: Vec<bool>,
}

pub fn fit_normalizer(vectors: &[FeatureVector]) -> Result<Normalizer> {
    if vectors.len() < 2 {
        return Err(Error::invalid(format!(
            "fitting a normalizer needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(&v.0) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in vectors {
        for ((s, x), m) in var.iter_mut().zip(&v.0).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    // Relative floor: a column whose spread is rounding noise counts as constant.
    let degenerate = std
        .iter()
        .zip(&mean)
        .map(|(s, m)| !(*s > 1e-12 * m.abs().max(f64::MIN_POSITIVE)))
        .collect();
    Ok(Normalizer {
        mean,
        std,
        degenerate,
    })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, vector: &FeatureVector) -> Result<FeatureVector> {
        if vector.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: vector.dim(),
            });
        }
        Ok(FeatureVector(
            vector
                .0
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    if self.degenerate[j] {
                        x
                    } else {
                        (x - self.mean[j]) / self.std[j]
                    }
                })
                .collect(),
        ))
    }
}

pub fn apply_normalizer(normalizer: &Normalizer, vector: &FeatureVector) -> Result<FeatureVector> {
    normalizer.apply(vector)
}
