//! Synthetic GPR traces from a 1-D layered-media reflection model.
//!
//! Each trace is computed at normal incidence: the global reflection
//! coefficient of the local layer stack is evaluated on the DFT frequency grid
//! of the acquisition, multiplied by the Ricker source spectrum and brought
//! back to the time domain. The antenna is ground-coupled, so the incident
//! medium is the top layer itself; the direct coupling wave is added as a
//! fixed early-time template.
//!
//! Time-harmonic convention is `exp(+jωt)`: losses give `Im(k) < 0` and a
//! layer of thickness `d` contributes the round-trip factor `exp(-2jkd)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::scene::{validate_stack, Layer, PavementScene, ProfileAxis};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseKind {
    Ricker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Hz; also the peak of the Ricker amplitude spectrum.
    pub center_frequency: f64,
    pub kind: PulseKind,
    pub amplitude: f64,
    /// Time of the wavelet peak within the trace (s). This is time zero for
    /// two-way travel times.
    pub delay: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        PulseSpec {
            center_frequency: 2.6e9,
            kind: PulseKind::Ricker,
            amplitude: 1.0,
            delay: 1.0e-9,
        }
    }
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) || !self.center_frequency.is_finite() {
            return Err(Error::invalid(format!(
                "pulse center frequency must be positive, got {}",
                self.center_frequency
            )));
        }
        if !self.amplitude.is_finite() || !self.delay.is_finite() {
            return Err(Error::invalid("pulse amplitude and delay must be finite"));
        }
        Ok(())
    }

    /// Continuous Fourier transform of the delayed wavelet at `f` Hz.
    pub fn spectrum(&self, f: f64) -> Complex64 {
        match self.kind {
            PulseKind::Ricker => {
                let fp = self.center_frequency;
                let magnitude =
                    self.amplitude * 2.0 / PI.sqrt() * f * f / (fp * fp * fp) * (-(f * f) / (fp * fp)).exp();
                Complex64::from_polar(magnitude, -2.0 * PI * f * self.delay)
            }
        }
    }

    /// Wavelet value at time `t` s.
    pub fn waveform(&self, t: f64) -> f64 {
        match self.kind {
            PulseKind::Ricker => {
                let a = PI * self.center_frequency * (t - self.delay);
                let a2 = a * a;
                self.amplitude * (1.0 - 2.0 * a2) * (-a2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    /// Seconds.
    pub time_window: f64,
    pub samples_per_trace: usize,
    /// Trace spacing along profiles.
    pub traces_per_meter: f64,
    /// SNR in dB relative to the subsurface (reflected) part of each trace.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    /// Amplitude of the direct coupling template relative to the source;
    /// 0 disables it.
    pub direct_wave_amplitude: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            time_window: 20e-9,
            samples_per_trace: 2048,
            traces_per_meter: 50.0,
            noise_snr_db: None,
            seed: 0,
            direct_wave_amplitude: 5.0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_trace < 2 {
            return Err(Error::invalid("samples_per_trace must be >= 2"));
        }
        if !(self.time_window > 0.0) || !self.time_window.is_finite() {
            return Err(Error::invalid("time_window must be positive"));
        }
        if !(self.traces_per_meter > 0.0) || !self.traces_per_meter.is_finite() {
            return Err(Error::invalid("traces_per_meter must be positive"));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("noise_snr_db must be finite"));
            }
        }
        if !(self.direct_wave_amplitude >= 0.0) {
            return Err(Error::invalid("direct_wave_amplitude must be >= 0"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.time_window / self.samples_per_trace as f64
    }

    /// Non-negative DFT frequencies `k / time_window`, `k = 0..=N/2`.
    pub fn frequency_grid(&self) -> Vec<f64> {
        (0..=self.samples_per_trace / 2)
            .map(|k| k as f64 / self.time_window)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AScan {
    pub samples: Vec<f64>,
    pub dt: f64,
    /// (x, y) metres.
    pub position: (f64, f64),
    /// Applied emulsion (g/m²), when known.
    pub truth_quantity: Option<f64>,
}

impl AScan {
    pub fn time_window(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub name: String,
    pub axis: ProfileAxis,
    pub offset: f64,
    pub traces: Vec<AScan>,
}

/// Complex relative permittivity `ε_r - jσ/(ωε₀)`; lossless at DC.
pub fn complex_permittivity(rel_permittivity: f64, conductivity: f64, frequency: f64) -> Complex64 {
    if frequency <= 0.0 || conductivity == 0.0 {
        return Complex64::new(rel_permittivity, 0.0);
    }
    let omega = 2.0 * PI * frequency;
    Complex64::new(rel_permittivity, -conductivity / (omega * VACUUM_PERMITTIVITY))
}

/// Normal-incidence Fresnel reflection from medium 1 into medium 2.
pub fn fresnel_reflection(eps1: Complex64, eps2: Complex64) -> Complex64 {
    let n1 = eps1.sqrt();
    let n2 = eps2.sqrt();
    (n1 - n2) / (n1 + n2)
}

/// Global reflection coefficient seen from inside the first layer.
///
/// The first layer is the incident half-space (its thickness is ignored) and
/// the last one the substratum. Interfaces are folded bottom-up:
/// `R_i = (r_i + R_{i+1}·P) / (1 + r_i·R_{i+1}·P)` with
/// `P = exp(-2j·k_{i+1}·d_{i+1})`.
pub fn layered_reflection_response(stack: &[Layer], freqs: &[f64]) -> Result<Vec<Complex64>> {
    validate_stack(stack)?;
    if let Some(f) = freqs.iter().find(|f| !(**f >= 0.0)) {
        return Err(Error::invalid(format!("frequencies must be >= 0, got {f}")));
    }
    let n = stack.len();
    let mut eps = vec![Complex64::new(0.0, 0.0); n];
    Ok(freqs
        .iter()
        .map(|&f| {
            for (e, layer) in eps.iter_mut().zip(stack) {
                *e = complex_permittivity(layer.rel_permittivity, layer.conductivity, f);
            }
            let k0 = 2.0 * PI * f / SPEED_OF_LIGHT;
            let mut big_r = fresnel_reflection(eps[n - 2], eps[n - 1]);
            for i in (0..n - 2).rev() {
                let r = fresnel_reflection(eps[i], eps[i + 1]);
                let k = k0 * eps[i + 1].sqrt();
                let phase = (Complex64::new(0.0, -2.0) * k * stack[i + 1].thickness).exp();
                let rp = big_r * phase;
                big_r = (r + rp) / (1.0 + r * rp);
            }
            big_r
        })
        .collect())
}

/// Time trace from a reflection response on the acquisition frequency grid.
///
/// `noise_stream` selects an independent noise sequence for the trace (the
/// survey passes the trace index), so traces can be synthesized in any order.
pub fn synthesize_ascan(
    response: &[Complex64],
    pulse: &PulseSpec,
    acq: &AcquisitionSpec,
    noise_stream: u64,
) -> Result<AScan> {
    pulse.validate()?;
    acq.validate()?;
    let n = acq.samples_per_trace;
    if response.len() != n / 2 + 1 {
        return Err(Error::invalid(format!(
            "frequency-grid mismatch: response has {} bins, acquisition needs {}",
            response.len(),
            n / 2 + 1
        )));
    }
    let freqs = acq.frequency_grid();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for (k, (&r, &f)) in response.iter().zip(&freqs).enumerate() {
        spectrum[k] = pulse.spectrum(f) * r;
    }
    // Real signal: Hermitian spectrum, real DC and Nyquist bins.
    spectrum[0].im = 0.0;
    if n % 2 == 0 {
        spectrum[n / 2].im = 0.0;
    }
    for k in 1..n.div_ceil(2) {
        spectrum[n - k] = spectrum[k].conj();
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / acq.time_window;
    let reflected: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();

    let dt = acq.dt();
    let mut samples: Vec<f64> = reflected
        .iter()
        .enumerate()
        .map(|(k, &v)| v + acq.direct_wave_amplitude * pulse.waveform(k as f64 * dt))
        .collect();

    if let Some(snr_db) = acq.noise_snr_db {
        let power = reflected.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
            rng.set_stream(noise_stream);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            for s in &mut samples {
                *s += normal.sample(&mut rng);
            }
        }
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("synthesized trace contains non-finite samples"));
    }
    Ok(AScan {
        samples,
        dt,
        position: (0.0, 0.0),
        truth_quantity: None,
    })
}

/// Stack seen by a ground-coupled antenna: the top layer doubles as the
/// incident half-space.
pub fn antenna_stack(stack: &[Layer]) -> Vec<Layer> {
    let mut out = Vec::with_capacity(stack.len() + 1);
    if let Some(top) = stack.first() {
        let mut coupling = top.clone();
        coupling.name = format!("{} (antenna side)", top.name);
        coupling.thickness = 0.0;
        out.push(coupling);
    }
    out.extend_from_slice(stack);
    out
}

/// One trace per survey position; see [`simulate_survey`].
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    pub bscans: Vec<BScan>,
    pub pulse: PulseSpec,
    pub acquisition: AcquisitionSpec,
}

impl Survey {
    /// Labeled trace table: all traces, profile by profile.
    pub fn traces(&self) -> impl Iterator<Item = &AScan> {
        self.bscans.iter().flat_map(|b| b.traces.iter())
    }

    pub fn trace_count(&self) -> usize {
        self.bscans.iter().map(|b| b.traces.len()).sum()
    }
}

/// Positions along `[0, extent]` spaced `1 / traces_per_meter` apart.
fn profile_positions(extent: f64, traces_per_meter: f64) -> Vec<f64> {
    let count = (extent * traces_per_meter + 1e-9).floor() as usize + 1;
    (0..count).map(|k| k as f64 / traces_per_meter).collect()
}

/// Simulates every trace of the scene's survey layout.
///
/// Grid layouts record one trace per node (one B-scan per grid row); profile
/// layouts record traces every `1/traces_per_meter` metres along each
/// profile. Traces are independent and computed in parallel; the output
/// order and every noise sample depend only on the inputs.
pub fn simulate_survey(
    scene: &PavementScene,
    pulse: &PulseSpec,
    acq: &AcquisitionSpec,
) -> Result<Survey> {
    pulse.validate()?;
    acq.validate()?;
    let cfg = scene.config();
    let shape = scene.grid_shape();
    let grid_mode = matches!(cfg.layout, crate::scene::SurveyLayout::Grid);

    let mut jobs: Vec<(usize, (f64, f64))> = Vec::new();
    let profiles = scene.profiles();
    for (p, profile) in profiles.iter().enumerate() {
        let positions: Vec<(f64, f64)> = match (grid_mode, profile.axis) {
            (true, _) => (0..shape.nx)
                .map(|i| (shape.position(i, 0).0, profile.offset))
                .collect(),
            (false, ProfileAxis::Longitudinal) => {
                profile_positions(cfg.length, acq.traces_per_meter)
                    .into_iter()
                    .map(|x| (x, profile.offset))
                    .collect()
            }
            (false, ProfileAxis::Transverse) => profile_positions(cfg.width, acq.traces_per_meter)
                .into_iter()
                .map(|y| (profile.offset, y))
                .collect(),
        };
        jobs.extend(positions.into_iter().map(|pos| (p, pos)));
    }

    let freqs = acq.frequency_grid();
    let traces = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(_, (x, y)))| {
            let stack = antenna_stack(&scene.stack_at(x, y)?);
            let response = layered_reflection_response(&stack, &freqs)?;
            let mut ascan = synthesize_ascan(&response, pulse, acq, index as u64)?;
            ascan.position = (x, y);
            ascan.truth_quantity = Some(scene.quantity_at(x, y)?);
            Ok(ascan)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bscans: Vec<BScan> = profiles
        .into_iter()
        .map(|p| BScan {
            name: p.name,
            axis: p.axis,
            offset: p.offset,
            traces: Vec::new(),
        })
        .collect();
    for ((p, _), trace) in jobs.iter().zip(traces) {
        bscans[*p].traces.push(trace);
    }
    Ok(Survey {
        bscans,
        pulse: *pulse,
        acquisition: *acq,
    })
}
