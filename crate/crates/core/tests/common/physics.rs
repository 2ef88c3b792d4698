//! Forward-model checks shared by the property and acceptance tests.

use num_complex::Complex64;
use tackcoat::em_forward::{
    fresnel_reflection, layered_reflection_response, synthesize_ascan, AcquisitionSpec, PulseSpec,
    SPEED_OF_LIGHT,
};
use tackcoat::features::envelope;
use tackcoat::scene::Layer;

pub fn lossless(name: &str, thickness: f64, eps: f64) -> Layer {
    Layer::new(name, thickness, eps, 0.0).unwrap()
}

pub fn half_space(eps: f64) -> Layer {
    Layer::half_space("substratum", eps, 0.0).unwrap()
}

/// Air over a dielectric of ε_r = 4: returns `|r - (-1/3)|`.
pub fn fresnel_air_to_eps4_error() -> f64 {
    let r = fresnel_reflection(Complex64::new(1.0, 0.0), Complex64::new(4.0, 0.0));
    (r - Complex64::new(-1.0 / 3.0, 0.0)).norm()
}

/// No direct wave, no noise.
pub fn clean_acquisition() -> AcquisitionSpec {
    AcquisitionSpec {
        direct_wave_amplitude: 0.0,
        noise_snr_db: None,
        ..AcquisitionSpec::default()
    }
}

/// Envelope-peak time of the echo from the bottom of a `d` m layer of
/// permittivity `eps` (seen from inside the layer), its expected two-way time
/// `2d√ε/c` after the pulse peak, and the sampling interval.
pub fn single_layer_echo(d: f64, eps: f64) -> (f64, f64, f64) {
    let acq = clean_acquisition();
    let pulse = PulseSpec::default();
    let stack = vec![
        lossless("incident", 0.0, eps),
        lossless("layer", d, eps),
        half_space(eps + 5.0),
    ];
    let response = layered_reflection_response(&stack, &acq.frequency_grid()).unwrap();
    let trace = synthesize_ascan(&response, &pulse, &acq, 0).unwrap();
    let env = envelope(&trace.samples);
    let (k, _) = env
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
    let measured = k as f64 * trace.dt - pulse.delay;
    (measured, 2.0 * d * eps.sqrt() / SPEED_OF_LIGHT, trace.dt)
}

/// Largest response difference between `stack` with a zero-thickness layer
/// inserted at `at` and `stack` itself.
pub fn elision_error(stack: &[Layer], at: usize, eps: f64, freqs: &[f64]) -> f64 {
    let mut with = stack.to_vec();
    with.insert(at, lossless("ghost", 0.0, eps));
    let a = layered_reflection_response(&with, freqs).unwrap();
    let b = layered_reflection_response(stack, freqs).unwrap();
    a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
