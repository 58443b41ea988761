//! Speech-like source material: a glottal-style harmonic complex with
//! slow pitch movement, a syllabic envelope and formant resonances.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use super::filters::Biquad;
use crate::audio::{normalize_peak, rms, Waveform, NORM_PEAK, SYNTH_SNR_DB};
use crate::error::{Error, Result};
use crate::rng;

/// Highest harmonic frequency synthesized.
pub const MAX_HARMONIC_HZ: f64 = 7000.0;

/// Stable characteristics of one talker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    /// Harmonic k has amplitude k^-tilt.
    pub tilt: f64,
    pub formants: [f64; 3],
}

impl Voice {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            f0: rng.gen_range(90.0..240.0),
            tilt: rng.gen_range(0.8..1.4),
            formants: [
                rng.gen_range(400.0..900.0),
                rng.gen_range(1000.0..2200.0),
                rng.gen_range(2300.0..3300.0),
            ],
        }
    }
}

/// One utterance of `voice`, peak-normalized to 0.9.
pub fn synth_utterance(voice: &Voice, sample_rate: u32, duration: f64, seed: u64) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    if n == 0 || sr < 2.0 * MAX_HARMONIC_HZ {
        return Err(Error::param(format!(
            "need a positive duration and a sample rate above {} Hz",
            2.0 * MAX_HARMONIC_HZ
        )));
    }
    let mut r = rng::stream(seed, &[0x707]);
    let f0 = voice.f0 * r.gen_range(0.92..1.08);
    let vib_rate = r.gen_range(3.0..6.0);
    let vib_depth = r.gen_range(0.01..0.03);
    let drift = r.gen_range(-0.12..0.12);
    let syl_rate = r.gen_range(3.0..5.0);
    let syl_phase = r.gen_range(0.0..PI);
    let vib_phase = r.gen_range(0.0..2.0 * PI);
    let k_max = ((MAX_HARMONIC_HZ / (f0 * 1.2)).floor() as usize).clamp(1, 60);
    let coeffs: Vec<Complex64> = (1..=k_max)
        .map(|k| Complex64::from_polar((k as f64).powf(-voice.tilt), r.gen_range(0.0..2.0 * PI)))
        .collect();

    let mut x = vec![0.0; n];
    let mut phase = 0.0f64;
    for (i, out) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let inst = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin() + drift * (t / duration - 0.5));
        phase = (phase + 2.0 * PI * inst / sr) % (2.0 * PI);
        let z = Complex64::from_polar(1.0, phase);
        let mut zk = z;
        let mut acc = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            if inst * (k + 1) as f64 >= sr / 2.0 - 500.0 {
                break;
            }
            acc += (c * zk).im;
            zk *= z;
        }
        let syl = (PI * syl_rate * t + syl_phase).sin().abs().powf(0.7);
        *out = acc * (0.05 + syl);
    }
    for f in voice.formants {
        let fc = f * r.gen_range(0.9..1.1);
        Biquad::peaking(fc, 4.0, 10.0, sr).run(&mut x);
    }
    let noise = rms(&x) * 10f64.powf(-SYNTH_SNR_DB / 20.0);
    for v in x.iter_mut() {
        let z: f64 = r.sample(StandardNormal);
        *v += noise * z;
    }
    normalize_peak(&mut x, NORM_PEAK);
    Waveform::new(x, sample_rate, format!("voice_{seed}"))
}
