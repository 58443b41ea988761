//! Mono 16-bit PCM audio and deterministic test-signal synthesis.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Default sample rate of the toolkit (Hz).
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Peak level every synthesized or replayed waveform is normalized to.
pub const NORM_PEAK: f64 = 0.9;

/// A mono sample buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    pub utt_id: String,
}

impl Waveform {
    /// Samples must be non-empty, finite and within [-1, 1].
    pub fn new(samples: Vec<f64>, sample_rate: u32, utt_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::param(format!("sample {i} = {v} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
            utt_id: utt_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        peak(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Return a copy with every sample multiplied by `gain`, failing if the
    /// result leaves [-1, 1].
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
            self.utt_id.clone(),
        )
    }

    pub fn with_id(mut self, utt_id: impl Into<String>) -> Self {
        self.utt_id = utt_id.into();
        self
    }
}

pub fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Scale `x` in place so that its peak equals `target`. Silent input is left
/// untouched.
pub fn normalize_peak(x: &mut [f64], target: f64) {
    let p = peak(x);
    if p > 0.0 {
        let g = target / p;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Map a sample in [-1, 1] to a 16-bit word.
///
/// Positive values scale by 32767 and negative values by 32768 so that both
/// rails are reachable; rounding is half away from zero and the result is
/// clamped to the i16 range.
pub fn quantize(x: f64) -> i16 {
    let scaled = if x >= 0.0 { x * 32767.0 } else { x * 32768.0 };
    scaled.round().clamp(-32768.0, 32767.0) as i16
}

/// Inverse of [`quantize`].
pub fn dequantize(q: i16) -> f64 {
    if q >= 0 {
        q as f64 / 32767.0
    } else {
        q as f64 / 32768.0
    }
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(m) => Error::Format(m.to_string()),
        hound::Error::Unsupported => Error::Unsupported("WAVE encoding not supported".into()),
        other => Error::Format(other.to_string()),
    }
}

/// Read a mono 16-bit PCM WAVE file.
///
/// The utterance id is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{} channels (only mono is supported)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{}-bit {:?} samples (only 16-bit PCM is supported)",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize).map_err(map_hound))
        .collect::<Result<Vec<_>>>()?;
    let utt_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Waveform::new(samples, spec.sample_rate, utt_id)
}

/// Write a waveform as a mono 16-bit PCM WAVE file.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    {
        let mut i16_writer = writer.get_i16_writer(w.samples.len() as u32);
        for &s in &w.samples {
            i16_writer.write_sample(quantize(s));
        }
        i16_writer.flush().map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

/// Signal-to-noise ratio of the noise floor added by [`synth_tone_complex`].
pub const SYNTH_SNR_DB: f64 = 45.0;

/// A harmonic tone complex with seeded random phases and a seeded Gaussian
/// noise floor, peak-normalized to 0.9.
///
/// Harmonic `k` has amplitude `1/k`. With `n_harmonics == 0` only the noise
/// floor remains.
pub fn synth_tone_complex(
    f0: f64,
    n_harmonics: usize,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Waveform> {
    if sample_rate == 0 {
        return Err(Error::param("sample rate must be positive"));
    }
    if !(f0 > 0.0) || !(duration > 0.0) {
        return Err(Error::param("f0 and duration must be positive"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if f0 * n_harmonics as f64 >= nyquist {
        return Err(Error::param(format!(
            "top harmonic {} Hz is not below Nyquist {} Hz",
            f0 * n_harmonics as f64,
            nyquist
        )));
    }
    let n = (duration * sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::param("duration shorter than one sample"));
    }
    let mut rng = rng::stream(seed, &[0x70_6e_65]);
    let phases: Vec<f64> = (0..n_harmonics).map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
    let sr = sample_rate as f64;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            phases
                .iter()
                .enumerate()
                .map(|(k, ph)| {
                    let h = (k + 1) as f64;
                    (2.0 * PI * h * f0 * t + ph).sin() / h
                })
                .sum()
        })
        .collect();
    let signal_rms = rms(&x);
    let noise_std = if signal_rms > 0.0 {
        signal_rms * 10f64.powf(-SYNTH_SNR_DB / 20.0)
    } else {
        1.0
    };
    for v in x.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += noise_std * z;
    }
    normalize_peak(&mut x, NORM_PEAK);
    Waveform::new(x, sample_rate, format!("tone_{f0}_{n_harmonics}_{seed}"))
}
