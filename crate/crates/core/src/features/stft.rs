use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::gram::{shape_fixed, FeatureGram, FeatureKind, RawGram, GRAM_FRAMES};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Floor added to power before the log.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / m;
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                }
            })
            .collect()
    }
}

/// Framing parameters for the short-time analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    pub n_fft: usize,
}

impl FrameSpec {
    /// 25 ms frames, 10 ms shift, 1024-point FFT, Hamming window.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        Self {
            frame_len: (0.025 * sr).round() as usize,
            hop: (0.010 * sr).round() as usize,
            window: Window::Hamming,
            n_fft: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.n_fft {
            return Err(Error::param(format!(
                "frame spec needs 0 < hop ({}) <= frame_len ({}) <= n_fft ({})",
                self.hop, self.frame_len, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of full frames that fit in `len` samples.
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        self.validate()?;
        if len < self.frame_len {
            return Err(Error::param(format!(
                "signal of {len} samples is shorter than one {}-sample frame",
                self.frame_len
            )));
        }
        Ok(1 + (len - self.frame_len) / self.hop)
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::for_sample_rate(crate::audio::DEFAULT_SAMPLE_RATE)
    }
}

/// One-sided complex spectra, `n_bins x n_frames`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGram {
    pub n_bins: usize,
    pub n_frames: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGram {
    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.n_frames + frame]
    }
}

/// Reusable per-frame transform state.
pub(crate) struct FrameAnalyzer {
    spec: FrameSpec,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl FrameAnalyzer {
    pub(crate) fn new(spec: FrameSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            window: spec.window.coefficients(spec.frame_len),
            fft: FftPlanner::new().plan_fft_forward(spec.n_fft),
            buf: vec![Complex64::new(0.0, 0.0); spec.n_fft],
            spec,
        })
    }

    /// One-sided spectrum of `weight(n) * w(n) * x[start + n]`.
    pub(crate) fn spectrum(
        &mut self,
        x: &[f64],
        start: usize,
        weight: impl Fn(usize) -> f64,
        out: &mut [Complex64],
    ) {
        let fl = self.spec.frame_len;
        for (n, slot) in self.buf.iter_mut().enumerate() {
            *slot = if n < fl {
                Complex64::new(weight(n) * self.window[n] * x[start + n], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        self.fft.process(&mut self.buf);
        out.copy_from_slice(&self.buf[..self.spec.n_bins()]);
    }
}

/// Short-time Fourier transform. Frame `t` covers samples
/// `[t * hop, t * hop + frame_len)`; spectra are unnormalized.
pub fn stft(w: &Waveform, spec: &FrameSpec) -> Result<ComplexGram> {
    let x = w.samples();
    let n_frames = spec.n_frames(x.len())?;
    let n_bins = spec.n_bins();
    let mut analyzer = FrameAnalyzer::new(*spec)?;
    let mut col = vec![Complex64::new(0.0, 0.0); n_bins];
    let mut data = vec![Complex64::new(0.0, 0.0); n_bins * n_frames];
    for t in 0..n_frames {
        analyzer.spectrum(x, t * spec.hop, |_| 1.0, &mut col);
        for (b, c) in col.iter().enumerate() {
            data[b * n_frames + t] = *c;
        }
    }
    Ok(ComplexGram {
        n_bins,
        n_frames,
        data,
    })
}

/// Log-power spectrogram before time-axis shaping.
pub fn stft_raw(w: &Waveform, spec: &FrameSpec) -> Result<RawGram> {
    let x = stft(w, spec)?;
    Ok(RawGram {
        n_bins: x.n_bins,
        n_frames: x.n_frames,
        data: x.data.iter().map(|c| (c.norm_sqr() + LOG_EPS).ln()).collect(),
    })
}

/// STFT-gram: `ln(|X|^2 + 1e-10)`, shaped to 500 frames.
pub fn stft_gram(w: &Waveform, spec: &FrameSpec) -> Result<FeatureGram> {
    stft_gram_frames(w, spec, GRAM_FRAMES)
}

pub fn stft_gram_frames(w: &Waveform, spec: &FrameSpec, n_frames: usize) -> Result<FeatureGram> {
    shape_fixed(&stft_raw(w, spec)?, n_frames, FeatureKind::Stft, &w.utt_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frame_len: usize, hop: usize, n_fft: usize, window: Window) -> FrameSpec {
        FrameSpec { frame_len, hop, window, n_fft }
    }

    #[test]
    fn default_matches_25ms_10ms_at_16k() {
        let s = FrameSpec::default();
        assert_eq!((s.frame_len, s.hop, s.n_fft, s.n_bins()), (400, 160, 1024, 513));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let w = Waveform::new(x, 16000, "imp").unwrap();
        let g = stft(&w, &spec(32, 16, 32, Window::Rectangular)).unwrap();
        for b in 0..g.n_bins {
            assert!((g.get(b, 0).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_centered_sine_is_orthogonal() {
        let n = 256;
        let k = 17;
        let x: Vec<f64> = (0..n).map(|i| 0.5 * (2.0 * PI * k as f64 * i as f64 / n as f64).sin()).collect();
        let w = Waveform::new(x, 16000, "s").unwrap();
        let g = stft(&w, &spec(n, n, n, Window::Rectangular)).unwrap();
        let peak = g.get(k, 0).norm();
        for b in (0..g.n_bins).filter(|&b| b != k) {
            assert!(g.get(b, 0).norm() < 1e-9 * peak, "leak at bin {b}");
        }
    }

    #[test]
    fn parseval_with_window() {
        let x: Vec<f64> = (0..400).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let w = Waveform::new(x.clone(), 16000, "p").unwrap();
        let s = spec(400, 160, 1024, Window::Hamming);
        let g = stft(&w, &s).unwrap();
        let win = Window::Hamming.coefficients(400);
        let time_energy: f64 = x.iter().zip(&win).map(|(a, b)| (a * b).powi(2)).sum();
        let half = s.n_fft / 2;
        let freq_energy: f64 = (0..g.n_bins)
            .map(|b| {
                let e = g.get(b, 0).norm_sqr();
                if b == 0 || b == half { e } else { 2.0 * e }
            })
            .sum();
        assert!((freq_energy - s.n_fft as f64 * time_energy).abs() < 1e-9 * freq_energy);
    }

    #[test]
    fn zero_signal_gives_log_eps() {
        let w = Waveform::new(vec![0.0; 4000], 16000, "z").unwrap();
        let g = stft_gram(&w, &FrameSpec::default()).unwrap();
        assert_eq!((g.n_bins(), g.n_frames()), (513, 500));
        assert!(g.data().iter().all(|&v| v == LOG_EPS.ln()));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let w = Waveform::new(vec![0.0; 100], 16000, "z").unwrap();
        assert!(matches!(stft(&w, &FrameSpec::default()), Err(Error::Param(_))));
    }

    #[test]
    fn invalid_frame_spec_is_rejected() {
        assert!(spec(400, 500, 1024, Window::Hann).validate().is_err());
        assert!(spec(400, 0, 1024, Window::Hann).validate().is_err());
        assert!(spec(2048, 160, 1024, Window::Hann).validate().is_err());
    }

    #[test]
    fn hop_delay_shifts_columns() {
        let s = spec(64, 16, 64, Window::Rectangular);
        let x: Vec<f64> = (0..400).map(|i| ((i * 31) % 17) as f64 / 20.0 - 0.4).collect();
        let mut delayed = vec![0.0; s.hop];
        delayed.extend_from_slice(&x);
        let a = stft(&Waveform::new(x, 16000, "a").unwrap(), &s).unwrap();
        let b = stft(&Waveform::new(delayed, 16000, "b").unwrap(), &s).unwrap();
        for t in 0..a.n_frames {
            for bin in 0..a.n_bins {
                assert!((a.get(bin, t) - b.get(bin, t + 1)).norm() < 1e-12);
            }
        }
    }
}
