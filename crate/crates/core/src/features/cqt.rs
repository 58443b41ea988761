//! Kernel-based constant-Q transform.
//!
//! Bins are geometrically spaced, `f_k = f_min * 2^(k / b)`, with a Hann
//! kernel of `Q * sr / f_k` samples per bin. Each octave is evaluated on a
//! decimated copy of the signal (halving the rate once per octave while the
//! hop stays integral), and the kernels are applied in the frequency domain
//! as sparse spectral kernels.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::gram::{shape_fixed, FeatureGram, FeatureKind, RawGram, GRAM_FRAMES};
use super::stft::{Window, LOG_EPS};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Lowest bin used whenever the requested octaves fit below Nyquist.
pub const ANCHOR_F_MIN: f64 = 32.70;

/// Spectral-kernel entries below this fraction of the kernel peak are dropped.
const KERNEL_SPARSITY: f64 = 1e-4;

const HALFBAND_TAPS: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqtParams {
    pub hop: usize,
    pub n_octaves: usize,
    pub bins_per_octave: usize,
    /// Lowest center frequency; derived from the sample rate when `None`.
    pub f_min: Option<f64>,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self {
            hop: 128,
            n_octaves: 9,
            bins_per_octave: 96,
            f_min: None,
        }
    }
}

impl CqtParams {
    pub fn n_bins(&self) -> usize {
        self.n_octaves * self.bins_per_octave
    }

    /// `32.70 Hz` if all octaves fit below Nyquist, else `nyquist / 2^n_octaves`.
    pub fn resolve_f_min(&self, sample_rate: u32) -> Result<f64> {
        if self.hop == 0 || self.n_octaves == 0 || self.bins_per_octave == 0 {
            return Err(Error::param("hop, octave count and bins per octave must be positive"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let span = 2f64.powi(self.n_octaves as i32);
        match self.f_min {
            Some(f) if f > 0.0 && f * span <= nyquist => Ok(f),
            Some(f) => Err(Error::param(format!(
                "f_min {f} Hz with {} octaves exceeds Nyquist {nyquist} Hz",
                self.n_octaves
            ))),
            None if ANCHOR_F_MIN * span <= nyquist => Ok(ANCHOR_F_MIN),
            None => Ok(nyquist / span),
        }
    }
}

struct SparseKernel {
    idx: Vec<usize>,
    /// Conjugated spectral kernel divided by the FFT length.
    val: Vec<Complex64>,
}

struct OctaveBank {
    /// Power-of-two decimation of the input signal.
    decimation: usize,
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
    first_bin: usize,
    kernels: Vec<SparseKernel>,
}

/// Precomputed kernels for one sample rate and parameter set.
pub struct CqtKernelBank {
    params: CqtParams,
    sample_rate: u32,
    freqs: Vec<f64>,
    q: f64,
    octaves: Vec<OctaveBank>,
    halfband: Vec<f64>,
}

fn largest_pow2_dividing(n: usize) -> usize {
    1 << n.trailing_zeros()
}

fn halfband_filter() -> Vec<f64> {
    // Windowed sinc, cutoff at a quarter of the sampling rate, unit DC gain.
    let win = Window::Hamming.coefficients(HALFBAND_TAPS);
    let c = (HALFBAND_TAPS / 2) as isize;
    let mut h: Vec<f64> = (0..HALFBAND_TAPS as isize)
        .map(|i| {
            let n = (i - c) as f64;
            let sinc = if n == 0.0 { 0.5 } else { (std::f64::consts::PI * 0.5 * n).sin() / (std::f64::consts::PI * n) };
            sinc * win[i as usize]
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Low-pass and keep every second sample; output sample `m` sits at input
/// sample `2m`.
fn decimate2(x: &[f64], h: &[f64]) -> Vec<f64> {
    let c = (h.len() / 2) as isize;
    let n_out = x.len().div_ceil(2);
    (0..n_out)
        .map(|m| {
            let center = 2 * m as isize;
            h.iter()
                .enumerate()
                .map(|(i, hv)| {
                    let j = center + c - i as isize;
                    if j >= 0 && (j as usize) < x.len() { hv * x[j as usize] } else { 0.0 }
                })
                .sum()
        })
        .collect()
}

impl CqtKernelBank {
    pub fn new(sample_rate: u32, params: CqtParams) -> Result<Self> {
        let f_min = params.resolve_f_min(sample_rate)?;
        let b = params.bins_per_octave;
        let q = 1.0 / (2f64.powf(1.0 / b as f64) - 1.0);
        let freqs: Vec<f64> = (0..params.n_bins())
            .map(|k| f_min * 2f64.powf(k as f64 / b as f64))
            .collect();
        let max_dec = largest_pow2_dividing(params.hop);
        let mut planner = FftPlanner::new();
        let mut octaves = Vec::with_capacity(params.n_octaves);
        for j in 0..params.n_octaves {
            let decimation = (1usize << j.saturating_sub(1)).min(max_dec);
            let sr_d = sample_rate as f64 / decimation as f64;
            let first_bin = (params.n_octaves - 1 - j) * b;
            let lengths: Vec<usize> = (first_bin..first_bin + b)
                .map(|k| ((q * sr_d / freqs[k]).ceil() as usize) | 1)
                .collect();
            let fft_len = (lengths.iter().max().copied().unwrap_or(1) + 1).next_power_of_two();
            let fft = planner.plan_fft_forward(fft_len);
            let kernels = (first_bin..first_bin + b)
                .zip(&lengths)
                .map(|(k, &len)| {
                    let win = Window::Hann.coefficients(len);
                    let norm: f64 = win.iter().sum();
                    let half = (len / 2) as isize;
                    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                    for (i, wv) in win.iter().enumerate() {
                        let n = i as isize - half;
                        let phase = 2.0 * std::f64::consts::PI * freqs[k] * n as f64 / sr_d;
                        let pos = (fft_len as isize / 2 + n) as usize;
                        buf[pos] = Complex64::from_polar(wv / norm, phase);
                    }
                    fft.process(&mut buf);
                    let peak = buf.iter().fold(0.0f64, |m, c| m.max(c.norm()));
                    let scale = 1.0 / fft_len as f64;
                    let (idx, val) = buf
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.norm() >= KERNEL_SPARSITY * peak)
                        .map(|(i, c)| (i, c.conj() * scale))
                        .unzip();
                    SparseKernel { idx, val }
                })
                .collect();
            octaves.push(OctaveBank {
                decimation,
                fft_len,
                fft,
                first_bin,
                kernels,
            });
        }
        Ok(Self {
            params,
            sample_rate,
            freqs,
            q,
            octaves,
            halfband: halfband_filter(),
        })
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn q_factor(&self) -> f64 {
        self.q
    }

    /// Bandwidth of each bin, `f_k / Q`.
    pub fn bandwidths(&self) -> Vec<f64> {
        self.freqs.iter().map(|f| f / self.q).collect()
    }

    pub fn n_bins(&self) -> usize {
        self.freqs.len()
    }

    /// Constant-Q magnitudes, `n_bins x n_frames` row-major with frames
    /// centered at multiples of the hop.
    pub fn magnitudes(&self, w: &Waveform) -> Result<RawGram> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::param(format!(
                "kernel bank built for {} Hz, waveform is {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        let hop = self.params.hop;
        let n_frames = 1 + w.len() / hop;
        let n_bins = self.n_bins();
        let mut data = vec![0.0; n_bins * n_frames];

        let mut signals: Vec<Vec<f64>> = vec![w.samples().to_vec()];
        let mut seg: Vec<Complex64> = Vec::new();
        for oct in &self.octaves {
            while signals.len() <= oct.decimation.trailing_zeros() as usize {
                let next = decimate2(signals.last().expect("non-empty"), &self.halfband);
                signals.push(next);
            }
            let x = &signals[oct.decimation.trailing_zeros() as usize];
            let hop_d = hop / oct.decimation;
            let m = oct.fft_len;
            seg.resize(m, Complex64::new(0.0, 0.0));
            for t in 0..n_frames {
                let start = (t * hop_d) as isize - (m / 2) as isize;
                for (j, s) in seg.iter_mut().enumerate() {
                    let i = start + j as isize;
                    *s = if i >= 0 && (i as usize) < x.len() {
                        Complex64::new(x[i as usize], 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                oct.fft.process(&mut seg);
                for (bi, kern) in oct.kernels.iter().enumerate() {
                    let coef: Complex64 = kern.idx.iter().zip(&kern.val).map(|(&i, v)| seg[i] * v).sum();
                    data[(oct.first_bin + bi) * n_frames + t] = coef.norm();
                }
            }
        }
        Ok(RawGram {
            n_bins,
            n_frames,
            data,
        })
    }

    /// `ln(|CQT| + 1e-10)` before shaping.
    pub fn log_gram(&self, w: &Waveform) -> Result<RawGram> {
        let mut g = self.magnitudes(w)?;
        g.data.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
        Ok(g)
    }
}

/// CQT-gram shaped to 500 frames.
pub fn cqt_gram(w: &Waveform, params: &CqtParams) -> Result<FeatureGram> {
    let bank = CqtKernelBank::new(w.sample_rate(), *params)?;
    shape_fixed(&bank.log_gram(w)?, GRAM_FRAMES, FeatureKind::Cqt, &w.utt_id)
}
