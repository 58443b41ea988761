//! Group-delay and modified group-delay grams.
//!
//! For a frame `x(n)` with spectrum `X` and `Y` the spectrum of `n x(n)`,
//! the group delay is `Re(Y / X) = (X_R Y_R + X_I Y_I) / |X|^2` (in
//! samples). The modified variant replaces `|X|^2` by `S^(2 lambda)`, where
//! `S` is a cepstrally smoothed magnitude envelope, and compresses the result
//! with a signed power `rho`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::gram::{shape_fixed, FeatureGram, FeatureKind, RawGram, GRAM_FRAMES};
use super::stft::{FrameAnalyzer, FrameSpec};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Floor applied to magnitudes before logs and divisions.
pub const MAG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgdParams {
    pub rho: f64,
    pub lambda: f64,
    /// Number of low-quefrency cepstral coefficients kept when smoothing;
    /// `None` disables smoothing (`S = |X|`).
    pub lifter_len: Option<usize>,
}

impl MgdParams {
    /// Parameters that reduce the modified function to plain group delay.
    pub fn group_delay() -> Self {
        Self {
            rho: 1.0,
            lambda: 1.0,
            lifter_len: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::param(format!("rho = {} not in (0, 1]", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::param(format!("lambda = {} not in (0, 1]", self.lambda)));
        }
        if self.lifter_len == Some(0) {
            return Err(Error::param("lifter_len must be at least 1"));
        }
        Ok(())
    }
}

impl Default for MgdParams {
    fn default() -> Self {
        Self {
            rho: 0.2,
            lambda: 0.7,
            lifter_len: Some(30),
        }
    }
}

/// Real-cepstrum liftering of one-sided magnitude spectra.
pub struct CepstralSmoother {
    n_bins: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl CepstralSmoother {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::param("cepstral smoothing needs at least 2 bins"));
        }
        let n = 2 * (n_bins - 1);
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_bins,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            buf: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    /// `exp` of the first `lifter_len` cepstral coefficients of `ln mag`.
    pub fn smooth(&mut self, mag: &[f64], lifter_len: usize, out: &mut [f64]) {
        assert_eq!(mag.len(), self.n_bins);
        let n = self.buf.len();
        let half = n / 2;
        for k in 0..n {
            let src = if k <= half { k } else { n - k };
            self.buf[k] = Complex64::new(mag[src].max(MAG_FLOOR).ln(), 0.0);
        }
        self.ifft.process(&mut self.buf);
        let scale = 1.0 / n as f64;
        for (q, c) in self.buf.iter_mut().enumerate() {
            let keep = q < lifter_len || q + lifter_len > n;
            *c = if keep { Complex64::new(c.re * scale, 0.0) } else { Complex64::new(0.0, 0.0) };
        }
        self.fft.process(&mut self.buf);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re.exp();
        }
    }
}

/// Smoothed spectral envelope of a one-sided magnitude spectrum.
pub fn cepstral_smooth(mag: &[f64], lifter_len: usize) -> Result<Vec<f64>> {
    if lifter_len == 0 {
        return Err(Error::param("lifter_len must be at least 1"));
    }
    let mut s = CepstralSmoother::new(mag.len())?;
    let mut out = vec![0.0; mag.len()];
    s.smooth(mag, lifter_len, &mut out);
    Ok(out)
}

/// Per-frame `(X, Y)` spectra where `Y` is the transform of `n x(n)`.
pub fn phase_spectra(w: &Waveform, spec: &FrameSpec) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
    let x = w.samples();
    let n_frames = spec.n_frames(x.len())?;
    let n_bins = spec.n_bins();
    let mut analyzer = FrameAnalyzer::new(*spec)?;
    let mut xs = Vec::with_capacity(n_frames);
    let mut ys = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * spec.hop;
        let mut xc = vec![Complex64::new(0.0, 0.0); n_bins];
        let mut yc = vec![Complex64::new(0.0, 0.0); n_bins];
        analyzer.spectrum(x, start, |_| 1.0, &mut xc);
        analyzer.spectrum(x, start, |n| n as f64, &mut yc);
        xs.push(xc);
        ys.push(yc);
    }
    Ok((xs, ys))
}

/// Modified group delay before time-axis shaping.
pub fn mgd_raw(w: &Waveform, spec: &FrameSpec, p: &MgdParams) -> Result<RawGram> {
    p.validate()?;
    let (xs, ys) = phase_spectra(w, spec)?;
    let n_bins = spec.n_bins();
    let n_frames = xs.len();
    let mut smoother = match p.lifter_len {
        Some(_) => Some(CepstralSmoother::new(n_bins)?),
        None => None,
    };
    let mut mag = vec![0.0; n_bins];
    let mut env = vec![0.0; n_bins];
    let mut data = vec![0.0; n_bins * n_frames];
    for (t, (xc, yc)) in xs.iter().zip(&ys).enumerate() {
        for (m, c) in mag.iter_mut().zip(xc) {
            *m = c.norm().max(MAG_FLOOR);
        }
        match (&mut smoother, p.lifter_len) {
            (Some(s), Some(l)) => s.smooth(&mag, l, &mut env),
            _ => env.copy_from_slice(&mag),
        }
        for b in 0..n_bins {
            let num = xc[b].re * yc[b].re + xc[b].im * yc[b].im;
            let tau = num / env[b].powf(2.0 * p.lambda);
            let v = if tau == 0.0 { 0.0 } else { tau.signum() * tau.abs().powf(p.rho) };
            if !v.is_finite() {
                return Err(Error::Internal(format!(
                    "non-finite modified group delay at frame {t}, bin {b} of '{}'",
                    w.utt_id
                )));
            }
            data[b * n_frames + t] = v;
        }
    }
    Ok(RawGram {
        n_bins,
        n_frames,
        data,
    })
}

/// Plain group delay before shaping, computed directly from its definition.
pub fn gd_raw(w: &Waveform, spec: &FrameSpec) -> Result<RawGram> {
    let (xs, ys) = phase_spectra(w, spec)?;
    let n_bins = spec.n_bins();
    let n_frames = xs.len();
    let mut data = vec![0.0; n_bins * n_frames];
    for (t, (xc, yc)) in xs.iter().zip(&ys).enumerate() {
        for b in 0..n_bins {
            let power = xc[b].norm().max(MAG_FLOOR).powi(2);
            data[b * n_frames + t] = (xc[b].re * yc[b].re + xc[b].im * yc[b].im) / power;
        }
    }
    Ok(RawGram {
        n_bins,
        n_frames,
        data,
    })
}

/// MGD-gram shaped to 500 frames.
pub fn mgd_gram(w: &Waveform, spec: &FrameSpec, p: &MgdParams) -> Result<FeatureGram> {
    mgd_gram_frames(w, spec, p, GRAM_FRAMES)
}

pub fn mgd_gram_frames(w: &Waveform, spec: &FrameSpec, p: &MgdParams, n_frames: usize) -> Result<FeatureGram> {
    shape_fixed(&mgd_raw(w, spec, p)?, n_frames, FeatureKind::Mgd, &w.utt_id)
}

/// GD-gram shaped to 500 frames.
pub fn gd_gram(w: &Waveform, spec: &FrameSpec) -> Result<FeatureGram> {
    gd_gram_frames(w, spec, GRAM_FRAMES)
}

pub fn gd_gram_frames(w: &Waveform, spec: &FrameSpec, n_frames: usize) -> Result<FeatureGram> {
    shape_fixed(&gd_raw(w, spec)?, n_frames, FeatureKind::Gd, &w.utt_id)
}
