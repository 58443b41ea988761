//! Biquad sections, FFT convolution and the device nonlinearity.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Second-order IIR section, transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn from_raw(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    pub fn lowpass(fc: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * fc / sr;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(fc: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * fc / sr;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Peaking equalizer with gain in dB.
    pub fn peaking(fc: f64, q: f64, gain_db: f64, sr: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w = 2.0 * PI * fc / sr;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(1.0 + alpha * a, -2.0 * c, 1.0 - alpha * a, 1.0 + alpha / a, -2.0 * c, 1.0 - alpha / a)
    }

    pub fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let i = *v;
            let o = self.b[0] * i + z1;
            z1 = self.b[1] * i - self.a[0] * o + z2;
            z2 = self.b[2] * i - self.a[1] * o;
            *v = o;
        }
    }

    /// Magnitude response at `f`.
    pub fn gain_at(&self, f: f64, sr: f64) -> f64 {
        let z = Complex64::from_polar(1.0, -2.0 * PI * f / sr);
        let num = self.b[0] + self.b[1] * z + self.b[2] * z * z;
        let den = 1.0 + self.a[0] * z + self.a[1] * z * z;
        (num / den).norm()
    }
}

/// Q values of the two sections of a fourth-order Butterworth filter.
pub const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

pub fn butter4_lowpass(fc: f64, sr: f64) -> [Biquad; 2] {
    BUTTER4_Q.map(|q| Biquad::lowpass(fc, q, sr))
}

pub fn butter4_highpass(fc: f64, sr: f64) -> [Biquad; 2] {
    BUTTER4_Q.map(|q| Biquad::highpass(fc, q, sr))
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve_same_len(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|s| Complex64::new(*s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Memoryless soft clipper `tanh(d x) / d`; identity as `d -> 0`.
pub fn soft_clip(x: &mut [f64], drive: f64) {
    if drive <= 0.0 {
        return;
    }
    for v in x.iter_mut() {
        *v = (drive * *v).tanh() / drive;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butterworth_corner_is_minus_3db() {
        let sr = 16000.0;
        for fc in [300.0, 3400.0, 7800.0] {
            let lp = butter4_lowpass(fc, sr);
            let g: f64 = lp.iter().map(|b| b.gain_at(fc, sr)).product();
            assert!((20.0 * g.log10() + 3.0103).abs() < 0.01, "{fc}: {g}");
            let hp = butter4_highpass(fc, sr);
            let g: f64 = hp.iter().map(|b| b.gain_at(fc, sr)).product();
            assert!((20.0 * g.log10() + 3.0103).abs() < 0.01);
        }
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = convolve_same_len(&x, &[1.0, 0.0, 0.0]);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = convolve_same_len(&x, &[0.0, 2.0]);
        assert!(y[0].abs() < 1e-12);
        assert!((y[10] - 2.0 * x[9]).abs() < 1e-12);
    }
}
