//! Synthetic replay attacks and a labeled corpus built from them.
//!
//! A replayed copy of an utterance passes through three stages:
//! the attacker's recording distance (attenuation plus an exponentially
//! decaying reverberation tail), the playback device (band limiting and a
//! soft-clipping nonlinearity) and the device noise floor.

pub mod corpus;
pub mod filters;
pub mod voice;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{normalize_peak, peak, Waveform, NORM_PEAK};
use crate::error::{Error, Result};
use crate::features::stft::{stft, FrameSpec};
use crate::protocol::{AttackSpec, Band};
use crate::rng;

pub use corpus::{generate_corpus, Corpus, CorpusConfig, CorpusEntry, Split, SplitCorpus};
pub use voice::{synth_utterance, Voice};

/// Talker-to-attacker distance range of one band, in centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBand {
    pub min_cm: f64,
    pub max_cm: f64,
}

/// Playback device of one quality band. Frequencies in Hz; each range is
/// sampled uniformly per replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceBand {
    pub highpass_hz: (f64, f64),
    pub lowpass_hz: (f64, f64),
    pub drive: (f64, f64),
    pub noise_rms: f64,
}

/// Capture chain applied to bonafide speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicResponse {
    pub highpass_hz: (f64, f64),
    pub lowpass_hz: (f64, f64),
}

/// All replay-chain constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub distance: [DistanceBand; 3],
    pub device: [DeviceBand; 3],
    /// Direct-to-reverberant ratio at 10 cm, falling 20 dB per decade.
    pub drr_at_10cm_db: f64,
    /// RT60 = rt60_base_s + rt60_per_cm_s * distance.
    pub rt60_base_s: f64,
    pub rt60_per_cm_s: f64,
    pub mic: MicResponse,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            distance: [
                DistanceBand { min_cm: 10.0, max_cm: 50.0 },
                DistanceBand { min_cm: 50.0, max_cm: 100.0 },
                DistanceBand { min_cm: 100.0, max_cm: 200.0 },
            ],
            device: [
                DeviceBand {
                    highpass_hz: (40.0, 60.0),
                    lowpass_hz: (7600.0, 7900.0),
                    drive: (0.05, 0.1),
                    noise_rms: 2e-4,
                },
                DeviceBand {
                    highpass_hz: (100.0, 200.0),
                    lowpass_hz: (5500.0, 6500.0),
                    drive: (0.6, 1.0),
                    noise_rms: 1e-3,
                },
                DeviceBand {
                    highpass_hz: (250.0, 350.0),
                    lowpass_hz: (3200.0, 3600.0),
                    drive: (1.8, 2.5),
                    noise_rms: 4e-3,
                },
            ],
            drr_at_10cm_db: 20.0,
            rt60_base_s: 0.2,
            rt60_per_cm_s: 0.002,
            mic: MicResponse {
                highpass_hz: (20.0, 70.0),
                lowpass_hz: (7400.0, 7950.0),
            },
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Realized parameters of one replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayDraw {
    pub distance_cm: f64,
    pub drr_db: f64,
    pub rt60_s: f64,
    pub highpass_hz: f64,
    pub lowpass_hz: f64,
    pub drive: f64,
    pub noise_rms: f64,
}

impl ReplayConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        for d in &self.distance {
            if !(d.min_cm > 0.0 && d.max_cm >= d.min_cm) {
                return Err(Error::param(format!("bad distance band {d:?}")));
            }
        }
        for d in &self.device {
            let ok = d.highpass_hz.0 > 0.0
                && d.lowpass_hz.1 < nyq
                && d.highpass_hz.1 < d.lowpass_hz.0
                && d.drive.0 >= 0.0
                && d.noise_rms >= 0.0;
            if !ok {
                return Err(Error::param(format!("bad device band {d:?} at {sample_rate} Hz")));
            }
        }
        if !(self.rt60_base_s > 0.0 && self.rt60_per_cm_s >= 0.0) || self.mic.lowpass_hz.1 >= nyq {
            return Err(Error::param("bad reverberation or microphone settings"));
        }
        Ok(())
    }

    /// Draw the replay parameters. Distance and device are drawn from
    /// separate streams keyed by their own band, so two codes sharing a band
    /// share that stage's parameters.
    pub fn draw(&self, spec: AttackSpec, seed: u64) -> ReplayDraw {
        let d = self.distance[spec.distance.index()];
        let q = self.device[spec.quality.index()];
        let mut rd = rng::stream(seed, &[0xD15, spec.distance.index() as u64]);
        let mut rq = rng::stream(seed, &[0xDE5, spec.quality.index() as u64]);
        let distance_cm = uniform(&mut rd, (d.min_cm, d.max_cm));
        ReplayDraw {
            distance_cm,
            drr_db: self.drr_at_10cm_db - 20.0 * (distance_cm / 10.0).log10(),
            rt60_s: self.rt60_base_s + self.rt60_per_cm_s * distance_cm,
            highpass_hz: uniform(&mut rq, q.highpass_hz),
            lowpass_hz: uniform(&mut rq, q.lowpass_hz),
            drive: uniform(&mut rq, q.drive),
            noise_rms: q.noise_rms,
        }
    }

    pub fn noise_rms(&self, quality: Band) -> f64 {
        self.device[quality.index()].noise_rms
    }
}

/// Exponentially decaying noise tail behind a unit direct path, scaled to
/// the given direct-to-reverberant ratio.
pub fn room_response(drr_db: f64, rt60_s: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let len = ((rt60_s * sample_rate as f64).ceil() as usize).max(2);
    let decay = 3.0 * 10f64.ln() / (rt60_s * sample_rate as f64);
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (n, v) in h.iter_mut().enumerate().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * (-decay * n as f64).exp();
    }
    let tail: f64 = h[1..].iter().map(|v| v * v).sum();
    let scale = (10f64.powf(-drr_db / 10.0) / tail).sqrt();
    h[1..].iter_mut().for_each(|v| *v *= scale);
    h
}

/// Replay `w` through the chain for `spec`.
pub fn degrade(w: &Waveform, spec: AttackSpec, seed: u64, cfg: &ReplayConfig) -> Result<Waveform> {
    cfg.validate(w.sample_rate())?;
    let sr = w.sample_rate() as f64;
    let p = cfg.draw(spec, seed);
    let silent = peak(w.samples()) == 0.0;

    // Distance.
    let mut room_rng = rng::stream(seed, &[0x7A1, spec.distance.index() as u64]);
    let h = room_response(p.drr_db, p.rt60_s, w.sample_rate(), &mut room_rng);
    let gain = 10.0 / p.distance_cm;
    let mut x: Vec<f64> = filters::convolve_same_len(w.samples(), &h).into_iter().map(|v| v * gain).collect();

    // Device: playback at full scale, band limit, soft clipping.
    normalize_peak(&mut x, 1.0);
    for b in filters::butter4_highpass(p.highpass_hz, sr).iter().chain(&filters::butter4_lowpass(p.lowpass_hz, sr)) {
        b.run(&mut x);
    }
    normalize_peak(&mut x, 1.0);
    filters::soft_clip(&mut x, p.drive);

    // Noise floor relative to a 0.9-peak signal.
    if silent {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        normalize_peak(&mut x, NORM_PEAK);
    }
    let mut noise_rng = rng::stream(seed, &[0x401, spec.quality.index() as u64]);
    for v in x.iter_mut() {
        let z: f64 = noise_rng.sample(StandardNormal);
        *v += p.noise_rms * z;
    }
    if !silent {
        normalize_peak(&mut x, NORM_PEAK);
    }
    Waveform::new(x, w.sample_rate(), format!("{}_{}", w.utt_id, spec.code()))
}

/// Capture of live speech through a mildly band-limited microphone.
pub fn capture_bonafide(w: &Waveform, seed: u64, cfg: &ReplayConfig) -> Result<Waveform> {
    let sr = w.sample_rate() as f64;
    let mut rng = rng::stream(seed, &[0xB0A]);
    let hp = uniform(&mut rng, cfg.mic.highpass_hz);
    let lp = uniform(&mut rng, cfg.mic.lowpass_hz);
    let mut x = w.samples().to_vec();
    filters::Biquad::highpass(hp, std::f64::consts::FRAC_1_SQRT_2, sr).run(&mut x);
    filters::Biquad::lowpass(lp, std::f64::consts::FRAC_1_SQRT_2, sr).run(&mut x);
    normalize_peak(&mut x, NORM_PEAK);
    Waveform::new(x, w.sample_rate(), w.utt_id.clone())
}

/// Mean over frames of the RMS difference (dB) between two power spectra.
pub fn log_spectral_distance(a: &Waveform, b: &Waveform) -> Result<f64> {
    let spec = FrameSpec::for_sample_rate(a.sample_rate());
    let (ga, gb) = (stft(a, &spec)?, stft(b, &spec)?);
    let frames = ga.n_frames.min(gb.n_frames);
    let floor = 1e-10;
    let mut total = 0.0;
    for t in 0..frames {
        let mut acc = 0.0;
        for k in 0..ga.n_bins {
            let pa = ga.get(k, t).norm_sqr().max(floor);
            let pb = gb.get(k, t).norm_sqr().max(floor);
            acc += (10.0 * (pa / pb).log10()).powi(2);
        }
        total += (acc / ga.n_bins as f64).sqrt();
    }
    Ok(total / frames as f64)
}
