use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of frames every feature gram is shaped to.
pub const GRAM_FRAMES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Stft,
    Gd,
    Mgd,
    Cqt,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Stft => 0,
            FeatureKind::Gd => 1,
            FeatureKind::Mgd => 2,
            FeatureKind::Cqt => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => FeatureKind::Stft,
            1 => FeatureKind::Gd,
            2 => FeatureKind::Mgd,
            3 => FeatureKind::Cqt,
            other => return Err(Error::Format(format!("unknown feature kind code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Stft => "stft",
            FeatureKind::Gd => "gd",
            FeatureKind::Mgd => "mgd",
            FeatureKind::Cqt => "cqt",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stft" => Ok(FeatureKind::Stft),
            "gd" => Ok(FeatureKind::Gd),
            "mgd" => Ok(FeatureKind::Mgd),
            "cqt" => Ok(FeatureKind::Cqt),
            other => Err(Error::param(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// A real time-frequency matrix, `n_bins` rows by `n_frames` columns,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGram {
    pub kind: FeatureKind,
    pub utt_id: String,
    n_bins: usize,
    n_frames: usize,
    data: Vec<f64>,
}

impl FeatureGram {
    pub fn new(
        kind: FeatureKind,
        utt_id: impl Into<String>,
        n_bins: usize,
        n_frames: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_bins * n_frames {
            return Err(Error::shape(format!(
                "gram buffer of {} values does not match {n_bins} x {n_frames}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Internal(format!(
                "non-finite gram cell at bin {} frame {}",
                i / n_frames.max(1),
                i % n_frames.max(1)
            )));
        }
        Ok(Self {
            kind,
            utt_id: utt_id.into(),
            n_bins,
            n_frames,
            data,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.n_frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.get(b, frame)).collect()
    }

    /// Block-average down to `n_bins x n_frames`.
    ///
    /// Block boundaries are `floor(i * in / out)`, so every input cell lands
    /// in exactly one output cell.
    pub fn pooled(&self, n_bins: usize, n_frames: usize) -> Result<Self> {
        if n_bins == 0 || n_frames == 0 || n_bins > self.n_bins || n_frames > self.n_frames {
            return Err(Error::param(format!(
                "cannot pool {}x{} down to {n_bins}x{n_frames}",
                self.n_bins, self.n_frames
            )));
        }
        let edges = |inp: usize, out: usize| -> Vec<usize> { (0..=out).map(|i| i * inp / out).collect() };
        let be = edges(self.n_bins, n_bins);
        let fe = edges(self.n_frames, n_frames);
        let mut data = Vec::with_capacity(n_bins * n_frames);
        for b in 0..n_bins {
            for f in 0..n_frames {
                let mut acc = 0.0;
                for bi in be[b]..be[b + 1] {
                    let row = &self.data[bi * self.n_frames..(bi + 1) * self.n_frames];
                    acc += row[fe[f]..fe[f + 1]].iter().sum::<f64>();
                }
                let count = (be[b + 1] - be[b]) * (fe[f + 1] - fe[f]);
                data.push(acc / count as f64);
            }
        }
        FeatureGram::new(self.kind, self.utt_id.clone(), n_bins, n_frames, data)
    }
}

/// An unshaped gram: frames as produced by a front-end, before the time
/// axis is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGram {
    pub n_bins: usize,
    pub n_frames: usize,
    /// Row-major `n_bins x n_frames`.
    pub data: Vec<f64>,
}

/// Fix the time axis to `n_frames`: longer grams keep their first
/// `n_frames` frames, shorter ones repeat cyclically.
pub fn shape_fixed(
    raw: &RawGram,
    n_frames: usize,
    kind: FeatureKind,
    utt_id: &str,
) -> Result<FeatureGram> {
    if raw.n_frames == 0 || raw.n_bins == 0 {
        return Err(Error::param("cannot shape an empty gram"));
    }
    if n_frames == 0 {
        return Err(Error::param("target frame count must be positive"));
    }
    let mut data = Vec::with_capacity(raw.n_bins * n_frames);
    for b in 0..raw.n_bins {
        let row = &raw.data[b * raw.n_frames..(b + 1) * raw.n_frames];
        data.extend((0..n_frames).map(|t| row[t % raw.n_frames]));
    }
    FeatureGram::new(kind, utt_id, raw.n_bins, n_frames, data)
}
