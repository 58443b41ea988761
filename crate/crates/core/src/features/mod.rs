//! Time-frequency front-ends: STFT-gram, (M)GD-gram and CQT-gram.

pub mod cqt;
pub mod gram;
pub mod gramfile;
pub mod mgd;
pub mod stft;

use serde::{Deserialize, Serialize};

pub use cqt::{cqt_gram, CqtKernelBank, CqtParams};
pub use gramfile::{read_gram, write_gram, GramManifest, MANIFEST_NAME};
pub use gram::{shape_fixed, FeatureGram, FeatureKind, RawGram, GRAM_FRAMES};
pub use mgd::{cepstral_smooth, gd_gram, mgd_gram, MgdParams};
pub use stft::{stft, stft_gram, ComplexGram, FrameSpec, Window};

use crate::audio::Waveform;
use crate::error::Result;

/// Everything needed to turn a waveform into a network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub frame: FrameSpec,
    pub mgd: MgdParams,
    pub cqt: CqtParams,
    /// Length of the time axis after shaping.
    pub n_frames: usize,
    /// Optional block-average reduction `(bins, frames)` applied after
    /// shaping, for small desk-scale models.
    pub pool: Option<(usize, usize)>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame: FrameSpec::default(),
            mgd: MgdParams::default(),
            cqt: CqtParams::default(),
            n_frames: GRAM_FRAMES,
            pool: None,
        }
    }
}

/// Feature extractor with cached CQT kernels.
pub struct Extractor {
    cfg: FeatureConfig,
    cqt: Option<(u32, CqtKernelBank)>,
}

impl Extractor {
    pub fn new(cfg: FeatureConfig) -> Self {
        Self { cfg, cqt: None }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn extract(&mut self, w: &Waveform, kind: FeatureKind) -> Result<FeatureGram> {
        let raw = match kind {
            FeatureKind::Stft => stft::stft_raw(w, &self.cfg.frame)?,
            FeatureKind::Mgd => mgd::mgd_raw(w, &self.cfg.frame, &self.cfg.mgd)?,
            FeatureKind::Gd => mgd::gd_raw(w, &self.cfg.frame)?,
            FeatureKind::Cqt => {
                let sr = w.sample_rate();
                if self.cqt.as_ref().map(|(r, _)| *r) != Some(sr) {
                    self.cqt = Some((sr, CqtKernelBank::new(sr, self.cfg.cqt)?));
                }
                self.cqt.as_ref().expect("bank built above").1.log_gram(w)?
            }
        };
        let g = shape_fixed(&raw, self.cfg.n_frames, kind, &w.utt_id)?;
        match self.cfg.pool {
            Some((b, f)) => g.pooled(b, f),
            None => Ok(g),
        }
    }
}
