//! Binary feature-gram files and the utterance -> file manifest.
//!
//! Layout (little-endian): magic `FGRM`, version `u16`, kind `u8`,
//! `n_bins: u32`, `n_frames: u32`, then `n_bins * n_frames` `f32` values in
//! row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::gram::{FeatureGram, FeatureKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FGRM";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const GRAM_EXT: &str = "fgrm";

pub fn encode(g: &FeatureGram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * g.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(g.kind.code());
    out.extend_from_slice(&(g.n_bins() as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_frames() as u32).to_le_bytes());
    for v in g.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], utt_id: &str) -> Result<FeatureGram> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a feature-gram file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Unsupported(format!("feature-gram version {version}")));
    }
    let kind = FeatureKind::from_code(bytes[6])?;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let n_bins = word(7);
    let n_frames = word(11);
    let n = n_bins
        .checked_mul(n_frames)
        .ok_or_else(|| Error::Format("gram dimensions overflow".into()))?;
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match {n_bins} x {n_frames}",
            bytes.len() - HEADER_LEN
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureGram::new(kind, utt_id, n_bins, n_frames, data)
}

pub fn write_gram(g: &FeatureGram, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(g))?;
    Ok(())
}

pub fn read_gram(path: impl AsRef<Path>, utt_id: &str) -> Result<FeatureGram> {
    decode(&fs::read(path)?, utt_id)
}

/// Maps utterance ids to gram files inside a feature directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GramManifest {
    pub entries: BTreeMap<String, PathBuf>,
}

impl GramManifest {
    pub fn gram_path(dir: &Path, utt_id: &str) -> PathBuf {
        dir.join(format!("{utt_id}.{GRAM_EXT}"))
    }

    /// Write `<utt_id> <file name>` lines, sorted by id.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut f = fs::File::create(dir.join(MANIFEST_NAME))?;
        for (id, p) in &self.entries {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            writeln!(f, "{id} {name}")?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(id), Some(file), None) => {
                    entries.insert(id.to_string(), dir.join(file));
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected '<utt_id> <file>', got '{line}'"),
                    })
                }
            }
        }
        Ok(Self { entries })
    }

    /// Load the gram for `utt_id`, naming the utterance if it is missing.
    pub fn load(&self, utt_id: &str) -> Result<FeatureGram> {
        let path = self
            .entries
            .get(utt_id)
            .ok_or_else(|| Error::Data(format!("no feature file for utterance '{utt_id}'")))?;
        if !path.exists() {
            return Err(Error::Data(format!(
                "feature file {} for utterance '{utt_id}' is missing",
                path.display()
            )));
        }
        read_gram(path, utt_id)
    }
}
