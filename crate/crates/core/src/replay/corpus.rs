use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::voice::{synth_utterance, Voice};
use super::{capture_bonafide, degrade, ReplayConfig};
use crate::audio::{write_wav, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::protocol::{AttackSpec, Label, Protocol, ProtocolEntry};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_sources: usize,
    pub utts_per_source: usize,
    /// Fractions of sources assigned to train, dev and eval.
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub replay: ReplayConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_sources: 10,
            utts_per_source: 6,
            split_ratios: [0.4, 0.3, 0.3],
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration_s: 1.0,
            replay: ReplayConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    pub fn protocol_file(self) -> String {
        format!("protocol_{}.txt", self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::param(format!("unknown split '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub utt_id: String,
    pub attack: Option<AttackSpec>,
    pub source: usize,
    pub wav: Waveform,
}

impl CorpusEntry {
    pub fn label(&self) -> Label {
        if self.attack.is_some() {
            Label::Spoof
        } else {
            Label::Bonafide
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub split: Split,
    pub sources: Vec<usize>,
    pub entries: Vec<CorpusEntry>,
}

impl SplitCorpus {
    pub fn protocol(&self) -> Protocol {
        Protocol {
            entries: self
                .entries
                .iter()
                .map(|e| ProtocolEntry::new(e.utt_id.clone(), e.attack))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub splits: Vec<SplitCorpus>,
}

pub const WAV_DIR: &str = "wav";

impl Corpus {
    pub fn split(&self, s: Split) -> &SplitCorpus {
        self.splits.iter().find(|x| x.split == s).expect("all splits present")
    }

    /// Write `wav/<utt>.wav` and one protocol file per split into a new
    /// directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("output directory {} already exists", dir.display()),
            )));
        }
        fs::create_dir_all(dir.join(WAV_DIR))?;
        for s in &self.splits {
            for e in &s.entries {
                write_wav(&e.wav, wav_path(dir, &e.utt_id))?;
            }
            s.protocol().write(dir.join(s.split.protocol_file()))?;
        }
        Ok(())
    }
}

pub fn wav_path(corpus_dir: &Path, utt_id: &str) -> PathBuf {
    corpus_dir.join(WAV_DIR).join(format!("{utt_id}.wav"))
}

/// Largest-remainder allocation of `n` items to `ratios`.
fn allocate(n: usize, ratios: &[f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|a, b| (exact[*b] - exact[*b].floor()).total_cmp(&(exact[*a] - exact[*a].floor())).then(a.cmp(b)));
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            return Err(Error::param(format!(
                "{n} sources are too few for split ratios {ratios:?}"
            )));
        }
    }
    Ok(counts)
}

struct Job {
    split: usize,
    source: usize,
    utt: usize,
}

fn render(cfg: &CorpusConfig, voices: &[Voice], job: &Job) -> Result<Vec<CorpusEntry>> {
    let useed = rng::derive_seed(cfg.seed, &[0x0u64, job.source as u64, job.utt as u64]);
    let clean = synth_utterance(&voices[job.source], cfg.sample_rate, cfg.duration_s, useed)?;
    let base = format!("u{:03}_{:02}", job.source, job.utt);
    let mut out = Vec::with_capacity(10);
    let bona = capture_bonafide(&clean, useed, &cfg.replay)?;
    out.push(CorpusEntry {
        utt_id: format!("{base}_0"),
        attack: None,
        source: job.source,
        wav: bona.with_id(format!("{base}_0")),
    });
    for (k, spec) in AttackSpec::all().into_iter().enumerate() {
        let id = format!("{base}_{}", k + 1);
        let wav = degrade(&clean, spec, useed, &cfg.replay)?.with_id(id.clone());
        out.push(CorpusEntry {
            utt_id: id,
            attack: Some(spec),
            source: job.source,
            wav,
        });
    }
    Ok(out)
}

/// Every bonafide utterance is paired with one replay per attack code, so
/// each split is 9:1 spoof to bonafide with equal code frequencies.
/// Sources never straddle splits.
pub fn generate_corpus(cfg: &CorpusConfig, jobs: usize) -> Result<Corpus> {
    if cfg.n_sources == 0 || cfg.utts_per_source == 0 {
        return Err(Error::param("source and utterance counts must be positive"));
    }
    cfg.replay.validate(cfg.sample_rate)?;
    let counts = allocate(cfg.n_sources, &cfg.split_ratios)?;
    let voices: Vec<Voice> = (0..cfg.n_sources)
        .map(|s| Voice::sample(&mut rng::stream(cfg.seed, &[0x5C, s as u64])))
        .collect();
    let mut work = Vec::new();
    let mut split_sources = vec![Vec::new(); 3];
    let mut source = 0;
    for (split, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            split_sources[split].push(source);
            for utt in 0..cfg.utts_per_source {
                work.push(Job { split, source, utt });
            }
            source += 1;
        }
    }
    let jobs = jobs.clamp(1, work.len());
    let mut results: Vec<Option<Result<Vec<CorpusEntry>>>> = (0..work.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let (work, voices) = (&work, &voices);
                scope.spawn(move || {
                    (j..work.len())
                        .step_by(jobs)
                        .map(|i| (i, render(cfg, voices, &work[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("corpus worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut splits: Vec<SplitCorpus> = Split::ALL
        .iter()
        .zip(split_sources)
        .map(|(s, sources)| SplitCorpus {
            split: *s,
            sources,
            entries: Vec::new(),
        })
        .collect();
    for (job, r) in work.iter().zip(results) {
        splits[job.split].entries.extend(r.expect("every job ran")?);
    }
    Ok(Corpus { splits })
}
