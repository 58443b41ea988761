use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::net::{llr, Mode, ResNet};
use super::optim::{AdamW, Plateau};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::{FeatureGram, GramManifest};
use crate::metrics;
use crate::objectives::{self, ClassWeights, Objective, ObjectiveKind};
use crate::protocol::{AttackSpec, Label, Protocol};
use crate::rng;
use crate::scoring::ScoreRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKeyword {
    Auto,
}

/// Class weights: `"auto"` or `[bonafide, spoof]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Keyword(AlphaKeyword),
    Explicit([f64; 2]),
}

impl AlphaSpec {
    pub fn resolve(&self, labels: &[Label]) -> Result<ClassWeights> {
        match self {
            AlphaSpec::Keyword(AlphaKeyword::Auto) => ClassWeights::from_labels(labels),
            AlphaSpec::Explicit([b, s]) => ClassWeights::explicit(*b, *s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub gamma: f64,
    pub alpha: AlphaSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            betas: (0.9, 0.999),
            weight_decay: 5e-5,
            plateau_patience: 3,
            plateau_factor: 0.1,
            batch_size: 32,
            max_epochs: 20,
            seed: 0,
            objective: ObjectiveKind::Bfl,
            gamma: 2.0,
            alpha: AlphaSpec::Keyword(AlphaKeyword::Auto),
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        match self.objective {
            ObjectiveKind::Bce => Objective::bce(),
            ObjectiveKind::Bfl => Objective::bfl(self.gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.max_epochs > 0;
        if !ok {
            return Err(Error::param(format!("invalid training configuration {self:?}")));
        }
        Plateau::new(self.plateau_patience, self.plateau_factor)?;
        self.objective().validate()
    }
}

/// One labeled network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub utt_id: String,
    pub gram: Vec<f32>,
    pub label: Label,
    pub attack: Option<AttackSpec>,
}

/// Equally-shaped grams with labels, in protocol order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bins: usize,
    pub frames: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Pair grams with protocol entries; `grams` is looked up by utterance.
    pub fn from_grams(protocol: &Protocol, mut lookup: impl FnMut(&str) -> Result<FeatureGram>) -> Result<Self> {
        let mut shape = None;
        let mut examples = Vec::with_capacity(protocol.len());
        for e in &protocol.entries {
            let g = lookup(&e.utt_id)?;
            let s = (g.n_bins(), g.n_frames());
            if *shape.get_or_insert(s) != s {
                return Err(Error::shape(format!(
                    "gram of '{}' is {}x{}, expected {}x{}",
                    e.utt_id,
                    s.0,
                    s.1,
                    shape.unwrap().0,
                    shape.unwrap().1
                )));
            }
            examples.push(Example {
                utt_id: e.utt_id.clone(),
                gram: g.data().iter().map(|v| *v as f32).collect(),
                label: e.label,
                attack: e.attack,
            });
        }
        let (bins, frames) = shape.ok_or_else(|| Error::Data("empty protocol".into()))?;
        Ok(Self { bins, frames, examples })
    }

    /// Load every protocol utterance from a feature directory.
    pub fn load(manifest: &GramManifest, protocol: &Protocol) -> Result<Self> {
        Self::from_grams(protocol, |id| manifest.load(id))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.bins * self.frames);
        for &i in idx {
            data.extend_from_slice(&self.examples[i].gram);
        }
        Tensor::new(&[idx.len(), 1, self.bins, self.frames], data).expect("consistent gram shapes")
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.examples[i].label.class_index()).collect()
    }
}

const EVAL_BATCH: usize = 32;

/// Evaluation-mode scores of `idx`, with the mean objective when `loss` is
/// given.
fn eval_pass(
    model: &ResNet,
    data: &Dataset,
    idx: &[usize],
    loss: Option<(&ClassWeights, &Objective)>,
) -> Result<(Vec<ScoreRecord>, f64)> {
    let c = model.config().n_classes;
    let mut out = Vec::with_capacity(idx.len());
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let z = model.logits(&data.batch(chunk))?;
        for ((&i, row), t) in chunk.iter().zip(z.data().chunks_exact(c)).zip(data.targets(chunk)) {
            let row: Vec<f64> = row.iter().map(|v| *v as f64).collect();
            let e = &data.examples[i];
            out.push(ScoreRecord::labeled(e.utt_id.clone(), llr(&row), e.label, e.attack));
            if let Some((w, obj)) = loss {
                let lp = objectives::log_softmax(&row);
                total += w.alpha(t) * objectives::focal_term(lp[t].min(0.0), obj.effective_gamma()).0;
            }
        }
    }
    Ok((out, total / idx.len().max(1) as f64))
}

/// Scores of every example, in dataset order.
pub fn score_dataset(model: &ResNet, data: &Dataset) -> Result<Vec<ScoreRecord>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(eval_pass(model, data, &idx, None)?.0)
}

/// [`score_dataset`] split over `jobs` threads. Results do not depend on
/// `jobs`.
pub fn score_dataset_parallel(model: &ResNet, data: &Dataset, jobs: usize) -> Result<Vec<ScoreRecord>> {
    let jobs = jobs.clamp(1, data.len().max(1));
    if jobs == 1 {
        return score_dataset(model, data);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let per = data.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<ScoreRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = idx
            .chunks(per)
            .map(|part| scope.spawn(move || eval_pass(model, data, part, None).map(|r| r.0)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub lr: f64,
}

/// Line-delimited `epoch train_loss dev_eer lr` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.epochs {
            let _ = writeln!(s, "{} {:.6} {:.6} {:e}", r.epoch, r.train_loss, r.dev_eer, r.lr);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Parse {
                line: i + 1,
                msg: format!("expected 'epoch train_loss dev_eer lr', got '{line}'"),
            };
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 4 {
                return Err(bad());
            }
            epochs.push(EpochRecord {
                epoch: t[0].parse().map_err(|_| bad())?,
                train_loss: t[1].parse().map_err(|_| bad())?,
                dev_eer: t[2].parse().map_err(|_| bad())?,
                lr: t[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { epochs })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub struct TrainOutcome {
    /// State at the epoch with the lowest dev EER (ties: lower dev loss).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub log: TrainingLog,
}

const SHUFFLE_STREAM: u64 = 0x5348;

/// Train `model` on `train`, selecting the best epoch on `dev`.
pub fn train(mut model: ResNet, train: &Dataset, dev: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and dev sets must be non-empty".into()));
    }
    let weights = cfg.alpha.resolve(&train.labels())?;
    let obj = cfg.objective();
    let mut opt = AdamW::new(model.params(), cfg.lr, cfg.betas, cfg.weight_decay);
    let mut sched = Plateau::new(cfg.plateau_patience, cfg.plateau_factor)?;
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, f64, usize, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let dev_idx: Vec<usize> = (0..dev.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(train.batch(chunk));
            let fwd = model.forward(&mut tape, x, Mode::Train)?;
            let loss = objectives::batch_loss(&mut tape, fwd.logits, &train.targets(chunk), &weights, &obj)?;
            let lv = tape.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += lv * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let gs: Vec<&[f32]> = fwd.params.iter().map(|v| grads.get(*v).expect("parameter gradient")).collect();
            opt.update(model.params_mut(), &gs)?;
            model.update_running(&fwd.stats);
        }
        let train_loss = loss_sum / train.len() as f64;
        let (dev_scores, dev_loss) = eval_pass(&model, dev, &dev_idx, Some((&weights, &obj)))?;
        let dev_eer = metrics::eer(&dev_scores)?.0;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_eer,
            lr: opt.lr,
        });
        let better = match &best {
            None => true,
            Some((e, l, _, _)) => dev_eer < *e || (dev_eer == *e && dev_loss < *l),
        };
        if better {
            best = Some((dev_eer, dev_loss, epoch, Checkpoint::capture(&model, &opt, epoch)));
        }
        if let Some(f) = sched.observe(dev_eer) {
            opt.lr *= f;
        }
    }
    let (_, _, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, log })
}
