use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::out_dim;
use crate::autodiff::{BatchStats, BnMode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::FeatureGram;
use crate::objectives::log_softmax;
use crate::rng;

pub const BN_MOMENTUM: f64 = 0.1;

/// Topology of the residual countermeasure network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNetConfig {
    pub block_counts: Vec<usize>,
    pub base_channels: usize,
    pub fc_width: usize,
    pub n_classes: usize,
    pub input_bins: usize,
    /// Nominal time axis; the network itself accepts any width.
    pub input_frames: usize,
    /// Channel divisor for small runs.
    pub scale: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            block_counts: vec![3, 4, 6, 3],
            base_channels: 16,
            fc_width: 32,
            n_classes: 2,
            input_bins: 513,
            input_frames: 500,
            scale: 1,
        }
    }
}

impl ResNetConfig {
    /// Scale-4 network for an input of the given size.
    pub fn desk(input_bins: usize, input_frames: usize) -> Self {
        Self {
            input_bins,
            input_frames,
            scale: 4,
            ..Self::default()
        }
    }

    pub fn channels(&self, stage: usize) -> usize {
        (self.base_channels << stage) / self.scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if self.block_counts.is_empty() || self.block_counts.contains(&0) {
            return bad(format!("block counts must be positive, got {:?}", self.block_counts));
        }
        if self.scale == 0 || self.base_channels == 0 || self.base_channels % self.scale != 0 {
            return bad(format!(
                "base_channels {} must be a positive multiple of scale {}",
                self.base_channels, self.scale
            ));
        }
        if self.fc_width == 0 || self.n_classes < 2 {
            return bad(format!("fc_width {} / n_classes {} invalid", self.fc_width, self.n_classes));
        }
        if self.input_bins == 0 || self.input_frames == 0 {
            return bad(format!("input {}x{} is empty", self.input_bins, self.input_frames));
        }
        Ok(())
    }

    /// `(channels, height, width)` after the stem and after every stage.
    pub fn stage_shapes(&self) -> Result<Vec<[usize; 3]>> {
        self.validate()?;
        let (mut h, mut w) = (self.input_bins, self.input_frames);
        let mut out = vec![[self.channels(0), h, w]];
        for stage in 0..self.block_counts.len() {
            if stage > 0 {
                h = out_dim(h, 3, 2, 1).expect("positive extent");
                w = out_dim(w, 3, 2, 1).expect("positive extent");
            }
            out.push([self.channels(stage), h, w]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    stat: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: usize,
    bn: BnIdx,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Block {
    c1: ConvBn,
    c2: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvBn,
    stages: Vec<Vec<Block>>,
    fc: (usize, usize),
    out: (usize, usize),
}

/// A named trainable buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, parameters tracked for gradients.
    Train,
    /// Running statistics, parameters constant.
    Eval,
}

/// Handles produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
    pub stats: Vec<(usize, BatchStats)>,
}

#[derive(Debug, Clone)]
pub struct ResNet {
    cfg: ResNetConfig,
    params: Vec<Param>,
    bn: Vec<BnRunning>,
    layout: Layout,
}

struct Builder {
    params: Vec<Param>,
    bn: Vec<BnRunning>,
    seed: u64,
}

impl Builder {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let id = self.params.len() as u64;
        let mut rng = rng::stream(self.seed, &[0x1417, id]);
        let dist = Normal::new(0.0, std).expect("positive std");
        let value = Tensor::from_fn(shape, |_| dist.sample(&mut rng) as f32);
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f32) -> usize {
        self.params.push(Param {
            name,
            value: Tensor::full(shape, v),
        });
        self.params.len() - 1
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> ConvBn {
        let fan_in = c_in * k * k;
        let conv = self.normal(format!("{name}.conv"), &[c_out, c_in, k, k], (2.0 / fan_in as f64).sqrt());
        let gamma = self.filled(format!("{name}.bn.gamma"), &[c_out], 1.0);
        let beta = self.filled(format!("{name}.bn.beta"), &[c_out], 0.0);
        self.bn.push(BnRunning {
            name: format!("{name}.bn"),
            mean: vec![0.0; c_out],
            var: vec![1.0; c_out],
        });
        ConvBn {
            conv,
            bn: BnIdx {
                gamma,
                beta,
                stat: self.bn.len() - 1,
            },
            stride,
            pad: k / 2,
        }
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, gain: f64) -> (usize, usize) {
        let w = self.normal(format!("{name}.weight"), &[d_out, d_in], (gain / d_in as f64).sqrt());
        let b = self.filled(format!("{name}.bias"), &[d_out], 0.0);
        (w, b)
    }
}

impl ResNet {
    /// Fresh network with seeded fan-in normal initialization.
    pub fn new(cfg: ResNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            bn: Vec::new(),
            seed,
        };
        let stem = b.conv_bn("stem", 1, cfg.channels(0), 3, 1);
        let mut stages = Vec::new();
        let mut c_in = cfg.channels(0);
        for (s, &n) in cfg.block_counts.iter().enumerate() {
            let c_out = cfg.channels(s);
            let mut blocks = Vec::new();
            for j in 0..n {
                let stride = if s > 0 && j == 0 { 2 } else { 1 };
                let name = format!("stage{}.block{}", s + 1, j + 1);
                let c1 = b.conv_bn(&format!("{name}.conv1"), c_in, c_out, 3, stride);
                let c2 = b.conv_bn(&format!("{name}.conv2"), c_out, c_out, 3, 1);
                let proj = (stride != 1 || c_in != c_out).then(|| b.conv_bn(&format!("{name}.proj"), c_in, c_out, 1, stride));
                blocks.push(Block { c1, c2, proj });
                c_in = c_out;
            }
            stages.push(blocks);
        }
        let fc = b.linear("fc", c_in, cfg.fc_width, 2.0);
        let out = b.linear("out", cfg.fc_width, cfg.n_classes, 1.0);
        Ok(Self {
            cfg,
            params: b.params,
            bn: b.bn,
            layout: Layout { stem, stages, fc, out },
        })
    }

    /// Rebuild from stored buffers, checking names and shapes.
    pub fn from_parts(cfg: ResNetConfig, params: Vec<Param>, bn: Vec<BnRunning>) -> Result<Self> {
        let mut net = Self::new(cfg, 0)?;
        if params.len() != net.params.len() || bn.len() != net.bn.len() {
            return Err(Error::Format(format!(
                "expected {} parameters and {} norm layers, got {} and {}",
                net.params.len(),
                net.bn.len(),
                params.len(),
                bn.len()
            )));
        }
        for (want, got) in net.params.iter().zip(&params) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Format(format!(
                    "parameter '{}' {:?} does not match expected '{}' {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        for (want, got) in net.bn.iter().zip(&bn) {
            if want.name != got.name || want.mean.len() != got.mean.len() || want.var.len() != got.var.len() {
                return Err(Error::Format(format!("norm layer '{}' does not match '{}'", got.name, want.name)));
            }
        }
        net.params = params;
        net.bn = bn;
        Ok(net)
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bn_running(&self) -> &[BnRunning] {
        &self.bn
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_params(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    fn conv_bn(&self, tape: &mut Tape, x: Var, l: &ConvBn, p: &[Var], mode: Mode, stats: &mut Vec<(usize, BatchStats)>) -> Result<Var> {
        let y = tape.conv2d(x, p[l.conv], l.stride, l.pad)?;
        let running = &self.bn[l.bn.stat];
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval {
                mean: &running.mean,
                var: &running.var,
            },
        };
        let (y, s) = tape.batchnorm2d(y, p[l.bn.gamma], p[l.bn.beta], bn_mode)?;
        if let Some(s) = s {
            stats.push((l.bn.stat, s));
        }
        Ok(y)
    }

    /// Record a forward pass of `x` (`[n, 1, bins, frames]`) on `tape`.
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Forward> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.input_bins {
            return Err(Error::shape(format!(
                "network expects [n, 1, {}, frames], got {s:?}",
                self.cfg.input_bins
            )));
        }
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|q| tape.leaf(q.value.clone(), mode == Mode::Train))
            .collect();
        let mut stats = Vec::new();
        let l = &self.layout;
        let mut h = self.conv_bn(tape, x, &l.stem, &p, mode, &mut stats)?;
        h = tape.relu(h);
        h = tape.maxpool2d(h, 3, 1, 1)?;
        for stage in &l.stages {
            for b in stage {
                let mut y = self.conv_bn(tape, h, &b.c1, &p, mode, &mut stats)?;
                y = tape.relu(y);
                y = self.conv_bn(tape, y, &b.c2, &p, mode, &mut stats)?;
                let sc = match &b.proj {
                    Some(pr) => self.conv_bn(tape, h, pr, &p, mode, &mut stats)?,
                    None => h,
                };
                let sum = tape.add(y, sc)?;
                h = tape.relu(sum);
            }
        }
        let g = tape.global_avg_pool(h)?;
        let f = tape.linear(g, p[l.fc.0], Some(p[l.fc.1]))?;
        let f = tape.relu(f);
        let logits = tape.linear(f, p[l.out.0], Some(p[l.out.1]))?;
        Ok(Forward { logits, params: p, stats })
    }

    /// Fold training-batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            let r = &mut self.bn[*i];
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for c in 0..r.mean.len() {
                r.mean[c] = ((1.0 - BN_MOMENTUM) * r.mean[c] as f64 + BN_MOMENTUM * s.mean[c] as f64) as f32;
                r.var[c] = ((1.0 - BN_MOMENTUM) * r.var[c] as f64 + BN_MOMENTUM * s.var[c] as f64 * unbias) as f32;
            }
        }
    }

    /// Evaluation-mode logits `[n, classes]`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let f = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Countermeasure scores log p(bonafide) − log p(spoof) of a batch.
    pub fn score_batch(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let z = self.logits(batch)?;
        let c = self.cfg.n_classes;
        Ok(z.data()
            .chunks_exact(c)
            .map(|row| llr(&row.iter().map(|v| *v as f64).collect::<Vec<_>>()))
            .collect())
    }

    /// |d log p(class) / d input| for a single gram.
    pub fn saliency(&self, g: &FeatureGram, class: usize) -> Result<FeatureGram> {
        let x = gram_tensor(g, self.cfg.input_bins)?;
        if class >= self.cfg.n_classes {
            return Err(Error::param(format!("class {class} out of range")));
        }
        let sal = crate::autodiff::saliency(&x, |tape, xv| {
            let f = self.forward(tape, xv, Mode::Eval)?;
            let lp = tape.log_softmax(f.logits)?;
            let picked = tape.select(lp, &[class])?;
            Ok(tape.sum(picked))
        })?;
        FeatureGram::new(
            g.kind,
            &g.utt_id,
            g.n_bins(),
            g.n_frames(),
            sal.data().iter().map(|v| *v as f64).collect(),
        )
    }
}

/// log p_0 − log p_1 from raw logits.
pub fn llr(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    lp[0] - lp[1]
}

/// `[1, 1, bins, frames]` tensor of a gram, checking the height.
pub fn gram_tensor(g: &FeatureGram, input_bins: usize) -> Result<Tensor> {
    if g.n_bins() != input_bins {
        return Err(Error::shape(format!(
            "gram has {} bins but the model expects {input_bins}",
            g.n_bins()
        )));
    }
    Tensor::new(&[1, 1, g.n_bins(), g.n_frames()], g.data().iter().map(|v| *v as f32).collect())
}

/// Score one utterance.
pub fn score_utterance(model: &ResNet, g: &FeatureGram) -> Result<f64> {
    let x = gram_tensor(g, model.config().input_bins)?;
    Ok(model.score_batch(&x)?[0])
}
