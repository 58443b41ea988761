//! Score files and score fusion.
//!
//! A score file holds one `<utt_id> <score>` line per utterance, with the
//! score written to six decimals and rounded half away from zero.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::protocol::{AttackSpec, Label, Protocol};

/// One countermeasure score with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub score: f64,
    pub label: Option<Label>,
    pub attack: Option<AttackSpec>,
}

impl ScoreRecord {
    pub fn new(utt_id: impl Into<String>, score: f64) -> Self {
        Self {
            utt_id: utt_id.into(),
            score,
            label: None,
            attack: None,
        }
    }

    pub fn labeled(utt_id: impl Into<String>, score: f64, label: Label, attack: Option<AttackSpec>) -> Self {
        Self {
            utt_id: utt_id.into(),
            score,
            label: Some(label),
            attack,
        }
    }
}

/// Six-decimal rendering, rounding the shortest decimal form of `x` half
/// away from zero. Zero is never printed with a minus sign.
pub fn format_score(x: f64) -> String {
    if !x.is_finite() || x.abs() >= 1e15 {
        return format!("{x:.6}");
    }
    let sci = format!("{:e}", x.abs());
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: Vec<u8> = mant.bytes().filter(|b| *b != b'.').map(|b| b - b'0').collect();
    // value = digits * 10^(exp - (len - 1)); scale by 1e6.
    let shift = exp - (digits.len() as i32 - 1) + 6;
    let n: u64 = if shift >= 0 {
        digits.iter().fold(0u64, |a, d| a * 10 + *d as u64) * 10u64.pow(shift as u32)
    } else {
        let keep = digits.len() as i32 + shift;
        if keep < 0 {
            0
        } else {
            let keep = keep as usize;
            let head = digits[..keep].iter().fold(0u64, |a, d| a * 10 + *d as u64);
            head + u64::from(digits.get(keep).is_some_and(|d| *d >= 5))
        }
    };
    let sign = if x < 0.0 && n != 0 { "-" } else { "" };
    format!("{sign}{}.{:06}", n / 1_000_000, n % 1_000_000)
}

pub fn scores_to_text(records: &[ScoreRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.utt_id);
        s.push(' ');
        s.push_str(&format_score(r.score));
        s.push('\n');
    }
    s
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let (id, score) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(s), None) => (id, s),
            _ => return Err(bad(format!("expected '<utt_id> <score>', got '{line}'"))),
        };
        let score: f64 = score.parse().map_err(|_| bad(format!("invalid score '{score}'")))?;
        if !score.is_finite() {
            return Err(bad(format!("score must be finite, got '{score}'")));
        }
        if !seen.insert(id.to_string()) {
            return Err(bad(format!("duplicate utterance id '{id}'")));
        }
        out.push(ScoreRecord::new(id, score));
    }
    Ok(out)
}

pub fn write_scores(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scores_to_text(records))?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    parse_scores(&fs::read_to_string(path)?)
}

/// Fill labels and attack codes from a protocol. Every score must have a
/// protocol entry.
pub fn attach_labels(records: &[ScoreRecord], protocol: &Protocol) -> Result<Vec<ScoreRecord>> {
    let index: HashMap<&str, _> = protocol.entries.iter().map(|e| (e.utt_id.as_str(), e)).collect();
    records
        .iter()
        .map(|r| {
            let e = index
                .get(r.utt_id.as_str())
                .ok_or_else(|| Error::Data(format!("utterance '{}' is not in the protocol", r.utt_id)))?;
            Ok(ScoreRecord::labeled(r.utt_id.clone(), r.score, e.label, e.attack))
        })
        .collect()
}

fn symmetric_difference(a: &[ScoreRecord], b: &[ScoreRecord]) -> Vec<String> {
    let sa: BTreeSet<&str> = a.iter().map(|r| r.utt_id.as_str()).collect();
    let sb: BTreeSet<&str> = b.iter().map(|r| r.utt_id.as_str()).collect();
    sa.symmetric_difference(&sb).map(|s| s.to_string()).collect()
}

/// Score matrix `[n_utts][n_systems]` in the utterance order of the first
/// system.
pub fn align(systems: &[Vec<ScoreRecord>]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let first = systems
        .first()
        .ok_or_else(|| Error::param("fusion needs at least one score set"))?;
    let mut maps = Vec::with_capacity(systems.len());
    for (k, s) in systems.iter().enumerate() {
        let m: HashMap<&str, f64> = s.iter().map(|r| (r.utt_id.as_str(), r.score)).collect();
        if m.len() != first.len() || first.iter().any(|r| !m.contains_key(r.utt_id.as_str())) {
            let diff = symmetric_difference(first, s);
            let shown: Vec<&str> = diff.iter().take(10).map(String::as_str).collect();
            return Err(Error::Alignment(format!(
                "system {} differs from system 1 in {} utterance(s): {}{}",
                k + 1,
                diff.len(),
                shown.join(", "),
                if diff.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        maps.push(m);
    }
    let ids: Vec<String> = first.iter().map(|r| r.utt_id.clone()).collect();
    let rows = ids.iter().map(|id| maps.iter().map(|m| m[id.as_str()]).collect()).collect();
    Ok((ids, rows))
}

/// Arithmetic mean in a form that is independent of system order and
/// exact when all values agree.
pub fn mean_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let lo = v[0];
    lo + v.iter().map(|x| x - lo).sum::<f64>() / v.len() as f64
}

pub fn mean_fuse(systems: &[Vec<ScoreRecord>]) -> Result<Vec<ScoreRecord>> {
    let (ids, rows) = align(systems)?;
    Ok(ids.into_iter().zip(rows).map(|(id, row)| ScoreRecord::new(id, mean_of(&row))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Mean,
    Logistic,
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Mean => "mean",
            FusionKind::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Ridge strength on the logistic fusion weights (the bias is not
/// penalized).
pub const LR_L2: f64 = 1e-4;
pub const LR_GRAD_TOL: f64 = 1e-8;
pub const LR_MAX_ITER: usize = 200;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl FusionModel {
    pub fn mean(k: usize) -> Self {
        Self {
            kind: FusionKind::Mean,
            weights: vec![1.0 / k as f64; k],
            bias: 0.0,
        }
    }

    pub fn n_systems(&self) -> usize {
        self.weights.len()
    }

    /// Fused score of one utterance.
    pub fn fuse_row(&self, scores: &[f64]) -> f64 {
        match self.kind {
            FusionKind::Mean => mean_of(scores),
            FusionKind::Logistic => {
                self.bias + self.weights.iter().zip(scores).map(|(w, s)| w * s).sum::<f64>()
            }
        }
    }

    pub fn apply(&self, systems: &[Vec<ScoreRecord>]) -> Result<Vec<ScoreRecord>> {
        if systems.len() != self.n_systems() {
            return Err(Error::param(format!(
                "fusion model expects {} systems, got {}",
                self.n_systems(),
                systems.len()
            )));
        }
        let (ids, rows) = align(systems)?;
        Ok(ids
            .into_iter()
            .zip(rows)
            .map(|(id, row)| ScoreRecord::new(id, self.fuse_row(&row)))
            .collect())
    }

    /// Logistic-regression fusion trained on labeled rows
    /// (`true` = bonafide) by damped Newton iterations.
    pub fn train_logistic(rows: &[Vec<f64>], bonafide: &[bool]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n != bonafide.len() {
            return Err(Error::param(format!("{n} score rows but {} labels", bonafide.len())));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::param("score rows differ in length"));
        }
        let d = k + 1;
        let y: Vec<f64> = bonafide.iter().map(|b| f64::from(u8::from(*b))).collect();
        let objective = |theta: &DVector<f64>| -> f64 {
            let mut total = 0.0;
            for (r, yi) in rows.iter().zip(&y) {
                let z = theta[k] + r.iter().enumerate().map(|(j, s)| theta[j] * s).sum::<f64>();
                total += softplus(z) - yi * z;
            }
            total / n as f64 + 0.5 * LR_L2 * (0..k).map(|j| theta[j] * theta[j]).sum::<f64>()
        };
        let mut theta = DVector::<f64>::zeros(d);
        let mut last_norm = f64::INFINITY;
        for _ in 0..LR_MAX_ITER {
            let mut g = DVector::<f64>::zeros(d);
            let mut h = DMatrix::<f64>::zeros(d, d);
            for (r, yi) in rows.iter().zip(&y) {
                let mut x = r.clone();
                x.push(1.0);
                let z: f64 = x.iter().enumerate().map(|(j, v)| theta[j] * v).sum();
                let p = sigmoid(z);
                let s = p * (1.0 - p);
                for a in 0..d {
                    g[a] += (p - yi) * x[a];
                    for b in 0..d {
                        h[(a, b)] += s * x[a] * x[b];
                    }
                }
            }
            g /= n as f64;
            h /= n as f64;
            for j in 0..k {
                g[j] += LR_L2 * theta[j];
                h[(j, j)] += LR_L2;
            }
            last_norm = g.norm();
            if last_norm < LR_GRAD_TOL {
                return Ok(Self {
                    kind: FusionKind::Logistic,
                    weights: theta.rows(0, k).iter().copied().collect(),
                    bias: theta[k],
                });
            }
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => h
                    .lu()
                    .solve(&g)
                    .ok_or_else(|| Error::Numeric("singular Hessian in logistic fusion".into()))?,
            };
            let f0 = objective(&theta);
            let slope = -g.dot(&step);
            let mut t = 1.0;
            loop {
                let cand = &theta - &step * t;
                if objective(&cand) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                    theta = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::Numeric(format!(
            "logistic fusion did not converge in {LR_MAX_ITER} iterations (gradient norm {last_norm:.3e})"
        )))
    }

    /// Train on dev score sets whose utterances all appear in `protocol`.
    pub fn train_on_dev(systems: &[Vec<ScoreRecord>], protocol: &Protocol) -> Result<Self> {
        if systems.len() < 2 {
            return Err(Error::param("logistic fusion needs at least two systems"));
        }
        let (ids, rows) = align(systems)?;
        let index: HashMap<&str, Label> = protocol.entries.iter().map(|e| (e.utt_id.as_str(), e.label)).collect();
        let labels = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|l| *l == Label::Bonafide)
                    .ok_or_else(|| Error::Data(format!("no dev label for utterance '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::train_logistic(&rows, &labels)
    }

    pub fn to_text(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|v| format!("{v:e}")).collect();
        format!(
            "fusion-model v1\nkind {}\nweights {}\nbias {:e}\n",
            self.kind,
            w.join(" "),
            self.bias
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            let (i, l) = lines
                .next()
                .ok_or_else(|| Error::Format(format!("fusion model: missing '{key}' line")))?;
            let toks: Vec<String> = l.split_whitespace().map(str::to_string).collect();
            if toks[0] != key {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected '{key}', got '{}'", toks[0]),
                });
            }
            Ok((i + 1, toks[1..].to_vec()))
        };
        let (line, header) = next("fusion-model")?;
        if header != ["v1"] {
            return Err(Error::Unsupported(format!("fusion model version {header:?} at line {line}")));
        }
        let (line, kind) = next("kind")?;
        let kind = match kind.first().map(String::as_str) {
            Some("mean") => FusionKind::Mean,
            Some("logistic") => FusionKind::Logistic,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown fusion kind {other:?}"),
                })
            }
        };
        let num = |line: usize, s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number '{s}'"),
            })
        };
        let (line, ws) = next("weights")?;
        let weights = ws.iter().map(|s| num(line, s)).collect::<Result<Vec<_>>>()?;
        let (line, b) = next("bias")?;
        let bias = num(line, b.first().map(String::as_str).unwrap_or(""))?;
        Ok(Self { kind, weights, bias })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
