//! Balanced cross-entropy and balanced focal loss.
//!
//! BFL(p_t) = -α_t (1 - p_t)^γ log p_t, with BCE as the γ = 0 case.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::protocol::Label;

/// Tolerance on Σ exp(log_probs) = 1.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Explicit,
    Auto,
}

/// Per-class weights α_c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub alpha_bonafide: f64,
    pub alpha_spoof: f64,
    pub mode: WeightMode,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            alpha_bonafide: 1.0,
            alpha_spoof: 1.0,
            mode: WeightMode::Explicit,
        }
    }

    pub fn explicit(alpha_bonafide: f64, alpha_spoof: f64) -> Result<Self> {
        for a in [alpha_bonafide, alpha_spoof] {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::param(format!("class weight must be positive, got {a}")));
            }
        }
        Ok(Self {
            alpha_bonafide,
            alpha_spoof,
            mode: WeightMode::Explicit,
        })
    }

    /// Inverse class frequency, scaled so that the per-sample weights
    /// average to 1 over the training set: α_c = N / (2 n_c).
    pub fn auto(n_bonafide: usize, n_spoof: usize) -> Result<Self> {
        if n_bonafide == 0 || n_spoof == 0 {
            return Err(Error::param(format!(
                "auto class weights need both classes, got {n_bonafide} bonafide and {n_spoof} spoof"
            )));
        }
        let n = (n_bonafide + n_spoof) as f64;
        Ok(Self {
            alpha_bonafide: n / (2.0 * n_bonafide as f64),
            alpha_spoof: n / (2.0 * n_spoof as f64),
            mode: WeightMode::Auto,
        })
    }

    pub fn from_labels(labels: &[Label]) -> Result<Self> {
        let nb = labels.iter().filter(|l| **l == Label::Bonafide).count();
        Self::auto(nb, labels.len() - nb)
    }

    pub fn alpha(&self, class: usize) -> f64 {
        if class == 0 {
            self.alpha_bonafide
        } else {
            self.alpha_spoof
        }
    }
}

/// Which objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Bce,
    Bfl,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(ObjectiveKind::Bce),
            "bfl" => Ok(ObjectiveKind::Bfl),
            _ => Err(Error::param(format!("unknown objective '{s}' (expected bce or bfl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub gamma: f64,
}

impl Objective {
    pub fn bce() -> Self {
        Self {
            kind: ObjectiveKind::Bce,
            gamma: 0.0,
        }
    }

    pub fn bfl(gamma: f64) -> Self {
        Self {
            kind: ObjectiveKind::Bfl,
            gamma,
        }
    }

    /// Focusing exponent actually applied.
    pub fn effective_gamma(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Bce => 0.0,
            ObjectiveKind::Bfl => self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// (1 - e^x)^γ for x = log p <= 0, via expm1.
pub fn modulation(log_p: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    (-log_p.exp_m1()).max(0.0).powf(gamma)
}

/// f(x) = -(1 - e^x)^γ x and its derivative, x = log p_t.
pub fn focal_term(x: f64, gamma: f64) -> (f64, f64) {
    let m = modulation(x, gamma);
    let value = -m * x;
    if gamma == 0.0 {
        return (value, -1.0);
    }
    // df/dx = γ p x (1-p)^(γ-1) - (1-p)^γ, written with r = x / (1-p)
    // so that it stays finite as p -> 1 (r -> -1).
    let one_minus_p = -x.exp_m1();
    let r = if one_minus_p > 0.0 { x / one_minus_p } else { -1.0 };
    let p = x.exp();
    (value, gamma * p * r * m - m)
}

fn check_log_probs(log_probs: &[f64], target: usize) -> Result<()> {
    if target >= log_probs.len() {
        return Err(Error::Contract(format!(
            "target class {target} out of range for {} classes",
            log_probs.len()
        )));
    }
    let total: f64 = log_probs.iter().map(|v| v.exp()).sum();
    if !total.is_finite() || (total - 1.0).abs() > NORM_TOL || log_probs.iter().any(|v| *v > 1e-12) {
        return Err(Error::Contract(format!(
            "log-probabilities are not normalized (sum of probabilities {total})"
        )));
    }
    Ok(())
}

/// −α_t log p_t.
pub fn bce(log_probs: &[f64], target: usize, w: &ClassWeights) -> Result<f64> {
    bfl(log_probs, target, w, 0.0)
}

/// −α_t (1 − p_t)^γ log p_t.
pub fn bfl(log_probs: &[f64], target: usize, w: &ClassWeights, gamma: f64) -> Result<f64> {
    check_log_probs(log_probs, target)?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::param(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(w.alpha(target) * focal_term(log_probs[target].min(0.0), gamma).0)
}

/// BFL / BCE = (1 − p_t)^γ.
pub fn loss_ratio(p_t: f64, gamma: f64) -> Result<f64> {
    if !(p_t > 0.0 && p_t < 1.0) {
        return Err(Error::param(format!("p_t must lie in (0, 1), got {p_t}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::param(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok((1.0 - p_t).powf(gamma))
}

/// Row-wise log-softmax in `f64`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Loss and its gradient with respect to the logits of one sample.
pub fn bfl_with_logit_grad(
    logits: &[f64],
    target: usize,
    w: &ClassWeights,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let lp = log_softmax(logits);
    let loss = bfl(&lp, target, w, gamma)?;
    let (_, d) = focal_term(lp[target], gamma);
    let a = w.alpha(target);
    let grad = lp
        .iter()
        .enumerate()
        .map(|(j, l)| a * d * (if j == target { 1.0 } else { 0.0 } - l.exp()))
        .collect();
    Ok((loss, grad))
}

/// Mean objective over a batch of logits `[n, c]`, recorded on the tape.
pub fn batch_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    w: &ClassWeights,
    objective: &Objective,
) -> Result<Var> {
    objective.validate()?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.select(lp, targets)?;
    let gamma = objective.effective_gamma();
    let f = tape.map(picked, move |x| focal_term(x.min(0.0), gamma));
    let n = targets.len().max(1) as f64;
    let weights: Vec<f32> = targets.iter().map(|&t| (w.alpha(t) / n) as f32).collect();
    let weighted = tape.scale_const(f, &weights)?;
    Ok(tape.sum(weighted))
}
