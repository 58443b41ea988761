//! Equal error rate, normalized minimum t-DCF and per-attack breakdowns.
//!
//! Higher scores mean "more bonafide". At threshold τ a bonafide trial is
//! missed when its score is below τ and a spoof is falsely accepted when its
//! score is at or above τ. Thresholds are the midpoints between adjacent
//! distinct scores plus ±∞.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{AttackSpec, Label};
use crate::scoring::ScoreRecord;

/// Split labeled records into (bonafide, spoof) scores.
pub fn split_by_label(records: &[ScoreRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for r in records {
        match r.label {
            Some(Label::Bonafide) => bona.push(r.score),
            Some(Label::Spoof) => spoof.push(r.score),
            None => return Err(Error::Data(format!("utterance '{}' has no label", r.utt_id))),
        }
    }
    Ok((bona, spoof))
}

/// CM operating points over all thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of spoofs accepted.
    pub p_fa: Vec<f64>,
    /// Fraction of bonafide rejected.
    pub p_miss: Vec<f64>,
}

impl ErrorCurve {
    pub fn new(bona: &[f64], spoof: &[f64]) -> Result<Self> {
        if bona.is_empty() || spoof.is_empty() {
            return Err(Error::Metric(format!(
                "need both classes, got {} bonafide and {} spoof",
                bona.len(),
                spoof.len()
            )));
        }
        if bona.iter().chain(spoof).any(|s| !s.is_finite()) {
            return Err(Error::Metric("scores must be finite".into()));
        }
        let mut all: Vec<(f64, bool)> = bona.iter().map(|s| (*s, true)).chain(spoof.iter().map(|s| (*s, false))).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
        let mut thresholds = vec![f64::NEG_INFINITY];
        let mut p_fa = vec![1.0];
        let mut p_miss = vec![0.0];
        let (mut bona_below, mut spoof_below) = (0usize, 0usize);
        let mut i = 0;
        while i < all.len() {
            let v = all[i].0;
            while i < all.len() && all[i].0 == v {
                if all[i].1 {
                    bona_below += 1;
                } else {
                    spoof_below += 1;
                }
                i += 1;
            }
            let t = if i < all.len() { v + (all[i].0 - v) / 2.0 } else { f64::INFINITY };
            thresholds.push(t);
            p_miss.push(bona_below as f64 / nb);
            p_fa.push((spoof.len() - spoof_below) as f64 / ns);
        }
        Ok(Self {
            thresholds,
            p_fa,
            p_miss,
        })
    }

    pub fn from_records(records: &[ScoreRecord]) -> Result<Self> {
        let (b, s) = split_by_label(records)?;
        Self::new(&b, &s)
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Equal error rate on the convex hull of the operating points,
    /// interpolating linearly between the two hull vertices that straddle
    /// P_miss = P_fa. Returns the rate and the threshold of the nearer vertex.
    pub fn eer(&self) -> (f64, f64) {
        // Points in order of increasing P_miss / decreasing P_fa.
        let pts: Vec<(f64, f64)> = self.p_fa.iter().copied().zip(self.p_miss.iter().copied()).collect();
        // Lower hull in the (P_fa, P_miss) plane, traversed with P_fa decreasing.
        let mut hull: Vec<usize> = Vec::new();
        for i in 0..pts.len() {
            while hull.len() >= 2 {
                let (a, b) = (pts[hull[hull.len() - 2]], pts[hull[hull.len() - 1]]);
                let c = pts[i];
                // Keep b only if it lies strictly below the chord a-c.
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        let d = |i: usize| pts[i].1 - pts[i].0;
        for w in hull.windows(2) {
            let (i, j) = (w[0], w[1]);
            let (di, dj) = (d(i), d(j));
            if di <= 0.0 && dj >= 0.0 {
                if di == dj {
                    return (pts[i].0, self.thresholds[i]);
                }
                let t = di / (di - dj);
                let eer = pts[i].0 + t * (pts[j].0 - pts[i].0);
                let thr = if t <= 0.5 { self.thresholds[i] } else { self.thresholds[j] };
                return (eer, thr);
            }
        }
        unreachable!("curve runs from (1, 0) to (0, 1)")
    }

    /// Normalized minimum t-DCF and its threshold.
    pub fn min_tdcf(&self, p: &TdcfParams) -> Result<(f64, f64)> {
        let (c1, c2) = p.constants()?;
        let norm = c1.min(c2);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.len() {
            let v = (c1 * self.p_miss[i] + c2 * self.p_fa[i]) / norm;
            if v < best.0 {
                best = (v, self.thresholds[i]);
            }
        }
        Ok(best)
    }
}

pub fn eer(records: &[ScoreRecord]) -> Result<(f64, f64)> {
    Ok(ErrorCurve::from_records(records)?.eer())
}

pub fn eer_of(bona: &[f64], spoof: &[f64]) -> Result<f64> {
    Ok(ErrorCurve::new(bona, spoof)?.eer().0)
}

pub fn min_tdcf_norm(records: &[ScoreRecord], p: &TdcfParams) -> Result<(f64, f64)> {
    ErrorCurve::from_records(records)?.min_tdcf(p)
}

/// Cost model of the tandem detection cost function, with a fixed ASV
/// operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdcfParams {
    pub p_tar: f64,
    pub p_non: f64,
    pub p_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfParams {
    fn default() -> Self {
        let p_spoof = 0.05;
        Self {
            p_tar: (1.0 - p_spoof) * 0.99,
            p_non: (1.0 - p_spoof) * 0.01,
            p_spoof,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.05,
            p_fa_asv: 0.05,
            p_miss_spoof_asv: 0.5,
        }
    }
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.p_tar, self.p_non, self.p_spoof];
        if priors.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::param(format!("t-DCF priors must be positive, got {priors:?}")));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("t-DCF priors must sum to 1, got {sum}")));
        }
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm];
        if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::param(format!("t-DCF costs must be positive, got {costs:?}")));
        }
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::param(format!("ASV error rates must lie in [0, 1], got {rates:?}")));
        }
        Ok(())
    }

    /// (C1, C2) weighting P_miss_cm and P_fa_cm.
    pub fn constants(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let c1 = self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.p_non * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv);
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(Error::param(format!(
                "degenerate ASV operating point: C1 = {c1}, C2 = {c2}"
            )));
        }
        Ok((c1, c2))
    }
}

/// EER and min t-DCF of one score set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

impl MetricSummary {
    pub fn compute(records: &[ScoreRecord], p: &TdcfParams) -> Result<Self> {
        let (b, s) = split_by_label(records)?;
        let curve = ErrorCurve::new(&b, &s)?;
        let (eer, eer_threshold) = curve.eer();
        let (min_tdcf, _) = curve.min_tdcf(p)?;
        Ok(Self {
            eer,
            eer_threshold,
            min_tdcf,
            n_bonafide: b.len(),
            n_spoof: s.len(),
        })
    }

    /// Single-line `key=value` record.
    pub fn line(&self) -> String {
        format!(
            "eer={:.6} min_tdcf={:.6} n_bonafide={} n_spoof={}",
            self.eer, self.min_tdcf, self.n_bonafide, self.n_spoof
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub attack: AttackSpec,
    pub eer: f64,
    pub min_tdcf: f64,
    pub n_spoof: usize,
}

/// Metrics of all bonafide trials against the spoofs of each attack code
/// present, in code order.
pub fn breakdown(records: &[ScoreRecord], p: &TdcfParams) -> Result<Vec<BreakdownRow>> {
    let mut bona = Vec::new();
    let mut by_code: BTreeMap<AttackSpec, Vec<f64>> = BTreeMap::new();
    for r in records {
        match (r.label, r.attack) {
            (Some(Label::Bonafide), _) => bona.push(r.score),
            (Some(Label::Spoof), Some(a)) => by_code.entry(a).or_default().push(r.score),
            (Some(Label::Spoof), None) => {
                return Err(Error::Data(format!("spoof utterance '{}' has no attack code", r.utt_id)))
            }
            (None, _) => return Err(Error::Data(format!("utterance '{}' has no label", r.utt_id))),
        }
    }
    by_code
        .into_iter()
        .map(|(attack, spoof)| {
            let curve = ErrorCurve::new(&bona, &spoof)?;
            Ok(BreakdownRow {
                attack,
                eer: curve.eer().0,
                min_tdcf: curve.min_tdcf(p)?.0,
                n_spoof: spoof.len(),
            })
        })
        .collect()
}

pub fn breakdown_tsv(rows: &[BreakdownRow]) -> String {
    let mut s = String::from("attack_code\teer\tmin_tdcf\tn_spoof\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{}", r.attack, r.eer, r.min_tdcf, r.n_spoof);
    }
    s
}

/// Read a t-DCF cost model from a TOML file with an optional `[tdcf]`
/// table; missing keys keep their defaults.
pub fn read_tdcf_config(path: impl AsRef<Path>) -> Result<TdcfParams> {
    #[derive(Deserialize, Default)]
    struct File {
        #[serde(default)]
        tdcf: TdcfParams,
    }
    let text = fs::read_to_string(path)?;
    let f: File = toml::from_str(&text).map_err(|e| Error::Format(format!("t-DCF config: {e}")))?;
    f.tdcf.validate()?;
    Ok(f.tdcf)
}
