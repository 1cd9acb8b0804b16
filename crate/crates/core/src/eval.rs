//! ROC analysis and multiply-accumulate cost accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ActivityVector, ScenarioConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(estimates: &ActivityVector, truth: &ActivityVector) -> Result<Confusion> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "confusion inputs",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    let mut c = Confusion::default();
    for (&e, &t) in estimates.active.iter().zip(&truth.active) {
        match (e, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Pooled per-device statistics and ground truths across trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredTrials {
    pub scores: Vec<f64>,
    pub truths: Vec<bool>,
    pub detector_tag: String,
}

impl ScoredTrials {
    pub fn new(detector_tag: impl Into<String>) -> Self {
        Self {
            detector_tag: detector_tag.into(),
            ..Default::default()
        }
    }

    pub fn push_trial(&mut self, scores: &[f64], truth: &ActivityVector) {
        debug_assert_eq!(scores.len(), truth.len());
        self.scores.extend_from_slice(scores);
        self.truths.extend_from_slice(&truth.active);
    }

    pub fn extend(&mut self, other: &ScoredTrials) {
        self.scores.extend_from_slice(&other.scores);
        self.truths.extend_from_slice(&other.truths);
    }

    /// Confusion counts when declaring `score ≥ threshold` active.
    pub fn confusion_at(&self, threshold: f64) -> Confusion {
        let est = ActivityVector::new(self.scores.iter().map(|&s| s >= threshold).collect());
        let truth = ActivityVector::new(self.truths.clone());
        confusion(&est, &truth).expect("equal lengths")
    }

    fn class_counts(&self) -> Result<(u64, u64)> {
        if self.scores.len() != self.truths.len() {
            return Err(Error::DimensionMismatch {
                what: "scored trials",
                expected: self.truths.len(),
                got: self.scores.len(),
            });
        }
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite { stage: "ROC scores" });
        }
        let pos = self.truths.iter().filter(|t| **t).count() as u64;
        let neg = self.truths.len() as u64 - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::UndefinedRates);
        }
        Ok((pos, neg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points are ordered by increasing threshold, starting at (1, 1) for the
/// smallest score and ending at (0, 0) for an infinite threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Trapezoidal area over every distinct score threshold.
    pub auc: f64,
}

fn trapezoid(points_desc: &[(f64, f64)]) -> f64 {
    points_desc
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Sweep thresholds over the distinct scores.
///
/// The area is always taken over the full staircase. When there are more
/// than `n_thresholds` distinct scores, the stored points are thinned to
/// `n_thresholds` evenly spaced ranks (extremes always kept).
pub fn roc_curve(trials: &ScoredTrials, n_thresholds: usize) -> Result<RocCurve> {
    let (pos, neg) = trials.class_counts()?;
    let mut order: Vec<usize> = (0..trials.scores.len()).collect();
    order.sort_by(|&a, &b| trials.scores[b].total_cmp(&trials.scores[a]));

    // cumulative (threshold, fp, tp) at each distinct score, highest first
    let mut steps: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = trials.scores[order[i]];
        while i < order.len() && trials.scores[order[i]] == s {
            if trials.truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, fp, tp));
    }
    let rate = |fp: u64, tp: u64| (fp as f64 / neg as f64, tp as f64 / pos as f64);

    let mut full = Vec::with_capacity(steps.len() + 1);
    full.push((0.0, 0.0));
    full.extend(steps.iter().map(|&(_, fp, tp)| rate(fp, tp)));
    let auc = trapezoid(&full).clamp(0.0, 1.0);

    let keep: Vec<usize> = if n_thresholds >= steps.len() || n_thresholds < 2 {
        (0..steps.len()).collect()
    } else {
        let last = steps.len() - 1;
        let mut idx: Vec<usize> = (0..n_thresholds)
            .map(|j| ((j as f64) * last as f64 / (n_thresholds - 1) as f64).round() as usize)
            .collect();
        idx.dedup();
        idx
    };
    let mut points: Vec<RocPoint> = keep
        .iter()
        .rev()
        .map(|&j| {
            let (threshold, fp, tp) = steps[j];
            let (fpr, tpr) = rate(fp, tp);
            RocPoint { threshold, fpr, tpr }
        })
        .collect();
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    Ok(RocCurve { points, auc })
}

/// Mann–Whitney estimate of P(score_pos > score_neg) with ties counted ½,
/// computed from mid-ranks.
pub fn auc_rank_oracle(trials: &ScoredTrials) -> Result<f64> {
    let (pos, neg) = trials.class_counts()?;
    let mut order: Vec<usize> = (0..trials.scores.len()).collect();
    order.sort_by(|&a, &b| trials.scores[a].total_cmp(&trials.scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && trials.scores[order[j]] == trials.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the mid-rank
        let mid = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&o| trials.truths[o]).count();
        rank_sum_pos += mid * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacConvention {
    /// One complex multiply-accumulate counts as one MAC.
    Complex1,
    /// One complex multiply-accumulate counts as four real MACs.
    Real4,
}

impl MacConvention {
    fn factor(self) -> u64 {
        match self {
            MacConvention::Complex1 => 1,
            MacConvention::Real4 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacCount {
    pub macs: u64,
    pub breakdown: Vec<(String, u64)>,
    pub knobs: Vec<(String, u64)>,
}

impl MacCount {
    fn from_parts(breakdown: Vec<(String, u64)>, knobs: Vec<(String, u64)>) -> Self {
        Self {
            macs: breakdown.iter().map(|(_, v)| v).sum(),
            breakdown,
            knobs,
        }
    }
}

/// Inference cost of one AP's detector: 2LN·V + V·K real MACs.
pub fn mac_count_slp_per_ap(config: &ScenarioConfig) -> MacCount {
    let input = config.feature_len() as u64;
    let v = config.hidden_units as u64;
    let k = config.num_devices as u64;
    MacCount::from_parts(
        vec![("hidden_layer".into(), input * v), ("output_layer".into(), v * k)],
        vec![("input_dim".into(), input), ("hidden_units".into(), v), ("outputs".into(), k)],
    )
}

/// Network-wide detector cost: every AP runs one forward pass.
pub fn mac_count_slp(config: &ScenarioConfig) -> MacCount {
    let m = config.num_aps as u64;
    let per_ap = mac_count_slp_per_ap(config);
    let mut knobs = per_ap.knobs.clone();
    knobs.push(("num_aps".into(), m));
    MacCount::from_parts(
        per_ap.breakdown.into_iter().map(|(n, v)| (n, v * m)).collect(),
        knobs,
    )
}

/// Cost of `iters` iterations of a centralized MMV solver, each with one
/// forward product A·X and one adjoint product Aᴴ·R (L·K·N_total complex
/// MACs apiece). Denoiser and Onsager work is linear in the problem size
/// and reported in the knobs, not in the MAC total.
pub fn mac_count_iterative(config: &ScenarioConfig, iters: u64, convention: MacConvention) -> MacCount {
    let l = config.pilot_len as u64;
    let k = config.num_devices as u64;
    let n_total = (config.num_aps * config.antennas_per_ap) as u64;
    let product = iters * l * k * n_total * convention.factor();
    MacCount::from_parts(
        vec![("forward_product".into(), product), ("adjoint_product".into(), product)],
        vec![
            ("iters".into(), iters),
            ("pilot_len".into(), l),
            ("num_devices".into(), k),
            ("n_total".into(), n_total),
            ("complex_mac_factor".into(), convention.factor()),
            ("denoiser_ops".into(), iters * k * n_total * convention.factor()),
        ],
    )
}

pub fn mac_count_amp(config: &ScenarioConfig, iters: u64, convention: MacConvention) -> MacCount {
    mac_count_iterative(config, iters, convention)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn av(v: &[u8]) -> ActivityVector {
        ActivityVector::new(v.iter().map(|&x| x == 1).collect())
    }

    fn trials(scores: &[f64], truths: &[u8]) -> ScoredTrials {
        ScoredTrials {
            scores: scores.to_vec(),
            truths: truths.iter().map(|&t| t == 1).collect(),
            detector_tag: "t".into(),
        }
    }

    #[test]
    fn confusion_cases() {
        let t = av(&[1, 0, 1, 0]);
        let c = confusion(&av(&[1, 1, 0, 0]), &t).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let same = confusion(&t, &t).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let comp = confusion(&av(&[0, 1, 0, 1]), &t).unwrap();
        assert_eq!((comp.tp, comp.tn), (0, 0));
        assert!(confusion(&av(&[1]), &t).is_err());
    }

    #[test]
    fn perfect_and_constant() {
        let perfect = trials(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0]);
        assert_eq!(roc_curve(&perfect, 100).unwrap().auc, 1.0);
        let constant = trials(&[0.3; 4], &[1, 0, 1, 0]);
        let roc = roc_curve(&constant, 100).unwrap();
        assert_eq!(roc.auc, 0.5);
        assert_eq!(roc.points.len(), 2);
        assert_eq!(auc_rank_oracle(&constant).unwrap(), 0.5);
        assert_eq!(auc_rank_oracle(&perfect).unwrap(), 1.0);
    }

    #[test]
    fn positive_outranks_negatives() {
        let t = trials(&[0.9, 0.8, 0.3], &[1, 0, 0]);
        assert_eq!(roc_curve(&t, 10).unwrap().auc, 1.0);
    }

    #[test]
    fn endpoints_and_order() {
        let t = trials(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let roc = roc_curve(&t, 100).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (1.0, 1.0));
        assert_eq!((last.fpr, last.tpr), (0.0, 0.0));
        assert!(last.threshold.is_infinite());
        assert!((roc.auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn undefined_rates() {
        assert_eq!(roc_curve(&trials(&[0.1, 0.2], &[1, 1]), 10), Err(Error::UndefinedRates));
        assert_eq!(auc_rank_oracle(&trials(&[0.1, 0.2], &[0, 0])), Err(Error::UndefinedRates));
    }

    #[test]
    fn thinning_keeps_extremes() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let truths: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let t = trials(&scores, &truths);
        let thin = roc_curve(&t, 10).unwrap();
        let full = roc_curve(&t, 1000).unwrap();
        assert_eq!(thin.points.len(), 11);
        assert_eq!(thin.auc, full.auc);
        assert_eq!(thin.points[0], full.points[0]);
    }

    #[test]
    fn slp_macs_at_reference_dims() {
        let cfg = ScenarioConfig::default();
        assert_eq!(mac_count_slp_per_ap(&cfg).macs, 133_120);
        assert_eq!(mac_count_slp(&cfg).macs, 2_662_400);
        let tiny = ScenarioConfig {
            num_aps: 1,
            antennas_per_ap: 1,
            num_devices: 1,
            pilot_len: 1,
            hidden_units: 1,
            cluster_size: 1,
            ..Default::default()
        };
        assert_eq!(mac_count_slp_per_ap(&tiny).macs, 3);
    }

    #[test]
    fn amp_macs_at_reference_dims() {
        let cfg = ScenarioConfig::default();
        let real = mac_count_amp(&cfg, 25, MacConvention::Real4);
        assert_eq!(real.macs, 32_000_000);
        assert_eq!(real.macs, real.breakdown.iter().map(|b| b.1).sum::<u64>());
        assert_eq!(mac_count_amp(&cfg, 25, MacConvention::Complex1).macs, 8_000_000);
        assert_eq!(mac_count_amp(&cfg, 0, MacConvention::Real4).macs, 0);
    }
}
