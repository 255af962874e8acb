//! Threshold-free detection metrics and expected calibration error.
//!
//! Every detector metric takes [`ScoredSample`]s where a higher score means
//! "more likely positive". A sample is predicted positive at threshold `t` when
//! `score >= t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TPR_TARGET: f64 = 0.95;
pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub positive: bool,
}

impl ScoredSample {
    pub fn new(score: f64, positive: bool) -> Self {
        ScoredSample { score, positive }
    }
}

/// Positives first, then negatives.
pub fn scored(positives: &[f64], negatives: &[f64]) -> Vec<ScoredSample> {
    positives
        .iter()
        .map(|&s| ScoredSample::new(s, true))
        .chain(negatives.iter().map(|&s| ScoredSample::new(s, false)))
        .collect()
}

/// Labels flipped and scores negated: the "out" view of a detector.
pub fn flipped(samples: &[ScoredSample]) -> Vec<ScoredSample> {
    samples.iter().map(|s| ScoredSample::new(-s.score, !s.positive)).collect()
}

/// Positive and negative counts; errors unless both classes are present and
/// every score is finite.
pub fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::numeric(format!("detection score {}", s.score)));
    }
    let pos = samples.iter().filter(|s| s.positive).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Distinct scores in descending order with the positive and negative count at each.
fn tie_groups(samples: &[ScoredSample]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for s in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s.score => {}
            _ => groups.push((s.score, 0, 0)),
        }
        let g = groups.last_mut().expect("just pushed");
        if s.positive {
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    groups
}

/// `P(score_pos > score_neg) + P(tie) / 2` over all positive/negative pairs.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    // Twice the win count, walking from the lowest score up.
    let mut wins2 = 0u128;
    let mut neg_below = 0u128;
    for &(_, p, n) in tie_groups(samples).iter().rev() {
        wins2 += p as u128 * (2 * neg_below + n as u128);
        neg_below += n as u128;
    }
    let pairs2 = 2 * pos as u128 * neg as u128;
    // Evaluating the smaller of the two complementary fractions keeps
    // auroc(x) + auroc(label-flipped x) == 1 exact.
    Ok(if 2 * wins2 <= pairs2 {
        wins2 as f64 / pairs2 as f64
    } else {
        1.0 - (pairs2 - wins2) as f64 / pairs2 as f64
    })
}

/// True negative rate at the highest threshold whose true positive rate is
/// at least `target`.
pub fn tnr_at_tpr(samples: &[ScoredSample], target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!("TPR target must lie in (0, 1], got {target}")));
    }
    let (pos, neg) = class_counts(samples)?;
    let mut positives: Vec<f64> = samples.iter().filter(|s| s.positive).map(|s| s.score).collect();
    positives.sort_by(|a, b| b.total_cmp(a));
    let needed = (1..=pos)
        .find(|&c| c as f64 / pos as f64 >= target)
        .expect("c = pos gives rate 1");
    let threshold = positives[needed - 1];
    let rejected = samples.iter().filter(|s| !s.positive && s.score < threshold).count();
    Ok(rejected as f64 / neg as f64)
}

/// Average precision with positives as the detected class.
pub fn aupr_in(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, _) = class_counts(samples)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, p, n) in tie_groups(samples) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Average precision with negatives as the detected class and scores reversed.
pub fn aupr_out(samples: &[ScoredSample]) -> Result<f64> {
    aupr_in(&flipped(samples))
}

/// Best balanced accuracy `(TPR + TNR) / 2` over all thresholds.
pub fn detection_accuracy(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    // Threshold above every score: nothing predicted positive.
    let mut best: f64 = 0.5;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in tie_groups(samples) {
        tp += p;
        fp += n;
        let tpr = tp as f64 / pos as f64;
        let tnr = (neg - fp) as f64 / neg as f64;
        best = best.max(0.5 * (tpr + tnr));
    }
    Ok(best)
}

/// Bin of `c` among `bins` equal-width bins `(b/bins, (b+1)/bins]`, with 0 in bin 0.
pub fn ece_bin(c: f64, bins: usize) -> usize {
    let edge = |b: usize| b as f64 / bins as f64;
    let mut b = ((c * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1);
    while b > 0 && c <= edge(b) {
        b -= 1;
    }
    while b + 1 < bins && c > edge(b + 1) {
        b += 1;
    }
    b
}

/// `sum_b (n_b / n) |acc_b - conf_b|` over equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    check_ece_inputs(confidences, correct, bins)?;
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c, bins);
        count[b] += 1;
        hits[b] += usize::from(ok);
        conf[b] += c;
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let m = count[b] as f64;
            total += (m / n) * (hits[b] as f64 / m - conf[b] / m).abs();
        }
    }
    Ok(total)
}

fn check_ece_inputs(confidences: &[f64], correct: &[bool], bins: usize) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::UndefinedMetric("ECE of an empty set".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape(
            "ece",
            format!("{} confidences, {} correctness flags", confidences.len(), correct.len()),
        ));
    }
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Config(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tnr_at_tpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub detection_accuracy: f64,
    pub ece: Option<f64>,
}

impl DetectionReport {
    pub fn compute(samples: &[ScoredSample]) -> Result<Self> {
        Ok(DetectionReport {
            tnr_at_tpr95: tnr_at_tpr(samples, DEFAULT_TPR_TARGET)?,
            auroc: auroc(samples)?,
            aupr_in: aupr_in(samples)?,
            aupr_out: aupr_out(samples)?,
            detection_accuracy: detection_accuracy(samples)?,
            ece: None,
        })
    }

    pub fn with_ece(mut self, confidences: &[f64], correct: &[bool]) -> Result<Self> {
        self.ece = Some(ece(confidences, correct, DEFAULT_ECE_BINS)?);
        Ok(self)
    }

    /// `(name, value)` pairs in a fixed order; ECE only when present.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        let mut f = vec![
            ("tnr_at_tpr95", self.tnr_at_tpr95),
            ("auroc", self.auroc),
            ("aupr_in", self.aupr_in),
            ("aupr_out", self.aupr_out),
            ("detection_accuracy", self.detection_accuracy),
        ];
        if let Some(e) = self.ece {
            f.push(("ece", e));
        }
        f
    }
}

/// Quadratic reference implementations by direct enumeration. Used to cross-check
/// the fast versions.
pub mod brute_force {
    use super::*;

    fn thresholds(samples: &[ScoredSample]) -> Vec<f64> {
        let mut t: Vec<f64> = samples.iter().map(|s| s.score).collect();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    fn rates(samples: &[ScoredSample], t: f64) -> (usize, usize) {
        let tp = samples.iter().filter(|s| s.positive && s.score >= t).count();
        let fp = samples.iter().filter(|s| !s.positive && s.score >= t).count();
        (tp, fp)
    }

    pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
        let (pos, neg) = class_counts(samples)?;
        let mut wins = 0.0;
        for p in samples.iter().filter(|s| s.positive) {
            for n in samples.iter().filter(|s| !s.positive) {
                if p.score > n.score {
                    wins += 1.0;
                } else if p.score == n.score {
                    wins += 0.5;
                }
            }
        }
        Ok(wins / (pos * neg) as f64)
    }

    pub fn tnr_at_tpr(samples: &[ScoredSample], target: f64) -> Result<f64> {
        let (pos, neg) = class_counts(samples)?;
        let t = thresholds(samples)
            .into_iter()
            .filter(|&t| rates(samples, t).0 as f64 / pos as f64 >= target)
            .fold(f64::NEG_INFINITY, f64::max);
        let tn = samples.iter().filter(|s| !s.positive && s.score < t).count();
        Ok(tn as f64 / neg as f64)
    }

    pub fn aupr_in(samples: &[ScoredSample]) -> Result<f64> {
        let (pos, _) = class_counts(samples)?;
        let mut ap = 0.0;
        let mut prev_tp = 0;
        for t in thresholds(samples) {
            let (tp, fp) = rates(samples, t);
            if tp > prev_tp {
                ap += ((tp - prev_tp) as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
            }
            prev_tp = tp;
        }
        Ok(ap)
    }

    pub fn aupr_out(samples: &[ScoredSample]) -> Result<f64> {
        aupr_in(&flipped(samples))
    }

    pub fn detection_accuracy(samples: &[ScoredSample]) -> Result<f64> {
        let (pos, neg) = class_counts(samples)?;
        let mut candidates = thresholds(samples);
        candidates.push(f64::INFINITY);
        Ok(candidates
            .into_iter()
            .map(|t| {
                let (tp, fp) = rates(samples, t);
                0.5 * (tp as f64 / pos as f64 + (neg - fp) as f64 / neg as f64)
            })
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
        check_ece_inputs(confidences, correct, bins)?;
        let n = confidences.len() as f64;
        let mut total = 0.0;
        for b in 0..bins {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let members: Vec<usize> = (0..confidences.len())
                .filter(|&i| {
                    let c = confidences[i];
                    (c > lo && c <= hi) || (b == 0 && c == 0.0)
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
            let conf = members.iter().map(|&i| confidences[i]).sum::<f64>() / m;
            total += (m / n) * (acc - conf).abs();
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&scored(&[0.8, 0.9], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auroc(&scored(&[0.5], &[0.5])).unwrap(), 0.5);
        assert_eq!(auroc(&scored(&[0.9, 0.4], &[0.6, 0.1])).unwrap(), 0.75);
        assert!(matches!(auroc(&scored(&[0.1], &[])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn tnr_examples() {
        assert_eq!(tnr_at_tpr(&scored(&[0.8, 0.9], &[0.1, 0.2]), 0.95).unwrap(), 1.0);
        assert_eq!(tnr_at_tpr(&scored(&[0.5; 4], &[0.5; 3]), 0.95).unwrap(), 0.0);
        // 20 distinct positives: the threshold keeps the top 19.
        let pos: Vec<f64> = (1..=20).map(f64::from).collect();
        let neg: Vec<f64> = (0..40).map(|i| 0.5 + i as f64 * 0.05).collect();
        let below_2 = neg.iter().filter(|&&s| s < 2.0).count() as f64;
        assert_eq!(tnr_at_tpr(&scored(&pos, &neg), 0.95).unwrap(), below_2 / 40.0);
    }

    #[test]
    fn aupr_examples() {
        let mut neg = vec![0.0; 9];
        neg.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 / 10.0);
        assert_eq!(aupr_in(&scored(&[5.0], &neg)).unwrap(), 1.0);
        assert_eq!(aupr_in(&scored(&[0.1], &[0.2])).unwrap(), 0.5);
    }

    #[test]
    fn detection_accuracy_examples() {
        assert_eq!(detection_accuracy(&scored(&[0.8, 0.9], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&scored(&[0.9, 0.4], &[0.6, 0.1])).unwrap(), 0.75);
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0, 1.0], &[true, true], 15).unwrap(), 0.0);
        assert!((ece(&[0.8, 0.8], &[true, false], 15).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(ece(&[], &[], 15), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(ece_bin(0.0, 15), 0);
        assert_eq!(ece_bin(1.0 / 15.0, 15), 0);
        assert_eq!(ece_bin(1.0, 15), 14);
        assert_eq!(ece_bin(2.0 / 15.0 + 1e-12, 15), 2);
        for b in 0usize..15 {
            assert_eq!(ece_bin(b as f64 / 15.0, 15), b.saturating_sub(1));
        }
    }
}
