//! Threshold-free and thresholded classification metrics.
//!
//! Labels are booleans with `true` meaning MCI (the positive class).

use serde::Serialize;

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "both classes required, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC from mid-ranks. Ties between a positive and a negative
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, kept integral.
    let mut rank2_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share the mid-rank (start+1+end)/2.
        let mid2 = (start + 1 + end) as u64;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        rank2_sum += mid2 * positives;
        start = end;
    }
    let p = pos as u64;
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub confusion: Confusion,
}

/// Accuracy, sensitivity and specificity with "positive iff score ≥ threshold".
pub fn compute_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut c = Confusion { tp: 0, fn_: 0, fp: 0, tn: 0 };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(ThresholdMetrics {
        acc: (c.tp + c.tn) as f64 / scores.len() as f64,
        sen: c.tp as f64 / pos as f64,
        spe: c.tn as f64 / neg as f64,
        confusion: c,
    })
}

/// AUC plus the thresholded metrics for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub auc: f64,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["auc", "acc", "sen", "spe"];

    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let t = compute_metrics(scores, labels, threshold)?;
        Ok(Metrics {
            auc: auc(scores, labels)?,
            acc: t.acc,
            sen: t.sen,
            spe: t.spe,
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [self.auc, self.acc, self.sen, self.spe]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores at or above this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// ROC curve over every distinct score, bracketed by `+∞` (nothing called
/// positive) and `−∞` (everything called positive).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
            .sum()
    }

    /// Writes `threshold,fpr,tpr` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("writing ROC curve: {e}"));
        wr.write_record(["threshold", "fpr", "tpr"]).map_err(err)?;
        for p in &self.points {
            wr.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
                .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing ROC curve: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.3, 0.5], &[true, true, false, false]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::Metric(_))));
    }

    #[test]
    fn thresholded_examples() {
        let y = [true, true, false, false];
        let m = compute_metrics(&[0.9, 0.6, 0.4, 0.2], &y, 0.5).unwrap();
        assert_eq!((m.acc, m.sen, m.spe), (1.0, 1.0, 1.0));
        let m = compute_metrics(&[0.7, 0.4, 0.6, 0.2], &y, 0.5).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 1, fn_: 1, fp: 1, tn: 1 });
        assert_eq!((m.acc, m.sen, m.spe), (0.5, 0.5, 0.5));
        let m = compute_metrics(&[0.7, 0.4, 0.6, 0.2], &y, 0.0).unwrap();
        assert_eq!((m.sen, m.spe), (1.0, 0.0));
        assert!(compute_metrics(&[0.5], &[false], 0.5).is_err());
    }

    #[test]
    fn roc_sentinels_and_perfect_curve() {
        let r = roc_points(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        let first = r.points.first().unwrap();
        let last = r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(r.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(r.area(), 1.0);
    }
}
