//! Precision-recall curves, trapezoidal PR-AUC and ROC-AUC.
//!
//! The curve sweeps a threshold down through every distinct score; tied
//! scores cross the threshold together. The recall-0 anchor takes the
//! precision of the strictest threshold rather than a fixed 1.0.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and binary labels for one cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCohort {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredCohort {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::contract(format!("label {bad} is not in {{0, 1}}")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("NaN score in cohort".into()));
        }
        Ok(ScoredCohort { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }

    /// `(score, positives, negatives)` per distinct score, highest first.
    fn tie_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            let pos = (self.labels[i] == 1) as usize;
            match groups.last_mut() {
                Some(g) if g.0.partial_cmp(&s) == Some(Ordering::Equal) => {
                    g.1 += pos;
                    g.2 += 1 - pos;
                }
                _ => groups.push((s, pos, 1 - pos)),
            }
        }
        groups
    }
}

/// Precision-recall points in order of non-decreasing recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)`
    pub points: Vec<(f64, f64)>,
}

pub fn pr_curve(cohort: &ScoredCohort) -> Result<PrCurve> {
    let total_pos = cohort.positives();
    if total_pos == 0 {
        return Err(Error::contract("precision-recall curve needs at least one positive label"));
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, pos, neg) in cohort.tie_groups() {
        tp += pos;
        fp += neg;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        points.push((recall, precision));
    }
    let anchor = (0.0, points[0].1);
    points.insert(0, anchor);
    Ok(PrCurve { points })
}

/// Trapezoidal area under the curve.
pub fn pr_auc(curve: &PrCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (normalized Mann-Whitney U).
pub fn roc_auc(cohort: &ScoredCohort) -> Result<f64> {
    let pos = cohort.positives();
    let neg = cohort.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("ROC-AUC needs at least one positive and one negative label"));
    }
    // walk groups from the lowest score up, counting negatives already passed
    let mut groups = cohort.tie_groups();
    groups.reverse();
    let mut below = 0usize;
    let mut wins = 0.0;
    for (_, p, n) in groups {
        wins += p as f64 * (below as f64 + 0.5 * n as f64);
        below += n;
    }
    Ok(wins / (pos as f64 * neg as f64))
}
