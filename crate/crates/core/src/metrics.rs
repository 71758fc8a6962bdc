//! OOD evaluation metrics with in-distribution as the positive class.
//!
//! Thresholds are inclusive: a sample is accepted at threshold `t` when its
//! score is `≥ t`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// In-scores `≥ threshold`.
    pub tp: usize,
    /// Out-scores `≥ threshold`.
    pub fp: usize,
}

/// ROC points for thresholds sweeping from `+∞` down through every distinct
/// score. The first point is `(0, 0)` and the last `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    points: Vec<RocPoint>,
    n_in: usize,
    n_out: usize,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

fn validate(in_scores: &[f64], out_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(config_err!(
            "metrics need nonempty score sets (got {} in, {} out)",
            in_scores.len(),
            out_scores.len()
        ));
    }
    if in_scores.iter().chain(out_scores).any(|v| !v.is_finite()) {
        return Err(config_err!("scores must be finite"));
    }
    Ok(())
}

pub fn roc_curve(in_scores: &[f64], out_scores: &[f64]) -> Result<RocCurve> {
    validate(in_scores, out_scores)?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_in, n_out) = (in_scores.len(), out_scores.len());
    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        // consume every score tied at t
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: t, tpr: tp as f64 / n_in as f64, fpr: fp as f64 / n_out as f64, tp, fp });
    }
    Ok(RocCurve { points, n_in, n_out })
}

/// Trapezoidal AUROC; equals the Mann–Whitney pair statistic with ties
/// counted as one half.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    Ok(roc_curve(in_scores, out_scores)?.area())
}

fn fpr_at_tpr_on(curve: &RocCurve, target_tpr: f64) -> f64 {
    curve
        .points
        .iter()
        .find(|p| p.tpr >= target_tpr)
        .map(|p| p.fpr)
        .expect("last point has TPR 1")
}

/// FPR at the largest threshold whose TPR reaches `target_tpr`. No
/// interpolation between thresholds.
pub fn fpr_at_tpr(in_scores: &[f64], out_scores: &[f64], target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(config_err!("target TPR must be in (0, 1], got {target_tpr}"));
    }
    Ok(fpr_at_tpr_on(&roc_curve(in_scores, out_scores)?, target_tpr))
}

fn aupr_on(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| {
            let p = w[1];
            let precision = p.tp as f64 / (p.tp + p.fp) as f64;
            (w[1].tpr - w[0].tpr) * precision
        })
        .sum()
}

/// Step-wise area under precision(recall): `Σ (R_i − R_{i−1}) · P_i`.
pub fn aupr(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    Ok(aupr_on(&roc_curve(in_scores, out_scores)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub aupr: f64,
    pub n_in: usize,
    pub n_out: usize,
    #[serde(skip)]
    pub curve: Option<RocCurve>,
}

pub fn evaluate(in_scores: &[f64], out_scores: &[f64]) -> Result<EvalReport> {
    let curve = roc_curve(in_scores, out_scores)?;
    Ok(EvalReport {
        auroc: curve.area(),
        fpr95: fpr_at_tpr_on(&curve, 0.95),
        aupr: aupr_on(&curve),
        n_in: curve.n_in,
        n_out: curve.n_out,
        curve: Some(curve),
    })
}
