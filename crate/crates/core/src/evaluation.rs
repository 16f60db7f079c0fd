//! Verification (1:1) and identification (1:N) metrics over embeddings, and
//! the transform curves used to visualize hard-pair emphasis.

use crate::datasets::PairList;
use crate::error::{Error, Result};
use crate::margin_losses::{modulation_coefficient, negative_transform, LossVariant};
use crate::numerics::{clamp_cosine, dot, ClassifierMatrix, Matrix};

/// One operating point of the verification sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// TAR at a FAR ceiling: the best acceptance rate whose false-accept rate
/// stays at or below `far_target`, with the largest threshold attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub best_accuracy: f64,
    /// Largest threshold achieving `best_accuracy`.
    pub best_threshold: f64,
    pub tar_at_far: Vec<TarAtFar>,
    /// Swept from the highest threshold down; `far` and `tar` are
    /// non-decreasing along the list.
    pub roc: Vec<RocPoint>,
    pub num_positive: usize,
    pub num_negative: usize,
}

/// Sweep all decision thresholds over the pair scores.
///
/// `embeddings` has one row per dataset row (pair indices address it
/// directly); a pair is accepted when its cosine is `>= threshold`.
/// Candidate thresholds are `+inf` (reject everything) plus every distinct
/// observed score, so the sweep covers every achievable confusion matrix.
pub fn verification_report(
    embeddings: &Matrix,
    pairs: &PairList,
    far_targets: &[f64],
) -> Result<VerificationReport> {
    for &f in far_targets {
        if !f.is_finite() || !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidInput(format!("far target {f} outside [0, 1]")));
        }
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs.pairs() {
        if p.a >= embeddings.rows() || p.b >= embeddings.rows() {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) out of range for {} embeddings",
                p.a,
                p.b,
                embeddings.rows()
            )));
        }
        let score = clamp_cosine(dot(embeddings.row(p.a), embeddings.row(p.b)));
        if !score.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite score for pair ({}, {})",
                p.a, p.b
            )));
        }
        if p.same {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateInput(
            "verification needs both same-class and cross-class pairs".into(),
        ));
    }

    pos.sort_by(|a, b| b.partial_cmp(a).unwrap());
    neg.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut thresholds: Vec<f64> = Vec::with_capacity(pos.len() + neg.len() + 1);
    thresholds.push(f64::INFINITY);
    thresholds.extend(pos.iter().chain(neg.iter()));
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let total = (pos.len() + neg.len()) as f64;
    let mut roc = Vec::with_capacity(thresholds.len());
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_threshold = f64::INFINITY;
    let mut pos_ge = 0usize;
    let mut neg_ge = 0usize;
    for &th in &thresholds {
        while pos_ge < pos.len() && pos[pos_ge] >= th {
            pos_ge += 1;
        }
        while neg_ge < neg.len() && neg[neg_ge] >= th {
            neg_ge += 1;
        }
        let tar = pos_ge as f64 / pos.len() as f64;
        let far = neg_ge as f64 / neg.len() as f64;
        roc.push(RocPoint { threshold: th, far, tar });
        let accuracy = (pos_ge + (neg.len() - neg_ge)) as f64 / total;
        // Strict > keeps the largest threshold on ties (we sweep downward).
        if accuracy > best_accuracy {
            best_accuracy = accuracy;
            best_threshold = th;
        }
    }

    let tar_at_far = far_targets
        .iter()
        .map(|&target| {
            let feasible = roc.iter().filter(|p| p.far <= target);
            let best_tar = feasible.clone().map(|p| p.tar).fold(0.0f64, f64::max);
            let threshold = feasible
                .filter(|p| p.tar == best_tar)
                .map(|p| p.threshold)
                .fold(f64::NEG_INFINITY, f64::max);
            TarAtFar {
                far_target: target,
                tar: best_tar,
                threshold,
            }
        })
        .collect();

    Ok(VerificationReport {
        best_accuracy,
        best_threshold,
        tar_at_far,
        roc,
        num_positive: pos.len(),
        num_negative: neg.len(),
    })
}

/// Fraction of probes whose nearest gallery row (by cosine) has the right
/// label. Ties keep the lowest gallery index.
pub fn rank1_identification(
    probe_embeddings: &Matrix,
    probe_labels: &[usize],
    gallery_embeddings: &Matrix,
    gallery_labels: &[usize],
) -> Result<f64> {
    if probe_embeddings.rows() == 0 || gallery_embeddings.rows() == 0 {
        return Err(Error::DegenerateInput("empty probe or gallery".into()));
    }
    if probe_labels.len() != probe_embeddings.rows() || gallery_labels.len() != gallery_embeddings.rows() {
        return Err(Error::ShapeMismatch("label count does not match embeddings".into()));
    }
    if probe_embeddings.cols() != gallery_embeddings.cols() {
        return Err(Error::ShapeMismatch(format!(
            "probe dimension {} vs gallery {}",
            probe_embeddings.cols(),
            gallery_embeddings.cols()
        )));
    }
    let mut correct = 0usize;
    for i in 0..probe_embeddings.rows() {
        let probe = probe_embeddings.row(i);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for g in 0..gallery_embeddings.rows() {
            let score = dot(probe, gallery_embeddings.row(g));
            if !score.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-finite score for probe {i}, gallery {g}"
                )));
            }
            if score > best_score {
                best_score = score;
                best = g;
            }
        }
        if gallery_labels[best] == probe_labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / probe_embeddings.rows() as f64)
}

/// Rank-1 accuracy against the classifier columns as the gallery.
pub fn classification_accuracy(
    embeddings: &Matrix,
    labels: &[usize],
    classifier: &ClassifierMatrix,
) -> Result<f64> {
    let gallery = classifier.matrix().transpose();
    let gallery_labels: Vec<usize> = (0..classifier.num_classes()).collect();
    rank1_identification(embeddings, labels, &gallery, &gallery_labels)
}

/// One point of the hard-pair transform curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub cos_j: f64,
    /// Modulation coefficient `I` on the hard branch.
    pub i_coef: f64,
    /// Transform value `N` on the hard branch.
    pub n_value: f64,
}

/// Evaluate the hard-branch negative transform over a cosine grid for each
/// `t`. `num_points` grid points span `[-1, 1]` inclusive (clamped).
pub fn modulation_curves(
    variant: &LossVariant,
    t_values: &[f64],
    num_points: usize,
) -> Result<Vec<CurvePoint>> {
    variant.validate()?;
    if num_points < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 grid points, got {num_points}"
        )));
    }
    if t_values.is_empty() {
        return Err(Error::InvalidInput("need at least one t value".into()));
    }
    if let Some(&t) = t_values.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!("t value {t} is not finite")));
    }
    let mut points = Vec::with_capacity(t_values.len() * num_points);
    for &t in t_values {
        let t_eff = variant.resolve_t(t);
        for k in 0..num_points {
            let cos_j = clamp_cosine(-1.0 + 2.0 * k as f64 / (num_points - 1) as f64);
            points.push(CurvePoint {
                t,
                cos_j,
                i_coef: modulation_coefficient(cos_j, t_eff, variant, true),
                n_value: negative_transform(cos_j, t_eff, variant, true),
            });
        }
    }
    Ok(points)
}
