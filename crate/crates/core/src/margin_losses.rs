//! The margin-based softmax loss family on the hypersphere.
//!
//! All five variants share one form: the ground-truth logit is
//! `s * T(cos theta_y)` for a positive transform `T`, and each other-class
//! logit is `s * N(t, cos theta_j)` for a negative transform `N` that may
//! depend on whether the pair is hard. A pair is hard when the margin-adjusted
//! ground-truth score no longer beats the other class:
//! `T(cos theta_y) - cos theta_j < 0`. Ties count as easy.
//!
//! The mining variants differ only in `N` on hard pairs, written as
//! `N = I * cos theta_j + c`:
//!
//! * `MvArcSoftmax`:    `I = t`, `c = t - 1`, with a fixed `t >= 1`
//! * `CurricularFace`:  `I = t + cos theta_j`, `c = 0`, with `t` adapting
//!
//! Because ` d/dcos [(t + cos) * cos] = 2 cos + t`, the curricular hard-pair
//! gradient coefficient grows with `cos theta_j`: early in training (small
//! `t`) hard pairs are down-weighted below easy ones, later (larger `t`) the
//! hardest pairs dominate.

use crate::error::{Error, Result};
use crate::numerics::{stable_log_softmax, Matrix, COS_BOUND};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    NormalizedSoftmax,
    CosFace,
    ArcFace,
    MvArcSoftmax,
    CurricularFace,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::NormalizedSoftmax => "normalized_softmax",
            VariantKind::CosFace => "cos_face",
            VariantKind::ArcFace => "arc_face",
            VariantKind::MvArcSoftmax => "mv_arc_softmax",
            VariantKind::CurricularFace => "curricular_face",
        }
    }
}

/// A fully specified loss: which transform family, margin, scale, and (for
/// `MvArcSoftmax`, or a frozen-curriculum ablation) a fixed `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossVariant {
    pub kind: VariantKind,
    pub margin_m: f64,
    pub scale_s: f64,
    /// When set, overrides whatever `t` the caller passes. Required for
    /// `MvArcSoftmax`; optional for `CurricularFace` (freezes the curriculum).
    pub fixed_t: Option<f64>,
}

impl LossVariant {
    pub fn normalized_softmax(scale_s: f64) -> LossVariant {
        LossVariant {
            kind: VariantKind::NormalizedSoftmax,
            margin_m: 0.0,
            scale_s,
            fixed_t: None,
        }
    }

    pub fn cos_face(margin_m: f64, scale_s: f64) -> LossVariant {
        LossVariant {
            kind: VariantKind::CosFace,
            margin_m,
            scale_s,
            fixed_t: None,
        }
    }

    pub fn arc_face(margin_m: f64, scale_s: f64) -> LossVariant {
        LossVariant {
            kind: VariantKind::ArcFace,
            margin_m,
            scale_s,
            fixed_t: None,
        }
    }

    pub fn mv_arc_softmax(margin_m: f64, scale_s: f64, t: f64) -> LossVariant {
        LossVariant {
            kind: VariantKind::MvArcSoftmax,
            margin_m,
            scale_s,
            fixed_t: Some(t),
        }
    }

    pub fn curricular_face(margin_m: f64, scale_s: f64) -> LossVariant {
        LossVariant {
            kind: VariantKind::CurricularFace,
            margin_m,
            scale_s,
            fixed_t: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale_s.is_finite() || self.scale_s <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "scale_s must be finite and positive, got {}",
                self.scale_s
            )));
        }
        if !self.margin_m.is_finite() || self.margin_m < 0.0 {
            return Err(Error::InvalidInput(format!(
                "margin_m must be finite and non-negative, got {}",
                self.margin_m
            )));
        }
        if self.uses_angular_margin() && self.margin_m >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "angular margin must be below pi/2, got {}",
                self.margin_m
            )));
        }
        match self.kind {
            VariantKind::MvArcSoftmax => match self.fixed_t {
                Some(t) if t.is_finite() && t >= 1.0 => {}
                Some(t) => {
                    return Err(Error::InvalidInput(format!(
                        "mv_arc_softmax needs fixed_t >= 1, got {t}"
                    )))
                }
                None => {
                    return Err(Error::InvalidInput(
                        "mv_arc_softmax needs a fixed_t".into(),
                    ))
                }
            },
            _ => {
                if let Some(t) = self.fixed_t {
                    if !t.is_finite() {
                        return Err(Error::InvalidInput(format!("fixed_t must be finite, got {t}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the margin is added to the angle (`cos(theta + m)`) rather
    /// than subtracted from the cosine.
    pub fn uses_angular_margin(&self) -> bool {
        matches!(
            self.kind,
            VariantKind::ArcFace | VariantKind::MvArcSoftmax | VariantKind::CurricularFace
        )
    }

    /// Whether hard pairs get a modified negative transform.
    pub fn mines_hard_samples(&self) -> bool {
        matches!(self.kind, VariantKind::MvArcSoftmax | VariantKind::CurricularFace)
    }

    /// The `t` actually used by the transforms: `fixed_t` wins over the
    /// caller-supplied (curriculum) value.
    pub fn resolve_t(&self, t: f64) -> f64 {
        self.fixed_t.unwrap_or(t)
    }
}

/// The positive transform `T(cos theta_y)`.
///
/// Angular-margin variants compute `cos(theta + m)` through the angle-addition
/// identity `cos theta * cos m - sin theta * sin m`, never by `acos`/`cos`
/// round-trips; `cos_gt` is clamped, so `sin theta > 0` is guaranteed.
pub fn positive_transform(cos_gt: f64, variant: &LossVariant) -> f64 {
    match variant.kind {
        VariantKind::NormalizedSoftmax => cos_gt,
        VariantKind::CosFace => cos_gt - variant.margin_m,
        VariantKind::ArcFace | VariantKind::MvArcSoftmax | VariantKind::CurricularFace => {
            let sin_gt = (1.0 - cos_gt * cos_gt).sqrt();
            cos_gt * variant.margin_m.cos() - sin_gt * variant.margin_m.sin()
        }
    }
}

/// Derivative of the positive transform with respect to `cos theta_y`.
///
/// For angular margins this is `sin(theta + m) / sin theta`, expanded as
/// `cos m + cos theta * sin m / sin theta` to stay on the identity route.
pub(crate) fn positive_transform_derivative(cos_gt: f64, variant: &LossVariant) -> f64 {
    match variant.kind {
        VariantKind::NormalizedSoftmax | VariantKind::CosFace => 1.0,
        VariantKind::ArcFace | VariantKind::MvArcSoftmax | VariantKind::CurricularFace => {
            let sin_gt = (1.0 - cos_gt * cos_gt).sqrt();
            variant.margin_m.cos() + cos_gt * variant.margin_m.sin() / sin_gt
        }
    }
}

/// Hard-pair test: `T(cos theta_y) - cos theta_j < 0`, ties easy.
///
/// Defined for every variant (for `NormalizedSoftmax` it reduces to plain
/// misclassification by class `j`), so traces can report hardness uniformly;
/// only the mining variants let it change the transforms.
pub fn classify_hard(cos_gt: f64, cos_j: f64, variant: &LossVariant) -> bool {
    positive_transform(cos_gt, variant) - cos_j < 0.0
}

/// The negative transform `N(t, cos theta_j)` for one non-ground-truth pair.
pub fn negative_transform(cos_j: f64, t: f64, variant: &LossVariant, is_hard: bool) -> f64 {
    if is_hard && variant.mines_hard_samples() {
        match variant.kind {
            VariantKind::MvArcSoftmax => t * cos_j + t - 1.0,
            VariantKind::CurricularFace => (t + cos_j) * cos_j,
            _ => unreachable!(),
        }
    } else {
        cos_j
    }
}

/// The multiplier `I` in `N = I * cos theta_j + c`.
pub fn modulation_coefficient(cos_j: f64, t: f64, variant: &LossVariant, is_hard: bool) -> f64 {
    if is_hard && variant.mines_hard_samples() {
        match variant.kind {
            VariantKind::MvArcSoftmax => t,
            VariantKind::CurricularFace => t + cos_j,
            _ => unreachable!(),
        }
    } else {
        1.0
    }
}

/// Gradient coefficient of a hard curricular pair: `d N / d cos = 2 cos + t`.
pub fn gradient_modulation(cos_j: f64, t: f64) -> f64 {
    2.0 * cos_j + t
}

/// Derivative of `N` with respect to `cos theta_j` under the active branch.
fn negative_transform_derivative(cos_j: f64, t: f64, variant: &LossVariant, is_hard: bool) -> f64 {
    if is_hard && variant.mines_hard_samples() {
        match variant.kind {
            VariantKind::MvArcSoftmax => t,
            VariantKind::CurricularFace => gradient_modulation(cos_j, t),
            _ => unreachable!(),
        }
    } else {
        1.0
    }
}

/// A batch of clamped cosine similarities with one ground-truth label per row.
#[derive(Debug, Clone)]
pub struct CosineBatch {
    cosines: Matrix,
    labels: Vec<usize>,
}

impl CosineBatch {
    pub fn new(cosines: Matrix, labels: Vec<usize>) -> Result<CosineBatch> {
        if cosines.rows() == 0 {
            return Err(Error::DegenerateInput("empty batch".into()));
        }
        if labels.len() != cosines.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                cosines.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cosines.cols()) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {} classes",
                cosines.cols()
            )));
        }
        for (idx, &c) in cosines.as_slice().iter().enumerate() {
            if !c.is_finite() || c.abs() > COS_BOUND {
                return Err(Error::InvalidInput(format!(
                    "cosine {c} at flat index {idx} outside the clamped range"
                )));
            }
        }
        Ok(CosineBatch { cosines, labels })
    }

    pub fn cosines(&self) -> &Matrix {
        &self.cosines
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch_size(&self) -> usize {
        self.cosines.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.cosines.cols()
    }

    /// Ground-truth cosine of sample `i`.
    pub fn cos_gt(&self, i: usize) -> f64 {
        self.cosines.get(i, self.labels[i])
    }
}

/// Everything the forward pass produces: the mean loss, the gradient with
/// respect to every cosine, the hard mask, and the batch statistics the
/// curriculum consumes.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `d loss / d cosines[i][j]`, same shape as the batch, mean-reduced
    /// (each row carries the `1/B` factor).
    pub grad_cosines: Matrix,
    hard_mask: Vec<bool>,
    num_classes: usize,
    /// Mean ground-truth cosine of the batch.
    pub r_stat: f64,
    /// Post-softmax probability of the ground-truth class, per sample.
    pub prob_gt: Vec<f64>,
}

impl LossOutput {
    pub fn is_hard(&self, i: usize, j: usize) -> bool {
        self.hard_mask[i * self.num_classes + j]
    }

    /// Row-major mask, `batch_size * num_classes` entries, always false on
    /// ground-truth columns.
    pub fn hard_mask(&self) -> &[bool] {
        &self.hard_mask
    }

    /// Fraction of samples with at least one hard pair.
    pub fn hard_sample_fraction(&self) -> f64 {
        let b = self.hard_mask.len() / self.num_classes;
        let hard = (0..b)
            .filter(|&i| self.hard_mask[i * self.num_classes..(i + 1) * self.num_classes].iter().any(|&h| h))
            .count();
        hard as f64 / b as f64
    }
}

/// Forward pass of the loss over a batch.
///
/// `t` is the current curriculum value; variants with a `fixed_t` ignore it.
/// Logits are `s * T` on the ground-truth column and `s * N` elsewhere, the
/// per-sample losses are `-log softmax` picked at the label, and the batch
/// loss is their mean. `grad_cosines` applies the chain rule through the
/// active branch of each transform:
///
/// * ground-truth column: `(p_y - 1)/B * s * T'(cos theta_y)`
/// * easy pair:           `p_j/B * s`
/// * hard pair (mining):  `p_j/B * s * t` or `p_j/B * s * (2 cos + t)`
pub fn forward(batch: &CosineBatch, variant: &LossVariant, t: f64) -> Result<LossOutput> {
    variant.validate()?;
    let t_eff = variant.resolve_t(t);
    if !t_eff.is_finite() {
        return Err(Error::InvalidInput(format!("curriculum t must be finite, got {t_eff}")));
    }
    let b = batch.batch_size();
    let n = batch.num_classes();
    let s = variant.scale_s;

    let mut grad = Matrix::zeros(b, n);
    let mut hard_mask = vec![false; b * n];
    let mut prob_gt = Vec::with_capacity(b);
    let mut loss_sum = 0.0;
    let mut r_sum = 0.0;
    let mut logits = vec![0.0; n];

    for i in 0..b {
        let y = batch.labels()[i];
        let cos_gt = batch.cos_gt(i);
        let t_pos = positive_transform(cos_gt, variant);

        for j in 0..n {
            if j == y {
                logits[j] = s * t_pos;
            } else {
                let cos_j = batch.cosines().get(i, j);
                let hard = classify_hard(cos_gt, cos_j, variant);
                hard_mask[i * n + j] = hard;
                logits[j] = s * negative_transform(cos_j, t_eff, variant, hard);
            }
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite logit for sample {i}")));
        }

        let log_probs = stable_log_softmax(&logits)?;
        let loss_i = -log_probs[y];
        if !loss_i.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite loss for sample {i}")));
        }
        loss_sum += loss_i;
        prob_gt.push(log_probs[y].exp());
        r_sum += cos_gt;

        for j in 0..n {
            let p_j = log_probs[j].exp();
            let upstream = if j == y { p_j - 1.0 } else { p_j } / b as f64;
            let local = if j == y {
                positive_transform_derivative(cos_gt, variant)
            } else {
                let cos_j = batch.cosines().get(i, j);
                negative_transform_derivative(cos_j, t_eff, variant, hard_mask[i * n + j])
            };
            grad.set(i, j, upstream * s * local);
        }
    }

    Ok(LossOutput {
        loss: loss_sum / b as f64,
        grad_cosines: grad,
        hard_mask,
        num_classes: n,
        r_stat: r_sum / b as f64,
        prob_gt,
    })
}

/// Backward pass through the cosine layer: gradients for the (normalized)
/// feature rows and for the classifier columns.
///
/// `features` and `batch` must be forward-consistent: the cosines were
/// produced from exactly these features and this classifier. Under that
/// assumption `d cos[i][j] / d x[i][k] = W[k][j]` and
/// `d cos[i][j] / d W[k][j] = x[i][k]`, so
///
/// * `grad_features  = grad_cosines * W^T`   (`B x d`)
/// * `grad_classifier = X^T * grad_cosines`  (`d x n`)
pub fn backward(
    batch: &CosineBatch,
    variant: &LossVariant,
    t: f64,
    features: &Matrix,
    classifier: &crate::numerics::ClassifierMatrix,
) -> Result<(Matrix, Matrix)> {
    if features.rows() != batch.batch_size() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for a batch of {}",
            features.rows(),
            batch.batch_size()
        )));
    }
    if features.cols() != classifier.embedding_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, classifier expects {}",
            features.cols(),
            classifier.embedding_dim()
        )));
    }
    if batch.num_classes() != classifier.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} classes, classifier {}",
            batch.num_classes(),
            classifier.num_classes()
        )));
    }
    let out = forward(batch, variant, t)?;
    let grad_features = out.grad_cosines.matmul(&classifier.matrix().transpose())?;
    let grad_classifier = features.transpose().matmul(&out.grad_cosines)?;
    Ok((grad_features, grad_classifier))
}
