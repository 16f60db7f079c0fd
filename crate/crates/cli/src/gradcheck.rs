//! Gradient check: production analytic gradients against central finite
//! differences of the loss, over random batches.
//!
//! The differentiated function treats the feature rows and classifier
//! entries as free variables (cosines are their clamped inner products), so
//! the check covers the loss gradient and the two matmul adjoints of the
//! cosine layer. Batches are screened so no pair sits within the exclusion
//! band of the easy/hard boundary, and any coordinate whose `+h`/`-h`
//! evaluations still disagree on the hard mask is skipped.

use cmgn_core::margin_losses::{backward, forward, positive_transform};
use cmgn_core::numerics::{clamp_cosine, l2_normalize};
use cmgn_core::oracle::{finite_diff_grad, relative_error, EvalPoint, FiniteDiffSpec};
use cmgn_core::rng::{stream_rng, StreamId};
use cmgn_core::{ClassifierMatrix, CosineBatch, Error, LossVariant, Matrix, Result};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct GradCheckSettings {
    /// Template variant; `scale_s` is overridden per trial from `scales`.
    pub variant: LossVariant,
    pub trials: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    /// Cycled across trials.
    pub scales: Vec<f64>,
    pub fd: FiniteDiffSpec,
    /// Added to the curriculum `t` seen by the analytic path only. Zero for
    /// a real check; a nonzero value simulates a mis-wired implementation
    /// and must make the check fail (mutation fixture).
    pub inject_t_error: f64,
}

impl GradCheckSettings {
    pub fn new(variant: LossVariant, trials: usize, seed: u64) -> GradCheckSettings {
        GradCheckSettings {
            variant,
            trials,
            seed,
            batch_size: 8,
            num_classes: 10,
            embed_dim: 16,
            scales: vec![1.0, 64.0],
            fd: FiniteDiffSpec::default(),
            inject_t_error: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WorstCoordinate {
    pub trial: usize,
    /// Flat coordinate: feature entries first, classifier entries after.
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: usize,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    pub batches_resampled: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance_rel: f64) -> bool {
        self.max_rel_error <= tolerance_rel
    }
}

struct TrialData {
    features: Matrix,
    classifier: Matrix,
    labels: Vec<usize>,
    t: f64,
}

/// Draw one batch; `None` when it fails the screens and must be resampled.
///
/// Screens: every cosine within `[-0.98, 0.98]` (clear of the clamp and of
/// the `sin(theta)` blowup in the ground-truth derivative), and for mining
/// variants every pair at least `exclusion_band` away from the easy/hard
/// boundary.
fn draw_trial(
    settings: &GradCheckSettings,
    variant: &LossVariant,
    attempt: u64,
) -> Result<Option<TrialData>> {
    let mut rng = stream_rng(settings.seed, StreamId::GradCheck, attempt);
    let (b, n, d) = (settings.batch_size, settings.num_classes, settings.embed_dim);

    let mut features = Matrix::zeros(b, d);
    for i in 0..b {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        features.row_mut(i).copy_from_slice(&l2_normalize(&raw)?);
    }
    let mut classifier = Matrix::zeros(d, n);
    for j in 0..n {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let unit = l2_normalize(&raw)?;
        for (i, &v) in unit.iter().enumerate() {
            classifier.set(i, j, v);
        }
    }
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    let t = rng.random_range(0.0..1.0);

    let cosines = features.matmul(&classifier)?;
    for &c in cosines.as_slice() {
        if c.abs() > 0.98 {
            return Ok(None);
        }
    }
    if variant.mines_hard_samples() {
        for (i, &y) in labels.iter().enumerate() {
            let cos_gt = cosines.get(i, y);
            for j in 0..n {
                if j == y {
                    continue;
                }
                let cos_j = cosines.get(i, j);
                if boundary_distance(cos_gt, cos_j, variant) <= settings.fd.exclusion_band {
                    return Ok(None);
                }
            }
        }
    }
    Ok(Some(TrialData {
        features,
        classifier,
        labels,
        t,
    }))
}

/// Distance of a pair from the easy/hard boundary, measured on the cosines.
fn boundary_distance(cos_gt: f64, cos_j: f64, variant: &LossVariant) -> f64 {
    (positive_transform(cos_gt, variant) - cos_j).abs()
}

pub fn run_gradient_check(settings: &GradCheckSettings) -> Result<GradCheckReport> {
    settings.variant.validate()?;
    if settings.scales.is_empty() {
        return Err(Error::InvalidInput("need at least one scale".into()));
    }
    let (b, n, d) = (settings.batch_size, settings.num_classes, settings.embed_dim);
    if b == 0 || n < 2 || d < 2 {
        return Err(Error::InvalidInput(format!(
            "bad batch geometry: B={b}, n={n}, d={d}"
        )));
    }

    let mut report = GradCheckReport {
        trials: settings.trials,
        coords_checked: 0,
        coords_skipped: 0,
        batches_resampled: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut attempt: u64 = 0;

    for trial in 0..settings.trials {
        let mut variant = settings.variant.clone();
        variant.scale_s = settings.scales[trial % settings.scales.len()];

        let data = loop {
            if attempt > (settings.trials as u64 + 1) * 1000 {
                return Err(Error::NumericalFailure(
                    "could not sample a batch outside the exclusion band".into(),
                ));
            }
            let candidate = draw_trial(settings, &variant, attempt)?;
            attempt += 1;
            match candidate {
                Some(data) => break data,
                None => report.batches_resampled += 1,
            }
        };

        // Analytic gradient via the production path (optionally corrupted).
        let cosines = data.features.matmul(&data.classifier)?.map(clamp_cosine);
        let batch = CosineBatch::new(cosines, data.labels.clone())?;
        let classifier = ClassifierMatrix::new(data.classifier.clone())?;
        let t_analytic = data.t + settings.inject_t_error;
        let (grad_features, grad_classifier) =
            backward(&batch, &variant, t_analytic, &data.features, &classifier)?;
        let mut analytic = Vec::with_capacity(b * d + d * n);
        analytic.extend_from_slice(grad_features.as_slice());
        analytic.extend_from_slice(grad_classifier.as_slice());

        // Numeric gradient of the uncorrupted loss.
        let labels = data.labels.clone();
        let mines = variant.mines_hard_samples();
        let loss_at = |flat: &[f64]| -> Result<EvalPoint> {
            let features = Matrix::from_vec(b, d, flat[..b * d].to_vec())?;
            let classifier = Matrix::from_vec(d, n, flat[b * d..].to_vec())?;
            let cosines = features.matmul(&classifier)?.map(clamp_cosine);
            let batch = CosineBatch::new(cosines, labels.clone())?;
            let out = forward(&batch, &variant, data.t)?;
            Ok(EvalPoint {
                value: out.loss,
                // The hard mask is value-relevant only when the variant
                // mines; otherwise mask flips are not kinks.
                branches: if mines { out.hard_mask().to_vec() } else { Vec::new() },
            })
        };
        let mut point = Vec::with_capacity(b * d + d * n);
        point.extend_from_slice(data.features.as_slice());
        point.extend_from_slice(data.classifier.as_slice());
        let fd = finite_diff_grad(loss_at, &point, &settings.fd)?;

        report.coords_skipped += fd.skipped.len();
        for (coordinate, numeric) in fd.gradient.iter().enumerate() {
            let Some(numeric) = numeric else { continue };
            let err = relative_error(analytic[coordinate], *numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(WorstCoordinate {
                    trial,
                    coordinate,
                    analytic: analytic[coordinate],
                    numeric: *numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmgn_core::VariantKind;

    fn settings(kind: VariantKind, trials: usize) -> GradCheckSettings {
        let variant = match kind {
            VariantKind::NormalizedSoftmax => LossVariant::normalized_softmax(64.0),
            VariantKind::CosFace => LossVariant::cos_face(0.35, 64.0),
            VariantKind::ArcFace => LossVariant::arc_face(0.5, 64.0),
            VariantKind::MvArcSoftmax => LossVariant::mv_arc_softmax(0.5, 64.0, 1.2),
            VariantKind::CurricularFace => LossVariant::curricular_face(0.5, 64.0),
        };
        GradCheckSettings::new(variant, trials, 1234)
    }

    #[test]
    fn every_variant_passes_a_short_check() {
        for kind in [
            VariantKind::NormalizedSoftmax,
            VariantKind::CosFace,
            VariantKind::ArcFace,
            VariantKind::MvArcSoftmax,
            VariantKind::CurricularFace,
        ] {
            let s = settings(kind, 6);
            let report = run_gradient_check(&s).unwrap();
            assert!(report.coords_checked > 0);
            assert!(
                report.passes(s.fd.tolerance_rel),
                "{kind:?}: max rel error {:.3e} at {:?}",
                report.max_rel_error,
                report.worst
            );
        }
    }

    #[test]
    fn corrupted_t_wiring_is_detected() {
        let mut s = settings(VariantKind::CurricularFace, 6);
        s.inject_t_error = 0.05;
        let report = run_gradient_check(&s).unwrap();
        assert!(
            !report.passes(s.fd.tolerance_rel),
            "corrupted build passed: max rel error {:.3e}",
            report.max_rel_error
        );
    }

    #[test]
    fn zero_trials_is_a_vacuous_pass() {
        let report = run_gradient_check(&settings(VariantKind::ArcFace, 0)).unwrap();
        assert_eq!(report.coords_checked, 0);
        assert!(report.passes(1e-6));
    }

    #[test]
    fn report_is_deterministic() {
        let s = settings(VariantKind::CurricularFace, 3);
        let a = run_gradient_check(&s).unwrap();
        let b = run_gradient_check(&s).unwrap();
        assert_eq!(a.max_rel_error, b.max_rel_error);
        assert_eq!(a.batches_resampled, b.batches_resampled);
    }
}
