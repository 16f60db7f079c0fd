//! Independent reference implementations used to verify the production loss.
//!
//! Nothing here shares code with [`crate::margin_losses::forward`]: the
//! direct loss takes the `acos`-then-`cos` route for angular margins and
//! exponentiates raw logits without the log-softmax rearrangement, and the
//! finite-difference gradient knows nothing about the loss at all. Agreement
//! between the two paths is evidence, not tautology.

use crate::error::{Error, Result};
use crate::margin_losses::{CosineBatch, LossVariant, VariantKind};

/// Literal transcription of the loss definition.
///
/// Per sample: `T` is computed as `cos(acos(c) + m)` for angular variants,
/// the probability as `exp(sT) / (exp(sT) + sum exp(sN_j))`, and the loss as
/// the mean of `-ln p`. Exponentiating raw logits can overflow for scales far
/// beyond 64; that is an accepted limitation of the oracle, which exists for
/// readability, not robustness.
pub fn direct_loss(batch: &CosineBatch, variant: &LossVariant, t: f64) -> f64 {
    direct_loss_with_negative_shift(batch, variant, t, 0.0)
}

/// [`direct_loss`] with `shift` added to every negative transform before
/// scaling. `shift = 0` is the oracle itself; a tiny nonzero shift provides a
/// sensitivity reference: any test tolerance tighter than the effect of the
/// shift would also reject the unshifted oracle if it were wrong by that much.
pub fn direct_loss_with_negative_shift(
    batch: &CosineBatch,
    variant: &LossVariant,
    t: f64,
    shift: f64,
) -> f64 {
    let t = variant.fixed_t.unwrap_or(t);
    let m = variant.margin_m;
    let s = variant.scale_s;
    let mut total = 0.0;
    for i in 0..batch.batch_size() {
        let y = batch.labels()[i];
        let c_gt = batch.cos_gt(i);
        let t_pos = match variant.kind {
            VariantKind::NormalizedSoftmax => c_gt,
            VariantKind::CosFace => c_gt - m,
            VariantKind::ArcFace | VariantKind::MvArcSoftmax | VariantKind::CurricularFace => {
                (c_gt.acos() + m).cos()
            }
        };
        let numerator = (s * t_pos).exp();
        let mut denominator = numerator;
        for j in 0..batch.num_classes() {
            if j == y {
                continue;
            }
            let c_j = batch.cosines().get(i, j);
            let hard = t_pos - c_j < 0.0;
            let n_j = if hard {
                match variant.kind {
                    VariantKind::MvArcSoftmax => t * c_j + t - 1.0,
                    VariantKind::CurricularFace => (t + c_j) * c_j,
                    _ => c_j,
                }
            } else {
                c_j
            };
            denominator += (s * (n_j + shift)).exp();
        }
        total += -(numerator / denominator).ln();
    }
    total / batch.batch_size() as f64
}

/// Parameters of the central-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffSpec {
    /// Base step; per coordinate the step is `step_h * max(1, |x_i|)`.
    pub step_h: f64,
    /// Pairs closer than this to the easy/hard boundary disqualify a
    /// coordinate (the loss is continuous but not differentiable there).
    pub exclusion_band: f64,
    /// Maximum accepted `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub tolerance_rel: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec {
            step_h: 1e-6,
            exclusion_band: 1e-4,
            tolerance_rel: 1e-6,
        }
    }
}

/// Relative error with a unit floor, as accepted by `tolerance_rel`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

/// One evaluation of the function under test: its value plus a signature of
/// the branch decisions taken (for the margin losses, the flattened hard
/// mask). A coordinate whose `+h` and `-h` evaluations disagree on the
/// signature is skipped: the difference quotient would straddle a kink.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub value: f64,
    pub branches: Vec<bool>,
}

/// Central-difference gradient report. `gradient[i]` is `None` exactly when
/// coordinate `i` was skipped for a branch flip.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub gradient: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Central finite differences of `f` at `point`.
///
/// Steps are relative (`h_i = step_h * max(1, |x_i|)`) and each quotient uses
/// the exactly representable difference of the two evaluated abscissae.
pub fn finite_diff_grad(
    f: impl Fn(&[f64]) -> Result<EvalPoint>,
    point: &[f64],
    spec: &FiniteDiffSpec,
) -> Result<FiniteDiffReport> {
    if !(spec.step_h > 0.0 && spec.step_h.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive and finite, got {}",
            spec.step_h
        )));
    }
    let mut x = point.to_vec();
    let mut gradient = Vec::with_capacity(point.len());
    let mut skipped = Vec::new();
    for i in 0..point.len() {
        let xi = point[i];
        let h = spec.step_h * 1.0f64.max(xi.abs());
        x[i] = xi + h;
        let plus = f(&x)?;
        x[i] = xi - h;
        let minus = f(&x)?;
        x[i] = xi;
        if plus.branches != minus.branches {
            gradient.push(None);
            skipped.push(i);
            continue;
        }
        // (xi + h) - (xi - h) rather than 2h: the rounded abscissae are what
        // the function actually saw.
        let denom = (xi + h) - (xi - h);
        gradient.push(Some((plus.value - minus.value) / denom));
    }
    Ok(FiniteDiffReport { gradient, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin_losses::{forward, LossVariant};
    use crate::numerics::Matrix;
    use approx::assert_abs_diff_eq;

    fn batch(cosines: Vec<f64>, cols: usize, labels: Vec<usize>) -> CosineBatch {
        let rows = cosines.len() / cols;
        CosineBatch::new(Matrix::from_vec(rows, cols, cosines).unwrap(), labels).unwrap()
    }

    #[test]
    fn direct_loss_two_class_hand_value() {
        // s = 1, normalized softmax, cosines [c, 0]:
        // loss = ln(1 + exp(-c)).
        let c = 1.0 - 1e-7;
        let b = batch(vec![c, 0.0], 2, vec![0]);
        let ns = LossVariant::normalized_softmax(1.0);
        let expected = (1.0 + (-c as f64).exp()).ln();
        assert_abs_diff_eq!(direct_loss(&b, &ns, 0.0), expected, epsilon = 1e-15);
    }

    #[test]
    fn production_forward_agrees_with_direct_loss() {
        let b = batch(
            vec![0.62, -0.25, 0.31, -0.47, 0.18, 0.55, -0.09, 0.74],
            4,
            vec![0, 3],
        );
        for v in [
            LossVariant::normalized_softmax(64.0),
            LossVariant::cos_face(0.35, 64.0),
            LossVariant::arc_face(0.5, 64.0),
            LossVariant::mv_arc_softmax(0.5, 64.0, 1.2),
            LossVariant::curricular_face(0.5, 64.0),
        ] {
            let prod = forward(&b, &v, 0.37).unwrap().loss;
            let oracle = direct_loss(&b, &v, 0.37);
            assert_abs_diff_eq!(prod, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn shifted_oracle_is_a_working_sensitivity_reference() {
        // The comparison tolerance used against the oracle is 1e-10; a 1e-8
        // shift in N must move the loss by much more than that, proving the
        // comparison could catch an error of that size.
        let b = batch(vec![0.4, 0.1, -0.2, 0.3, 0.5, 0.0], 3, vec![0, 1]);
        for scale in [1.0, 64.0] {
            let v = LossVariant::curricular_face(0.5, scale);
            let base = direct_loss(&b, &v, 0.5);
            let shifted = direct_loss_with_negative_shift(&b, &v, 0.5, 1e-8);
            assert!((base - shifted).abs() > 1e-10);
        }
    }

    #[test]
    fn finite_diff_recovers_polynomial_gradient() {
        // f(x, y) = x^2 y + 3y, grad = (2xy, x^2 + 3).
        let f = |p: &[f64]| {
            Ok(EvalPoint {
                value: p[0] * p[0] * p[1] + 3.0 * p[1],
                branches: vec![],
            })
        };
        let spec = FiniteDiffSpec::default();
        let report = finite_diff_grad(f, &[1.5, -2.0], &spec).unwrap();
        assert!(report.skipped.is_empty());
        let g: Vec<f64> = report.gradient.iter().map(|g| g.unwrap()).collect();
        assert!(relative_error(2.0 * 1.5 * -2.0, g[0]) < 1e-9);
        assert!(relative_error(1.5 * 1.5 + 3.0, g[1]) < 1e-9);
    }

    #[test]
    fn finite_diff_skips_branch_flips() {
        // |x| has a kink at 0; the branch signature flags the sign.
        let f = |p: &[f64]| {
            Ok(EvalPoint {
                value: p[0].abs(),
                branches: vec![p[0] >= 0.0],
            })
        };
        let spec = FiniteDiffSpec::default();
        let report = finite_diff_grad(f, &[1e-9], &spec).unwrap();
        assert_eq!(report.gradient[0], None);
        assert_eq!(report.skipped, vec![0]);
        let away = finite_diff_grad(f, &[0.5], &spec).unwrap();
        assert!(relative_error(1.0, away.gradient[0].unwrap()) < 1e-9);
    }

    #[test]
    fn finite_diff_uses_relative_steps() {
        // With an absolute step, f(x) = x^2 at x = 1e6 would lose most
        // digits; the relative step keeps the quotient accurate.
        let f = |p: &[f64]| {
            Ok(EvalPoint {
                value: p[0] * p[0],
                branches: vec![],
            })
        };
        let spec = FiniteDiffSpec::default();
        let report = finite_diff_grad(f, &[1e6], &spec).unwrap();
        assert!(relative_error(2e6, report.gradient[0].unwrap()) < 1e-9);
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let f = |p: &[f64]| {
            Ok(EvalPoint {
                value: p[0],
                branches: vec![],
            })
        };
        let spec = FiniteDiffSpec {
            step_h: 0.0,
            ..FiniteDiffSpec::default()
        };
        assert!(finite_diff_grad(f, &[1.0], &spec).is_err());
    }
}
