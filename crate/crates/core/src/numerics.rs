//! Minimal dense linear algebra and numerically stable scalar utilities
//! shared by the loss, trainer, and evaluation layers.
//!
//! Everything is plain row-major `f64` with deterministic reduction order
//! (ascending index, no reassociation), which is what makes bit-identical
//! reruns possible. Training-scale throughput is a non-goal.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Cosine similarities are clamped to `[-COS_BOUND, COS_BOUND]`.
///
/// The margin transforms and their gradients divide by `sin(theta)`; keeping
/// cosines strictly inside `(-1, 1)` bounds that factor away from the
/// `theta -> 0` singularity.
pub const COS_BOUND: f64 = 1.0 - 1e-7;

/// Clamp a cosine similarity into the representable range.
#[inline]
pub fn clamp_cosine(c: f64) -> f64 {
    c.clamp(-COS_BOUND, COS_BOUND)
}

/// Euclidean norm, computed directly. Fine for diagnostics and unit-norm
/// checks; use [`l2_normalize`] when overflow resistance matters.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalize `v` to unit Euclidean norm, preserving direction.
///
/// The vector is pre-scaled by its largest absolute entry, so inputs with
/// entries near the overflow or underflow boundary normalize correctly.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::DegenerateInput("cannot normalize an empty vector".into()));
    }
    // f64::max would swallow NaN, so finiteness needs its own check.
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in vector".into()));
    }
    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateInput("cannot normalize a zero vector".into()));
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / max_abs).collect();
    let norm = l2_norm(&scaled);
    Ok(scaled.iter().map(|x| x / norm).collect())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() {
            return Err(Error::DegenerateInput("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("rows have unequal lengths".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Build entry-by-entry in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * rhs` with a fixed ascending-k inner loop, so results are
    /// reproducible across runs and machines with the same float semantics.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Class-center matrix `W` with shape `d x n`: one unit-norm column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMatrix {
    columns: Matrix,
}

/// Tolerance on `|norm - 1|` accepted by [`ClassifierMatrix::new`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

impl ClassifierMatrix {
    /// Wrap a matrix whose columns are already unit norm (within
    /// [`UNIT_NORM_TOL`]). The entries are taken as-is, no renormalization.
    pub fn new(columns: Matrix) -> Result<ClassifierMatrix> {
        if columns.rows() == 0 || columns.cols() == 0 {
            return Err(Error::DegenerateInput("classifier needs at least one row and column".into()));
        }
        for j in 0..columns.cols() {
            let norm = l2_norm(&columns.column(j));
            if !norm.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry in classifier column {j}")));
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidInput(format!(
                    "classifier column {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(ClassifierMatrix { columns })
    }

    /// Normalize each column to unit norm and wrap the result. This is the
    /// projection applied after every optimizer step.
    pub fn from_unnormalized(columns: Matrix) -> Result<ClassifierMatrix> {
        if columns.rows() == 0 || columns.cols() == 0 {
            return Err(Error::DegenerateInput("classifier needs at least one row and column".into()));
        }
        let mut normalized = Matrix::zeros(columns.rows(), columns.cols());
        for j in 0..columns.cols() {
            let col = l2_normalize(&columns.column(j))
                .map_err(|_| Error::DegenerateInput(format!("classifier column {j} cannot be normalized")))?;
            for (i, &v) in col.iter().enumerate() {
                normalized.set(i, j, v);
            }
        }
        Ok(ClassifierMatrix { columns: normalized })
    }

    /// Random unit columns drawn from per-coordinate standard normals.
    pub fn random(embedding_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Result<ClassifierMatrix> {
        let raw = Matrix::from_fn(embedding_dim, num_classes, |_, _| rng.sample(StandardNormal));
        ClassifierMatrix::from_unnormalized(raw)
    }

    pub fn embedding_dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.columns.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.columns
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.columns.column(j)
    }
}

/// Cosine similarity between every feature row and every classifier column:
/// `out[i][j] = clamp(x_i . w_j)`.
///
/// Feature rows are taken as-is; the caller is responsible for normalizing
/// them when true cosines are wanted. (Gradient checks deliberately pass
/// perturbed, slightly off-norm rows through this same path.)
pub fn cosine_batch(features: &Matrix, classifier: &ClassifierMatrix) -> Result<Matrix> {
    if features.cols() != classifier.embedding_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, classifier expects {}",
            features.cols(),
            classifier.embedding_dim()
        )));
    }
    let raw = features.matmul(classifier.matrix())?;
    if !raw.is_finite() {
        return Err(Error::InvalidInput("non-finite value in cosine computation".into()));
    }
    Ok(raw.map(clamp_cosine))
}

/// Log-softmax with the max subtracted before exponentiation, so any finite
/// logits (e.g. scaled by s = 64) stay in range.
pub fn stable_log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::DegenerateInput("log-softmax of an empty slice".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let log_sum = sum.ln();
    Ok(logits.iter().map(|&x| x - max - log_sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four() {
        let out = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.6, 0.8]);
    }

    #[test]
    fn normalize_rejects_zero_and_empty() {
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
        assert!(l2_normalize(&[]).is_err());
        assert!(l2_normalize(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn normalize_survives_extreme_magnitudes() {
        let big = l2_normalize(&[1e300, 1e300]).unwrap();
        assert_abs_diff_eq!(l2_norm(&big), 1.0, epsilon = 1e-12);
        let tiny = l2_normalize(&[1e-300, -1e-300]).unwrap();
        assert_abs_diff_eq!(l2_norm(&tiny), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = l2_normalize(&[0.3, -1.7, 2.2, 0.05]).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn matmul_matches_hand_example() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), a.get(1, 2));
    }

    #[test]
    fn classifier_normalizes_columns() {
        let raw = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 2.0]).unwrap();
        let w = ClassifierMatrix::from_unnormalized(raw).unwrap();
        assert_eq!(w.column(0), vec![0.6, 0.8]);
        for j in 0..w.num_classes() {
            assert_abs_diff_eq!(l2_norm(&w.column(j)), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn classifier_new_rejects_off_norm_columns() {
        let raw = Matrix::from_vec(2, 1, vec![0.6, 0.81]).unwrap();
        assert!(ClassifierMatrix::new(raw).is_err());
        let unit = Matrix::from_vec(2, 1, vec![0.6, 0.8]).unwrap();
        assert!(ClassifierMatrix::new(unit).is_ok());
    }

    #[test]
    fn classifier_rejects_zero_column() {
        let raw = Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(ClassifierMatrix::from_unnormalized(raw).is_err());
    }

    #[test]
    fn cosine_batch_aligned_orthogonal_opposed() {
        let w = ClassifierMatrix::new(
            Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let c = cosine_batch(&x, &w).unwrap();
        assert_eq!(c.get(0, 0), COS_BOUND);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(2, 0), -COS_BOUND);
    }

    #[test]
    fn cosine_batch_checks_dimensions() {
        let w = ClassifierMatrix::new(Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap()).unwrap();
        let x = Matrix::zeros(1, 3);
        assert!(cosine_batch(&x, &w).is_err());
    }

    #[test]
    fn log_softmax_two_equal_logits() {
        let out = stable_log_softmax(&[0.0, 0.0]).unwrap();
        let expected = -(2.0f64.ln());
        assert_eq!(out, vec![expected, expected]);
    }

    #[test]
    fn log_softmax_handles_large_scale() {
        let out = stable_log_softmax(&[640.0, 0.0, -640.0]).unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        let total: f64 = out.iter().map(|x| x.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_softmax_single_entry_is_zero() {
        assert_eq!(stable_log_softmax(&[123.0]).unwrap(), vec![0.0]);
    }

    proptest! {
        #[test]
        fn normalize_rescaling_invariance(
            v in proptest::collection::vec(-100.0f64..100.0, 2..8),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let base = l2_normalize(&v).unwrap();
            let scaled_input: Vec<f64> = v.iter().map(|x| x * c).collect();
            let scaled = l2_normalize(&scaled_input).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn log_softmax_shift_invariance(
            v in proptest::collection::vec(-50.0f64..50.0, 1..10),
            shift in -100.0f64..100.0,
        ) {
            let base = stable_log_softmax(&v).unwrap();
            let shifted_input: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let shifted = stable_log_softmax(&shifted_input).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn clamp_stays_in_bounds(c in -2.0f64..2.0) {
            let out = clamp_cosine(c);
            prop_assert!(out.abs() <= COS_BOUND);
            if c.abs() <= COS_BOUND {
                prop_assert_eq!(out, c);
            }
        }
    }
}
