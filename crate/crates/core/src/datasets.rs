//! Synthetic classification data on the unit hypersphere, plus the pair
//! lists used for verification metrics.
//!
//! Classes are random unit centers; samples are centers plus isotropic
//! Gaussian noise, re-normalized. Rows are stored class-major, and the last
//! rows of each class form the holdout split, so a given spec always yields
//! the same dataset bit for bit.

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, Matrix};
use crate::rng::{stream_rng, StreamId};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim < 2 {
            return Err(Error::InvalidInput(format!(
                "need input_dim >= 2, got {}",
                self.input_dim
            )));
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 samples per class, got {}",
                self.samples_per_class
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !self.holdout_fraction.is_finite() || !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidInput(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        }
    }
}

/// Rows of unit-norm inputs with labels and a train/holdout split.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    inputs: Matrix,
    labels: Vec<usize>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Every class must appear with at least one train row; labels must lie
    /// below `num_classes`.
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        splits: Vec<Split>,
        num_classes: usize,
    ) -> Result<LabeledDataset> {
        if inputs.rows() == 0 {
            return Err(Error::DegenerateInput("dataset has no rows".into()));
        }
        if labels.len() != inputs.rows() || splits.len() != inputs.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows, {} labels, {} split tags",
                inputs.rows(),
                labels.len(),
                splits.len()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::InvalidInput("non-finite input entry".into()));
        }
        let mut has_train = vec![false; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            if splits[i] == Split::Train {
                has_train[y] = true;
            }
        }
        if let Some(class) = has_train.iter().position(|&t| !t) {
            return Err(Error::InvalidInput(format!(
                "class {class} has no train rows"
            )));
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            splits,
            num_classes,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.num_rows()).filter(|&i| self.splits[i] == Split::Train).collect()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.num_rows()).filter(|&i| self.splits[i] == Split::Holdout).collect()
    }

    /// Gather the given rows into a new matrix (with matching labels).
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut m = Matrix::zeros(indices.len(), self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (out_row, &i) in indices.iter().enumerate() {
            m.row_mut(out_row).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        (m, labels)
    }
}

fn unit_normal_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    // An exactly zero draw cannot be normalized; resample (practically
    // unreachable, but keeps this total).
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(unit) = l2_normalize(&v) {
            return unit;
        }
    }
}

/// Generate the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, StreamId::DataGen, 0);
    let holdout_per_class = ((spec.samples_per_class as f64 * spec.holdout_fraction).round()
        as usize)
        .min(spec.samples_per_class - 1);

    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| unit_normal_vector(spec.input_dim, &mut rng))
        .collect();

    let n = spec.num_classes * spec.samples_per_class;
    let mut inputs = Matrix::zeros(n, spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    let mut row = 0;
    for (class, center) in centers.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            if spec.noise_sigma == 0.0 {
                inputs.row_mut(row).copy_from_slice(center);
            } else {
                loop {
                    let noisy: Vec<f64> = center
                        .iter()
                        .map(|&c| c + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if let Ok(unit) = l2_normalize(&noisy) {
                        inputs.row_mut(row).copy_from_slice(&unit);
                        break;
                    }
                }
            }
            labels.push(class);
            splits.push(if s >= spec.samples_per_class - holdout_per_class {
                Split::Holdout
            } else {
                Split::Train
            });
            row += 1;
        }
    }
    LabeledDataset::new(inputs, labels, splits, spec.num_classes)
}

/// A verification pair: two dataset row indices and whether they share a
/// class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

#[derive(Debug, Clone)]
pub struct PairList {
    pairs: Vec<PairExample>,
}

impl PairList {
    /// Build directly from explicit pairs (e.g. an externally defined
    /// protocol). [`make_pairs`] is the usual constructor.
    pub fn from_pairs(pairs: Vec<PairExample>) -> PairList {
        PairList { pairs }
    }

    pub fn pairs(&self) -> &[PairExample] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Sample `pairs_per_polarity` positive and negative holdout pairs.
///
/// All candidate pairs (holdout rows only) are enumerated in row order,
/// shuffled deterministically, and taken without replacement; if more pairs
/// are requested than exist, the shuffled pool repeats.
pub fn make_pairs(dataset: &LabeledDataset, pairs_per_polarity: usize, seed: u64) -> Result<PairList> {
    let holdout = dataset.holdout_indices();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (pos, &a) in holdout.iter().enumerate() {
        for &b in holdout.iter().skip(pos + 1) {
            if dataset.labels()[a] == dataset.labels()[b] {
                positives.push(PairExample { a, b, same: true });
            } else {
                negatives.push(PairExample { a, b, same: false });
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::DegenerateInput(
            "holdout split admits no same-class pair".into(),
        ));
    }
    if negatives.is_empty() {
        return Err(Error::DegenerateInput(
            "holdout split admits no cross-class pair".into(),
        ));
    }
    let mut rng = stream_rng(seed, StreamId::PairSampling, 0);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(2 * pairs_per_polarity);
    pairs.extend(positives.iter().cycle().take(pairs_per_polarity));
    pairs.extend(negatives.iter().cycle().take(pairs_per_polarity));
    Ok(PairList { pairs })
}

/// Write the dataset as CSV: `x0,...,x{d-1},label,split`.
///
/// Floats are written in Rust's shortest round-trip form, so a load returns
/// bit-identical values.
pub fn save_csv(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 0..dataset.input_dim() {
        let _ = write!(out, "x{j},");
    }
    out.push_str("label,split\n");
    for i in 0..dataset.num_rows() {
        for &v in dataset.inputs().row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", dataset.labels()[i], dataset.split(i).name());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        line: 1,
        detail: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[columns.len() - 2] != "label" || columns[columns.len() - 1] != "split" {
        return Err(Error::CsvParse {
            line: 1,
            detail: "expected header x0,...,label,split".into(),
        });
    }
    let dim = columns.len() - 2;
    for (j, col) in columns[..dim].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(Error::CsvParse {
                line: 1,
                detail: format!("expected column x{j}, found {col}"),
            });
        }
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::CsvParse {
                line: line_no,
                detail: format!("expected {} fields, found {}", dim + 2, fields.len()),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for (j, f) in fields[..dim].iter().enumerate() {
            row.push(f.parse::<f64>().map_err(|_| Error::CsvParse {
                line: line_no,
                detail: format!("column x{j}: not a float: {f}"),
            })?);
        }
        labels.push(fields[dim].parse::<usize>().map_err(|_| Error::CsvParse {
            line: line_no,
            detail: format!("not a label: {}", fields[dim]),
        })?);
        splits.push(match fields[dim + 1] {
            "train" => Split::Train,
            "holdout" => Split::Holdout,
            other => {
                return Err(Error::CsvParse {
                    line: line_no,
                    detail: format!("unknown split tag: {other}"),
                })
            }
        });
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            line: 1,
            detail: "no data rows".into(),
        });
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, splits, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_norm;
    use approx::assert_abs_diff_eq;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 4,
            input_dim: 8,
            samples_per_class: 10,
            noise_sigma: 0.2,
            seed: 11,
            holdout_fraction: 0.2,
        }
    }

    #[test]
    fn generation_shapes_and_unit_rows() {
        let ds = generate(&spec()).unwrap();
        assert_eq!(ds.num_rows(), 40);
        assert_eq!(ds.input_dim(), 8);
        assert_eq!(ds.num_classes(), 4);
        for i in 0..ds.num_rows() {
            assert_abs_diff_eq!(l2_norm(ds.inputs().row(i)), 1.0, epsilon = 1e-12);
        }
        // 20% of 10 = 2 holdout rows per class, at the end of each class.
        assert_eq!(ds.holdout_indices().len(), 8);
        assert_eq!(ds.train_indices().len(), 32);
        assert_eq!(ds.split(7), Split::Train);
        assert_eq!(ds.split(8), Split::Holdout);
        assert_eq!(ds.split(9), Split::Holdout);
        assert_eq!(ds.labels()[9], 0);
        assert_eq!(ds.labels()[10], 1);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a.inputs().as_slice(), b.inputs().as_slice());
        let mut other = spec();
        other.seed = 12;
        let c = generate(&other).unwrap();
        assert_ne!(a.inputs().as_slice(), c.inputs().as_slice());
    }

    #[test]
    fn zero_noise_repeats_the_center() {
        let mut s = spec();
        s.noise_sigma = 0.0;
        let ds = generate(&s).unwrap();
        assert_eq!(ds.inputs().row(0), ds.inputs().row(9));
        assert_ne!(ds.inputs().row(0), ds.inputs().row(10));
    }

    #[test]
    fn holdout_fraction_keeps_a_train_row() {
        let mut s = spec();
        s.holdout_fraction = 0.99;
        let ds = generate(&s).unwrap();
        // min(round(9.9), 9) = 9 holdout rows; one train row survives.
        for class in 0..4 {
            let train = ds
                .train_indices()
                .iter()
                .filter(|&&i| ds.labels()[i] == class)
                .count();
            assert_eq!(train, 1);
        }
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        for patch in [
            |s: &mut SyntheticSpec| s.num_classes = 1,
            |s: &mut SyntheticSpec| s.input_dim = 1,
            |s: &mut SyntheticSpec| s.samples_per_class = 1,
            |s: &mut SyntheticSpec| s.noise_sigma = -0.1,
            |s: &mut SyntheticSpec| s.holdout_fraction = 1.0,
        ] {
            let mut s = spec();
            patch(&mut s);
            assert!(generate(&s).is_err());
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = generate(&spec()).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(ds.inputs().as_slice(), back.inputs().as_slice());
        assert_eq!(ds.labels(), back.labels());
        assert_eq!(ds.num_classes(), back.num_classes());
        for i in 0..ds.num_rows() {
            assert_eq!(ds.split(i), back.split(i));
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "x0,x1,label,oops\n").unwrap();
        match load_csv(&path) {
            Err(Error::CsvParse { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }

        std::fs::write(&path, "x0,x1,label,split\n0.1,0.2,0,train\n0.3,zzz,1,train\n").unwrap();
        match load_csv(&path) {
            Err(Error::CsvParse { line: 3, .. }) => {}
            other => panic!("expected line-3 error, got {other:?}"),
        }
    }

    #[test]
    fn pairs_have_requested_polarity_counts() {
        let ds = generate(&spec()).unwrap();
        let pairs = make_pairs(&ds, 15, 3).unwrap();
        assert_eq!(pairs.len(), 30);
        let positives = pairs.pairs().iter().filter(|p| p.same).count();
        assert_eq!(positives, 15);
        for p in pairs.pairs() {
            assert_eq!(p.same, ds.labels()[p.a] == ds.labels()[p.b]);
            assert_eq!(ds.split(p.a), Split::Holdout);
            assert_eq!(ds.split(p.b), Split::Holdout);
        }
        let again = make_pairs(&ds, 15, 3).unwrap();
        assert_eq!(pairs.pairs(), again.pairs());
        let other_seed = make_pairs(&ds, 15, 4).unwrap();
        assert_ne!(pairs.pairs(), other_seed.pairs());
    }

    #[test]
    fn oversubscribed_pairs_wrap_around() {
        let ds = generate(&spec()).unwrap();
        // 2 holdout rows per class: 4 positive pairs total exist.
        let pairs = make_pairs(&ds, 10, 0).unwrap();
        let positives: Vec<_> = pairs.pairs().iter().filter(|p| p.same).collect();
        assert_eq!(positives.len(), 10);
        assert_eq!(positives[0], positives[4]);
    }

    #[test]
    fn pairs_need_both_polarities() {
        let mut s = spec();
        s.holdout_fraction = 0.0;
        let ds = generate(&s).unwrap();
        assert!(make_pairs(&ds, 5, 0).is_err());
    }
}
