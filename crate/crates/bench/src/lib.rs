//! Shared fixtures for the criterion benchmarks.

use cmgn_core::numerics::{ClassifierMatrix, Matrix};
use cmgn_core::rng::{stream_rng, StreamId};
use cmgn_core::CosineBatch;
use rand::Rng;

pub struct BenchFixture {
    pub features: Matrix,
    pub classifier: ClassifierMatrix,
    pub labels: Vec<usize>,
}

/// Normalized feature rows plus a unit-column classifier, sized like a
/// realistic toy step.
pub fn fixture(batch: usize, num_classes: usize, dim: usize) -> BenchFixture {
    let mut rng = stream_rng(42, StreamId::DataGen, 0);
    let mut features = Matrix::from_fn(batch, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    for i in 0..batch {
        let row = features.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    let classifier = ClassifierMatrix::random(dim, num_classes, &mut rng).unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % num_classes).collect();
    BenchFixture {
        features,
        classifier,
        labels,
    }
}

pub fn cosine_batch_for(fx: &BenchFixture) -> CosineBatch {
    let cosines = cmgn_core::numerics::cosine_batch(&fx.features, &fx.classifier).unwrap();
    CosineBatch::new(cosines, fx.labels.clone()).unwrap()
}
