//! Synthetic fixtures shared by unit tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{spans_from_sizes, DataSet};

/// Source signatures of the four-group layout with three sources:
/// complete, missing S3, missing S2, missing S1.
pub const FOUR_GROUPS: [[bool; 3]; 4] = [
    [true, true, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
];

pub struct Fixture {
    pub data: DataSet,
    pub beta: DVector<f64>,
}

/// Exchangeable-normal covariates (common-factor construction), a linear
/// response with noise `sigma`, and the block layout `sigs` applied to
/// consecutive runs of `sizes[g]` rows.
pub fn fixture(
    sigs: &[[bool; 3]],
    sizes: &[usize],
    source_sizes: [usize; 3],
    beta: &[f64],
    rho: f64,
    sigma: f64,
    seed: u64,
) -> Fixture {
    let n: usize = sizes.iter().sum();
    let p: usize = source_sizes.iter().sum();
    assert_eq!(beta.len(), p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let f: f64 = StandardNormal.sample(&mut rng);
        for j in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = rho.sqrt() * f + (1.0 - rho).sqrt() * e;
        }
    }
    let beta = DVector::from_column_slice(beta);
    let noise = DVector::from_fn(n, |_, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        sigma * e
    });
    let y = &x * &beta + noise;
    let spans = spans_from_sizes(&source_sizes);
    let full = DataSet::new(
        x.clone(),
        DMatrix::from_element(n, p, true),
        y.clone(),
        spans.clone(),
    )
    .unwrap();
    let mut mask = DMatrix::from_element(n, p, true);
    let mut row = 0;
    for (sig, &size) in sigs.iter().zip(sizes) {
        for _ in 0..size {
            for (s, span) in spans.iter().enumerate() {
                for j in span.clone() {
                    mask[(row, j)] = sig[s];
                }
            }
            row += 1;
        }
    }
    let data = full.with_mask(mask).unwrap();
    Fixture {
        data,
        beta,
    }
}
