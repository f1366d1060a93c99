//! Privacy protocols plugged into the batched engine.

pub mod amp;
pub mod central;
pub mod local;
pub mod vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::GramMatrix;

/// `d` iid `N(0, σ²)` draws. Draws standard normals and scales them, so two
/// streams with the same seed differ only by the factor `σ`.
pub(crate) fn gaussian_vector<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)))
}

/// Symmetric `d × d` noise: iid `N(0, σ²)` on and above the diagonal
/// (drawn row by row), mirrored below.
pub(crate) fn symmetric_gaussian<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> GramMatrix {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    GramMatrix::from_upper(m).expect("square by construction")
}
