//! Small numeric helpers shared by the pipeline, the validation suite and tests.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::grid::{DDGrid, FrameParams};

/// Largest element-wise absolute difference.
pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_slice(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Grid of i.i.d. unit-variance circular Gaussian entries.
pub fn random_grid<R: Rng + ?Sized>(p: &FrameParams, rng: &mut R) -> DDGrid {
    DDGrid::from_fn(p, |_, _| complex_gaussian(rng, 1.0))
}

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// `‖est - reference‖² / ‖reference‖²`, linear scale.
pub fn nmse(est: &DMatrix<Complex64>, reference: &DMatrix<Complex64>) -> f64 {
    let err: f64 = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = reference.iter().map(|v| v.norm_sqr()).sum();
    err / den
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}
