//! Seeded random sources. Every random object in the crate is built from a
//! `(seed, stream)` pair so results do not depend on scheduling.

use crate::matrix::{c, CMatrix, C64};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng64 = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for sub-task `stream` of a seeded job.
pub fn rng_for_stream(seed: u64, stream: u64) -> Rng64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard complex Gaussian: real and imaginary parts have variance 1/2.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    // fill row by row so the draw order is the documented row-major one
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = complex_gaussian(rng);
        }
    }
    m
}

/// Haar-distributed unit vector in `C^d`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<C64> {
    let v = DVector::from_fn(d, |_, _| complex_gaussian(rng));
    let norm = v.norm();
    v / c(norm, 0.0)
}

/// Hermitian matrix `(G + G^*)/2` with Gaussian `G`.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = complex_gaussian_matrix(rng, n, n);
    (&g + g.adjoint()).scale(0.5)
}

/// Haar-random unitary from the QR factorization of a Gaussian matrix,
/// with the phases of `R`'s diagonal moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = complex_gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}
