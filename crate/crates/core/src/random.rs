//! Seeded random streams and random group elements.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::expmap::{mexp, ExpMethod};
use crate::lie::{Algebra, GroupFamily};

/// The generator used for every chain. Streams are derived from
/// `(seed, chain index)`, so chains are independent and reproducible.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed element of `SO(n)` (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal absorbed, then a reflection fix).
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// A random group element: Haar for `SO(n)`, otherwise the exponential of a
/// Gaussian algebra element with entries of size `spread`.
pub fn random_element<R: Rng + ?Sized>(rng: &mut R, algebra: &Algebra, spread: f64) -> DMatrix<f64> {
    let group = algebra.group();
    match group.family() {
        GroupFamily::SpecialOrthogonal => haar_rotation(rng, group.n()),
        _ => {
            let v = standard_normal_vector(rng, algebra.dim()) * spread;
            mexp(&algebra.to_matrix(&v), ExpMethod::ScalingSquaring)
                .expect("scaling and squaring never fails")
        }
    }
}
