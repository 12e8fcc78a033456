use nalgebra::DVector;

use crate::random::{chain_rng, standard_normal_vector, ChainRng};

pub fn rng(seed: u64) -> ChainRng {
    chain_rng(seed, 0)
}

pub fn random_vector(rng: &mut ChainRng, d: usize) -> DVector<f64> {
    standard_normal_vector(rng, d)
}
