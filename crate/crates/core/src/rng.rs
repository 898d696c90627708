//! Counter-style seed derivation.
//!
//! Every random quantity in the simulator is drawn from a fresh generator
//! keyed by `(master seed, stream tag, ids...)`, never from shared mutable
//! state, so evaluation order cannot change any value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Matrix;

/// SplitMix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Injective in `stream` for a fixed `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream)
}

pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| derive(s, p))
}

/// Stream tags separating independent uses of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Hyperplanes = 1,
    ModelInit = 2,
    Dataset = 3,
    Partition = 4,
    Training = 5,
    AttackNoise = 6,
    Mask = 7,
    Tamper = 8,
    ComputeTime = 9,
    Placement = 10,
    Roles = 11,
    Correlation = 12,
}

pub fn stream_seed(seed: u64, stream: Stream, ids: &[u64]) -> u64 {
    derive_path(derive(seed, stream as u64), ids)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `rows x cols` matrix of i.i.d. standard normal entries.
pub fn seeded_normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
    Matrix::from_vec(rows, cols, normal_vec(rows * cols, seed)).expect("normal draws are finite")
}
