//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnmpc_core::rnn::{CellKind, RnnArch, RnnModel};

/// Five-joint position model as used for control.
pub fn control_model(cell: CellKind, hidden_dim: usize, layers: usize) -> RnnModel {
    RnnModel::init(RnnArch::new(cell, 5, 10, hidden_dim, layers), 7).expect("valid architecture")
}

/// Uniform values in `[-0.8, 0.8]`, shaped `rows × cols`.
pub fn random_series(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.8..0.8))
}
