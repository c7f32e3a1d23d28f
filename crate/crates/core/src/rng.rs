//! Seeded input generation.
//!
//! Every tensor is drawn from its own ChaCha8 stream: the generator is seeded
//! with the run seed and [`ChaCha8Rng::set_stream`] selects the stream id, so
//! a draw never depends on how many values other tensors consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Matrix;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Uniform `[-1, 1)` matrix from stream `stream_id` of `seed`.
pub fn random_matrix(seed: u64, stream_id: u64, rows: usize, cols: usize) -> Matrix {
    Matrix::random(rows, cols, &mut stream(seed, stream_id))
}
