//! Distributed matrix multiplication expressed as SPMD programs.
//!
//! Every entry point partitions its global inputs, runs one program per rank
//! on the [`runtime`](crate::runtime) and reassembles the result, returning
//! it with the communication meter of that run. The per-rank kernels in
//! [`tesseract`] are public so layers can chain them inside one program.

mod cannon;
mod megatron;
mod summa;
pub mod tesseract;

pub use cannon::cannon_matmul;
pub use megatron::megatron_1d_linear;
pub use summa::{summa_local, summa_matmul};
pub use tesseract::{tesseract_backward, tesseract_matmul, tesseract_matmul_sharded, MatmulVariant, TesseractOptions};

#[cfg(test)]
mod tests;
