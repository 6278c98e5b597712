//! Seeded random streams.
//!
//! Every parallel task gets its own ChaCha8 stream: the generator is keyed by
//! the master seed and the task's stream index selects the ChaCha stream, so
//! results do not depend on scheduling or pool size.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub use rand_chacha::ChaCha8Rng as SeedRng;

/// Generator for task `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SeedRng {
    let mut rng = SeedRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child generator from a parent one (used for batch elements).
pub fn child_rng<R: Rng + ?Sized>(parent: &mut R) -> SeedRng {
    SeedRng::seed_from_u64(parent.random())
}

/// Matrix of i.i.d. standard normals, filled in column-major order.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Matrix of i.i.d. uniforms on `[0, 1)`.
pub fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}
