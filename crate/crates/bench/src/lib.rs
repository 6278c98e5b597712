//! Criterion benchmarks for the sampling kernels; see `benches/`. This crate
//! only holds the shared fixtures.

use std::sync::Arc;

use gp_pathwise::models::{location_scale_sample, optimal_inducing};
use gp_pathwise::rng::{stream_rng, uniform_matrix};
use gp_pathwise::{Dataset, FourierBasis, GaussianMoments, InducingModel, Kernel};
use nalgebra::DMatrix;

pub const NOISE: f64 = 1e-3;

/// Matérn-5/2 kernel with the study lengthscale `√(d/100)`.
pub fn kernel(dim: usize) -> Kernel {
    Kernel::isotropic(1.0, (dim as f64 / 100.0).sqrt(), dim).expect("valid kernel")
}

/// `n` noisy prior observations on `[0, 1]^d`.
pub fn dataset(kernel: &Kernel, n: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let x = uniform_matrix(n, kernel.dim(), &mut rng);
    let mut prior = GaussianMoments::prior(kernel, &x).unwrap();
    for i in 0..n {
        prior.cov[(i, i)] += NOISE;
    }
    let y = location_scale_sample(&prior, 1, &mut rng).unwrap().row(0).transpose();
    Dataset::new(x, y, NOISE).unwrap()
}

/// Optimal inducing distribution on the first `m` training inputs.
pub fn inducing(kernel: &Kernel, data: &Dataset, m: usize) -> InducingModel {
    optimal_inducing(kernel, data, &data.x.rows(0, m).into_owned()).unwrap()
}

pub fn basis(kernel: &Kernel, count: usize, seed: u64) -> Arc<FourierBasis> {
    Arc::new(FourierBasis::build(kernel, count, &mut stream_rng(seed, 1)).unwrap())
}

/// Two Gaussian point clouds in the plane, offset by `shift`.
pub fn clouds(count: usize, shift: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = stream_rng(seed, 2);
    let p = gp_pathwise::rng::standard_normal_matrix(count, 2, &mut rng);
    let q = gp_pathwise::rng::standard_normal_matrix(count, 2, &mut rng).add_scalar(shift);
    (p, q)
}
