//! Closed-form posterior moments for exact, sparse and weight-space GPs, the
//! optimal inducing distribution, and location-scale sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::features::FourierBasis;
use crate::kernel::Kernel;
use crate::linalg::{cholesky_jittered, symmetrize, GramCholesky};
use crate::rng::standard_normal_matrix;

/// Training inputs, observations and the Gaussian noise variance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise_variance: f64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, noise_variance: f64) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        if !(noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        Ok(Dataset { x, y, noise_variance })
    }

    pub fn empty(dim: usize, noise_variance: f64) -> Self {
        Dataset {
            x: DMatrix::zeros(0, dim),
            y: DVector::zeros(0),
            noise_variance,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Append one observation.
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let n = self.len();
        let mut grown = self.x.clone().resize_vertically(n + 1, 0.0);
        for (j, v) in x.iter().enumerate() {
            grown[(n, j)] = *v;
        }
        self.x = grown;
        self.y = self.y.clone().push(y);
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            noise_variance: self.noise_variance,
        }
    }
}

/// Mean vector and covariance matrix of a finite-dimensional Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        Ok(GaussianMoments { mean, cov })
    }

    /// Prior moments `N(0, k(X, X))`.
    pub fn prior(kernel: &Kernel, points: &DMatrix<f64>) -> Result<Self> {
        let cov = kernel.gram(points, points)?;
        Ok(GaussianMoments {
            mean: DVector::zeros(points.nrows()),
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Gaussian inducing distribution `q(u) = N(μ_u, Σ_u)` at locations `Z`.
#[derive(Debug, Clone)]
pub struct InducingModel {
    pub z: DMatrix<f64>,
    pub mean_u: DVector<f64>,
    pub cov_u: DMatrix<f64>,
    pub kernel: Kernel,
}

impl InducingModel {
    pub fn new(kernel: Kernel, z: DMatrix<f64>, mean_u: DVector<f64>, cov_u: DMatrix<f64>) -> Result<Self> {
        check_dim(z.nrows(), mean_u.len())?;
        check_dim(z.nrows(), cov_u.nrows())?;
        check_dim(z.nrows(), cov_u.ncols())?;
        if z.nrows() > 0 {
            check_dim(kernel.dim(), z.ncols())?;
        }
        Ok(InducingModel { z, mean_u, cov_u, kernel })
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn moments_u(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean_u.clone(),
            cov: self.cov_u.clone(),
        }
    }
}

/// Exact GP posterior with a cached factorization of `K_nn + σ²I`.
#[derive(Debug, Clone)]
pub struct ExactGp {
    kernel: Kernel,
    data: Dataset,
    chol: GramCholesky,
    alpha: DVector<f64>,
}

impl ExactGp {
    pub fn fit(kernel: &Kernel, data: &Dataset) -> Result<Self> {
        if !data.is_empty() {
            check_dim(kernel.dim(), data.dim())?;
        }
        let n = data.len();
        let mut system = kernel.gram(&data.x, &data.x)?;
        for i in 0..n {
            system[(i, i)] += data.noise_variance;
        }
        let chol = cholesky_jittered(&system)?;
        let alpha = chol.solve_vec(&data.y);
        Ok(ExactGp {
            kernel: kernel.clone(),
            data: data.clone(),
            chol,
            alpha,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Factorization of `K_nn + σ²I` (plus any jitter).
    pub fn cholesky(&self) -> &GramCholesky {
        &self.chol
    }

    pub fn mean(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.kernel.gram(points, &self.data.x)? * &self.alpha)
    }

    pub fn moments(&self, points: &DMatrix<f64>) -> Result<GaussianMoments> {
        let cross = self.kernel.gram(&self.data.x, points)?;
        let mean = cross.transpose() * &self.alpha;
        let v = self.chol.solve_lower(&cross);
        let cov = self.kernel.gram(points, points)? - v.transpose() * &v;
        Ok(GaussianMoments {
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// Posterior means and variances without forming the full covariance.
    pub fn marginals(&self, points: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let cross = self.kernel.gram(&self.data.x, points)?;
        let mean = cross.transpose() * &self.alpha;
        let v = self.chol.solve_lower(&cross);
        let prior = self.kernel.amplitude();
        let var = DVector::from_iterator(
            points.nrows(),
            v.column_iter().map(|c| (prior - c.norm_squared()).max(0.0)),
        );
        Ok((mean, var))
    }

    /// Log marginal likelihood `log N(y; 0, K + σ²I)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len() as f64;
        let log_det: f64 = self.chol.factor().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.data.y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Sparse GP predictive built from an [`InducingModel`].
#[derive(Debug, Clone)]
pub struct SparseGp {
    model: InducingModel,
    chol: GramCholesky,
    beta: DVector<f64>,
}

impl SparseGp {
    pub fn new(model: InducingModel) -> Result<Self> {
        let kmm = model.kernel.gram(&model.z, &model.z)?;
        let chol = cholesky_jittered(&kmm)?;
        let beta = chol.solve_vec(&model.mean_u);
        Ok(SparseGp { model, chol, beta })
    }

    pub fn model(&self) -> &InducingModel {
        &self.model
    }

    /// Factorization of `K_mm`.
    pub fn cholesky(&self) -> &GramCholesky {
        &self.chol
    }

    pub fn mean(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.model.kernel.gram(points, &self.model.z)? * &self.beta)
    }

    pub fn moments(&self, points: &DMatrix<f64>) -> Result<GaussianMoments> {
        let k = &self.model.kernel;
        let cross = k.gram(&self.model.z, points)?;
        let mean = cross.transpose() * &self.beta;
        let p = self.chol.solve_lower(&cross);
        let b = self.chol.solve_upper(&p);
        let spread = &self.model.cov_u * &b;
        let cov = k.gram(points, points)? - p.transpose() * &p + b.transpose() * spread;
        Ok(GaussianMoments {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn marginals(&self, points: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let k = &self.model.kernel;
        let cross = k.gram(&self.model.z, points)?;
        let mean = cross.transpose() * &self.beta;
        let p = self.chol.solve_lower(&cross);
        let b = self.chol.solve_upper(&p);
        let spread = &self.model.cov_u * &b;
        let prior = k.amplitude();
        let var = DVector::from_fn(points.nrows(), |i, _| {
            (prior - p.column(i).norm_squared() + b.column(i).dot(&spread.column(i))).max(0.0)
        });
        Ok((mean, var))
    }
}

/// Exact posterior moments at `points` given `data`.
pub fn exact_posterior(kernel: &Kernel, data: &Dataset, points: &DMatrix<f64>) -> Result<GaussianMoments> {
    ExactGp::fit(kernel, data)?.moments(points)
}

/// Sparse posterior moments `K*m K⁻¹ μ_u` and
/// `K** + K*m K⁻¹ (Σ_u − K_mm) K⁻¹ K_m*`.
pub fn sparse_posterior(model: &InducingModel, points: &DMatrix<f64>) -> Result<GaussianMoments> {
    SparseGp::new(model.clone())?.moments(points)
}

/// Variationally optimal Gaussian `q(u)` for fixed inducing locations `z`:
/// `μ_u = σ⁻² K_mm A⁻¹ K_mn y`, `Σ_u = K_mm A⁻¹ K_mm` with
/// `A = K_mm + σ⁻² K_mn K_nm`.
pub fn optimal_inducing(kernel: &Kernel, data: &Dataset, z: &DMatrix<f64>) -> Result<InducingModel> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("optimal inducing distribution needs data".into()));
    }
    let noise = data.noise_variance;
    if !(noise > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "optimal inducing distribution needs positive noise, got {noise}"
        )));
    }
    let m = z.nrows();
    let kmm = kernel.gram(z, z)?;
    let kmn = kernel.gram(z, &data.x)?;
    // Whitened form: with K_mm = L Lᵀ and P = L⁻¹ K_mn,
    // μ_u = L B⁻¹ P y and Σ_u = σ² L B⁻¹ Lᵀ where B = σ² I + P Pᵀ.
    let l = cholesky_jittered(&kmm)?;
    let p = l.solve_lower(&kmn);
    let mut b = &p * p.transpose();
    for i in 0..m {
        b[(i, i)] += noise;
    }
    let lb = cholesky_jittered(&b)?;
    let py = &p * &data.y;
    let mean_u = l.factor() * lb.solve_vec(&py);
    let half = lb.solve_lower(&l.factor().transpose());
    let cov_u = symmetrize(&(half.transpose() * &half * noise));
    InducingModel::new(kernel.clone(), z.clone(), mean_u, cov_u)
}

/// Which linear system `weight_posterior` solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSolve {
    /// Pick the smaller of the ℓ × ℓ and n × n systems.
    Auto,
    /// `(ΦᵀΦ + σ²I)`, ℓ × ℓ.
    Primal,
    /// `(ΦΦᵀ + σ²I)` via Woodbury, n × n.
    Dual,
}

/// Posterior over RFF weights: `μ = (ΦᵀΦ + σ²I)⁻¹Φᵀy`, `Σ = (ΦᵀΦ + σ²I)⁻¹σ²`.
pub fn weight_posterior(basis: &FourierBasis, data: &Dataset) -> Result<GaussianMoments> {
    weight_posterior_with(basis, data, WeightSolve::Auto)
}

pub fn weight_posterior_with(basis: &FourierBasis, data: &Dataset, solve: WeightSolve) -> Result<GaussianMoments> {
    let noise = data.noise_variance;
    if !(noise > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weight posterior needs positive noise, got {noise}"
        )));
    }
    let ell = basis.len();
    let n = data.len();
    let phi = basis.features(&data.x)?;
    let primal = match solve {
        WeightSolve::Auto => ell <= n,
        WeightSolve::Primal => true,
        WeightSolve::Dual => false,
    };
    if primal {
        let mut system = phi.transpose() * &phi;
        for i in 0..ell {
            system[(i, i)] += noise;
        }
        let chol = cholesky_jittered(&system)?;
        let mean = chol.solve_vec(&(phi.transpose() * &data.y));
        let inv_half = chol.solve_lower(&DMatrix::identity(ell, ell));
        let cov = inv_half.transpose() * inv_half * noise;
        Ok(GaussianMoments {
            mean,
            cov: symmetrize(&cov),
        })
    } else {
        let mut system = &phi * phi.transpose();
        for i in 0..n {
            system[(i, i)] += noise;
        }
        let chol = cholesky_jittered(&system)?;
        let mean = phi.transpose() * chol.solve_vec(&data.y);
        let v = chol.solve_lower(&phi);
        let cov = DMatrix::identity(ell, ell) - v.transpose() * v;
        Ok(GaussianMoments {
            mean,
            cov: symmetrize(&cov),
        })
    }
}

/// Draw `count` samples `m + L ζ` (returned as rows of a `count × p` matrix).
/// A covariance that is identically zero yields copies of the mean.
pub fn location_scale_sample<R: Rng + ?Sized>(
    moments: &GaussianMoments,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = moments.dim();
    let zeta = standard_normal_matrix(p, count, rng);
    location_scale_transform(moments, &zeta)
}

/// Apply the location-scale map to given standard-normal columns `ζ` (p × s).
pub fn location_scale_transform(moments: &GaussianMoments, zeta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = moments.dim();
    check_dim(p, zeta.nrows())?;
    let mut out = if moments.cov.iter().all(|v| *v == 0.0) {
        DMatrix::zeros(p, zeta.ncols())
    } else {
        let chol = cholesky_jittered(&moments.cov)?;
        chol.factor() * zeta
    };
    for mut col in out.column_iter_mut() {
        col += &moments.mean;
    }
    Ok(out.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::empirical_moments;
    use crate::rng::{stream_rng, uniform_matrix};
    use rand_distr::StandardNormal;

    fn kernel1() -> Kernel {
        Kernel::isotropic(1.0, 0.1, 1).unwrap()
    }

    fn random_data(n: usize, d: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 0);
        let x = uniform_matrix(n, d, &mut rng);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        Dataset::new(x, y, noise).unwrap()
    }

    /// Posterior moments through an explicit inverse.
    fn direct_exact(k: &Kernel, data: &Dataset, xs: &DMatrix<f64>) -> GaussianMoments {
        let n = data.len();
        let a = k.gram(&data.x, &data.x).unwrap() + DMatrix::identity(n, n) * data.noise_variance;
        let inv = a.try_inverse().unwrap();
        let ksn = k.gram(xs, &data.x).unwrap();
        GaussianMoments {
            mean: &ksn * &inv * &data.y,
            cov: k.gram(xs, xs).unwrap() - &ksn * &inv * ksn.transpose(),
        }
    }

    #[test]
    fn exact_with_no_data_is_prior() {
        let k = kernel1();
        let xs = uniform_matrix(5, 1, &mut stream_rng(1, 0));
        let g = exact_posterior(&k, &Dataset::empty(1, 1e-3), &xs).unwrap();
        assert_eq!(g.mean, DVector::zeros(5));
        assert!((g.cov - k.gram(&xs, &xs).unwrap()).amax() < 1e-15);
    }

    #[test]
    fn exact_noiseless_interpolates() {
        let k = Kernel::isotropic(1.0, 0.2, 1).unwrap();
        let data = random_data(6, 1, 0.0, 2);
        let g = exact_posterior(&k, &data, &data.x).unwrap();
        assert!((&g.mean - &data.y).amax() < 1e-6);
        assert!(g.cov.diagonal().amax() < 1e-6);
    }

    #[test]
    fn exact_matches_direct_inverse() {
        let k = kernel1();
        let data = random_data(4, 1, 1e-3, 3);
        let xs = uniform_matrix(7, 1, &mut stream_rng(3, 1));
        let g = exact_posterior(&k, &data, &xs).unwrap();
        let oracle = direct_exact(&k, &data, &xs);
        assert!((&g.mean - &oracle.mean).amax() < 1e-8);
        assert!((&g.cov - &oracle.cov).amax() < 1e-8);
    }

    #[test]
    fn posterior_variance_contracts() {
        let k = Kernel::isotropic(1.0, 0.2, 2).unwrap();
        let data = random_data(20, 2, 1e-3, 4);
        let xs = uniform_matrix(50, 2, &mut stream_rng(4, 1));
        let (_, var) = ExactGp::fit(&k, &data).unwrap().marginals(&xs).unwrap();
        assert!(var.iter().all(|v| *v <= 1.0 + 1e-8));
    }

    #[test]
    fn duplicate_observation_reduces_variance() {
        let k = Kernel::isotropic(1.0, 0.2, 1).unwrap();
        let mut data = random_data(5, 1, 1e-2, 5);
        let x0 = [data.x[(0, 0)]];
        let probe = DMatrix::from_row_slice(1, 1, &x0);
        let before = exact_posterior(&k, &data, &probe).unwrap().cov[(0, 0)];
        data.push(&x0, data.y[0]).unwrap();
        let after = exact_posterior(&k, &data, &probe).unwrap().cov[(0, 0)];
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn sparse_uninformative_q_is_prior() {
        let k = kernel1();
        let z = uniform_matrix(6, 1, &mut stream_rng(6, 0));
        let kmm = k.gram(&z, &z).unwrap();
        let q = InducingModel::new(k.clone(), z, DVector::zeros(6), kmm).unwrap();
        let xs = uniform_matrix(9, 1, &mut stream_rng(6, 1));
        let g = sparse_posterior(&q, &xs).unwrap();
        assert!(g.mean.amax() < 1e-12);
        assert!((g.cov - k.gram(&xs, &xs).unwrap()).amax() < 1e-8);
    }

    #[test]
    fn sparse_deterministic_inducing_values() {
        let k = kernel1();
        let z = DMatrix::from_row_slice(4, 1, &[0.1, 0.35, 0.6, 0.9]);
        let mu = DVector::from_row_slice(&[0.5, -1.0, 0.2, 1.3]);
        let q = InducingModel::new(k, z.clone(), mu.clone(), DMatrix::zeros(4, 4)).unwrap();
        let g = sparse_posterior(&q, &z).unwrap();
        assert!((&g.mean - &mu).amax() < 1e-8);
        assert!(g.cov.amax() < 1e-8);
    }

    #[test]
    fn sparse_matches_direct_inverse() {
        let k = kernel1();
        let mut rng = stream_rng(7, 0);
        let z = uniform_matrix(8, 1, &mut rng);
        let mu = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = crate::rng::standard_normal_matrix(8, 8, &mut rng);
        let sigma = &a * a.transpose() * 0.1;
        let q = InducingModel::new(k.clone(), z.clone(), mu.clone(), sigma.clone()).unwrap();
        let xs = uniform_matrix(10, 1, &mut rng);
        let g = sparse_posterior(&q, &xs).unwrap();
        let kinv = k.gram(&z, &z).unwrap().try_inverse().unwrap();
        let ksm = k.gram(&xs, &z).unwrap();
        let mean = &ksm * &kinv * &mu;
        let cov = k.gram(&xs, &xs).unwrap()
            + &ksm * &kinv * (&sigma - k.gram(&z, &z).unwrap()) * &kinv * ksm.transpose();
        assert!((&g.mean - mean).amax() < 1e-8);
        assert!((&g.cov - cov).amax() < 1e-8);
    }

    #[test]
    fn optimal_inducing_interpolation_limit() {
        let k = Kernel::isotropic(1.0, 0.1, 1).unwrap();
        let x = DMatrix::from_row_slice(6, 1, &[0.05, 0.2, 0.38, 0.55, 0.71, 0.93]);
        let y = DVector::from_row_slice(&[0.3, -0.8, 1.1, 0.0, -0.4, 0.9]);
        let data = Dataset::new(x.clone(), y.clone(), 1e-8).unwrap();
        let q = optimal_inducing(&k, &data, &x).unwrap();
        let g = sparse_posterior(&q, &x).unwrap();
        assert!((&g.mean - &y).amax() < 1e-3);
    }

    #[test]
    fn optimal_inducing_at_training_inputs_is_exact() {
        let k = kernel1();
        let data = random_data(10, 1, 1e-2, 8);
        let q = optimal_inducing(&k, &data, &data.x).unwrap();
        let xs = uniform_matrix(12, 1, &mut stream_rng(8, 1));
        let s = sparse_posterior(&q, &xs).unwrap();
        let e = exact_posterior(&k, &data, &xs).unwrap();
        assert!((&s.mean - &e.mean).amax() < 1e-6);
        assert!((&s.cov - &e.cov).amax() < 1e-6);
        assert!(cholesky_jittered(&q.cov_u).is_ok());
    }

    #[test]
    fn optimal_inducing_zero_data_gives_zero_mean() {
        let k = kernel1();
        let mut data = random_data(10, 1, 1e-2, 9);
        data.y.fill(0.0);
        let z = uniform_matrix(4, 1, &mut stream_rng(9, 1));
        let q = optimal_inducing(&k, &data, &z).unwrap();
        assert_eq!(q.mean_u, DVector::zeros(4));
        assert!(optimal_inducing(&k, &Dataset::empty(1, 1e-2), &z).is_err());
    }

    #[test]
    fn weight_posterior_special_cases() {
        let k = kernel1();
        let b = FourierBasis::build(&k, 12, &mut stream_rng(10, 0)).unwrap();
        let g = weight_posterior(&b, &Dataset::empty(1, 1e-3)).unwrap();
        assert_eq!(g.mean, DVector::zeros(12));
        assert!((g.cov - DMatrix::identity(12, 12)).amax() < 1e-15);

        let mut data = random_data(20, 1, 1e-2, 10);
        data.y.fill(0.0);
        let g = weight_posterior(&b, &data).unwrap();
        assert!(g.mean.amax() < 1e-15);
        let phi = b.features(&data.x).unwrap();
        let expected = (phi.transpose() * &phi + DMatrix::identity(12, 12) * 1e-2)
            .try_inverse()
            .unwrap()
            * 1e-2;
        assert!((g.cov - expected).amax() < 1e-8);
    }

    #[test]
    fn weight_posterior_branches_agree() {
        let k = kernel1();
        let b = FourierBasis::build(&k, 30, &mut stream_rng(11, 0)).unwrap();
        let data = random_data(20, 1, 1e-2, 11);
        let p = weight_posterior_with(&b, &data, WeightSolve::Primal).unwrap();
        let d = weight_posterior_with(&b, &data, WeightSolve::Dual).unwrap();
        assert!((&p.mean - &d.mean).amax() < 1e-8);
        assert!((&p.cov - &d.cov).amax() < 1e-8);
    }

    #[test]
    fn location_scale_zero_noise_gives_mean() {
        let g = GaussianMoments::new(
            DVector::from_row_slice(&[1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
        )
        .unwrap();
        let rows = location_scale_transform(&g, &DMatrix::zeros(2, 5)).unwrap();
        for r in rows.row_iter() {
            assert_eq!(r.transpose(), g.mean);
        }
    }

    #[test]
    fn location_scale_moments() {
        let g = GaussianMoments::new(
            DVector::from_row_slice(&[0.5, -1.0, 2.0]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.1, 0.4, 0.8, -0.2, 0.1, -0.2, 0.5]),
        )
        .unwrap();
        let a = location_scale_sample(&g, 100_000, &mut stream_rng(12, 0)).unwrap();
        let b = location_scale_sample(&g, 100_000, &mut stream_rng(12, 0)).unwrap();
        assert_eq!(a, b);
        let emp = empirical_moments(&a).unwrap();
        for i in 0..3 {
            let se = (g.cov[(i, i)] / 100_000.0).sqrt();
            assert!((emp.mean[i] - g.mean[i]).abs() < 4.0 * se);
        }
        assert!((emp.cov - &g.cov).amax() < 0.02 * g.cov.norm());
    }

    #[test]
    fn weight_mean_converges_to_exact_mean() {
        let k = Kernel::isotropic(1.0, 0.1, 1).unwrap();
        let data = random_data(64, 1, 1e-3, 13);
        let xs = uniform_matrix(32, 1, &mut stream_rng(13, 1));
        let exact = exact_posterior(&k, &data, &xs).unwrap().mean;
        let gap = |ell: usize, rep: u64| {
            let b = FourierBasis::build(&k, ell, &mut stream_rng(14 + ell as u64, rep)).unwrap();
            let w = weight_posterior(&b, &data).unwrap();
            (b.features(&xs).unwrap() * w.mean - &exact).amax()
        };
        let mut small: Vec<f64> = (0..20).map(|r| gap(1000, r)).collect();
        let mut large: Vec<f64> = (0..20).map(|r| gap(4000, r)).collect();
        small.sort_by(f64::total_cmp);
        large.sort_by(f64::total_cmp);
        let ratio = (large[9] + large[10]) / (small[9] + small[10]);
        assert!((0.3..=0.8).contains(&ratio), "ratio {ratio}");
    }
}
