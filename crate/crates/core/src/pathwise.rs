//! Matheron-rule conditioning: pathwise updates of joint prior draws in
//! function space and weight space, and decoupled posterior paths that
//! combine an RFF prior with a kernel-basis update.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::features::FourierBasis;
use crate::kernel::{rows_of, Kernel};
use crate::linalg::{cholesky_jittered, psd_sqrt, symmetrize, GramCholesky};
use crate::models::{Dataset, GaussianMoments, InducingModel};
use crate::rng::standard_normal_matrix;

/// Condition a draw `(a, b)` from a joint Gaussian on `b = β`:
/// `a + Cov(a, b) Cov(b, b)⁻¹ (β − b)`. The first `split` coordinates of
/// `joint` are `a`.
pub fn matheron_condition(
    joint: &GaussianMoments,
    split: usize,
    observed: &DVector<f64>,
    a_draw: &DVector<f64>,
    b_draw: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = joint.dim();
    if split > p {
        return Err(Error::InvalidArgument(format!("split {split} exceeds joint dimension {p}")));
    }
    check_dim(split, a_draw.len())?;
    check_dim(p - split, b_draw.len())?;
    check_dim(p - split, observed.len())?;
    let cov_ab = joint.cov.view((0, split), (split, p - split));
    let cov_bb = joint.cov.view((split, split), (p - split, p - split)).into_owned();
    let chol = cholesky_jittered(&cov_bb)?;
    Ok(a_draw + cov_ab * chol.solve_vec(&(observed - b_draw)))
}

/// Joint prior over `(f(anchors), f(X*))`, factorized anchors-first so that
/// the test block is drawn from its conditional given the anchor block.
#[derive(Debug, Clone)]
struct JointPrior {
    anchors: GramCholesky,
    /// `L⁻¹ K(anchors, X*)`.
    proj: DMatrix<f64>,
    /// Symmetric square root of the conditional test-block covariance.
    residual: DMatrix<f64>,
}

impl JointPrior {
    fn new(kernel: &Kernel, anchors: &DMatrix<f64>, points: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_jittered(&kernel.gram(anchors, anchors)?)?;
        let proj = chol.solve_lower(&kernel.gram(anchors, points)?);
        let residual = kernel.gram(points, points)? - proj.transpose() * &proj;
        // Often numerically singular (test points near anchors), so use the
        // clamped eigen square root instead of a jittered Cholesky.
        let residual = psd_sqrt(&symmetrize(&residual));
        Ok(JointPrior {
            anchors: chol,
            proj,
            residual,
        })
    }

    /// Returns `(f(anchors), f(X*))` as `count` columns each.
    fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.anchors.dim();
        let s = self.proj.ncols();
        let zeta_m = standard_normal_matrix(m, count, rng);
        let zeta_s = standard_normal_matrix(s, count, rng);
        let f_m = self.anchors.factor() * &zeta_m;
        let f_s = self.proj.transpose() * zeta_m + &self.residual * zeta_s;
        (f_m, f_s)
    }
}

fn gaussian_columns<R: Rng + ?Sized>(
    moments: &GaussianMoments,
    chol: &Option<GramCholesky>,
    count: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let zeta = standard_normal_matrix(moments.dim(), count, rng);
    let mut out = match chol {
        Some(c) => c.factor() * zeta,
        None => DMatrix::zeros(moments.dim(), count),
    };
    for mut col in out.column_iter_mut() {
        col += &moments.mean;
    }
    out
}

fn optional_cholesky(cov: &DMatrix<f64>) -> Result<Option<GramCholesky>> {
    if cov.iter().all(|v| *v == 0.0) {
        Ok(None)
    } else {
        cholesky_jittered(cov).map(Some)
    }
}

/// Sparse-posterior samples at fixed test points:
/// `f* + K*m K_mm⁻¹ (u − f_m)` with `(f*, f_m)` a joint prior draw and
/// `u ∼ q(u)`.
#[derive(Debug, Clone)]
pub struct SparsePathwiseSampler {
    prior: JointPrior,
    q: GaussianMoments,
    q_chol: Option<GramCholesky>,
}

impl SparsePathwiseSampler {
    pub fn new(model: &InducingModel, points: &DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("no test points".into()));
        }
        let prior = JointPrior::new(&model.kernel, &model.z, points)?;
        Ok(SparsePathwiseSampler {
            prior,
            q_chol: optional_cholesky(&model.cov_u)?,
            q: model.moments_u(),
        })
    }

    /// `count × |X*|` matrix of samples (one per row).
    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let (f_m, f_s) = self.prior.draw(count, rng);
        let u = gaussian_columns(&self.q, &self.q_chol, count, rng);
        let update = self.prior.proj.transpose() * self.prior.anchors.solve_lower(&(u - f_m));
        (f_s + update).transpose()
    }
}

pub fn pathwise_sample_sparse<R: Rng + ?Sized>(
    model: &InducingModel,
    points: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(SparsePathwiseSampler::new(model, points)?.draw(count, rng))
}

/// Exact-posterior samples at fixed test points:
/// `f* + K*n (K_nn + σ²I)⁻¹ (y − f − ε)` with a fresh `ε ∼ N(0, σ²I)` per draw.
#[derive(Debug, Clone)]
pub struct ExactPathwiseSampler {
    prior: JointPrior,
    /// `(K_nn + σ²I)⁻¹ K_n*`, transposed.
    gain: DMatrix<f64>,
    y: DVector<f64>,
    noise_sd: f64,
}

impl ExactPathwiseSampler {
    pub fn new(kernel: &Kernel, data: &Dataset, points: &DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("no test points".into()));
        }
        let n = data.len();
        let prior = JointPrior::new(kernel, &data.x, points)?;
        let mut system = kernel.gram(&data.x, &data.x)?;
        for i in 0..n {
            system[(i, i)] += data.noise_variance;
        }
        let gain = cholesky_jittered(&system)?
            .solve(&kernel.gram(&data.x, points)?)
            .transpose();
        Ok(ExactPathwiseSampler {
            prior,
            gain,
            y: data.y.clone(),
            noise_sd: data.noise_variance.sqrt(),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let (f_n, f_s) = self.prior.draw(count, rng);
        let eps = standard_normal_matrix(self.y.len(), count, rng) * self.noise_sd;
        let mut residual = -(f_n + eps);
        for mut col in residual.column_iter_mut() {
            col += &self.y;
        }
        (f_s + &self.gain * residual).transpose()
    }
}

pub fn pathwise_sample_exact<R: Rng + ?Sized>(
    kernel: &Kernel,
    data: &Dataset,
    points: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(ExactPathwiseSampler::new(kernel, data, points)?.draw(count, rng))
}

/// Weight-space pathwise update `w + Φᵀ(ΦΦᵀ + σ²I)⁻¹(y − Φw − ε)`.
///
/// When ℓ < n the equivalent `(ΦᵀΦ + σ²I)⁻¹Φᵀ` form is used so the solve is
/// on the smaller system.
#[derive(Debug, Clone)]
pub struct WeightPathwiseSampler {
    /// Maps residuals `y − Φw − ε` (n) to weight corrections (ℓ).
    gain: DMatrix<f64>,
    phi: DMatrix<f64>,
    y: DVector<f64>,
    noise_sd: f64,
}

impl WeightPathwiseSampler {
    pub fn new(basis: &FourierBasis, data: &Dataset) -> Result<Self> {
        let noise = data.noise_variance;
        if !(noise > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight-space update needs positive noise, got {noise}"
            )));
        }
        let ell = basis.len();
        let n = data.len();
        let phi = basis.features(&data.x)?;
        let gain = if n == 0 {
            DMatrix::zeros(ell, 0)
        } else if ell < n {
            let mut system = phi.transpose() * &phi;
            for i in 0..ell {
                system[(i, i)] += noise;
            }
            cholesky_jittered(&system)?.solve(&phi.transpose())
        } else {
            let mut system = &phi * phi.transpose();
            for i in 0..n {
                system[(i, i)] += noise;
            }
            cholesky_jittered(&system)?.solve(&phi).transpose()
        };
        Ok(WeightPathwiseSampler {
            gain,
            phi,
            y: data.y.clone(),
            noise_sd: noise.sqrt(),
        })
    }

    /// Apply the update to given prior weights and noise.
    pub fn update(&self, weights: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.gain.nrows(), weights.len())?;
        check_dim(self.y.len(), noise.len())?;
        Ok(weights + &self.gain * (&self.y - &self.phi * weights - noise))
    }

    /// `count` posterior weight draws as columns of an `ℓ × count` matrix.
    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let w = standard_normal_matrix(self.gain.nrows(), count, rng);
        let eps = standard_normal_matrix(self.y.len(), count, rng) * self.noise_sd;
        let mut residual = -(&self.phi * &w + eps);
        for mut col in residual.column_iter_mut() {
            col += &self.y;
        }
        w + &self.gain * residual
    }
}

pub fn pathwise_sample_weights<R: Rng + ?Sized>(
    basis: &FourierBasis,
    data: &Dataset,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(WeightPathwiseSampler::new(basis, data)?.draw(count, rng))
}

/// A posterior sample path `x ↦ φ(x)ᵀw + Σⱼ vⱼ k(x, zⱼ)`.
///
/// With no anchors it is a plain weight-space function.
#[derive(Debug, Clone)]
pub struct DecoupledPath {
    basis: Arc<FourierBasis>,
    weights: DVector<f64>,
    anchors: DMatrix<f64>,
    anchor_rows: Vec<f64>,
    coefficients: DVector<f64>,
    kernel: Kernel,
}

impl DecoupledPath {
    pub fn new(
        kernel: Kernel,
        basis: Arc<FourierBasis>,
        weights: DVector<f64>,
        anchors: DMatrix<f64>,
        coefficients: DVector<f64>,
    ) -> Result<Self> {
        check_dim(basis.len(), weights.len())?;
        check_dim(kernel.dim(), basis.dim())?;
        check_dim(anchors.nrows(), coefficients.len())?;
        if anchors.nrows() > 0 {
            check_dim(kernel.dim(), anchors.ncols())?;
        }
        Ok(DecoupledPath {
            anchor_rows: rows_of(&anchors),
            basis,
            weights,
            anchors,
            coefficients,
            kernel,
        })
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Value at each row of `points`.
    pub fn eval(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        if points.nrows() > 0 {
            check_dim(self.dim(), points.ncols())?;
        }
        let mut x = vec![0.0; self.dim()];
        Ok(DVector::from_fn(points.nrows(), |i, _| {
            for (k, v) in x.iter_mut().enumerate() {
                *v = points[(i, k)];
            }
            self.eval_point_unchecked(&x)
        }))
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.eval_point_unchecked(x))
    }

    pub(crate) fn eval_point_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut value = self.basis.dot_features(x, &self.weights);
        for (j, v) in self.coefficients.iter().enumerate() {
            value += v * self.kernel.eval_unchecked(x, &self.anchor_rows[j * d..(j + 1) * d]);
        }
        value
    }

    /// Value at `x`, writing the gradient into `grad`.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), grad.len())?;
        Ok(self.value_and_gradient_unchecked(x, grad))
    }

    pub(crate) fn value_and_gradient_unchecked(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        grad.iter_mut().for_each(|o| *o = 0.0);
        let mut value = self.basis.dot_and_add_gradient(x, &self.weights, grad);
        let mut g = [0.0; 8];
        let mut g_heap;
        let g: &mut [f64] = if d <= 8 {
            &mut g[..d]
        } else {
            g_heap = vec![0.0; d];
            &mut g_heap
        };
        for (j, v) in self.coefficients.iter().enumerate() {
            let z = &self.anchor_rows[j * d..(j + 1) * d];
            value += v * self.kernel.eval_unchecked(x, z);
            self.kernel.gradient_into(x, z, g);
            for k in 0..d {
                grad[k] += v * g[k];
            }
        }
        value
    }

    /// `∇ₓ` of the path at `x`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        self.basis.add_weighted_gradient(x, &self.weights, out);
        let mut g = vec![0.0; d];
        for (j, v) in self.coefficients.iter().enumerate() {
            self.kernel.gradient_into(x, &self.anchor_rows[j * d..(j + 1) * d], &mut g);
            for k in 0..d {
                out[k] += v * g[k];
            }
        }
    }
}

/// Draws decoupled paths for a sparse posterior with a fixed basis:
/// `w ∼ N(0, I)`, `u ∼ q(u)`, `v = K_mm⁻¹ (u − Φ(Z) w)`.
#[derive(Debug, Clone)]
pub struct SparseDecoupledSampler {
    model: InducingModel,
    basis: Arc<FourierBasis>,
    kmm: GramCholesky,
    phi_z: DMatrix<f64>,
    q_chol: Option<GramCholesky>,
}

impl SparseDecoupledSampler {
    pub fn new(model: &InducingModel, basis: Arc<FourierBasis>) -> Result<Self> {
        check_basis(&model.kernel, &basis)?;
        let kmm = cholesky_jittered(&model.kernel.gram(&model.z, &model.z)?)?;
        let phi_z = basis.features(&model.z)?;
        Ok(SparseDecoupledSampler {
            q_chol: optional_cholesky(&model.cov_u)?,
            model: model.clone(),
            basis,
            kmm,
            phi_z,
        })
    }

    /// Path for given prior weights and inducing values.
    pub fn path_from(&self, weights: DVector<f64>, inducing: &DVector<f64>) -> Result<DecoupledPath> {
        check_dim(self.basis.len(), weights.len())?;
        check_dim(self.model.len(), inducing.len())?;
        let v = self.kmm.solve_vec(&(inducing - &self.phi_z * &weights));
        DecoupledPath::new(
            self.model.kernel.clone(),
            self.basis.clone(),
            weights,
            self.model.z.clone(),
            v,
        )
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DecoupledPath> {
        let w = standard_normal_matrix(self.basis.len(), 1, rng).column(0).into_owned();
        let u = gaussian_columns(&self.model.moments_u(), &self.q_chol, 1, rng)
            .column(0)
            .into_owned();
        self.path_from(w, &u)
    }

    /// Values of `count` fresh paths at `points`, as a `count × |X*|` matrix.
    pub fn draw_values<R: Rng + ?Sized>(&self, points: &DMatrix<f64>, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let phi_s = self.basis.features(points)?;
        // K*m K_mm⁻¹ once, so each draw costs only matrix products.
        let gain = self.kmm.solve(&self.model.kernel.gram(&self.model.z, points)?).transpose();
        let w = standard_normal_matrix(self.basis.len(), count, rng);
        let u = gaussian_columns(&self.model.moments_u(), &self.q_chol, count, rng);
        Ok((phi_s * &w + gain * (u - &self.phi_z * w)).transpose())
    }
}

pub fn decoupled_sample_sparse<R: Rng + ?Sized>(
    model: &InducingModel,
    basis: Arc<FourierBasis>,
    rng: &mut R,
) -> Result<DecoupledPath> {
    SparseDecoupledSampler::new(model, basis)?.draw(rng)
}

/// Draws decoupled paths for an exact posterior with a fixed basis:
/// `v = (K_nn + σ²I)⁻¹ (y − Φ(X) w − ε)`.
#[derive(Debug, Clone)]
pub struct ExactDecoupledSampler {
    kernel: Kernel,
    data: Dataset,
    basis: Arc<FourierBasis>,
    system: GramCholesky,
    phi_x: DMatrix<f64>,
}

impl ExactDecoupledSampler {
    pub fn new(kernel: &Kernel, data: &Dataset, basis: Arc<FourierBasis>) -> Result<Self> {
        check_basis(kernel, &basis)?;
        let mut system = kernel.gram(&data.x, &data.x)?;
        for i in 0..data.len() {
            system[(i, i)] += data.noise_variance;
        }
        let phi_x = if data.is_empty() {
            DMatrix::zeros(0, basis.len())
        } else {
            basis.features(&data.x)?
        };
        Ok(ExactDecoupledSampler {
            kernel: kernel.clone(),
            data: data.clone(),
            basis,
            system: cholesky_jittered(&system)?,
            phi_x,
        })
    }

    pub fn path_from(&self, weights: DVector<f64>, noise: &DVector<f64>) -> Result<DecoupledPath> {
        check_dim(self.basis.len(), weights.len())?;
        check_dim(self.data.len(), noise.len())?;
        let v = self
            .system
            .solve_vec(&(&self.data.y - &self.phi_x * &weights - noise));
        DecoupledPath::new(
            self.kernel.clone(),
            self.basis.clone(),
            weights,
            self.data.x.clone(),
            v,
        )
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DecoupledPath> {
        let w = standard_normal_matrix(self.basis.len(), 1, rng).column(0).into_owned();
        let eps = standard_normal_matrix(self.data.len(), 1, rng).column(0) * self.data.noise_variance.sqrt();
        self.path_from(w, &eps)
    }

    pub fn draw_values<R: Rng + ?Sized>(&self, points: &DMatrix<f64>, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let phi_s = self.basis.features(points)?;
        let gain = self.system.solve(&self.kernel.gram(&self.data.x, points)?).transpose();
        let w = standard_normal_matrix(self.basis.len(), count, rng);
        let eps = standard_normal_matrix(self.data.len(), count, rng) * self.data.noise_variance.sqrt();
        let mut residual = -(&self.phi_x * &w + eps);
        for mut col in residual.column_iter_mut() {
            col += &self.data.y;
        }
        Ok((phi_s * w + gain * residual).transpose())
    }
}

pub fn decoupled_sample_exact<R: Rng + ?Sized>(
    kernel: &Kernel,
    data: &Dataset,
    basis: Arc<FourierBasis>,
    rng: &mut R,
) -> Result<DecoupledPath> {
    ExactDecoupledSampler::new(kernel, data, basis)?.draw(rng)
}

fn check_basis(kernel: &Kernel, basis: &FourierBasis) -> Result<()> {
    check_dim(kernel.dim(), basis.dim())?;
    let (a, b) = (kernel.amplitude(), basis.amplitude());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::InvalidArgument(format!(
            "basis amplitude {b} does not match kernel amplitude {a}"
        )));
    }
    Ok(())
}

/// Moments at `points` of the weight-space sampler's function values
/// `φ(X*)ᵀ w` with `w` from the weight posterior.
pub fn weight_space_moments(basis: &FourierBasis, weights: &GaussianMoments, points: &DMatrix<f64>) -> Result<GaussianMoments> {
    let phi = basis.features(points)?;
    check_dim(basis.len(), weights.dim())?;
    Ok(GaussianMoments {
        mean: &phi * &weights.mean,
        cov: symmetrize(&(&phi * &weights.cov * phi.transpose())),
    })
}

/// Exact moments of sparse decoupled paths at `points`, conditional on the
/// basis: mean `B μ_u` and covariance `(Φ* − BΦ_Z)(Φ* − BΦ_Z)ᵀ + B Σ_u Bᵀ`
/// with `B = K*m K_mm⁻¹`.
pub fn decoupled_sparse_moments(model: &InducingModel, basis: &FourierBasis, points: &DMatrix<f64>) -> Result<GaussianMoments> {
    let kmm = cholesky_jittered(&model.kernel.gram(&model.z, &model.z)?)?;
    let b = kmm.solve(&model.kernel.gram(&model.z, points)?).transpose();
    let resid = basis.features(points)? - &b * basis.features(&model.z)?;
    let cov = &resid * resid.transpose() + &b * &model.cov_u * b.transpose();
    Ok(GaussianMoments {
        mean: &b * &model.mean_u,
        cov: symmetrize(&cov),
    })
}

/// Exact moments of exact decoupled paths at `points`, conditional on the
/// basis, with `B = K*n (K_nn + σ²I)⁻¹`: mean `B y`, covariance
/// `(Φ* − BΦ_X)(Φ* − BΦ_X)ᵀ + σ² B Bᵀ`.
pub fn decoupled_exact_moments(kernel: &Kernel, data: &Dataset, basis: &FourierBasis, points: &DMatrix<f64>) -> Result<GaussianMoments> {
    let mut system = kernel.gram(&data.x, &data.x)?;
    for i in 0..data.len() {
        system[(i, i)] += data.noise_variance;
    }
    let b = cholesky_jittered(&system)?
        .solve(&kernel.gram(&data.x, points)?)
        .transpose();
    let phi_x = if data.is_empty() {
        DMatrix::zeros(0, basis.len())
    } else {
        basis.features(&data.x)?
    };
    let resid = basis.features(points)? - &b * phi_x;
    let cov = &resid * resid.transpose() + &b * b.transpose() * data.noise_variance;
    Ok(GaussianMoments {
        mean: &b * &data.y,
        cov: symmetrize(&cov),
    })
}
