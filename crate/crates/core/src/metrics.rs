//! Distribution distances and error-bound constants.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::features::FourierBasis;
use crate::kernel::Kernel;
use crate::linalg::{cholesky_jittered, psd_eigenvalues, psd_sqrt, symmetrize};
use crate::models::GaussianMoments;

/// 2-Wasserstein distance between two Gaussians (Bures formula).
pub fn w2_gaussian(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let mean_gap = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov);
    let middle = symmetrize(&(&root_a * &b.cov * &root_a));
    let cross: f64 = psd_eigenvalues(&middle).iter().map(|v| v.sqrt()).sum();
    let squared = mean_gap + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(squared.max(0.0).sqrt())
}

/// Unbiased mean and covariance of the rows of `samples`.
pub fn empirical_moments(samples: &DMatrix<f64>) -> Result<GaussianMoments> {
    let mut acc = MomentAccumulator::new(samples.ncols());
    acc.push_rows(samples)?;
    acc.moments()
}

/// Streaming mean/covariance over row batches, merged with the pairwise
/// update so that large sample counts do not lose precision.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push_rows(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        check_dim(self.mean.len(), rows.ncols())?;
        let k = rows.nrows();
        if k == 0 {
            return Ok(());
        }
        let batch_mean = rows.row_mean().transpose();
        let mut centered = rows.clone();
        for mut r in centered.row_iter_mut() {
            r -= batch_mean.transpose();
        }
        let batch_scatter = centered.transpose() * &centered;
        let n = self.count as f64;
        let kf = k as f64;
        let total = n + kf;
        let delta = &batch_mean - &self.mean;
        self.scatter += batch_scatter + &delta * delta.transpose() * (n * kf / total);
        self.mean += delta * (kf / total);
        self.count += k;
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        check_dim(self.mean.len(), other.mean.len())?;
        if other.count == 0 {
            return Ok(());
        }
        let n = self.count as f64;
        let k = other.count as f64;
        let total = n + k;
        let delta = &other.mean - &self.mean;
        self.scatter += &other.scatter + &delta * delta.transpose() * (n * k / total);
        self.mean += delta * (k / total);
        self.count += other.count;
        Ok(())
    }

    pub fn moments(&self) -> Result<GaussianMoments> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "empirical moments need at least two samples, got {}",
                self.count
            )));
        }
        Ok(GaussianMoments {
            mean: self.mean.clone(),
            cov: symmetrize(&(&self.scatter / (self.count as f64 - 1.0))),
        })
    }
}

/// W2 between the empirical moments of `samples` (rows) and `target`.
pub fn w2_empirical_vs_gaussian(samples: &DMatrix<f64>, target: &GaussianMoments) -> Result<f64> {
    w2_gaussian(&empirical_moments(samples)?, target)
}

/// W2 over functions on a grid, approximated by the marginal W2 on the grid
/// scaled by the square root of the grid-cell volume.
pub fn grid_function_w2(a: &GaussianMoments, b: &GaussianMoments, cell_volume: f64) -> Result<f64> {
    Ok(w2_gaussian(a, b)? * cell_volume.sqrt())
}

/// Entropic optimal-transport settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportPlanConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for TransportPlanConfig {
    fn default() -> Self {
        TransportPlanConfig {
            epsilon: 1e-3,
            max_iters: 5000,
            tolerance: 1e-4,
        }
    }
}

impl TransportPlanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_iters == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid transport settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornResult {
    /// Square root of the transport cost of the entropic plan.
    pub distance: f64,
    /// L1 violation of the row marginal when iteration stopped.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

const CHECK_EVERY: usize = 10;
const PAR_THRESHOLD: usize = 1 << 14;

/// Entropic 2-Wasserstein estimate between uniform empirical measures on the
/// rows of `p` and `q`, computed with log-domain Sinkhorn iterations.
///
/// Iterations start at a large regularization and halve it down to
/// `cfg.epsilon`, warm-starting the dual potentials each time.
pub fn sinkhorn_distance(p: &DMatrix<f64>, q: &DMatrix<f64>, cfg: &TransportPlanConfig) -> Result<SinkhornResult> {
    cfg.validate()?;
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::InvalidArgument("transport needs nonempty point clouds".into()));
    }
    check_dim(p.ncols(), q.ncols())?;
    let n = p.nrows();
    let m = q.nrows();
    let cost = squared_distances(p, q);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let parallel = n * m >= PAR_THRESHOLD;

    let max_cost = cost.max();
    let mut eps = if max_cost > cfg.epsilon { max_cost } else { cfg.epsilon };
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    loop {
        let last = eps <= cfg.epsilon;
        let budget = if last { cfg.max_iters.saturating_sub(iterations).max(1) } else { 20 };
        // Stabilized scaling: the potentials are absorbed into the kernel
        // `K = exp((f ⊕ g − C)/ε)` and plain multiplicative updates run on
        // top of it until the scalings grow large, then are absorbed again.
        let mut kernel = absorbed_kernel(&f, &g, &cost, eps, parallel);
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; m];
        let mut done = 0;
        while done < budget {
            let kv = mat_vec(&kernel, &v);
            for (ui, s) in u.iter_mut().zip(&kv) {
                *ui = 1.0 / (n as f64 * s);
            }
            let ktu = mat_t_vec(&kernel, &u, parallel);
            for (vj, s) in v.iter_mut().zip(&ktu) {
                *vj = 1.0 / (m as f64 * s);
            }
            done += 1;
            iterations += 1;
            let unstable = u.iter().chain(&v).any(|x| !(x.abs().ln().abs() < ABSORB_LOG));
            let check = last && (done % CHECK_EVERY == 0 || done == budget);
            if unstable || check || done == budget {
                if u.iter().chain(&v).any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::Numerical("transport scalings under- or overflowed".into()));
                }
                absorb(&mut f, &u, eps);
                absorb(&mut g, &v, eps);
                u.fill(1.0);
                v.fill(1.0);
                kernel = absorbed_kernel(&f, &g, &cost, eps, parallel);
            }
            if check {
                violation = row_violation(&kernel, n);
                if violation < cfg.tolerance {
                    break;
                }
            }
        }
        if last {
            break;
        }
        eps = (eps * 0.5).max(cfg.epsilon);
    }

    let total: f64 = (0..m)
        .map(|j| {
            let col = cost.column(j);
            (0..n)
                .map(|i| ((f[i] + g[j] - col[i]) / eps).exp() * col[i])
                .sum::<f64>()
        })
        .sum();
    Ok(SinkhornResult {
        distance: total.max(0.0).sqrt(),
        violation,
        iterations,
        converged: violation < cfg.tolerance,
    })
}

/// Scalings beyond `exp(±ABSORB_LOG)` are folded into the potentials.
const ABSORB_LOG: f64 = 30.0;

fn absorb(potential: &mut [f64], scaling: &[f64], eps: f64) {
    for (p, s) in potential.iter_mut().zip(scaling) {
        *p += eps * s.ln();
    }
}

/// `K_ij = exp((f_i + g_j − C_ij)/ε)`, same layout as `cost`.
fn absorbed_kernel(f: &[f64], g: &[f64], cost: &DMatrix<f64>, eps: f64, parallel: bool) -> DMatrix<f64> {
    let mut k = cost.clone();
    let rows = k.nrows();
    let fill = |(j, col): (usize, &mut [f64])| {
        for (i, c) in col.iter_mut().enumerate() {
            *c = ((f[i] + g[j] - *c) / eps).exp();
        }
    };
    if parallel {
        k.as_mut_slice().par_chunks_mut(rows).enumerate().for_each(fill);
    } else {
        k.as_mut_slice().chunks_mut(rows).enumerate().for_each(fill);
    }
    k
}

fn mat_vec(k: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (k * nalgebra::DVector::from_column_slice(v)).data.into()
}

/// `Kᵀ u`, one dot product per column.
fn mat_t_vec(k: &DMatrix<f64>, u: &[f64], parallel: bool) -> Vec<f64> {
    let dot = |j: usize| k.column(j).iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    if parallel {
        (0..k.ncols()).into_par_iter().map(dot).collect()
    } else {
        (0..k.ncols()).map(dot).collect()
    }
}

/// L1 violation of the row marginal of the absorbed plan.
fn row_violation(k: &DMatrix<f64>, n: usize) -> f64 {
    let target = 1.0 / n as f64;
    let mass = mat_vec(k, &vec![1.0; k.ncols()]);
    mass.iter().map(|r| (r - target).abs()).sum()
}

fn squared_distances(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(p.nrows(), q.nrows(), |i, j| {
        (0..p.ncols()).map(|k| (p[(i, k)] - q[(j, k)]).powi(2)).sum()
    })
}

/// Largest number of inducing points for which the ℓ∞ → ℓ1 norm is enumerated.
pub const MAX_ENUMERATED: usize = 20;

/// `max_{s ∈ {±1}^m} ‖A s‖₁`, by exhaustive enumeration.
pub fn linf_to_l1_norm(a: &DMatrix<f64>) -> Result<f64> {
    let m = a.ncols();
    if m > MAX_ENUMERATED {
        return Err(Error::TooManyInducingPoints(m));
    }
    if m == 0 {
        return Ok(0.0);
    }
    // s and −s give the same value, so fix the sign of the last entry.
    let half = 1usize << (m - 1);
    let best = (0..half)
        .into_par_iter()
        .map(|mask| {
            let mut total = 0.0;
            for i in 0..a.nrows() {
                let mut acc = a[(i, m - 1)];
                for j in 0..m - 1 {
                    if mask >> j & 1 == 1 {
                        acc -= a[(i, j)];
                    } else {
                        acc += a[(i, j)];
                    }
                }
                total += acc.abs();
            }
            total
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Constants of the decoupled-sampler error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    /// Multiplies the prior approximation gap in the posterior W2 bound.
    pub c1: f64,
    /// Multiplies the kernel approximation error in the RFF bound.
    pub c3: f64,
    /// `‖K_mm⁻¹‖` as a map from ℓ∞ to ℓ1.
    pub inverse_norm: f64,
}

/// `C₁ = √(2 diam^d (1 + α² N²))` and `C₃ = m (1 + N α)²`, with
/// `N = ‖K_mm⁻¹‖_{ℓ∞→ℓ1}` and `α` the kernel sup-norm.
pub fn bound_constants(kernel: &Kernel, z: &DMatrix<f64>, diameter: f64, dim: usize) -> Result<BoundConstants> {
    let m = z.nrows();
    if m > MAX_ENUMERATED {
        return Err(Error::TooManyInducingPoints(m));
    }
    let kmm = kernel.gram(z, z)?;
    let inverse = cholesky_jittered(&kmm)?.solve(&DMatrix::identity(m, m));
    let norm = linf_to_l1_norm(&inverse)?;
    let alpha = kernel.amplitude();
    let c1 = (2.0 * diameter.powi(dim as i32) * (1.0 + alpha * alpha * norm * norm)).sqrt();
    let c3 = m as f64 * (1.0 + norm * alpha).powi(2);
    Ok(BoundConstants {
        c1,
        c3,
        inverse_norm: norm,
    })
}

/// `max_{x, x′} |φ(x)ᵀφ(x′) − k(x, x′)|` over a probe set.
pub fn rff_kernel_error(kernel: &Kernel, basis: &FourierBasis, probes: &DMatrix<f64>) -> Result<f64> {
    if probes.nrows() == 0 {
        return Err(Error::InvalidArgument("kernel error needs at least one probe".into()));
    }
    let phi = basis.features(probes)?;
    let approx = &phi * phi.transpose();
    let exact = kernel.gram(probes, probes)?;
    Ok((approx - exact).amax())
}
