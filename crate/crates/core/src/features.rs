//! Random Fourier features `φᵢ(x) = √(2α/ℓ) cos(θᵢᵀx + τᵢ)` and weight-space
//! prior draws.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::kernel::Kernel;
use crate::rng::standard_normal_matrix;

/// ℓ random frequencies and phases defining a feature map `φ : Rᵈ → Rˡ`.
///
/// The kernel amplitude is folded into the feature scale so that prior
/// weights stay standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    amplitude: f64,
    scale: f64,
}

/// Weights of a Bayesian linear model over a [`FourierBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub DVector<f64>);

impl FourierBasis {
    /// Sample a basis with `count` features for `kernel`.
    pub fn build<R: Rng + ?Sized>(kernel: &Kernel, count: usize, rng: &mut R) -> Result<Self> {
        let frequencies = kernel.sample_spectral_frequencies(count, rng)?;
        let phases = DVector::from_fn(count, |_, _| TAU * rng.random::<f64>());
        Self::from_parts(frequencies, phases, kernel.amplitude())
    }

    pub fn from_parts(frequencies: DMatrix<f64>, phases: DVector<f64>, amplitude: f64) -> Result<Self> {
        let count = frequencies.nrows();
        if count == 0 {
            return Err(Error::InvalidArgument("basis needs at least one feature".into()));
        }
        check_dim(count, phases.len())?;
        if !(amplitude > 0.0) {
            return Err(Error::InvalidArgument(format!("amplitude must be positive, got {amplitude}")));
        }
        Ok(FourierBasis {
            scale: (2.0 * amplitude / count as f64).sqrt(),
            frequencies,
            phases,
            amplitude,
        })
    }

    /// Number of features ℓ.
    pub fn len(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `|X| × ℓ` feature matrix `Φ = φ(X)`.
    pub fn features(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.nrows() > 0 {
            check_dim(self.dim(), points.ncols())?;
        } else {
            return Ok(DMatrix::zeros(0, self.len()));
        }
        let mut arg = points * self.frequencies.transpose();
        for (j, mut col) in arg.column_iter_mut().enumerate() {
            let tau = self.phases[j];
            for v in col.iter_mut() {
                *v = self.scale * (*v + tau).cos();
            }
        }
        Ok(arg)
    }

    /// `φ(x)ᵀ w` for a single point without allocating the feature row.
    pub(crate) fn dot_features(&self, x: &[f64], weights: &DVector<f64>) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..self.len() {
            let mut arg = self.phases[j];
            for k in 0..d {
                arg += self.frequencies[(j, k)] * x[k];
            }
            acc += weights[j] * arg.cos();
        }
        self.scale * acc
    }

    /// Adds `∇ₓ φ(x)ᵀ w` into `out`.
    pub(crate) fn add_weighted_gradient(&self, x: &[f64], weights: &DVector<f64>, out: &mut [f64]) {
        let d = self.dim();
        for j in 0..self.len() {
            let mut arg = self.phases[j];
            for k in 0..d {
                arg += self.frequencies[(j, k)] * x[k];
            }
            let c = -self.scale * weights[j] * arg.sin();
            for k in 0..d {
                out[k] += c * self.frequencies[(j, k)];
            }
        }
    }

    /// `φ(x)ᵀ w`, adding its gradient into `out`, in one pass.
    pub(crate) fn dot_and_add_gradient(&self, x: &[f64], weights: &DVector<f64>, out: &mut [f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..self.len() {
            let mut arg = self.phases[j];
            for k in 0..d {
                arg += self.frequencies[(j, k)] * x[k];
            }
            let (sin, cos) = arg.sin_cos();
            acc += weights[j] * cos;
            let c = -self.scale * weights[j] * sin;
            for k in 0..d {
                out[k] += c * self.frequencies[(j, k)];
            }
        }
        self.scale * acc
    }

    /// `ℓ × d` Jacobian of `φ` at `x`: row j is `−√(2α/ℓ) sin(θⱼᵀx + τⱼ) θⱼ`.
    pub fn features_gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        let d = self.dim();
        let mut out = self.frequencies.clone();
        for j in 0..self.len() {
            let mut arg = self.phases[j];
            for k in 0..d {
                arg += self.frequencies[(j, k)] * x[k];
            }
            let c = -self.scale * arg.sin();
            for k in 0..d {
                out[(j, k)] *= c;
            }
        }
        Ok(out)
    }

    /// Standard-normal prior weights, `f = φ(·)ᵀ w`.
    pub fn draw_prior_function<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightVector {
        WeightVector(standard_normal_matrix(self.len(), 1, rng).column(0).into_owned())
    }
}

impl WeightVector {
    /// Evaluate `f(X) = φ(X) w`.
    pub fn eval(&self, basis: &FourierBasis, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim(basis.len(), self.0.len())?;
        Ok(basis.features(points)? * &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::row_vec;
    use crate::rng::{stream_rng, uniform_matrix};

    fn degenerate(count: usize, dim: usize) -> FourierBasis {
        FourierBasis::from_parts(DMatrix::zeros(count, dim), DVector::zeros(count), 1.0).unwrap()
    }

    #[test]
    fn zero_frequency_features_are_root_two() {
        let b = degenerate(1, 2);
        let x = uniform_matrix(5, 2, &mut stream_rng(0, 0));
        let phi = b.features(&x).unwrap();
        assert!(phi.iter().all(|&v| (v - 2f64.sqrt()).abs() < 1e-15));
        assert_eq!(b.features_gradient(&[0.3, 0.4]).unwrap(), DMatrix::zeros(1, 2));
    }

    #[test]
    fn single_feature_bound_and_determinism() {
        let k = Kernel::isotropic(2.0, 0.2, 3).unwrap();
        let b1 = FourierBasis::build(&k, 1, &mut stream_rng(1, 0)).unwrap();
        let b2 = FourierBasis::build(&k, 1, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(b1, b2);
        let x = uniform_matrix(30, 3, &mut stream_rng(1, 1));
        let phi = b1.features(&x).unwrap();
        assert!(phi.iter().all(|v| v.abs() <= (2.0f64 * 2.0).sqrt() + 1e-12));
    }

    #[test]
    fn entrywise_oracle_and_row_bound() {
        let k = Kernel::matern52(1.5, vec![0.2, 0.6]).unwrap();
        let b = FourierBasis::build(&k, 8, &mut stream_rng(2, 0)).unwrap();
        let x = uniform_matrix(4, 2, &mut stream_rng(2, 1));
        let phi = b.features(&x).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                let th = b.frequencies().row(j);
                let arg = th[0] * x[(i, 0)] + th[1] * x[(i, 1)] + b.phases()[j];
                let expected = (2.0 * 1.5 / 8.0f64).sqrt() * arg.cos();
                assert!((phi[(i, j)] - expected).abs() < 1e-14);
            }
            assert!(phi.row(i).norm_squared() <= 2.0 * 1.5 + 1e-12);
        }
        assert_eq!(phi, b.features(&x).unwrap());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for trial in 0..100u64 {
            let mut rng = stream_rng(3, trial);
            let d = 1 + (trial % 3) as usize;
            let count = 1 + (trial % 64) as usize;
            let k = Kernel::isotropic(1.0, 0.3, d).unwrap();
            let b = FourierBasis::build(&k, count, &mut rng).unwrap();
            let x = row_vec(&uniform_matrix(1, d, &mut rng), 0);
            let jac = b.features_gradient(&x).unwrap();
            let h = 1e-5;
            for c in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fp = b.features(&DMatrix::from_row_slice(1, d, &xp)).unwrap();
                let fm = b.features(&DMatrix::from_row_slice(1, d, &xm)).unwrap();
                for j in 0..count {
                    let fd = (fp[(0, j)] - fm[(0, j)]) / (2.0 * h);
                    assert!((fd - jac[(j, c)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn coincident_inner_product_gradient_vanishes_on_average() {
        // k(·, x′) peaks at x′; for a finite basis ∇ₓ φ(x)ᵀφ(x′) at x = x′ is
        // only zero in expectation over bases.
        let k = Kernel::isotropic(1.0, 0.3, 2).unwrap();
        let x = [0.3, 0.6];
        let pt = DMatrix::from_row_slice(1, 2, &x);
        let mut mean = DVector::zeros(2);
        for rep in 0..64 {
            let b = FourierBasis::build(&k, 256, &mut stream_rng(4, rep)).unwrap();
            let phi = b.features(&pt).unwrap();
            mean += b.features_gradient(&x).unwrap().transpose() * phi.transpose() / 64.0;
        }
        assert!(mean.amax() < 0.05, "{mean}");
        let degenerate = degenerate(4, 2);
        let phi = degenerate.features(&pt).unwrap();
        let g = degenerate.features_gradient(&x).unwrap().transpose() * phi.transpose();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn basis_monte_carlo_recovers_kernel() {
        let k = Kernel::isotropic(1.0, 0.3, 2).unwrap();
        let pts = uniform_matrix(10, 2, &mut stream_rng(5, 0));
        let mut acc = DVector::<f64>::zeros(5);
        for rep in 0..64 {
            let b = FourierBasis::build(&k, 20_000, &mut stream_rng(5, rep + 1)).unwrap();
            let phi = b.features(&pts).unwrap();
            for p in 0..5 {
                acc[p] += phi.row(2 * p).dot(&phi.row(2 * p + 1)) / 64.0;
            }
        }
        for p in 0..5 {
            let truth = k.eval(&row_vec(&pts, 2 * p), &row_vec(&pts, 2 * p + 1)).unwrap();
            assert!((acc[p] - truth).abs() < 0.02, "pair {p}: {} vs {truth}", acc[p]);
        }
    }

    #[test]
    fn prior_draw_moments() {
        let k = Kernel::isotropic(1.0, 0.3, 1).unwrap();
        let b = FourierBasis::build(&k, 16, &mut stream_rng(6, 0)).unwrap();
        let pts = DMatrix::from_row_slice(2, 1, &[0.2, 0.35]);
        let phi = b.features(&pts).unwrap();
        let mut rng = stream_rng(6, 1);
        let draws = 100_000;
        let (mut s0, mut s1, mut s01) = (0.0, 0.0, 0.0);
        let (mut q0, mut q1) = (0.0, 0.0);
        for _ in 0..draws {
            let w = b.draw_prior_function(&mut rng);
            let f = &phi * &w.0;
            s0 += f[0];
            s1 += f[1];
            s01 += f[0] * f[1];
            q0 += f[0] * f[0];
            q1 += f[1] * f[1];
        }
        let n = draws as f64;
        assert!((s0 / n).abs() < 3e-2);
        assert!((s1 / n).abs() < 3e-2);
        let cov = s01 / n - (s0 / n) * (s1 / n);
        let target = phi.row(0).dot(&phi.row(1));
        assert!((cov - target).abs() < 0.02, "{cov} vs {target}");
        assert!(q0 / n > 0.0 && q1 / n > 0.0);
    }

    #[test]
    fn zero_weights_give_zero_function() {
        let k = Kernel::isotropic(1.0, 0.3, 2).unwrap();
        let b = FourierBasis::build(&k, 16, &mut stream_rng(7, 0)).unwrap();
        let w = WeightVector(DVector::zeros(16));
        let pts = uniform_matrix(6, 2, &mut stream_rng(7, 1));
        assert_eq!(w.eval(&b, &pts).unwrap(), DVector::zeros(6));
    }
}
