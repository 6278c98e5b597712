//! Stationary Matérn-5/2 kernel, Gram matrices and spectral sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Smoothness of the Matérn family used throughout.
pub const NU: f64 = 2.5;

/// Matérn-5/2 covariance `α (1 + √5 r + 5r²/3) exp(−√5 r)` with ARD
/// lengthscales, where `r` is the lengthscale-scaled Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    amplitude: f64,
    lengthscales: Vec<f64>,
    inv_lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn matern52(amplitude: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel amplitude must be positive, got {amplitude}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one lengthscale".into()));
        }
        if let Some(bad) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("lengthscales must be positive, got {bad}")));
        }
        let inv_lengthscales = lengthscales.iter().map(|l| 1.0 / l).collect();
        Ok(Kernel {
            amplitude,
            lengthscales,
            inv_lengthscales,
        })
    }

    /// Same lengthscale in every one of `dim` input dimensions.
    pub fn isotropic(amplitude: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::matern52(amplitude, vec![lengthscale; dim])
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `k(x, x′)`; errors when either point has the wrong dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.amplitude * matern52_profile(self.scaled_distance(x, y))
    }

    fn scaled_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.inv_lengthscales)
            .map(|((a, b), il)| {
                let t = (a - b) * il;
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Gradient of `x ↦ k(x, z)`.
    pub fn gradient_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let r = self.scaled_distance(x, z);
        // dk/dr = −(5/3) α r (1 + √5 r) e^{−√5 r}, and dr/dxᵢ = (xᵢ − zᵢ) / (lᵢ² r)
        let common = -(5.0 / 3.0) * self.amplitude * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
        for (((o, a), b), il) in out.iter_mut().zip(x).zip(z).zip(&self.inv_lengthscales) {
            *o = common * (a - b) * il * il;
        }
    }

    pub fn gradient(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), z.len())?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, z, &mut out);
        Ok(out)
    }

    /// `|A| × |B|` Gram matrix. Rows of `a` and `b` are points.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if a.nrows() > 0 {
            check_dim(d, a.ncols())?;
        }
        if b.nrows() > 0 {
            check_dim(d, b.ncols())?;
        }
        let ra = rows_of(a);
        let rb = rows_of(b);
        let (n, m) = (a.nrows(), b.nrows());
        let mut out = DMatrix::zeros(n, m);
        for j in 0..m {
            let y = &rb[j * d..(j + 1) * d];
            let col = out.column_mut(j);
            for (i, o) in col.into_iter().enumerate() {
                *o = self.eval_unchecked(&ra[i * d..(i + 1) * d], y);
            }
        }
        Ok(out)
    }

    /// Draw `count` frequency vectors from the normalized spectral density.
    ///
    /// The Matérn-ν spectral density is a multivariate Student-t with 2ν
    /// degrees of freedom, sampled here as a scale mixture of Gaussians:
    /// `θ = z ⊘ l · √(2ν / u)` with `z ~ N(0, I)` and `u ~ χ²(2ν)`.
    /// Returns a `count × d` matrix.
    pub fn sample_spectral_frequencies<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::InvalidArgument("frequency count must be at least 1".into()));
        }
        let d = self.dim();
        let chi = ChiSquared::new(2.0 * NU).expect("positive degrees of freedom");
        let mut out = DMatrix::zeros(count, d);
        for i in 0..count {
            let u: f64 = chi.sample(rng);
            let scale = (2.0 * NU / u).sqrt();
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                out[(i, j)] = z * self.inv_lengthscales[j] * scale;
            }
        }
        Ok(out)
    }
}

/// Unit-amplitude Matérn-5/2 profile as a function of scaled distance.
pub fn matern52_profile(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Row-major copy of the rows of `m`.
pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_jittered;
    use crate::rng::{stream_rng, uniform_matrix};
    use proptest::prelude::*;

    #[test]
    fn zero_lag_is_amplitude() {
        let k = Kernel::isotropic(1.0, 0.3, 3).unwrap();
        assert_eq!(k.eval(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_bit_exact() {
        let k = Kernel::matern52(1.7, vec![0.2, 0.5]).unwrap();
        let a = [0.123, 0.987];
        let b = [0.456, 0.321];
        assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
    }

    #[test]
    fn matches_high_precision_value() {
        // α = 1, d = 2, l = √(2/100), x − x′ = (0.1, 0): r = 0.1/√0.02 = √0.5.
        // Evaluated with 50-digit arithmetic (mpmath).
        let expected = 0.702_495_760_153_803_27_f64;
        let l = (2.0f64 / 100.0).sqrt();
        let k = Kernel::isotropic(1.0, l, 2).unwrap();
        let v = k.eval(&[0.3, 0.4], &[0.2, 0.4]).unwrap();
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    }

    #[test]
    fn dimension_mismatch_names_dims() {
        let k = Kernel::isotropic(1.0, 0.3, 2).unwrap();
        match k.eval(&[0.0, 0.0, 0.0], &[0.0, 0.0]) {
            Err(Error::DimensionMismatch { expected: 2, actual: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gram_basic_cases() {
        let k = Kernel::isotropic(2.5, 0.3, 2).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.2, 0.7]);
        assert_eq!(k.gram(&x, &x).unwrap()[(0, 0)], 2.5);
        let mut rng = stream_rng(1, 0);
        let a = uniform_matrix(3, 2, &mut rng);
        let b = uniform_matrix(4, 2, &mut rng);
        let g = k.gram(&a, &b).unwrap();
        assert_eq!(g, k.gram(&b, &a).unwrap().transpose());
        for i in 0..3 {
            for j in 0..4 {
                let e = k.eval(&row_vec(&a, i), &row_vec(&b, j)).unwrap();
                assert_eq!(g[(i, j)], e);
            }
        }
        let empty = DMatrix::<f64>::zeros(0, 2);
        assert_eq!(k.gram(&empty, &b).unwrap().shape(), (0, 4));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = Kernel::matern52(1.3, vec![0.2, 0.4, 0.3]).unwrap();
        let mut rng = stream_rng(2, 0);
        let pts = uniform_matrix(20, 3, &mut rng);
        for i in 0..10 {
            let x = row_vec(&pts, i);
            let z = row_vec(&pts, i + 10);
            let g = k.gradient(&x, &z).unwrap();
            for j in 0..3 {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (k.eval(&xp, &z).unwrap() - k.eval(&xm, &z).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{fd} vs {}", g[j]);
            }
        }
        assert_eq!(k.gradient(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn spectral_sampling_is_deterministic() {
        let k = Kernel::isotropic(1.0, 0.1, 2).unwrap();
        let a = k.sample_spectral_frequencies(50, &mut stream_rng(9, 0)).unwrap();
        let b = k.sample_spectral_frequencies(50, &mut stream_rng(9, 0)).unwrap();
        assert_eq!(a, b);
        assert!(k.sample_spectral_frequencies(0, &mut stream_rng(9, 0)).is_err());
    }

    #[test]
    fn spectral_bochner_monte_carlo() {
        let l = 0.3;
        let k = Kernel::isotropic(1.0, l, 1).unwrap();
        let theta = k.sample_spectral_frequencies(100_000, &mut stream_rng(4, 0)).unwrap();
        for t in [0.0, 0.5 * l, l] {
            let est = theta.iter().map(|w| (w * t).cos()).sum::<f64>() / theta.nrows() as f64;
            let truth = matern52_profile(t / l);
            assert!((est - truth).abs() < 0.01, "lag {t}: {est} vs {truth}");
        }
    }

    #[test]
    fn spectral_variance_matches_student_t() {
        // Student-t with 2ν = 5 dof has variance 5/3; frequencies are scaled by 1/l.
        let l = 0.5;
        let k = Kernel::isotropic(1.0, l, 1).unwrap();
        let theta = k.sample_spectral_frequencies(1_000_000, &mut stream_rng(5, 0)).unwrap();
        let n = theta.nrows() as f64;
        let mean = theta.sum() / n;
        let var = theta.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 5.0 / 3.0 / (l * l);
        assert!((var / expected - 1.0).abs() < 0.02, "{var} vs {expected}");
    }

    #[test]
    fn spectral_error_decays_at_root_rate() {
        let k = Kernel::isotropic(1.0, 0.2, 2).unwrap();
        let lag = [0.05, 0.1];
        let truth = k.eval(&[0.0, 0.0], &lag).unwrap();
        let rms = |count: usize, base: u64| {
            let mut acc = 0.0;
            for rep in 0..20 {
                let th = k.sample_spectral_frequencies(count, &mut stream_rng(base, rep)).unwrap();
                let est = (0..count)
                    .map(|i| (th[(i, 0)] * lag[0] + th[(i, 1)] * lag[1]).cos())
                    .sum::<f64>()
                    / count as f64;
                acc += (est - truth).powi(2);
            }
            (acc / 20.0).sqrt()
        };
        let ratio = rms(16_000, 11) / rms(4_000, 12);
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn well_separated_gram_needs_little_jitter() {
        let l = 0.2;
        let k = Kernel::isotropic(1.0, l, 1).unwrap();
        let pts = DMatrix::from_fn(11, 1, |i, _| i as f64 * l / 10.0);
        let chol = cholesky_jittered(&k.gram(&pts, &pts).unwrap()).unwrap();
        assert!(chol.jitter_used() <= 1e-6);
    }

    proptest! {
        #[test]
        fn bounded_by_zero_lag(x in prop::collection::vec(-2.0..2.0f64, 3),
                               y in prop::collection::vec(-2.0..2.0f64, 3),
                               amp in 0.1..5.0f64) {
            let k = Kernel::matern52(amp, vec![0.3, 0.7, 1.1]).unwrap();
            let v = k.eval(&x, &y).unwrap();
            prop_assert!(v > 0.0 || (x != y && v >= 0.0));
            prop_assert!(v.abs() <= k.eval(&x, &x).unwrap());
            prop_assert_eq!(v, k.eval(&y, &x).unwrap());
        }

        #[test]
        fn gram_is_factorizable(seed in 0u64..1000) {
            let k = Kernel::isotropic(1.0, 0.3, 2).unwrap();
            let pts = uniform_matrix(12, 2, &mut stream_rng(seed, 0));
            prop_assert!(cholesky_jittered(&k.gram(&pts, &pts).unwrap()).is_ok());
        }
    }
}
