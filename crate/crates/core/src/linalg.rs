//! Dense linear-algebra helpers: jittered Cholesky, triangular solves and
//! symmetric square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter ladder, relative to the mean diagonal of the input.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Lower-triangular Cholesky factor of a (possibly jittered) symmetric matrix.
#[derive(Debug, Clone)]
pub struct GramCholesky {
    factor: DMatrix<f64>,
    jitter_used: f64,
}

impl GramCholesky {
    /// The lower-triangular factor `L`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn into_factor(self) -> DMatrix<f64> {
        self.factor
    }

    /// Absolute jitter added to the diagonal before factorization.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `L Lᵀ`, i.e. the jittered input.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        self.factor
            .solve_lower_triangular(rhs)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `L⁻ᵀ B`.
    pub fn solve_upper(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        self.factor
            .tr_solve_lower_triangular(rhs)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `(L Lᵀ)⁻¹ B`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper(&self.solve_lower(rhs))
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(0);
        }
        let half = self
            .factor
            .solve_lower_triangular(rhs)
            .expect("cholesky factor has a positive diagonal");
        self.factor
            .tr_solve_lower_triangular(&half)
            .expect("cholesky factor has a positive diagonal")
    }
}

/// Cholesky factorization with an escalating diagonal jitter.
///
/// Tries each entry of [`JITTER_LADDER`] (scaled by the mean diagonal) until
/// every pivot clears a small relative threshold. The jitter that succeeded is
/// recorded in the result.
pub fn cholesky_jittered(matrix: &DMatrix<f64>) -> Result<GramCholesky> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "cholesky of a non-square {}x{} matrix",
            n,
            matrix.ncols()
        )));
    }
    if n == 0 {
        return Ok(GramCholesky {
            factor: DMatrix::zeros(0, 0),
            jitter_used: 0.0,
        });
    }
    let diag = matrix.diagonal();
    let mean_diag = diag.sum() / n as f64;
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() {
        mean_diag
    } else {
        1.0
    };
    let mut last_jitter = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last_jitter = jitter;
        if let Some(factor) = try_cholesky(matrix, jitter) {
            return Ok(GramCholesky {
                factor,
                jitter_used: jitter,
            });
        }
    }
    Err(Error::Factorization {
        size: n,
        jitter: last_jitter,
        min_diag: diag.min(),
        max_diag: diag.max(),
        mean_diag,
    })
}

/// Left-looking column Cholesky. Returns `None` when a pivot is not
/// comfortably positive.
fn try_cholesky(matrix: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = matrix.nrows();
    let mut l = matrix.clone();
    let mut max_diag: f64 = 0.0;
    for i in 0..n {
        l[(i, i)] += jitter;
        max_diag = max_diag.max(l[(i, i)].abs());
    }
    if !max_diag.is_finite() {
        return None;
    }
    let tol = n as f64 * f64::EPSILON * max_diag;
    let data = l.as_mut_slice();
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col_j = &mut rest[..n];
        for k in 0..j {
            let col_k = &done[k * n..(k + 1) * n];
            let ljk = col_k[j];
            if ljk != 0.0 {
                for (a, b) in col_j[j..].iter_mut().zip(&col_k[j..]) {
                    *a -= ljk * b;
                }
            }
        }
        let pivot = col_j[j];
        if !(pivot > tol) {
            return None;
        }
        let d = pivot.sqrt();
        col_j[j] = d;
        for a in col_j[j + 1..].iter_mut() {
            *a /= d;
        }
        for a in col_j[..j].iter_mut() {
            *a = 0.0;
        }
    }
    Some(l)
}

/// Symmetric positive semi-definite square root via eigendecomposition;
/// negative eigenvalues are clamped to zero.
pub fn psd_sqrt(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    if matrix.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = symmetrize(matrix);
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    &scaled * eig.eigenvectors.transpose()
}

/// Eigenvalues of a symmetric matrix, clamped at zero.
pub fn psd_eigenvalues(matrix: &DMatrix<f64>) -> DVector<f64> {
    if matrix.nrows() == 0 {
        return DVector::zeros(0);
    }
    SymmetricEigen::new(symmetrize(matrix))
        .eigenvalues
        .map(|v| v.max(0.0))
}

pub fn symmetrize(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    (matrix + matrix.transpose()) * 0.5
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn identity_factor_needs_no_jitter() {
        let eye = DMatrix::<f64>::identity(5, 5);
        let chol = cholesky_jittered(&eye).unwrap();
        assert_eq!(chol.jitter_used(), 0.0);
        assert_eq!(chol.factor(), &eye);
    }

    #[test]
    fn diagonal_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let chol = cholesky_jittered(&a).unwrap();
        assert_eq!(chol.factor(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn near_duplicates_need_jitter_and_reconstruct() {
        let kernel = Kernel::isotropic(1.0, 0.2, 2).unwrap();
        let mut rng = stream_rng(3, 0);
        let mut pts = DMatrix::zeros(16, 2);
        for i in 0..16 {
            pts[(i, 0)] = 0.5 + 1e-9 * rng.random::<f64>();
            pts[(i, 1)] = 0.5 + 1e-9 * rng.random::<f64>();
        }
        let gram = kernel.gram(&pts, &pts).unwrap();
        let chol = cholesky_jittered(&gram).unwrap();
        assert!(chol.jitter_used() > 0.0);
        let jittered = &gram + DMatrix::identity(16, 16) * chol.jitter_used();
        assert!(relative_frobenius(&chol.reconstruct(), &jittered) < 1e-8);
        assert!(chol.factor().diagonal().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn fails_on_indefinite_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        match cholesky_jittered(&a) {
            Err(Error::Factorization { size, .. }) => assert_eq!(size, 2),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn solves_match_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let chol = cholesky_jittered(&a).unwrap();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let x = chol.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&a);
        assert!((&r * &r - &a).norm() < 1e-12);
    }
}
