//! Density representation on atom-centered Gaussian basis functions.
//!
//! A density is a linear combination `rho(r) = sum_mu p_mu omega_mu(r)`
//! of normalized s-type Gaussians. Everything downstream works on the
//! coefficient vector `p`; this module supplies the pieces that depend on
//! the basis functions themselves: the overlap matrix, its Löwdin matrix
//! roots, pointwise density evaluation, and the L2 density-error metric
//! `||delta rho||_2 = sqrt(dp^T S dp)`.

use nalgebra::Vector3;
use thiserror::Error;

use crate::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("basis set must contain at least one function")]
    Empty,
    #[error("centers ({centers}) and exponents ({exponents}) differ in length")]
    LengthMismatch { centers: usize, exponents: usize },
    #[error("exponent {index} is {value}, expected a finite positive value")]
    BadExponent { index: usize, value: f64 },
    #[error("center {index} has a non-finite component")]
    BadCenter { index: usize },
    #[error("overlap matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("overlap matrix is not symmetric: |S[{i},{j}] - S[{j},{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("overlap matrix has non-positive eigenvalue {value:e}; basis is numerically singular")]
    NonPositiveEigenvalue { value: f64 },
}

/// Symmetry slack accepted when wrapping a matrix as an [`OverlapMatrix`].
const SYMMETRY_TOL: f64 = 1e-12;

/// A set of normalized s-type Gaussians `omega_mu`, one per
/// (center, exponent) pair. Centers are in bohr, exponents in bohr^-2.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    centers: Vec<Vector3<f64>>,
    exponents: Vec<f64>,
}

impl BasisSet {
    pub fn new(centers: Vec<Vector3<f64>>, exponents: Vec<f64>) -> Result<Self, BasisError> {
        if centers.len() != exponents.len() {
            return Err(BasisError::LengthMismatch {
                centers: centers.len(),
                exponents: exponents.len(),
            });
        }
        if centers.is_empty() {
            return Err(BasisError::Empty);
        }
        for (index, &value) in exponents.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(BasisError::BadExponent { index, value });
            }
        }
        for (index, c) in centers.iter().enumerate() {
            if !(c.x.is_finite() && c.y.is_finite() && c.z.is_finite()) {
                return Err(BasisError::BadCenter { index });
            }
        }
        Ok(Self { centers, exponents })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one function
    }

    pub fn centers(&self) -> &[Vector3<f64>] {
        &self.centers
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }
}

/// The symmetric matrix `S_munu = integral omega_mu omega_nu`.
///
/// For a basis of normalized functions the diagonal is exactly 1. The
/// wrapper only enforces squareness and symmetry; positive-definiteness
/// is checked where it is needed (see [`lowdin_roots`]), because a basis
/// with coincident functions legitimately produces a singular overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix(Matrix);

impl OverlapMatrix {
    pub fn new(matrix: Matrix) -> Result<Self, BasisError> {
        if matrix.nrows() != matrix.ncols() {
            return Err(BasisError::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        for i in 0..matrix.nrows() {
            for j in (i + 1)..matrix.ncols() {
                let diff = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if !(diff <= SYMMETRY_TOL) {
                    return Err(BasisError::NotSymmetric { i, j, diff });
                }
            }
        }
        Ok(Self(matrix))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// The symmetric matrix roots `S^{1/2}` and `S^{-1/2}` used for the
/// Löwdin coordinate change `q = S^{1/2} p`.
#[derive(Debug, Clone)]
pub struct LowdinRoots {
    pub half: Matrix,
    pub neg_half: Matrix,
}

/// Normalization constant of an s-Gaussian with exponent `alpha`, i.e.
/// `(2 alpha / pi)^{3/4}` so that `integral omega^2 = 1`.
pub fn gaussian_norm(alpha: f64) -> f64 {
    (2.0 * alpha / std::f64::consts::PI).powf(0.75)
}

/// Overlap of two normalized s-Gaussians from the Gaussian product
/// theorem: `(2 sqrt(ab)/(a+b))^{3/2} exp(-ab/(a+b) |Ra-Rb|^2)`.
///
/// For equal exponents this reduces to `exp(-a r^2 / 2)`.
fn pair_overlap(a: f64, b: f64, dist_sq: f64) -> f64 {
    let prefactor = (2.0 * (a * b).sqrt() / (a + b)).powf(1.5);
    prefactor * (-a * b / (a + b) * dist_sq).exp()
}

/// Builds the overlap matrix of a basis set. Diagonal entries are exactly 1.
pub fn overlap_matrix(basis: &BasisSet) -> OverlapMatrix {
    let n = basis.len();
    let mut s = Matrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist_sq = (basis.centers[i] - basis.centers[j]).norm_squared();
            let v = pair_overlap(basis.exponents[i], basis.exponents[j], dist_sq);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    OverlapMatrix(s)
}

/// Computes `S^{1/2}` and `S^{-1/2}` by dense symmetric eigendecomposition
/// (the O(N^3) step that the no-natrep optimization mode avoids).
///
/// Fails if any eigenvalue is non-positive, which signals a numerically
/// singular basis.
pub fn lowdin_roots(s: &OverlapMatrix) -> Result<LowdinRoots, BasisError> {
    let eig = s.0.clone().symmetric_eigen();
    if let Some(&value) = eig
        .eigenvalues
        .iter()
        .find(|&&v| !(v.is_finite() && v > 0.0))
    {
        return Err(BasisError::NonPositiveEigenvalue { value });
    }
    let q = &eig.eigenvectors;
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let inv_sqrt_vals = sqrt_vals.map(f64::recip);
    let half = q * Matrix::from_diagonal(&sqrt_vals) * q.transpose();
    let neg_half = q * Matrix::from_diagonal(&inv_sqrt_vals) * q.transpose();
    // Symmetrize away the rounding from the triple products.
    let half = (&half + half.transpose()) * 0.5;
    let neg_half = (&neg_half + neg_half.transpose()) * 0.5;
    Ok(LowdinRoots { half, neg_half })
}

/// L2 norm of the density error induced by a coefficient error `dp`:
/// `||delta rho||_2 = sqrt(dp^T S dp)`.
pub fn density_l2_error(dp: &Vector, s: &OverlapMatrix) -> f64 {
    assert_eq!(
        dp.len(),
        s.dim(),
        "coefficient error dimension {} does not match overlap dimension {}",
        dp.len(),
        s.dim()
    );
    let quad = (dp.transpose() * s.matrix() * dp)[(0, 0)];
    // The quadratic form is nonnegative for any valid overlap; clamp the
    // rounding noise that appears when dp is numerically tiny.
    quad.max(0.0).sqrt()
}

/// Pointwise density `rho(r) = sum_mu p_mu omega_mu(r)`. LCAB densities
/// are not constrained nonnegative, so the result may have either sign.
pub fn density_at_point(p: &Vector, basis: &BasisSet, r: &Vector3<f64>) -> f64 {
    assert_eq!(
        p.len(),
        basis.len(),
        "coefficient dimension {} does not match basis size {}",
        p.len(),
        basis.len()
    );
    let mut rho = 0.0;
    for mu in 0..basis.len() {
        let alpha = basis.exponents[mu];
        let dist_sq = (r - basis.centers[mu]).norm_squared();
        rho += p[mu] * gaussian_norm(alpha) * (-alpha * dist_sq).exp();
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::vector;

    fn two_function_basis(distance: f64, a: f64, b: f64) -> BasisSet {
        BasisSet::new(
            vec![vector![0.0, 0.0, 0.0], vector![distance, 0.0, 0.0]],
            vec![a, b],
        )
        .unwrap()
    }

    #[test]
    fn identical_functions_overlap_fully() {
        let basis = two_function_basis(0.0, 1.0, 1.0);
        let s = overlap_matrix(&basis);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(s.matrix()[(i, j)], 1.0);
            }
        }
    }

    #[test]
    fn far_functions_overlap_vanishes() {
        let basis = two_function_basis(50.0, 1.0, 1.0);
        let s = overlap_matrix(&basis);
        assert!(s.matrix()[(0, 1)] < 1e-300);
        assert_eq!(s.matrix()[(0, 0)], 1.0);
        assert_eq!(s.matrix()[(1, 1)], 1.0);
    }

    #[test]
    fn unit_exponents_at_unit_distance() {
        // Closed form exp(-1/2); confirmed against the grid-quadrature
        // oracle in tests/quadrature_oracle.rs.
        let basis = two_function_basis(1.0, 1.0, 1.0);
        let s = overlap_matrix(&basis);
        assert_relative_eq!(s.matrix()[(0, 1)], (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(s.matrix()[(0, 1)], 0.60653, max_relative = 1e-5);
    }

    #[test]
    fn lowdin_of_identity_is_identity() {
        let s = OverlapMatrix::identity(3);
        let roots = lowdin_roots(&s).unwrap();
        assert_relative_eq!(roots.half, Matrix::identity(3, 3), epsilon = 1e-14);
        assert_relative_eq!(roots.neg_half, Matrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn lowdin_of_diagonal() {
        let s = OverlapMatrix::new(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0])))
            .unwrap();
        let roots = lowdin_roots(&s).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        assert_relative_eq!(roots.half, expected, epsilon = 1e-12);
    }

    #[test]
    fn lowdin_two_by_two_closed_form() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3, so
        // S^{1/2} = [[(sqrt3+1)/2, (sqrt3-1)/2], [(sqrt3-1)/2, (sqrt3+1)/2]].
        let s = OverlapMatrix::new(Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let roots = lowdin_roots(&s).unwrap();
        let d = (3.0f64.sqrt() + 1.0) / 2.0;
        let o = (3.0f64.sqrt() - 1.0) / 2.0;
        let expected = Matrix::from_row_slice(2, 2, &[d, o, o, d]);
        assert_relative_eq!(roots.half, expected, epsilon = 1e-12);
        assert_relative_eq!(roots.half[(0, 0)], 1.3660, epsilon = 1e-4);
        assert_relative_eq!(roots.half[(0, 1)], 0.3660, epsilon = 1e-4);
    }

    #[test]
    fn lowdin_rejects_singular_overlap() {
        let basis = two_function_basis(0.0, 1.0, 1.0);
        let s = overlap_matrix(&basis);
        assert!(matches!(
            lowdin_roots(&s),
            Err(BasisError::NonPositiveEigenvalue { .. })
        ));
    }

    #[test]
    fn lowdin_residual_and_round_trip() {
        let basis = BasisSet::new(
            vec![
                vector![0.0, 0.0, 0.0],
                vector![1.2, 0.3, -0.4],
                vector![-0.8, 1.1, 0.6],
            ],
            vec![1.0, 2.0, 0.7],
        )
        .unwrap();
        let s = overlap_matrix(&basis);
        let roots = lowdin_roots(&s).unwrap();
        let residual = (&roots.half * &roots.half - s.matrix()).norm();
        assert!(residual < 1e-10, "||S_half^2 - S||_F = {residual:e}");
        let round_trip = (&roots.neg_half * &roots.half - Matrix::identity(3, 3)).norm();
        assert!(round_trip < 1e-10, "||S^-1/2 S^1/2 - I||_F = {round_trip:e}");
    }

    #[test]
    fn l2_error_examples() {
        let s = OverlapMatrix::identity(2);
        assert_eq!(density_l2_error(&Vector::zeros(2), &s), 0.0);
        assert_eq!(density_l2_error(&Vector::from_vec(vec![1.0, 0.0]), &s), 1.0);

        let s = OverlapMatrix::new(Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let dp = Vector::from_vec(vec![1.0, -1.0]);
        assert_relative_eq!(density_l2_error(&dp, &s), 2.0f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn natrep_distance_is_density_distance() {
        let basis = two_function_basis(1.3, 1.0, 2.0);
        let s = overlap_matrix(&basis);
        let roots = lowdin_roots(&s).unwrap();
        let dp = Vector::from_vec(vec![0.3, -0.7]);
        let natural = (&roots.half * &dp).norm();
        assert_relative_eq!(natural, density_l2_error(&dp, &s), epsilon = 1e-10);
    }

    #[test]
    fn density_examples() {
        let basis = BasisSet::new(vec![vector![0.0, 0.0, 0.0]], vec![1.0]).unwrap();
        let origin = vector![0.0, 0.0, 0.0];
        assert_eq!(density_at_point(&Vector::zeros(1), &basis, &origin), 0.0);
        // Value at the center is the normalization constant (2/pi)^{3/4}.
        let value = density_at_point(&Vector::from_vec(vec![1.0]), &basis, &origin);
        assert_relative_eq!(value, (2.0 / std::f64::consts::PI).powf(0.75), epsilon = 1e-15);
        assert_relative_eq!(value, 0.71270, max_relative = 1e-4);
    }

    #[test]
    fn density_is_linear_in_coefficients() {
        let basis = two_function_basis(0.9, 1.5, 0.8);
        let p = Vector::from_vec(vec![0.4, -0.2]);
        let q = Vector::from_vec(vec![-1.1, 0.7]);
        let r = vector![0.3, -0.5, 0.2];
        let lhs = density_at_point(&(&p + &q), &basis, &r);
        let rhs = density_at_point(&p, &basis, &r) + density_at_point(&q, &basis, &r);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            BasisSet::new(vec![], vec![]),
            Err(BasisError::Empty)
        ));
        assert!(matches!(
            BasisSet::new(vec![vector![0.0, 0.0, 0.0]], vec![-1.0]),
            Err(BasisError::BadExponent { .. })
        ));
        assert!(matches!(
            BasisSet::new(vec![vector![f64::NAN, 0.0, 0.0]], vec![1.0]),
            Err(BasisError::BadCenter { .. })
        ));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            OverlapMatrix::new(asym),
            Err(BasisError::NotSymmetric { .. })
        ));
    }
}
