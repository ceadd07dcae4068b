//! Small dense linear algebra for the convergence lab, backed by `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const CLAMP_TOL: f64 = 1e-10;
const REJECT_TOL: f64 = 1e-6;

pub(crate) fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.set(r, c, m[(r, c)]);
        }
    }
    out
}

fn require_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: m.rows(),
            found: m.cols(),
        });
    }
    Ok(())
}

/// Symmetric square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues in `[-1e-6, 1e-10)` are treated as rounding noise and clamped
/// to zero; anything more negative is rejected.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    require_square(m, "psd_sqrt")?;
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m.get(i, j), m.get(j, i));
            if (a - b).abs() > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    let eig = SymmetricEigen::new(to_na(m));
    let mut roots = DVector::zeros(n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -REJECT_TOL {
            return Err(Error::NegativeEigenvalue(lambda));
        }
        roots[i] = if lambda < CLAMP_TOL { 0.0 } else { lambda.sqrt() };
    }
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    // symmetrize away the last-bit asymmetry of the product
    let s = (&s + s.transpose()) * 0.5;
    Ok(from_na(&s))
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    require_square(a, "solve")?;
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "solve",
            expected: a.rows(),
            found: b.len(),
        });
    }
    let lu = to_na(a).lu();
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(x.iter().copied().collect())
}

/// Thin SVD `A = U diag(σ) Vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    let decomposition = to_na(a).svd(true, true);
    let u = decomposition.u.ok_or(Error::Singular)?;
    let v_t = decomposition.v_t.ok_or(Error::Singular)?;
    let mut order: Vec<usize> = (0..decomposition.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        decomposition.singular_values[j].total_cmp(&decomposition.singular_values[i])
    });
    let sv: Vec<f64> = order.iter().map(|&i| decomposition.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    Ok(Svd {
        u: from_na(&u_sorted),
        singular_values: sv,
        v: from_na(&v_sorted),
    })
}

/// Ratio of largest to smallest singular value (∞ for singular input).
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = svd(a)?;
    let max = s.singular_values.first().copied().unwrap_or(0.0);
    let min = s.singular_values.last().copied().unwrap_or(0.0);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn symmetric_eigen_range(m: &Matrix) -> Result<(f64, f64)> {
    require_square(m, "symmetric_eigen_range")?;
    let sym = to_na(m);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.singular_values.first().copied().unwrap_or(0.0))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    require_square(m, "spectral_radius")?;
    Ok(to_na(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix,
/// with column signs fixed so the law is Haar.
pub fn random_orthogonal(n: usize, rng: &mut super::RngStream) -> Matrix {
    let g = to_na(&rng.normal_matrix(n, n));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    from_na(&q)
}
