//! Symmetric eigenvalues, singular values and the L2 matrix measure of
//! additive compounds.

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::compound::{add_compound, CompoundError};
use crate::matrix::Matrix;

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not symmetric (asymmetry {asymmetry:e} vs norm {norm:e})")]
    NotSymmetric { asymmetry: f64, norm: f64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("order k={k} out of range for dimension {n}")]
    OrderOutOfRange { k: usize, n: usize },
    #[error("matrix is not positive definite (smallest eigenvalue {min:e})")]
    NotPositiveDefinite { min: f64 },
    #[error("non-finite entry in matrix")]
    NonFinite,
    #[error(transparent)]
    Compound(#[from] CompoundError),
}

/// Real spectrum sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct EigList(Vec<f64>);

impl EigList {
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0[0]
    }

    pub fn min(&self) -> f64 {
        *self.0.last().expect("non-empty spectrum")
    }

    /// Sum of the k largest values.
    pub fn top_sum(&self, k: usize) -> f64 {
        self.0.iter().take(k).sum()
    }
}

fn symmetrized(s: &Matrix) -> Result<Matrix, SpectralError> {
    let (rows, cols) = s.shape();
    if rows != cols {
        return Err(SpectralError::NotSquare { rows, cols });
    }
    if !s.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    let asymmetry = (s - &s.transpose()).norm_inf();
    let norm = s.norm_inf();
    if asymmetry > SYMMETRY_TOL * norm {
        return Err(SpectralError::NotSymmetric { asymmetry, norm });
    }
    Ok(s.symmetric_part())
}

/// Full spectrum of a symmetric matrix, descending.
pub fn sym_eigs_desc(s: &Matrix) -> Result<EigList, SpectralError> {
    let sym = symmetrized(s)?;
    let eig = SymmetricEigen::new(sym.to_nalgebra());
    Ok(EigList::from_unsorted(
        eig.eigenvalues.iter().copied().collect(),
    ))
}

pub fn top_k_eig_sum(s: &Matrix, k: usize) -> Result<f64, SpectralError> {
    let n = s.rows();
    if k == 0 || k > n {
        return Err(SpectralError::OrderOutOfRange { k, n });
    }
    Ok(sym_eigs_desc(s)?.top_sum(k))
}

pub fn lambda_max(s: &Matrix) -> Result<f64, SpectralError> {
    Ok(sym_eigs_desc(s)?.max())
}

pub fn lambda_min(s: &Matrix) -> Result<f64, SpectralError> {
    Ok(sym_eigs_desc(s)?.min())
}

/// Singular values, descending, from the eigenvalues of the smaller Gram
/// matrix. Gram eigenvalues below the rounding floor `dim·ε·λmax` carry no
/// information and are clipped to zero, so rank-deficient inputs give exact
/// zeros instead of `sqrt(ε)`-sized noise.
pub fn singular_values_desc(a: &Matrix) -> EigList {
    let gram = if a.cols() <= a.rows() {
        &a.transpose() * a
    } else {
        a * &a.transpose()
    };
    let eig = SymmetricEigen::new(gram.symmetric_part().to_nalgebra());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = gram.rows() as f64 * f64::EPSILON * top;
    EigList::from_unsorted(
        eig.eigenvalues
            .iter()
            .map(|&v| if v > floor { v.sqrt() } else { 0.0 })
            .collect(),
    )
}

/// L2 matrix measure of `A^[k]`: the sum of the k largest eigenvalues of
/// the symmetric part of A.
pub fn mu2_add_compound(a: &Matrix, k: usize) -> Result<f64, SpectralError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(SpectralError::NotSquare { rows, cols });
    }
    top_k_eig_sum(&a.symmetric_part(), k)
}

/// Same quantity computed as the largest eigenvalue of the symmetric part
/// of the explicit additive compound.
pub fn mu2_add_compound_explicit(a: &Matrix, k: usize) -> Result<f64, SpectralError> {
    let ak = add_compound(a, k)?;
    lambda_max(&ak.symmetric_part())
}

/// Symmetric square root of a symmetric positive definite matrix.
pub fn sym_sqrt(p: &Matrix) -> Result<Matrix, SpectralError> {
    let sym = symmetrized(p)?;
    let eig = SymmetricEigen::new(sym.to_nalgebra());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(SpectralError::NotPositiveDefinite { min });
    }
    let q = &eig.eigenvectors;
    let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(Matrix::from_nalgebra(&(q * d * q.transpose())).symmetric_part())
}

/// `λmin(S) >= -tol`.
pub fn is_psd(s: &Matrix, tol: f64) -> Result<bool, SpectralError> {
    Ok(lambda_min(s)? >= -tol)
}
