//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

/// Eigenvalues of a general complex square matrix via complex Schur.
pub fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    for i in 1..n {
        if t[(i, i - 1)].norm() > 1e-10 * scale {
            return Err(Error::NumericalFailure(
                "Schur form not triangular".into(),
            ));
        }
    }
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Eigenvalues (ascending) of a Hermitian matrix; only the lower triangle is read.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let h = hermitize(m);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// (A + A^H)/2.
pub fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// max |A − A^H| relative to max |A|.
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

/// Ascending eigenvalues of the pencil A x = λ B x, B Hermitian positive definite.
pub fn generalized_hermitian_eigenvalues(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<Vec<f64>> {
    let chol = nalgebra::linalg::Cholesky::new(hermitize(b)).ok_or_else(|| {
        Error::NumericalFailure("right-hand Gram is not positive definite".into())
    })?;
    let l = chol.l();
    let a = hermitize(a);
    // C = L^{-1} A L^{-H}
    let y = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.adjoint())
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    Ok(hermitian_eigenvalues(&c))
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &DMatrix<C64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// LU solve with partial pivoting.
pub fn solve(m: &DMatrix<C64>, rhs: &DVector<C64>) -> Result<DVector<C64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericalFailure("singular linear system".into()))
}

/// Solve with a Hermitian positive definite matrix, falling back to LU.
pub fn solve_hpd(m: &DMatrix<C64>, rhs: &DVector<C64>) -> Result<DVector<C64>> {
    match nalgebra::linalg::Cholesky::new(hermitize(m)) {
        Some(ch) => Ok(ch.solve(rhs)),
        None => solve(m, rhs),
    }
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
