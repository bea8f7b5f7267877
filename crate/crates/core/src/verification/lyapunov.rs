//! Lyapunov matrices of the second-order error dynamics.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix6};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("matrix is not Hurwitz (max real eigenvalue part {max_re})")]
    NotHurwitz { max_re: f64 },
    #[error("matrix must be square")]
    NotSquare,
    #[error("Lyapunov operator is singular")]
    Singular,
}

/// `A = [0, I; -k1 I, -k2 I]` for gains `(k1, k2)` acting on `(e1, e2)`.
pub fn closed_loop_matrix(k1: f64, k2: f64) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    let i = Matrix3::identity();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&i);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-k1 * i));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-k2 * i));
    a
}

/// Scalar block of the solution of `P A + A^T P = -I` for one axis.
pub fn closed_form_block(k1: f64, k2: f64) -> Result<Matrix2<f64>, LyapunovError> {
    if !(k1 > 0.0 && k2 > 0.0) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -k1, -k2]);
        return Err(LyapunovError::NotHurwitz { max_re: max_real_eigenvalue(&a) });
    }
    let off = 1.0 / (2.0 * k1);
    Ok(Matrix2::new(
        (k1 * k1 + k1 + k2 * k2) / (2.0 * k1 * k2),
        off,
        off,
        (k1 + 1.0) / (2.0 * k1 * k2),
    ))
}

/// Closed-form `P` for the three-axis system, `block (x) I3`.
pub fn closed_form(k1: f64, k2: f64) -> Result<Matrix6<f64>, LyapunovError> {
    let b = closed_form_block(k1, k2)?;
    let mut p = Matrix6::zeros();
    for r in 0..2 {
        for c in 0..2 {
            p.fixed_view_mut::<3, 3>(3 * r, 3 * c).copy_from(&(Matrix3::identity() * b[(r, c)]));
        }
    }
    Ok(p)
}

pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    crate::linalg::spectral_abscissa(a)
}

/// Solves `P A + A^T P = -Q` through the Kronecker form of the operator.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LyapunovError> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(LyapunovError::NotSquare);
    }
    let max_re = max_real_eigenvalue(a);
    if !(max_re < 0.0) {
        return Err(LyapunovError::NotHurwitz { max_re });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // Column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P.
    let op = id.kronecker(&at) + at.kronecker(&id);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let x = op.lu().solve(&rhs).ok_or(LyapunovError::Singular)?;
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Max-abs entry of `P A + A^T P + I`.
pub fn residual(p: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (p * a + a.transpose() * p + DMatrix::<f64>::identity(n, n)).amax()
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration.
pub fn lambda_max_power(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = p.nrows();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = p * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gains_block() {
        let b = closed_form_block(1.0, 1.0).unwrap();
        assert_eq!(b, Matrix2::new(1.5, 0.5, 0.5, 1.0));
    }

    #[test]
    fn non_hurwitz_is_rejected() {
        assert!(matches!(closed_form_block(-1.0, 1.0), Err(LyapunovError::NotHurwitz { .. })));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(solve_lyapunov(&a, &DMatrix::identity(2, 2)), Err(LyapunovError::NotHurwitz { .. })));
    }

    #[test]
    fn numeric_matches_closed_form() {
        let a = closed_loop_matrix(16.0, 8.0);
        let a = DMatrix::from_column_slice(6, 6, a.as_slice());
        let p = solve_lyapunov(&a, &DMatrix::identity(6, 6)).unwrap();
        let c = closed_form(16.0, 8.0).unwrap();
        let c = DMatrix::from_column_slice(6, 6, c.as_slice());
        assert!((&p - &c).amax() < 1e-12);
        assert!(residual(&c, &a) < 1e-12);
    }

    #[test]
    fn power_iteration_matches_eigensolver() {
        let p = DMatrix::from_column_slice(6, 6, closed_form(4.0, 4.0).unwrap().as_slice());
        let direct = p.clone().symmetric_eigen().eigenvalues.max();
        assert!((lambda_max_power(&p, 1e-14, 10_000) - direct).abs() < 1e-8);
    }
}
