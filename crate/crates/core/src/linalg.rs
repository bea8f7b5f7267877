//! Dense helpers that need more care than the plain nalgebra calls.

use nalgebra::{Complex, DMatrix};

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues through a real Schur decomposition with an iteration cap.
/// The deflation tolerance is loosened step by step when the tightest one
/// stalls, which happens on some matrices with repeated eigenvalues.
pub fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    [f64::EPSILON, 1e-14, 1e-12, 1e-10]
        .iter()
        .find_map(|&eps| m.clone().try_schur(eps, SCHUR_MAX_ITER))
        .map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part of the spectrum, `NaN` when the decomposition fails.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).map_or(f64::NAN, |ev| ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_blocks_converge() {
        // Kronecker-structured matrix on which an uncapped Schur iteration stalls.
        let (k1, k2): (f64, f64) = (25.46212121212121, 11.545959595959596);
        let mut a = DMatrix::zeros(6, 6);
        for i in 0..3 {
            a[(i, i + 3)] = 1.0;
            a[(i + 3, i)] = -k1;
            a[(i + 3, i + 3)] = -k2;
        }
        let disc = (k2 * k2 - 4.0 * k1).sqrt();
        let expected = (-k2 + disc) / 2.0;
        assert!((spectral_abscissa(&a) - expected).abs() < 1e-9);
    }
}
