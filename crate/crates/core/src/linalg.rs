//! Small dense helpers on complex matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Matrix exponential by scaling and squaring with a Taylor kernel.
///
/// Used for the few-mode generators of the optical channels (at most a few
/// hundred rows), where the generator norm is modest.
pub fn expm(m: &CMatrix) -> CMatrix {
    assert!(m.is_square(), "expm needs a square matrix");
    let n = m.nrows();
    let norm = m.iter().map(|z| z.norm()).fold(0.0_f64, f64::max) * n as f64;
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scale = 0.5_f64.powi(squarings as i32);
    let a = m * Complex64::new(scale, 0.0);

    let mut result = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &a * Complex64::new(1.0 / k as f64, 0.0);
        result += &term;
        if term.iter().map(|z| z.norm()).fold(0.0_f64, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut vals: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    // exp(-i H) through the Hermitian eigenbasis, independent of the Taylor route.
    fn expm_via_eigen(h: &CMatrix) -> CMatrix {
        let eig = h.clone().symmetric_eigen();
        let n = h.nrows();
        let mut d = CMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            d[(k, k)] = Complex64::from_polar(1.0, -lam);
        }
        &eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }

    #[test]
    fn taylor_matches_eigen_route() {
        let n = 6;
        let mut h = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let x = ((i * 7 + j * 3) % 5) as f64 * 0.37 - 0.6;
                let y = ((i * 2 + j * 5) % 7) as f64 * 0.21 - 0.5;
                h[(i, j)] += Complex64::new(x, y);
                h[(j, i)] += Complex64::new(x, -y);
            }
        }
        let gen = &h * Complex64::new(0.0, -1.0);
        let diff = expm(&gen) - expm_via_eigen(&h);
        assert!(max_abs(&diff) < 1e-12, "diff {}", max_abs(&diff));
    }

    #[test]
    fn zero_generator_is_identity() {
        let z = CMatrix::zeros(4, 4);
        assert_eq!(expm(&z), CMatrix::identity(4, 4));
    }
}
