//! Small dense eigen-problems: real spectra, eigenvectors and the matrix
//! absolute value `|A| = R |Λ| R⁻¹` used by the path-integrated dissipation.
//!
//! `|A|` is formed as the Lagrange polynomial of `A` that interpolates `|λ|`
//! on the distinct eigenvalues. For a diagonalizable matrix this equals
//! `R |Λ| R⁻¹` exactly and needs no eigenvectors, which keeps repeated
//! eigenvalues (the unified systems double every wave speed) harmless.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative tolerance used to merge numerically repeated eigenvalues.
const CLUSTER_TOL: f64 = 1e-8;

/// Real eigenvalues of a square matrix, sorted ascending.
///
/// Complex pairs are reported as an error: hyperbolicity violations must
/// surface rather than be averaged away.
pub fn real_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a, "eigenvalue")?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = a.clone().schur();
    let eig = schur.eigenvalues().ok_or_else(|| Error::NonDiagonalizable {
        detail: "complex eigenvalue pair".into(),
    })?;
    let mut out: Vec<f64> = eig.iter().copied().collect();
    out.sort_by(|x, y| x.total_cmp(y));
    Ok(out)
}

/// Eigenvalues with a matching basis of eigenvectors (columns).
///
/// Each distinct eigenvalue contributes as many null vectors of `A − λI` as
/// its algebraic multiplicity; a shortfall means the matrix is defective.
pub fn real_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let eig = real_eigenvalues(a)?;
    let clusters = cluster(&eig, CLUSTER_TOL);
    let scale = a.amax().max(1.0);
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut col = 0;
    for (lambda, mult) in clusters {
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        for &k in order.iter().take(mult) {
            if svd.singular_values[k] > 1e-6 * scale {
                return Err(Error::NonDiagonalizable {
                    detail: format!("eigenvalue {lambda:e} is defective"),
                });
            }
            vectors.set_column(col, &v_t.row(k).transpose());
            values.push(lambda);
            col += 1;
        }
    }
    Ok((values, vectors))
}

/// `|A|` from the real spectrum of `A`, computed internally.
pub fn matrix_abs(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = real_eigenvalues(a)?;
    let distinct: Vec<f64> = cluster(&eig, CLUSTER_TOL).into_iter().map(|c| c.0).collect();
    let scale = a.amax().max(1.0);
    // minimal polynomial must have simple roots
    let n = a.nrows();
    let mut residual = DMatrix::<f64>::identity(n, n);
    for &l in &distinct {
        residual = (&residual * (a - DMatrix::<f64>::identity(n, n) * l)) / scale;
    }
    if residual.amax() > 1e-7 {
        return Err(Error::NonDiagonalizable {
            detail: format!("minimal-polynomial residual {:e}", residual.amax()),
        });
    }
    Ok(abs_from_spectrum(a, &distinct))
}

/// `|A|` given the eigenvalues of a matrix known to be diagonalizable.
///
/// Repeated entries in `eigenvalues` are merged.
pub fn abs_from_spectrum(a: &DMatrix<f64>, eigenvalues: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let distinct: Vec<f64> = cluster(&sorted, 1e-12).into_iter().map(|c| c.0).collect();
    let coeffs = interpolating_coefficients(&distinct);
    // Horner in A
    let mut acc = DMatrix::identity(n, n) * coeffs[coeffs.len() - 1];
    for &c in coeffs.iter().rev().skip(1) {
        acc = &acc * a;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

/// Monomial coefficients (lowest degree first) of the polynomial of degree
/// `< d` that takes the value `|λ_k|` at each of the `d` nodes `λ_k`.
fn interpolating_coefficients(nodes: &[f64]) -> Vec<f64> {
    let d = nodes.len().max(1);
    let mut total = vec![0.0; d];
    for (k, &lk) in nodes.iter().enumerate() {
        if lk == 0.0 {
            continue;
        }
        let mut basis = vec![1.0];
        let mut denom = 1.0;
        for (j, &lj) in nodes.iter().enumerate() {
            if j == k {
                continue;
            }
            let mut next = vec![0.0; basis.len() + 1];
            for (p, &c) in basis.iter().enumerate() {
                next[p + 1] += c;
                next[p] -= lj * c;
            }
            basis = next;
            denom *= lk - lj;
        }
        let w = lk.abs() / denom;
        for (p, c) in basis.into_iter().enumerate() {
            total[p] += w * c;
        }
    }
    total
}

/// Groups a sorted list into (representative, multiplicity) pairs.
fn cluster(sorted: &[f64], rel_tol: f64) -> Vec<(f64, usize)> {
    let scale = sorted.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out: Vec<(f64, usize, f64)> = Vec::new();
    for &v in sorted {
        match out.last_mut() {
            Some((_, count, sum)) if (v - *sum / *count as f64).abs() <= rel_tol * scale => {
                *count += 1;
                *sum += v;
            }
            _ => out.push((v, 1, v)),
        }
    }
    out.into_iter()
        .map(|(_, count, sum)| (sum / count as f64, count))
        .collect()
}

pub(crate) fn check_finite(a: &DMatrix<f64>, block: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { block })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn abs_of_scalar() {
        let a = DMatrix::from_element(1, 1, -3.0);
        assert_abs_diff_eq!(matrix_abs(&a).unwrap()[(0, 0)], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn abs_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -5.0]));
        let abs = matrix_abs(&a).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 5.0]));
        assert_abs_diff_eq!(abs, expected, epsilon = 1e-12);
    }

    #[test]
    fn abs_of_non_symmetric_matches_eigenbasis() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -4.0]);
        let (vals, vecs) = real_eigen(&a).unwrap();
        let inv = vecs.clone().try_inverse().unwrap();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            2,
            vals.iter().map(|v| v.abs()),
        ));
        let expected = &vecs * lam * inv;
        assert_abs_diff_eq!(matrix_abs(&a).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn repeated_eigenvalue_identity_block() {
        let a = DMatrix::identity(3, 3) * -2.0;
        assert_abs_diff_eq!(matrix_abs(&a).unwrap(), DMatrix::identity(3, 3) * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn complex_spectrum_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(matches!(matrix_abs(&a), Err(Error::NonDiagonalizable { .. })));
    }

    #[test]
    fn jordan_block_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(matrix_abs(&a), Err(Error::NonDiagonalizable { .. })));
        assert!(real_eigen(&a).is_err());
    }

    #[test]
    fn abs_is_idempotent() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 2.0, 0.5, 1.0, 0.0, 0.0, 0.0]);
        let once = matrix_abs(&a).unwrap();
        let twice = matrix_abs(&once).unwrap();
        assert_abs_diff_eq!(once, twice, epsilon = 1e-12);
    }
}
