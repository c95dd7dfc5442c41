//! Dense linear algebra for small symmetric matrices (K up to ~32).
//!
//! Matrices are stored row-major in a flat `Vec<f64>`. The eigensolver is
//! cyclic Jacobi: for the matrix sizes that occur here, robustness matters
//! more than speed.

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps before declaring non-convergence.
const MAX_SWEEPS: usize = 100;

pub fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        y[i] = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
    }
    y
}

pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

pub fn quad_form(a: &[f64], n: usize, x: &[f64]) -> f64 {
    let ax = mat_vec(a, n, x);
    x.iter().zip(&ax).map(|(xi, yi)| xi * yi).sum()
}

fn off_diag_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

fn frobenius_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of a row-major `n x n` matrix. Converges when the off-diagonal
/// Frobenius norm drops below `1e-12` times the trace magnitude (with a
/// Frobenius-norm floor so trace-free matrices still terminate).
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let tol = 1e-12 * trace.abs().max(frobenius_norm(a));

    let mut sweeps = 0;
    while off_diag_norm(&m, n) > tol {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps; matrix = {m:?}"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rows/columns p and q of m
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                // rotation annihilates the (p,q) element exactly
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigvecs = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            eigvecs[k * n + new_col] = v[k * n + old_col];
        }
    }
    Ok((eigvals, eigvecs))
}

/// Reassemble `V * diag(d) * V^T` from an eigenbasis, symmetrized exactly.
pub fn reconstruct(eigvals: &[f64], eigvecs: &[f64], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..n {
                s += eigvals[k] * eigvecs[i * n + k] * eigvecs[j * n + k];
            }
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    m
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues above `1e-12` times the largest eigenvalue are inverted;
/// everything else is treated as zero.
pub fn pseudo_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (eigvals, eigvecs) = jacobi_eigen(a, n)?;
    let lambda_max = eigvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = 1e-12 * lambda_max.abs();
    let inv: Vec<f64> = eigvals
        .iter()
        .map(|&l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 })
        .collect();
    Ok(reconstruct(&inv, &eigvecs, n))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clamped to 0).
pub fn sqrt_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (eigvals, eigvecs) = jacobi_eigen(a, n)?;
    let roots: Vec<f64> = eigvals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(reconstruct(&roots, &eigvecs, n))
}

/// Spectral norm of a general (possibly non-symmetric) matrix, computed as
/// `sqrt(lambda_max(M^T M))`.
pub fn spectral_norm(m: &[f64], n: usize) -> Result<f64> {
    let mut mtm = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += m[k * n + i] * m[k * n + j];
            }
            mtm[i * n + j] = s;
        }
    }
    let (eigvals, _) = jacobi_eigen(&mtm, n)?;
    let lmax = eigvals.last().copied().unwrap_or(0.0);
    Ok(lmax.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn eigen_of_diagonal() {
        let a = vec![3.0, 0.0, 0.0, 1.0];
        let (vals, vecs) = jacobi_eigen(&a, 2).unwrap();
        assert_close(vals[0], 1.0, 1e-14);
        assert_close(vals[1], 3.0, 1e-14);
        // eigenvector of 1.0 is e2
        assert_close(vecs[0 * 2 + 0].abs(), 0.0, 1e-14);
        assert_close(vecs[1 * 2 + 0].abs(), 1.0, 1e-14);
    }

    #[test]
    fn eigen_known_2x2() {
        // [[2,1],[1,2]] -> eigenvalues 1, 3
        let a = vec![2.0, 1.0, 1.0, 2.0];
        let (vals, vecs) = jacobi_eigen(&a, 2).unwrap();
        assert_close(vals[0], 1.0, 1e-12);
        assert_close(vals[1], 3.0, 1e-12);
        let back = reconstruct(&vals, &vecs, 2);
        for (x, y) in a.iter().zip(&back) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn eigen_zero_and_trace_free() {
        let (vals, _) = jacobi_eigen(&vec![0.0; 9], 3).unwrap();
        assert!(vals.iter().all(|&v| v == 0.0));
        // trace-free matrix must still terminate
        let a = vec![0.0, 1.0, 1.0, 0.0];
        let (vals, _) = jacobi_eigen(&a, 2).unwrap();
        assert_close(vals[0], -1.0, 1e-12);
        assert_close(vals[1], 1.0, 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let x: f64 = rng.gen_range(-2.0..2.0);
                    a[i * n + j] = x;
                    a[j * n + i] = x;
                }
            }
            let (vals, vecs) = jacobi_eigen(&a, n).unwrap();
            let back = reconstruct(&vals, &vecs, n);
            for (x, y) in a.iter().zip(&back) {
                assert_close(*x, *y, 1e-10);
            }
            // ascending order
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-14);
            }
        }
    }

    #[test]
    fn pseudo_inverse_of_rank_one_ones() {
        // pinv of the 2x2 all-ones matrix is ones/4
        let a = vec![1.0, 1.0, 1.0, 1.0];
        let p = pseudo_inverse(&a, 2).unwrap();
        for x in &p {
            assert_close(*x, 0.25, 1e-12);
        }
        // A pinv A = A
        let apa = mat_mul(&mat_mul(&a, &p, 2), &a, 2);
        for (x, y) in apa.iter().zip(&a) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn spectral_norm_matches_eigen_for_symmetric() {
        let a = vec![2.0, 1.0, 1.0, 2.0];
        assert_close(spectral_norm(&a, 2).unwrap(), 3.0, 1e-12);
        // non-symmetric: [[0,1],[0,0]] has spectral norm 1
        let b = vec![0.0, 1.0, 0.0, 0.0];
        assert_close(spectral_norm(&b, 2).unwrap(), 1.0, 1e-12);
    }
}
