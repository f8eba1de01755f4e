//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition
//! and the symmetric matrix square root built on it.
//!
//! Matrices are row-major `Vec<F>` of size `n * n`. Jacobi is slow past a
//! few hundred dimensions but exact, deterministic, and free of external
//! dependencies, which is what the covariance computations here need.

use crate::scalar::Real;

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: returns `(eigenvalues,
/// eigenvectors)` with eigenvalues ascending and eigenvector `j` stored in
/// column `j` of the returned row-major matrix, so `A = V diag(l) V^T`.
pub fn sym_eigen<F: Real>(matrix: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = identity::<F>(n);

    let fro = a.iter().map(|x| *x * *x).sum::<F>().sqrt();
    let tol = F::epsilon() * fro.max(F::one());

    for _ in 0..MAX_SWEEPS {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
    }

    let mut eig: Vec<(F, usize)> = (0..n).map(|i| (a[i * n + i], i)).collect();
    eig.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let eigenvalues: Vec<F> = eig.iter().map(|e| e.0).collect();
    let mut vectors = vec![F::zero(); n * n];
    for (new_col, &(_, old_col)) in eig.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    (eigenvalues, vectors)
}

/// One Jacobi rotation zeroing `a[p][q]`.
fn rotate<F: Real>(a: &mut [F], v: &mut [F], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == F::zero() {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (F::of(2.0) * apq);
    // Stable tangent of the rotation angle.
    let t = if theta >= F::zero() {
        F::one() / (theta + (theta * theta + F::one()).sqrt())
    } else {
        F::one() / (theta - (theta * theta + F::one()).sqrt())
    };
    let c = F::one() / (t * t + F::one()).sqrt();
    let s = t * c;

    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = F::zero();
    a[q * n + p] = F::zero();

    for i in 0..n {
        if i != p && i != q {
            let aip = a[i * n + p];
            let aiq = a[i * n + q];
            let new_p = c * aip - s * aiq;
            let new_q = s * aip + c * aiq;
            a[i * n + p] = new_p;
            a[p * n + i] = new_p;
            a[i * n + q] = new_q;
            a[q * n + i] = new_q;
        }
    }
    for i in 0..n {
        let vip = v[i * n + p];
        let viq = v[i * n + q];
        v[i * n + p] = c * vip - s * viq;
        v[i * n + q] = s * vip + c * viq;
    }
}

/// Symmetric positive-semidefinite square root `A^{1/2}`, with negative
/// eigenvalues clamped to zero.
pub fn sym_sqrt<F: Real>(matrix: &[F], n: usize) -> Vec<F> {
    let (values, vectors) = sym_eigen(matrix, n);
    let roots: Vec<F> = values.iter().map(|l| l.max(F::zero()).sqrt()).collect();
    // V diag(sqrt(l)) V^T
    let mut out = vec![F::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = F::zero();
            for (k, r) in roots.iter().enumerate() {
                acc += vectors[i * n + k] * *r * vectors[j * n + k];
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
    out
}

pub fn identity<F: Real>(n: usize) -> Vec<F> {
    let mut m = vec![F::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = F::one();
    }
    m
}

pub fn mat_mul<F: Real>(a: &[F], b: &[F], n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == F::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn trace<F: Real>(a: &[F], n: usize) -> F {
    (0..n).map(|i| a[i * n + i]).sum()
}
