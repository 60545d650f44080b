//! Small dense linear algebra for dimensions 2 and 3.
//!
//! Points and matrices are stored with fixed capacity 3; in dimension 2 the
//! unused coordinate is kept at zero, so dot products and norms can run over
//! all three slots unconditionally.

use crate::error::{Error, Result};
use crate::num::{Scalar, cast};

/// A point or vector in R^n, n <= 3, zero-padded.
pub type Point<S> = [S; 3];

/// Symmetric n x n matrix, zero-padded outside the leading n x n block.
pub type Matrix<S> = [[S; 3]; 3];

#[inline]
pub fn point2<S: Scalar>(x: S, y: S) -> Point<S> {
    [x, y, S::zero()]
}

#[inline]
pub fn point3<S: Scalar>(x: S, y: S, z: S) -> Point<S> {
    [x, y, z]
}

#[inline]
pub fn add<S: Scalar>(a: Point<S>, b: Point<S>) -> Point<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<S: Scalar>(a: Point<S>, b: Point<S>) -> Point<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<S: Scalar>(a: Point<S>, s: S) -> Point<S> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<S: Scalar>(a: Point<S>, b: Point<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<S: Scalar>(a: Point<S>) -> S {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist<S: Scalar>(a: Point<S>, b: Point<S>) -> S {
    norm(sub(a, b))
}

#[inline]
pub fn mat_vec<S: Scalar>(m: &Matrix<S>, v: Point<S>) -> Point<S> {
    let mut out = [S::zero(); 3];
    for (i, row) in m.iter().enumerate() {
        out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

pub fn mat_mul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = S::zero();
            for (k, bk) in b.iter().enumerate() {
                s = s + a[i][k] * bk[j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn mat_add<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

pub fn mat_sub<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

pub fn mat_scale<S: Scalar>(a: &Matrix<S>, s: S) -> Matrix<S> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = *v * s;
        }
    }
    out
}

/// Identity on the leading n x n block.
pub fn identity<S: Scalar>(n: usize) -> Matrix<S> {
    let mut m = [[S::zero(); 3]; 3];
    for (d, row) in m.iter_mut().enumerate().take(n) {
        row[d] = S::one();
    }
    m
}

/// Maximum absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry<S: Scalar>(m: &Matrix<S>, n: usize) -> S {
    let mut worst = S::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[i][j] - m[j][i]).abs());
        }
    }
    worst
}

/// `(m + m^T) / 2`.
pub fn symmetrize<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    let half = cast::<S>(0.5);
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (m[i][j] + m[j][i]) * half;
        }
    }
    out
}

/// Frobenius norm over the leading n x n block.
pub fn frobenius<S: Scalar>(m: &Matrix<S>, n: usize) -> S {
    let mut s = S::zero();
    for row in m.iter().take(n) {
        for &v in row.iter().take(n) {
            s = s + v * v;
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
///
/// Returns eigenvalues (ascending) and the matching orthonormal eigenvectors
/// as columns. The rotation schedule is fixed, so results are deterministic.
pub fn sym_eigen<S: Scalar>(m: &Matrix<S>, n: usize) -> (Point<S>, Matrix<S>) {
    let mut a = symmetrize(m);
    let mut v = identity::<S>(3);
    // Padding must not mix with the active block.
    for d in n..3 {
        a[d][d] = S::zero();
        v[d][d] = S::one();
    }

    let tol = cast::<S>(1e-30);
    for _sweep in 0..64 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + a[i][j] * a[i][j];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= S::min_positive_value() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (cast::<S>(2.0) * a[p][q]);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for vk in v.iter_mut().take(n) {
                    let vp = vk[p];
                    let vq = vk[q];
                    vk[p] = c * vp - s * vq;
                    vk[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut eig = [S::zero(); 3];
    for d in 0..n {
        eig[d] = a[d][d];
    }
    // Sort ascending with the same permutation applied to columns.
    let mut order = [0usize, 1, 2];
    order[..n].sort_by(|&i, &j| eig[i].partial_cmp(&eig[j]).expect("finite eigenvalues"));
    let mut eig_sorted = [S::zero(); 3];
    let mut v_sorted = identity::<S>(3);
    for (slot, &src) in order.iter().enumerate().take(n) {
        eig_sorted[slot] = eig[src];
        for k in 0..n {
            v_sorted[k][slot] = v[k][src];
        }
    }
    (eig_sorted, v_sorted)
}

/// Eigenvalue range of a symmetric matrix.
pub fn sym_eigen_range<S: Scalar>(m: &Matrix<S>, n: usize) -> (S, S) {
    let (eig, _) = sym_eigen(m, n);
    (eig[0], eig[n - 1])
}

/// Spectral (operator) norm of a symmetric matrix.
pub fn sym_op_norm<S: Scalar>(m: &Matrix<S>, n: usize) -> S {
    let (lo, hi) = sym_eigen_range(m, n);
    lo.abs().max(hi.abs())
}

/// Rebuilds `V f(D) V^T` from an eigendecomposition.
pub fn sym_from_eigen<S: Scalar>(
    eig: Point<S>,
    vecs: &Matrix<S>,
    n: usize,
    f: impl Fn(S) -> S,
) -> Matrix<S> {
    let mut out = [[S::zero(); 3]; 3];
    for i in 0..n {
        for j in 0..n {
            let mut s = S::zero();
            for k in 0..n {
                s = s + vecs[i][k] * f(eig[k]) * vecs[j][k];
            }
            out[i][j] = s;
        }
    }
    symmetrize(&out)
}

/// Determinant of the leading n x n block.
pub fn det<S: Scalar>(m: &Matrix<S>, n: usize) -> S {
    match n {
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("dimension restricted to n in {{2,3}}"),
    }
}

/// Checks symmetry (to `sym_tol`, absolute) and strict positive
/// definiteness; returns the eigen range.
pub fn check_spd<S: Scalar>(m: &Matrix<S>, n: usize, sym_tol: S) -> Result<(S, S)> {
    if asymmetry(m, n) > sym_tol {
        return Err(Error::InvalidMatrix(format!(
            "matrix is not symmetric within {sym_tol:e}"
        )));
    }
    let (lo, hi) = sym_eigen_range(m, n);
    if !(lo > S::zero()) {
        return Err(Error::InvalidMatrix(format!(
            "matrix is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    Ok((lo, hi))
}

/// Rotation by `angle` in the (0,1)-plane, identity on the third axis.
pub fn rotation_xy<S: Scalar>(angle: S) -> Matrix<S> {
    let (s, c) = angle.sin_cos();
    let mut m = identity::<S>(3);
    m[0][0] = c;
    m[0][1] = -s;
    m[1][0] = s;
    m[1][1] = c;
    m
}
