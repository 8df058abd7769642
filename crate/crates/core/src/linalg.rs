//! Fixed-size vector and matrix helpers.
//!
//! Everything here works on plain arrays so it stays generic over [`Real`]
//! without pulling in a full linear algebra crate.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3x3 matrix.
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn distance_squared<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    let d = sub(a, b);
    dot(d, d)
}

pub fn zeros3<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn identity3<T: Real>() -> Mat3<T> {
    let mut m = zeros3();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

/// Cross-product matrix: `skew(a) * b == cross(a, b)`.
pub fn skew<T: Real>(a: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    [[z, -a[2], a[1]], [a[2], z, -a[0]], [-a[1], a[0], z]]
}

pub fn mat3_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros3();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros3();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_vec<T: Real>(a: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn mat3_add<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

/// `a * b * a^T`.
pub fn mat3_sandwich<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    mat3_mul(&mat3_mul(a, b), &mat3_transpose(a))
}

pub fn mat3_inverse<T: Real>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let scale = m.iter().flatten().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() || det.abs() <= T::epsilon() * scale * scale * scale {
        return None;
    }
    let inv_det = T::one() / det;
    Some([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}

/// Eigen-decomposition of a symmetric `N x N` matrix by cyclic Jacobi
/// rotations.
///
/// Returns eigenvalues in ascending order and the matching unit eigenvectors
/// as the *columns* of the second matrix.
pub fn symmetric_eigen<T: Real, const N: usize>(a: &[[T; N]; N]) -> ([T; N], [[T; N]; N]) {
    let mut m = *a;
    let mut v = [[T::zero(); N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    let two = T::lit(2.0);
    for _sweep in 0..64 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..N {
            for j in 0..N {
                let s = m[i][j] * m[i][j];
                total += s;
                if i != j {
                    off += s;
                }
            }
        }
        if off <= total * T::epsilon() * T::epsilon() || off == T::zero() {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if m[p][q] == T::zero() {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (two * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..N {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: [usize; N] = [0; N];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut values = [T::zero(); N];
    let mut vectors = [[T::zero(); N]; N];
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = m[src][src];
        for k in 0..N {
            vectors[k][dst] = v[k][src];
        }
    }
    (values, vectors)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `rel_tol` times the largest
/// absolute entry of `a`.
pub fn solve<T: Real, const N: usize>(a: &[[T; N]; N], b: &[T; N], rel_tol: T) -> Option<[T; N]> {
    let mut m = *a;
    let mut rhs = *b;
    let scale = m.iter().flatten().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..N {
        let pivot_row = (col..N)
            .max_by(|&i, &j| {
                m[i][col]
                    .abs()
                    .partial_cmp(&m[j][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if m[pivot_row][col].abs() <= rel_tol * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in (col + 1)..N {
            let f = m[row][col] / m[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..N {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let r = rhs[col];
            rhs[row] -= f * r;
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..N {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}
