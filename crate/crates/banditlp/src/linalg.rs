//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `Vec<f64>` / `Vec<Vec<f64>>` (row-major). The
//! matrices involved are tiny (posterior dimension is the last hidden width
//! plus one), so a hand-rolled Cholesky beats pulling in a full linalg stack.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dot product. Panics on length mismatch in debug builds only.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = A x` for row-major `A`.
pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// Squared Euclidean norm.
#[inline]
pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Frobenius norm of a row-major matrix.
pub fn frobenius_norm(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|row| norm_sq(row)).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LinalgError> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "row {i} has length {}, expected {n}",
                a[i].len()
            )));
        }
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter for nearly singular inputs.
///
/// Tries the plain factorization first, then adds `jitter * mean(diag)` with
/// jitter escalating from 1e-10 to 1e-2. Returns the factor and the jitter
/// that was actually applied (0.0 when none was needed).
pub fn cholesky_jitter(a: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64), LinalgError> {
    if let Ok(l) = cholesky(a) {
        return Ok((l, 0.0));
    }
    let n = a.len();
    let mean_diag = (0..n).map(|i| a[i][i].abs()).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut jitter = 1e-10;
    while jitter <= 1e-2 {
        let mut aj = a.to_vec();
        for (i, row) in aj.iter_mut().enumerate() {
            row[i] += jitter * scale;
        }
        if let Ok(l) = cholesky(&aj) {
            return Ok((l, jitter * scale));
        }
        jitter *= 10.0;
    }
    // Surface the plain failure; the caller sees the original matrix's defect.
    cholesky(a).map(|l| (l, 0.0))
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub fn cho_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, &y)
}

/// Quadratic form `g^T A^{-1} g` given the Cholesky factor `L` of `A`.
pub fn quad_form_inv(l: &[Vec<f64>], g: &[f64]) -> f64 {
    let y = solve_lower(l, g);
    norm_sq(&y)
}
