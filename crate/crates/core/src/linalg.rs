//! Dense linear-algebra helpers on column-major `nalgebra` matrices.
//!
//! The Gram products dominate the cost of a Newton fit, so they go through
//! `matrixmultiply` and only compute the upper block triangle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

const GRAM_BLOCK: usize = 128;

/// `XᵀX` for a column-major `n × p` matrix.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut c = DMatrix::<f64>::zeros(p, p);
    let a = x.as_slice();
    let mut start = 0;
    while start < p {
        let end = (start + GRAM_BLOCK).min(p);
        // C[0..end, start..end] = X[:, 0..end]ᵀ X[:, start..end]
        unsafe {
            matrixmultiply::dgemm(
                end,
                n,
                end - start,
                1.0,
                a.as_ptr(),
                n as isize,
                1,
                a.as_ptr().add(start * n),
                1,
                n as isize,
                0.0,
                c.as_mut_slice().as_mut_ptr().add(start * p),
                1,
                p as isize,
            );
        }
        start = end;
    }
    symmetrize_from_upper(&mut c);
    c
}

fn gram_f32(a: &[f32], n: usize, p: usize) -> DMatrix<f64> {
    let mut c = vec![0f32; p * p];
    let mut start = 0;
    while start < p {
        let end = (start + GRAM_BLOCK).min(p);
        unsafe {
            matrixmultiply::sgemm(
                end,
                n,
                end - start,
                1.0,
                a.as_ptr(),
                n as isize,
                1,
                a.as_ptr().add(start * n),
                1,
                n as isize,
                0.0,
                c.as_mut_ptr().add(start * p),
                1,
                p as isize,
            );
        }
        start = end;
    }
    let mut out = DMatrix::from_iterator(p, p, c.into_iter().map(f64::from));
    symmetrize_from_upper(&mut out);
    out
}

fn symmetrize_from_upper(c: &mut DMatrix<f64>) {
    let p = c.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            c[(i, j)] = c[(j, i)];
        }
    }
}

/// `XᵀWX` with non-negative weights, in double precision.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    assert_eq!(w.len(), n);
    let sw: Vec<f64> = w.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut scaled = x.clone();
    for j in 0..p {
        for (v, s) in scaled.column_mut(j).iter_mut().zip(&sw) {
            *v *= s;
        }
    }
    gram(&scaled)
}

/// `XᵀWX` accumulated in single precision. About twice as fast as
/// [`weighted_gram`]; good enough for a Newton direction when the gradient is
/// kept in double precision.
pub fn weighted_gram_f32(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    assert_eq!(w.len(), n);
    let sw: Vec<f64> = w.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut scaled = Vec::with_capacity(n * p);
    for j in 0..p {
        scaled.extend(x.column(j).iter().zip(&sw).map(|(v, s)| (v * s) as f32));
    }
    gram_f32(&scaled, n, p)
}

/// Cholesky factorization, retrying with a growing ridge when the matrix is
/// numerically singular. Returns the factor and the ridge that was added.
pub fn cholesky_with_ridge(m: &DMatrix<f64>, base_ridge: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let p = m.nrows();
    let scale = (m.trace() / p.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = base_ridge.max(1e-14) * scale;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for i in 0..p {
            shifted[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "matrix of order {p} stays indefinite after ridge {ridge:e}"
    )))
}

/// Cholesky factor `L` with a positive-definiteness check relative to the
/// largest diagonal entry.
pub fn cholesky_strict(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let max_diag = m.diagonal().iter().cloned().fold(0.0, f64::max);
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} is not positive definite")))?;
    let l = chol.unpack();
    let min_pivot = l.diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-10 * max_diag) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} is numerically singular (smallest pivot {min_pivot:e})"
        )));
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix.
pub fn inv_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(p, p))
        .expect("triangular factor has a zero pivot")
}

/// `[(LLᵀ)⁻¹]_jj` from the lower Cholesky factor `L`.
pub fn inverse_diag_entry(l: &DMatrix<f64>, j: usize) -> f64 {
    let p = l.nrows();
    let mut e = DVector::zeros(p);
    e[j] = 1.0;
    // Only rows j.. of L⁻¹e_j are non-zero.
    let mut z = vec![0.0; p];
    for i in j..p {
        let mut s = e[i];
        for k in j..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z[j..].iter().map(|v| v * v).sum()
}

/// All diagonal entries of `(LLᵀ)⁻¹`.
pub fn inverse_diag(l: &DMatrix<f64>) -> Vec<f64> {
    let li = inv_lower(l);
    (0..l.nrows())
        .map(|j| li.column(j).iter().map(|v| v * v).sum())
        .collect()
}
