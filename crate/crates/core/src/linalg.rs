//! Small dense helpers shared by the closed-form updates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition estimate above which a diagonal jitter is added.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;

pub(crate) enum SpdFactor {
    Ok(Cholesky<f64, Dyn>),
    /// Factorization only succeeded after adding `jitter` to the diagonal.
    Jittered(Cholesky<f64, Dyn>, f64),
}

impl SpdFactor {
    pub(crate) fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Ok(c) | SpdFactor::Jittered(c, _) => c.solve(rhs),
        }
    }
}

/// Cheap condition estimate from the Cholesky pivots (a lower bound on the
/// true 2-norm condition number).
fn condition_estimate(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// Cholesky factorization of a symmetric positive-definite Gram matrix.
///
/// Returns `None` when the matrix is singular or its condition estimate
/// exceeds [`CONDITION_LIMIT`] and `allow_jitter` is false. With jitter
/// allowed, `1e-10 * trace / K` is added to the diagonal once.
pub(crate) fn factor_spd(gram: &DMatrix<f64>, allow_jitter: bool) -> Option<SpdFactor> {
    let k = gram.nrows();
    if k == 0 {
        return Cholesky::new(gram.clone()).map(SpdFactor::Ok);
    }
    if let Some(c) = Cholesky::new(gram.clone()) {
        if condition_estimate(&c) <= CONDITION_LIMIT {
            return Some(SpdFactor::Ok(c));
        }
    }
    if !allow_jitter {
        return None;
    }
    let jitter = 1e-10 * gram.trace() / k as f64;
    if !(jitter > 0.0) {
        return None;
    }
    let mut shifted = gram.clone();
    for i in 0..k {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted).map(|c| SpdFactor::Jittered(c, jitter))
}

/// Thin SVD `a = U diag(s) Vᵀ`, singular values descending.
///
/// Computed with faer: nalgebra's SVD returns wrong singular vectors for some
/// rank-deficient inputs, which K-SVD produces routinely.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    let f = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(Svd {
        u: DMatrix::from_fn(m, r, |i, j| u[(i, j)]),
        s: DVector::from_fn(r, |i, _| s[i]),
        v: DMatrix::from_fn(n, r, |i, j| v[(i, j)]),
    })
}

/// Minimum-norm solution of `a * x = b` through the SVD pseudo-inverse.
pub(crate) fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims("A", a.shape(), "B", b.shape()));
    }
    let svd = thin_svd(a)?;
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let eps = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut utb = svd.u.tr_mul(b);
    for (i, mut row) in utb.row_iter_mut().enumerate() {
        let si = svd.s[i];
        if si > eps {
            row /= si;
        } else {
            row.fill(0.0);
        }
    }
    Ok(&svd.v * utb)
}

pub(crate) fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
