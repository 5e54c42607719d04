//! Sparse coding primitives: orthogonal matching pursuit and the
//! soft-threshold (ℓ1 proximal) operator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pinv_solve;
use crate::types::{CoefficientMatrix, Dictionary, LabeledMatrix};

/// Sparsity used when coding test samples unless configured otherwise.
pub const DEFAULT_TEST_SPARSITY: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpParams {
    /// Maximum number of nonzero coefficients.
    pub sparsity: usize,
    /// Stop once the residual norm drops to this value.
    pub residual_tol: f64,
}

impl OmpParams {
    pub fn with_sparsity(sparsity: usize) -> Self {
        Self {
            sparsity,
            residual_tol: 1e-6,
        }
    }
}

impl Default for OmpParams {
    fn default() -> Self {
        Self::with_sparsity(DEFAULT_TEST_SPARSITY)
    }
}

/// Result of a single OMP run with its per-step diagnostics.
#[derive(Debug, Clone)]
pub struct OmpOutcome {
    pub coefficients: DVector<f64>,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Residual norm before the first step and after every step.
    pub residual_norms: Vec<f64>,
}

fn check_dictionary(d: &Dictionary, p: &OmpParams) -> Result<()> {
    if !d.is_normalized() {
        return Err(Error::InvalidParam(
            "OMP requires a dictionary with unit-norm atoms".into(),
        ));
    }
    if p.sparsity == 0 || p.sparsity > d.atom_count() {
        return Err(Error::InvalidParam(format!(
            "OMP sparsity must be in 1..={}, got {}",
            d.atom_count(),
            p.sparsity
        )));
    }
    if !(p.residual_tol >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "residual_tol must be nonnegative, got {}",
            p.residual_tol
        )));
    }
    Ok(())
}

// Greedy loop without parameter validation; callers check once.
fn omp_unchecked(atoms: &DMatrix<f64>, y: &DVector<f64>, p: &OmpParams) -> Result<OmpOutcome> {
    let k = atoms.ncols();
    let mut x = DVector::zeros(k);
    let mut support: Vec<usize> = Vec::with_capacity(p.sparsity);
    let mut residual = y.clone();
    let mut norms = vec![residual.norm()];

    while support.len() < p.sparsity && *norms.last().unwrap() > p.residual_tol {
        let corr = atoms.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if support.contains(&j) {
                continue;
            }
            let a = c.abs();
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((j, a));
            }
        }
        let Some((j, score)) = best else { break };
        // Residual already orthogonal to every remaining atom.
        if score <= f64::EPSILON * norms.last().unwrap() {
            break;
        }
        support.push(j);

        let sub = atoms.select_columns(&support);
        let rhs = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let coef = pinv_solve(&sub, &rhs)?;
        residual = y - &sub * coef.column(0);
        x.fill(0.0);
        for (s, &idx) in support.iter().enumerate() {
            x[idx] = coef[(s, 0)];
        }
        norms.push(residual.norm());
    }

    Ok(OmpOutcome {
        coefficients: x,
        support,
        residual_norms: norms,
    })
}

/// Orthogonal matching pursuit with full diagnostics.
pub fn omp_code_traced(d: &Dictionary, y: &DVector<f64>, p: &OmpParams) -> Result<OmpOutcome> {
    check_dictionary(d, p)?;
    if y.len() != d.dim() {
        return Err(Error::dims("y", (y.len(), 1), "D", d.atoms().shape()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sample to code has non-finite entries".into()));
    }
    omp_unchecked(d.atoms(), y, p)
}

/// Codes `y` over `d` with at most `p.sparsity` nonzeros.
///
/// Each step picks the unused atom with the largest absolute correlation with
/// the residual (lowest index on ties) and refits all selected coefficients by
/// minimum-norm least squares.
pub fn omp_code(d: &Dictionary, y: &DVector<f64>, p: &OmpParams) -> Result<DVector<f64>> {
    omp_code_traced(d, y, p).map(|o| o.coefficients)
}

/// Column-wise [`omp_code`] on a raw sample matrix.
pub fn omp_code_matrix(
    d: &Dictionary,
    y: &DMatrix<f64>,
    p: &OmpParams,
) -> Result<CoefficientMatrix> {
    check_dictionary(d, p)?;
    if y.nrows() != d.dim() {
        return Err(Error::dims("Y", y.shape(), "D", d.atoms().shape()));
    }
    let cols: Vec<DVector<f64>> = (0..y.ncols())
        .into_par_iter()
        .map(|i| {
            let col = y.column(i).into_owned();
            omp_unchecked(d.atoms(), &col, p).map(|o| o.coefficients)
        })
        .collect::<Result<_>>()?;
    let mut x = DMatrix::zeros(d.atom_count(), y.ncols());
    for (i, c) in cols.iter().enumerate() {
        x.set_column(i, c);
    }
    CoefficientMatrix::new(x)
}

/// Column-wise [`omp_code`]; column `i` of the result equals `omp_code` on
/// column `i` of `y`.
pub fn omp_code_batch(
    d: &Dictionary,
    y: &LabeledMatrix,
    p: &OmpParams,
) -> Result<CoefficientMatrix> {
    omp_code_matrix(d, y.data(), p)
}

/// Elementwise `max(m - τ, 0) + min(m + τ, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "threshold must be nonnegative, got {tau}"
        )));
    }
    Ok(m.map(|v| shrink(v, tau)))
}

#[inline]
pub(crate) fn shrink(v: f64, tau: f64) -> f64 {
    (v - tau).max(0.0) + (v + tau).min(0.0)
}
