//! Objective evaluators and the ideal representation matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;
use crate::types::{CoefficientMatrix, Dictionary, EsdlParams, IdealMatrix, LabeledMatrix};

struct Terms {
    fit: f64,
    alter_fit: f64,
    distance_to_ideal: f64,
}

fn check_conformance(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    d: &Dictionary,
    x: &CoefficientMatrix,
    q: &IdealMatrix,
) -> Result<()> {
    let ys = y.data().shape();
    if y_alter.data().shape() != ys {
        return Err(Error::dims("Y", ys, "Y_alter", y_alter.data().shape()));
    }
    let ds = d.atoms().shape();
    if ds.0 != ys.0 {
        return Err(Error::dims("D", ds, "Y", ys));
    }
    let xs = x.shape();
    if xs.0 != ds.1 {
        return Err(Error::dims("X", xs, "D", ds));
    }
    if xs.1 != ys.1 {
        return Err(Error::dims("X", xs, "Y", ys));
    }
    let qs = q.data().shape();
    if qs != xs {
        return Err(Error::dims("Q", qs, "X", xs));
    }
    Ok(())
}

fn shared_terms(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    d: &Dictionary,
    x: &CoefficientMatrix,
    q: &IdealMatrix,
) -> Result<Terms> {
    check_conformance(y, y_alter, d, x, q)?;
    let dx = d.atoms() * x.data();
    Ok(Terms {
        fit: frobenius_sq(&(y.data() - &dx)),
        alter_fit: frobenius_sq(&(y_alter.data() - &dx)),
        distance_to_ideal: frobenius_sq(&(x.data() - q.data())),
    })
}

/// `||Y - DX||² + α||Y_alter - DX||² + β||X||² + γ||X - Q||²` (Frobenius).
pub fn esdl_objective(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    d: &Dictionary,
    x: &CoefficientMatrix,
    q: &IdealMatrix,
    p: &EsdlParams,
) -> Result<f64> {
    let t = shared_terms(y, y_alter, d, x, q)?;
    Ok(t.fit
        + p.alpha * t.alter_fit
        + p.beta * frobenius_sq(x.data())
        + p.gamma * t.distance_to_ideal)
}

/// Same as [`esdl_objective`] with the ridge term replaced by the entrywise
/// absolute sum `β Σ|x_ki|`.
pub fn sdl_l1_objective(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    d: &Dictionary,
    x: &CoefficientMatrix,
    q: &IdealMatrix,
    p: &EsdlParams,
) -> Result<f64> {
    let t = shared_terms(y, y_alter, d, x, q)?;
    let l1: f64 = x.data().iter().map(|v| v.abs()).sum();
    Ok(t.fit + p.alpha * t.alter_fit + p.beta * l1 + p.gamma * t.distance_to_ideal)
}

/// `K x N` matrix with entry `(k, i)` equal to 1 iff atom `k` and sample `i`
/// carry the same label.
pub fn build_ideal_matrix(sample_labels: &[usize], atom_labels: &[usize]) -> Result<IdealMatrix> {
    if sample_labels.is_empty() || atom_labels.is_empty() {
        return Err(Error::InvalidParam(
            "ideal matrix needs non-empty sample and atom label lists".into(),
        ));
    }
    let q = DMatrix::from_fn(atom_labels.len(), sample_labels.len(), |k, i| {
        if atom_labels[k] == sample_labels[i] {
            1.0
        } else {
            0.0
        }
    });
    Ok(IdealMatrix::from_raw(q))
}
