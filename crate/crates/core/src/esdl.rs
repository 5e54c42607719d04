//! Alternating closed-form solver for the structured ridge objective.
//!
//! Each iteration solves the coefficient subproblem
//! `((1+α)DᵀD + (β+γ)I) X = Dᵀ(Y + αY_alter) + γQ` and then the dictionary
//! subproblem `D (1+α)XXᵀ = (Y + αY_alter)Xᵀ`, both exactly.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ksvd::{init_dictionary_per_class, KsvdParams};
use crate::linalg::{factor_spd, pinv_solve, SpdFactor};
use crate::objective::{build_ideal_matrix, esdl_objective};
use crate::types::{
    CoefficientMatrix, Dictionary, EsdlParams, IdealMatrix, LabeledMatrix, SolverReport,
};

/// When atoms are rescaled to unit norm during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// After every dictionary update. Coefficients are not rescaled.
    #[default]
    EveryIteration,
    /// Once after the last iteration, with coefficient rows rescaled so that
    /// `DX` is unchanged.
    AtEnd,
    /// Never; the returned dictionary may violate the unit-norm constraint.
    Never,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub normalize: NormalizeMode,
    /// Skip the per-class K-SVD initializer and start from this dictionary.
    pub initial_dictionary: Option<Dictionary>,
}

/// Learned dictionary, training coefficients and the run record.
#[derive(Debug, Clone)]
pub struct EsdlModel {
    pub dictionary: Dictionary,
    pub coefficients: CoefficientMatrix,
    pub params: EsdlParams,
    pub report: SolverReport,
}

pub(crate) fn check_training_inputs(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
) -> Result<()> {
    if y_alter.data().shape() != y.data().shape() {
        return Err(Error::dims("Y_alter", y_alter.data().shape(), "Y", y.data().shape()));
    }
    if d.dim() != y.dim() {
        return Err(Error::dims("D", d.atoms().shape(), "Y", y.data().shape()));
    }
    let qs = q.data().shape();
    if qs != (d.atom_count(), y.len()) {
        return Err(Error::dims("Q", qs, "DᵀY", (d.atom_count(), y.len())));
    }
    Ok(())
}

/// `(1+α)DᵀD` and `Dᵀ(Y + αY_alter) + γQ`, shared with the ADMM X-update.
pub(crate) fn coefficient_system(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
    alpha: f64,
    gamma: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let atoms = d.atoms();
    let gram = atoms.tr_mul(atoms) * (1.0 + alpha);
    let target = y.data() + y_alter.data() * alpha;
    let rhs = atoms.tr_mul(&target) + q.data() * gamma;
    (gram, rhs)
}

pub(crate) fn solve_shifted(
    mut gram: DMatrix<f64>,
    shift: f64,
    rhs: &DMatrix<f64>,
    warnings: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += shift;
    }
    match factor_spd(&gram, shift > 0.0) {
        Some(SpdFactor::Ok(c)) => Ok(c.solve(rhs)),
        Some(SpdFactor::Jittered(c, jitter)) => {
            let msg = format!("ill-conditioned coefficient system; added diagonal jitter {jitter:.3e}");
            log::warn!("{msg}");
            warnings.push(msg);
            Ok(c.solve(rhs))
        }
        None => Err(Error::Numerical(
            "coefficient system is singular; use a positive beta or gamma".into(),
        )),
    }
}

pub(crate) fn update_coefficients_logged(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
    p: &EsdlParams,
    warnings: &mut Vec<String>,
) -> Result<CoefficientMatrix> {
    check_training_inputs(d, y, y_alter, q)?;
    let (gram, rhs) = coefficient_system(d, y, y_alter, q, p.alpha, p.gamma);
    let x = solve_shifted(gram, p.beta + p.gamma, &rhs, warnings)?;
    CoefficientMatrix::new(x)
}

/// Exact minimizer over `X` with the dictionary fixed:
/// `X = ((1+α)DᵀD + (β+γ)I)⁻¹ (DᵀY + αDᵀY_alter + γQ)`.
pub fn update_coefficients(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
    p: &EsdlParams,
) -> Result<CoefficientMatrix> {
    update_coefficients_logged(d, y, y_alter, q, p, &mut Vec::new())
}

pub(crate) fn update_dictionary_logged(
    x: &CoefficientMatrix,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    alpha: f64,
    atom_labels: &[usize],
    warnings: &mut Vec<String>,
) -> Result<Dictionary> {
    if y_alter.data().shape() != y.data().shape() {
        return Err(Error::dims("Y_alter", y_alter.data().shape(), "Y", y.data().shape()));
    }
    let x = x.data();
    if x.ncols() != y.len() {
        return Err(Error::dims("X", x.shape(), "Y", y.data().shape()));
    }
    // Dᵀ solves ((1+α)XXᵀ) Dᵀ = X (Y + αY_alter)ᵀ
    let gram = x * x.transpose() * (1.0 + alpha);
    let target = y.data() + y_alter.data() * alpha;
    let rhs = x * target.transpose();
    let dt = match factor_spd(&gram, false) {
        Some(f) => f.solve(&rhs),
        None => {
            let msg = "rank-deficient XXᵀ in dictionary update; used pseudo-inverse".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            pinv_solve(&gram, &rhs)?
        }
    };
    Dictionary::unnormalized(dt.transpose(), atom_labels.to_vec())
}

/// Exact minimizer over `D` with coefficients fixed:
/// `D = (YXᵀ + αY_alterXᵀ)((1+α)XXᵀ)⁻¹`. Atoms are not normalized.
pub fn update_dictionary(
    x: &CoefficientMatrix,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    alpha: f64,
    atom_labels: &[usize],
) -> Result<Dictionary> {
    update_dictionary_logged(x, y, y_alter, alpha, atom_labels, &mut Vec::new())
}

/// Scales every atom to unit ℓ2 norm.
pub fn normalize_atoms(d: &Dictionary) -> Result<Dictionary> {
    normalize_with_norms(d).map(|(d, _)| d)
}

fn normalize_with_norms(d: &Dictionary) -> Result<(Dictionary, Vec<f64>)> {
    let mut atoms = d.atoms().clone();
    let mut norms = Vec::with_capacity(atoms.ncols());
    for (k, mut c) in atoms.column_iter_mut().enumerate() {
        let n = c.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical(format!("atom {k} has norm {n}; cannot normalize")));
        }
        c /= n;
        norms.push(n);
    }
    Ok((Dictionary::new(atoms, d.atom_labels().to_vec())?, norms))
}

/// Normalizes `raw`, keeping the matching atom of `prev` wherever the update
/// produced a zero atom (possible when a coefficient row is all zero).
pub(crate) fn renormalize_or_keep(
    raw: &Dictionary,
    prev: &Dictionary,
    warnings: &mut Vec<String>,
) -> Result<Dictionary> {
    let mut atoms = raw.atoms().clone();
    for (k, mut c) in atoms.column_iter_mut().enumerate() {
        let n = c.norm();
        if n > 0.0 && n.is_finite() {
            c /= n;
        } else {
            let msg = format!("atom {k} vanished in dictionary update; kept previous atom");
            log::warn!("{msg}");
            warnings.push(msg);
            c.copy_from(&prev.atoms().column(k));
        }
    }
    Dictionary::new(atoms, raw.atom_labels().to_vec())
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.max(1e-12)
}

/// Trains with the per-class K-SVD initializer and in-loop normalization.
pub fn esdl_train(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    k: usize,
    p: &EsdlParams,
    init: &KsvdParams,
) -> Result<EsdlModel> {
    esdl_train_with_options(y, y_alter, k, p, init, &TrainOptions::default())
}

pub(crate) fn check_pair(y: &LabeledMatrix, y_alter: &LabeledMatrix) -> Result<()> {
    if y.data().shape() != y_alter.data().shape() {
        return Err(Error::dims("Y", y.data().shape(), "Y_alter", y_alter.data().shape()));
    }
    if y.labels() != y_alter.labels() {
        return Err(Error::Data(
            "Y and Y_alter must carry identical per-column labels".into(),
        ));
    }
    Ok(())
}

pub(crate) fn initial_dictionary(
    y: &LabeledMatrix,
    k: usize,
    init: &KsvdParams,
    opts: &TrainOptions,
) -> Result<Dictionary> {
    match &opts.initial_dictionary {
        Some(d) => {
            if d.atom_count() != k || d.dim() != y.dim() {
                return Err(Error::dims("initial D", d.atoms().shape(), "n x K", (y.dim(), k)));
            }
            Ok(d.clone())
        }
        None => init_dictionary_per_class(y, k, init),
    }
}

/// Full training loop.
///
/// The objective is recorded after each dictionary update and before atom
/// normalization. Training stops when the relative objective change drops
/// below `p.tol` or after `p.max_iters` iterations.
pub fn esdl_train_with_options(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    k: usize,
    p: &EsdlParams,
    init: &KsvdParams,
    opts: &TrainOptions,
) -> Result<EsdlModel> {
    p.validate()?;
    check_pair(y, y_alter)?;
    let start = Instant::now();
    let mut report = SolverReport::default();

    let mut d = initial_dictionary(y, k, init, opts)?;
    let q = build_ideal_matrix(y.labels(), d.atom_labels())?;
    let mut x = update_coefficients_logged(&d, y, y_alter, &q, p, &mut report.warnings)?;
    let initial = esdl_objective(y, y_alter, &d, &x, &q, p)?;
    report.initial_objective = Some(initial);
    let mut prev = initial;

    for t in 0..p.max_iters {
        if t > 0 {
            x = update_coefficients_logged(&d, y, y_alter, &q, p, &mut report.warnings)?;
        }
        let raw = update_dictionary_logged(&x, y, y_alter, p.alpha, d.atom_labels(), &mut report.warnings)?;
        let f = esdl_objective(y, y_alter, &raw, &x, &q, p)?;
        if !f.is_finite() {
            return Err(Error::Numerical(format!("objective became {f} at iteration {}", t + 1)));
        }
        report.objective_trace.push(f);
        report.iterations_run = t + 1;
        d = match opts.normalize {
            NormalizeMode::EveryIteration => renormalize_or_keep(&raw, &d, &mut report.warnings)?,
            NormalizeMode::AtEnd | NormalizeMode::Never => raw,
        };
        if relative_change(prev, f) < p.tol {
            report.converged = true;
            break;
        }
        prev = f;
    }

    if opts.normalize == NormalizeMode::AtEnd {
        let (nd, norms) = normalize_with_norms(&d)?;
        let mut xs = x.into_inner();
        for (k, n) in norms.iter().enumerate() {
            xs.row_mut(k).scale_mut(*n);
        }
        x = CoefficientMatrix::new(xs)?;
        d = nd;
    }
    report.train_seconds = start.elapsed().as_secs_f64();

    Ok(EsdlModel {
        dictionary: d,
        coefficients: x,
        params: *p,
        report,
    })
}
