//! ℓ1-regularized variant trained by ADMM.
//!
//! The ℓ1 term is moved onto a split variable `Z` with constraint `X = Z`,
//! multiplier `L` and a penalty `μ` that grows geometrically up to a cap.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coding::shrink;
use crate::error::{Error, Result};
use crate::esdl::{
    check_pair, check_training_inputs, coefficient_system, initial_dictionary, renormalize_or_keep,
    solve_shifted, update_dictionary_logged, EsdlModel, TrainOptions,
};
use crate::ksvd::KsvdParams;
use crate::linalg::max_abs;
use crate::objective::{build_ideal_matrix, sdl_l1_objective};
use crate::types::{CoefficientMatrix, Dictionary, EsdlParams, IdealMatrix, LabeledMatrix, SolverReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub alpha: f64,
    /// Weight of the ℓ1 penalty.
    pub beta: f64,
    pub gamma: f64,
    /// Initial penalty.
    pub mu0: f64,
    pub mu_max: f64,
    /// Penalty growth factor per iteration.
    pub rho: f64,
    /// Stop once `max |X - Z|` drops below this value.
    pub primal_tol: f64,
    pub max_iters: usize,
}

impl AdmmParams {
    /// Penalty schedule `μ = 0.01, μ_max = 1e8, ρ = 1.1` with the balancing
    /// weights taken from `weights`.
    pub fn from_weights(weights: &EsdlParams) -> Self {
        Self {
            alpha: weights.alpha,
            beta: weights.beta,
            gamma: weights.gamma,
            mu0: 0.01,
            mu_max: 1e8,
            rho: 1.1,
            primal_tol: 1e-6,
            max_iters: 200,
        }
    }

    pub fn weights(&self) -> EsdlParams {
        EsdlParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            max_iters: self.max_iters,
            tol: self.primal_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.mu0 > 0.0 && self.mu0 <= self.mu_max) {
            return Err(Error::InvalidParam(format!(
                "need 0 < mu0 <= mu_max, got mu0={} mu_max={}",
                self.mu0, self.mu_max
            )));
        }
        if !(self.rho > 1.0) {
            return Err(Error::InvalidParam(format!("rho must exceed 1, got {}", self.rho)));
        }
        Ok(())
    }
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self::from_weights(&EsdlParams::face())
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("penalty mu must be positive, got {mu}")))
    }
}

#[allow(clippy::too_many_arguments)]
fn update_x_logged(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
    z: &CoefficientMatrix,
    l: &CoefficientMatrix,
    mu: f64,
    p: &AdmmParams,
    warnings: &mut Vec<String>,
) -> Result<CoefficientMatrix> {
    check_mu(mu)?;
    check_training_inputs(d, y, y_alter, q)?;
    let shape = q.data().shape();
    if z.shape() != shape {
        return Err(Error::dims("Z", z.shape(), "Q", shape));
    }
    if l.shape() != shape {
        return Err(Error::dims("L", l.shape(), "Q", shape));
    }
    let (gram, mut rhs) = coefficient_system(d, y, y_alter, q, p.alpha, p.gamma);
    rhs += (z.data() * mu - l.data()) * 0.5;
    let x = solve_shifted(gram, 0.5 * mu + p.gamma, &rhs, warnings)?;
    CoefficientMatrix::new(x)
}

/// X-step: `X = ((1+α)DᵀD + (μ/2 + γ)I)⁻¹ (DᵀY + αDᵀY_alter + γQ + (μZ - L)/2)`.
#[allow(clippy::too_many_arguments)]
pub fn admm_update_x(
    d: &Dictionary,
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    q: &IdealMatrix,
    z: &CoefficientMatrix,
    l: &CoefficientMatrix,
    mu: f64,
    p: &AdmmParams,
) -> Result<CoefficientMatrix> {
    update_x_logged(d, y, y_alter, q, z, l, mu, p, &mut Vec::new())
}

/// Z-step: soft threshold of `X + L/μ` at `β/μ`.
pub fn admm_update_z(
    x: &CoefficientMatrix,
    l: &CoefficientMatrix,
    mu: f64,
    beta: f64,
) -> Result<CoefficientMatrix> {
    check_mu(mu)?;
    if x.shape() != l.shape() {
        return Err(Error::dims("X", x.shape(), "L", l.shape()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParam(format!("beta must be nonnegative, got {beta}")));
    }
    let tau = beta / mu;
    let z = x.data().zip_map(l.data(), |xv, lv| shrink(xv + lv / mu, tau));
    CoefficientMatrix::new(z)
}

/// Trains the ℓ1 variant with the per-class K-SVD initializer.
///
/// The returned model carries the sparse iterate `Z` as its coefficients.
pub fn sdl_l1_train(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    k: usize,
    p: &AdmmParams,
    init: &KsvdParams,
) -> Result<EsdlModel> {
    sdl_l1_train_with_options(y, y_alter, k, p, init, &TrainOptions::default())
}

/// ADMM loop: X-step, Z-step, dictionary update with renormalization,
/// multiplier step `L += μ(X - Z)`, penalty step `μ = min(ρμ, μ_max)`.
///
/// Only [`TrainOptions::initial_dictionary`] is honored; atoms are always
/// renormalized after each dictionary update.
pub fn sdl_l1_train_with_options(
    y: &LabeledMatrix,
    y_alter: &LabeledMatrix,
    k: usize,
    p: &AdmmParams,
    init: &KsvdParams,
    opts: &TrainOptions,
) -> Result<EsdlModel> {
    p.validate()?;
    check_pair(y, y_alter)?;
    let start = Instant::now();
    let mut report = SolverReport::default();
    let weights = p.weights();

    let mut d = initial_dictionary(y, k, init, opts)?;
    let q = build_ideal_matrix(y.labels(), d.atom_labels())?;
    let mut z = CoefficientMatrix::zeros(k, y.len());
    let mut l = CoefficientMatrix::zeros(k, y.len());
    let mut mu = p.mu0;

    for t in 0..p.max_iters {
        let x = update_x_logged(&d, y, y_alter, &q, &z, &l, mu, p, &mut report.warnings)?;
        z = admm_update_z(&x, &l, mu, p.beta)?;
        let raw = update_dictionary_logged(&x, y, y_alter, p.alpha, d.atom_labels(), &mut report.warnings)?;
        let f = sdl_l1_objective(y, y_alter, &raw, &x, &q, &weights)?;
        if !f.is_finite() {
            return Err(Error::Numerical(format!("objective became {f} at iteration {}", t + 1)));
        }
        d = renormalize_or_keep(&raw, &d, &mut report.warnings)?;

        let gap = x.data() - z.data();
        let next_l = l.data() + &gap * mu;
        if next_l.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("multiplier diverged at iteration {}", t + 1)));
        }
        l = CoefficientMatrix::new(next_l)?;
        let residual = max_abs(&gap);

        report.objective_trace.push(f);
        report.primal_residual_trace.push(residual);
        report.mu_trace.push(mu);
        report.iterations_run = t + 1;
        mu = (p.rho * mu).min(p.mu_max);
        if residual < p.primal_tol {
            report.converged = true;
            break;
        }
    }
    report.train_seconds = start.elapsed().as_secs_f64();

    Ok(EsdlModel {
        dictionary: d,
        coefficients: z,
        params: weights,
        report,
    })
}

/// Fraction of entries that are exactly zero.
pub fn zero_fraction(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.iter().filter(|v| **v == 0.0).count() as f64 / m.len() as f64
}
