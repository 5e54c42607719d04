//! Shared data model: labelled sample matrices, dictionaries, coefficient
//! matrices, the ideal block-diagonal target and solver parameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on atom norms for a dictionary to count as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Dense sample matrix (features x samples) with one class id per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    data: DMatrix<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledMatrix {
    /// Builds a matrix in which every class `0..class_count` has at least one
    /// sample.
    pub fn new(data: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let m = Self::subset(data, labels, class_count)?;
        let counts = m.class_sizes();
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        Ok(m)
    }

    /// Like [`LabeledMatrix::new`] but allows classes without samples. Used for
    /// test partitions and folds that keep the parent's class count.
    pub fn subset(data: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != data.ncols() {
            return Err(Error::Data(format!(
                "{} labels for {} sample columns",
                labels.len(),
                data.ncols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} outside 0..{class_count}"
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (idx % data.nrows().max(1), idx / data.nrows().max(1));
            return Err(Error::Data(format!("non-finite entry at row {r}, column {c}")));
        }
        Ok(Self {
            data,
            labels,
            class_count,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Column indices of each class, in column order.
    pub fn class_columns(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// New matrix made of the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> LabeledMatrix {
        let data = self.data.select_columns(columns);
        let labels = columns.iter().map(|&i| self.labels[i]).collect();
        LabeledMatrix {
            data,
            labels,
            class_count: self.class_count,
        }
    }

    pub fn label_matrix(&self) -> LabelMatrix {
        LabelMatrix::from_labels(&self.labels, self.class_count)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<usize>, usize) {
        (self.data, self.labels, self.class_count)
    }
}

/// One-hot `C x N` label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: DMatrix<f64>,
}

impl LabelMatrix {
    pub fn from_labels(labels: &[usize], class_count: usize) -> Self {
        let mut data = DMatrix::zeros(class_count, labels.len());
        for (i, &l) in labels.iter().enumerate() {
            data[(l, i)] = 1.0;
        }
        Self { data }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Atom matrix with one class label per atom. Atoms are grouped by class in
/// ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    atom_labels: Vec<usize>,
}

impl Dictionary {
    /// Builds a dictionary and checks that every atom has unit norm.
    pub fn new(atoms: DMatrix<f64>, atom_labels: Vec<usize>) -> Result<Self> {
        let d = Self::unnormalized(atoms, atom_labels)?;
        if let Some((k, n)) = d.worst_atom_norm() {
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Data(format!(
                    "atom {k} has norm {n}, expected 1"
                )));
            }
        }
        Ok(d)
    }

    /// Builds a dictionary whose atoms are not required to be unit norm, as
    /// produced by the closed-form dictionary update.
    pub fn unnormalized(atoms: DMatrix<f64>, atom_labels: Vec<usize>) -> Result<Self> {
        if atom_labels.len() != atoms.ncols() {
            return Err(Error::Data(format!(
                "{} atom labels for {} atoms",
                atom_labels.len(),
                atoms.ncols()
            )));
        }
        if atom_labels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data(
                "atom labels must be grouped by class in ascending order".into(),
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("dictionary has non-finite entries".into()));
        }
        Ok(Self { atoms, atom_labels })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom_labels(&self) -> &[usize] {
        &self.atom_labels
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.worst_atom_norm()
            .is_none_or(|(_, n)| (n - 1.0).abs() <= UNIT_NORM_TOL)
    }

    // Atom whose norm deviates most from 1.
    fn worst_atom_norm(&self) -> Option<(usize, f64)> {
        self.atoms
            .column_iter()
            .map(|c| c.norm())
            .enumerate()
            .max_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<usize>) {
        (self.atoms, self.atom_labels)
    }
}

/// Representation of `N` samples over `K` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    data: DMatrix<f64>,
}

impl CoefficientMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "coefficient matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(atoms: usize, samples: usize) -> Self {
        Self {
            data: DMatrix::zeros(atoms, samples),
        }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
}

/// Binary `K x N` target with a one wherever atom and sample share a class.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealMatrix {
    data: DMatrix<f64>,
}

impl IdealMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub(crate) fn from_raw(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }
}

/// Balancing weights and stopping rule of the structured objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsdlParams {
    /// Weight of the alternative-sample reconstruction term.
    pub alpha: f64,
    /// Ridge weight on the coefficients.
    pub beta: f64,
    /// Weight pulling coefficients toward the ideal matrix.
    pub gamma: f64,
    pub max_iters: usize,
    /// Relative objective change below which training stops.
    pub tol: f64,
}

impl EsdlParams {
    /// Values used for face-type data.
    pub fn face() -> Self {
        Self {
            alpha: 0.01,
            beta: 1e-3,
            gamma: 1e-3,
            max_iters: 50,
            tol: 1e-6,
        }
    }

    /// Values used for scene-type (feature vector) data.
    pub fn scene() -> Self {
        Self {
            alpha: 0.1,
            beta: 1e-4,
            gamma: 1e-4,
            ..Self::face()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParam(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for EsdlParams {
    fn default() -> Self {
        Self::face()
    }
}

/// Per-run record of an iterative solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    /// Objective at the initial dictionary with its optimal coefficients.
    pub initial_objective: Option<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub train_seconds: f64,
    /// `max |X - Z|` per iteration (ADMM only).
    pub primal_residual_trace: Vec<f64>,
    /// Penalty value used in each iteration (ADMM only).
    pub mu_trace: Vec<f64>,
    pub warnings: Vec<String>,
}
