//! Ridge-regression linear classifier on learned coefficients.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coding::{omp_code_matrix, OmpParams};
use crate::error::{Error, Result};
use crate::linalg::{factor_spd, SpdFactor};
use crate::types::{CoefficientMatrix, Dictionary, LabelMatrix, LabeledMatrix};

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// `W` maps a coefficient vector to one score per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: DMatrix<f64>,
    lambda: f64,
}

impl LinearClassifier {
    pub fn from_weights(weights: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("classifier weights are not finite".into()));
        }
        Ok(Self { weights, lambda })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn class_count(&self) -> usize {
        self.weights.nrows()
    }
}

/// How test samples are coded before classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    /// Orthogonal matching pursuit.
    Omp(OmpParams),
    /// `x = (DᵀD + λI)⁻¹ Dᵀy`.
    Ridge { lambda: f64 },
}

impl Default for Coding {
    fn default() -> Self {
        Coding::Omp(OmpParams::default())
    }
}

/// `W = HXᵀ(XXᵀ + λI)⁻¹`, the minimizer of `||H - WX||² + λ||W||²`.
pub fn train_classifier(x: &CoefficientMatrix, h: &LabelMatrix, lambda: f64) -> Result<LinearClassifier> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParam(format!("lambda must be nonnegative, got {lambda}")));
    }
    let x = x.data();
    if h.data().ncols() != x.ncols() {
        return Err(Error::dims("H", h.data().shape(), "X", x.shape()));
    }
    let mut gram = x * x.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    // Wᵀ solves (XXᵀ + λI) Wᵀ = X Hᵀ
    let rhs = x * h.data().transpose();
    let wt = match factor_spd(&gram, false) {
        Some(SpdFactor::Ok(c)) | Some(SpdFactor::Jittered(c, _)) => c.solve(&rhs),
        None => {
            return Err(Error::Numerical(
                "XXᵀ + λI is singular; use a positive lambda".into(),
            ))
        }
    };
    LinearClassifier::from_weights(wt.transpose(), lambda)
}

fn argmax_lowest(g: &DVector<f64>) -> usize {
    let mut best = 0;
    for (i, v) in g.iter().enumerate() {
        if *v > g[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry of `Wx`; ties go to the lowest class index.
pub fn predict(model: &LinearClassifier, x: &DVector<f64>) -> Result<usize> {
    if x.len() != model.weights.ncols() {
        return Err(Error::dims("x", (x.len(), 1), "W", model.weights.shape()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("coefficient vector has non-finite entries".into()));
    }
    Ok(argmax_lowest(&(&model.weights * x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows index the true class, columns the predicted class.
    pub confusion: Vec<Vec<u64>>,
    pub test_seconds: f64,
    pub test_seconds_per_sample: f64,
    /// Worker threads available while timing.
    pub workers: usize,
}

/// Codes every column of `y` over `d` with the chosen scheme.
pub fn code_samples(d: &Dictionary, y: &DMatrix<f64>, coding: &Coding) -> Result<CoefficientMatrix> {
    match coding {
        Coding::Omp(p) => omp_code_matrix(d, y, p),
        Coding::Ridge { lambda } => {
            if !(*lambda > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "ridge coding needs a positive lambda, got {lambda}"
                )));
            }
            if y.nrows() != d.dim() {
                return Err(Error::dims("Y", y.shape(), "D", d.atoms().shape()));
            }
            let atoms = d.atoms();
            let mut gram = atoms.tr_mul(atoms);
            for i in 0..gram.nrows() {
                gram[(i, i)] += lambda;
            }
            let f = factor_spd(&gram, true)
                .ok_or_else(|| Error::Numerical("ridge coding system is singular".into()))?;
            CoefficientMatrix::new(f.solve(&atoms.tr_mul(y)))
        }
    }
}

/// Codes the test columns of `y_test` over `d`, predicts each one and
/// accumulates the confusion matrix. Timing covers coding and prediction.
pub fn evaluate(
    model: &LinearClassifier,
    d: &Dictionary,
    y_test: &LabeledMatrix,
    coding: &Coding,
) -> Result<Evaluation> {
    if y_test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let c = model.class_count();
    if let Some(&bad) = y_test.labels().iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!(
            "test label {bad} unknown to a classifier with {c} classes"
        )));
    }
    if d.atom_count() != model.weights.ncols() {
        return Err(Error::dims("D", d.atoms().shape(), "W", model.weights.shape()));
    }
    let start = Instant::now();
    let codes = code_samples(d, y_test.data(), coding)?;
    let scores = &model.weights * codes.data();
    let predicted: Vec<usize> = (0..scores.ncols())
        .into_par_iter()
        .map(|i| argmax_lowest(&scores.column(i).into_owned()))
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let mut confusion = vec![vec![0u64; c]; c];
    for (&truth, &pred) in y_test.labels().iter().zip(&predicted) {
        confusion[truth][pred] += 1;
    }
    let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
    let n = y_test.len();
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        confusion,
        test_seconds: elapsed,
        test_seconds_per_sample: elapsed / n as f64,
        workers: rayon::current_num_threads(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_codes_give_labels_back() {
        let h = LabelMatrix::from_labels(&[0, 2, 1, 1], 3);
        let x = CoefficientMatrix::new(DMatrix::identity(4, 4)).unwrap();
        let w = train_classifier(&x, &h, 0.0).unwrap();
        assert!((w.weights() - h.data()).amax() < 1e-14);
    }

    #[test]
    fn huge_lambda_crushes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = CoefficientMatrix::new(random(&mut rng, 5, 9)).unwrap();
        let h = LabelMatrix::from_labels(&[0, 1, 2, 0, 1, 2, 0, 1, 2], 3);
        let w = train_classifier(&x, &h, 1e12).unwrap();
        assert!(w.weights().amax() < 1e-6);
    }

    #[test]
    fn singular_without_lambda_is_an_error() {
        let x = CoefficientMatrix::new(DMatrix::from_element(3, 2, 1.0)).unwrap();
        let h = LabelMatrix::from_labels(&[0, 1], 2);
        let err = train_classifier(&x, &h, 0.0).unwrap_err();
        assert!(err.to_string().contains("positive lambda"));
    }

    #[test]
    fn ridge_matches_gradient_and_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xm = random(&mut rng, 6, 10);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let h = LabelMatrix::from_labels(&labels, 3);
        let lambda = 0.05;
        let w = train_classifier(&CoefficientMatrix::new(xm.clone()).unwrap(), &h, lambda).unwrap();
        let grad = (w.weights() * &xm - h.data()) * xm.transpose() * 2.0 + w.weights() * (2.0 * lambda);
        assert!(grad.amax() < 1e-8);
        let a = &xm * xm.transpose() + DMatrix::identity(6, 6) * lambda;
        let oracle = h.data() * xm.transpose() * a.try_inverse().unwrap();
        assert!((w.weights() - oracle).amax() < 1e-10);
    }

    #[test]
    fn predict_cases() {
        let w = LinearClassifier::from_weights(DMatrix::identity(4, 4), 0.0).unwrap();
        let e2 = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(predict(&w, &e2).unwrap(), 2);
        let tie = DVector::from_vec(vec![0.5, 0.1, 0.2, 0.5]);
        assert_eq!(predict(&w, &tie).unwrap(), 0);
        let bad = DVector::from_vec(vec![f64::NAN, 0.0, 0.0, 0.0]);
        assert!(predict(&w, &bad).is_err());
        assert!(predict(&w, &DVector::zeros(3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = LinearClassifier::from_weights(random(&mut rng, 5, 7), 0.0).unwrap();
            let x = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            let g = w.weights() * &x;
            let mut best = 0;
            for i in 1..5 {
                if g[i] > g[best] {
                    best = i;
                }
            }
            assert_eq!(predict(&w, &x).unwrap(), best);
        }
    }

    #[test]
    fn evaluate_cases() {
        let d = Dictionary::new(DMatrix::identity(3, 3), vec![0, 1, 2]).unwrap();
        let w = LinearClassifier::from_weights(DMatrix::identity(3, 3), 0.0).unwrap();
        let test = LabeledMatrix::new(DMatrix::identity(3, 3), vec![0, 1, 2], 3).unwrap();
        let coding = Coding::Omp(OmpParams::with_sparsity(1));
        let ev = evaluate(&w, &d, &test, &coding).unwrap();
        assert_eq!(ev.accuracy, 1.0);
        assert_eq!(ev.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);

        let one = LabeledMatrix::subset(d.atoms().columns(0, 1).into_owned(), vec![1], 3).unwrap();
        let ev = evaluate(&w, &d, &one, &coding).unwrap();
        assert_eq!(ev.accuracy, 0.0);
        assert_eq!(ev.confusion[1][0], 1);
        assert_eq!(ev.confusion.iter().flatten().sum::<u64>(), 1);

        let unknown = LabeledMatrix::subset(DMatrix::identity(3, 1), vec![3], 4).unwrap();
        assert!(evaluate(&w, &d, &unknown, &coding).is_err());
        let empty = LabeledMatrix::subset(DMatrix::zeros(3, 0), vec![], 3).unwrap();
        assert!(evaluate(&w, &d, &empty, &coding).is_err());

        let ev = evaluate(&w, &d, &test, &Coding::Ridge { lambda: 1e-3 }).unwrap();
        assert_eq!(ev.accuracy, 1.0);
    }

    proptest! {
        #[test]
        fn prediction_ignores_positive_scale(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = LinearClassifier::from_weights(random(&mut rng, 4, 6), 0.0).unwrap();
            let x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            prop_assert_eq!(predict(&w, &(&x * c)).unwrap(), predict(&w, &x).unwrap());
        }

        #[test]
        fn training_is_permutation_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 9;
            let xm = random(&mut rng, 5, n);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let w1 = train_classifier(&CoefficientMatrix::new(xm.clone()).unwrap(),
                &LabelMatrix::from_labels(&labels, 3), 0.01).unwrap();
            let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let w2 = train_classifier(&CoefficientMatrix::new(xm.select_columns(&perm)).unwrap(),
                &LabelMatrix::from_labels(&plabels, 3), 0.01).unwrap();
            prop_assert!((w1.weights() - w2.weights()).amax() < 1e-12);
        }

        #[test]
        fn confusion_counts_sum_to_test_size(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut atoms = random(&mut rng, 6, 6);
            for mut c in atoms.column_iter_mut() { let n = c.norm(); c /= n; }
            let d = Dictionary::new(atoms, vec![0, 0, 1, 1, 2, 2]).unwrap();
            let w = LinearClassifier::from_weights(random(&mut rng, 3, 6), 0.0).unwrap();
            let nn = rng.random_range(1..20);
            let labels: Vec<usize> = (0..nn).map(|_| rng.random_range(0..3)).collect();
            let test = LabeledMatrix::subset(random(&mut rng, 6, nn), labels, 3).unwrap();
            let ev = evaluate(&w, &d, &test, &Coding::Omp(OmpParams::with_sparsity(2))).unwrap();
            prop_assert_eq!(ev.confusion.iter().flatten().sum::<u64>(), nn as u64);
        }
    }
}
