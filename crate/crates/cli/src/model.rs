use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use structdict::bench::{Method, TrainedModel};
use structdict::classifier::{Coding, LinearClassifier};
use structdict::{Dictionary, Error, Result};

/// On-disk form of a trained model. Matrices are stored column-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub method: Method,
    pub normalize: bool,
    pub coding: Coding,
    pub dim: usize,
    pub atom_labels: Vec<usize>,
    pub atoms: Vec<f64>,
    pub classes: usize,
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// Original label of each class id.
    pub class_labels: Vec<i64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SavedModel {
    pub fn new(
        model: &TrainedModel,
        method: Method,
        normalize: bool,
        coding: Coding,
        class_labels: Vec<i64>,
    ) -> Self {
        let d = &model.dictionary;
        let w = model.classifier.weights();
        Self {
            method,
            normalize,
            coding,
            dim: d.dim(),
            atom_labels: d.atom_labels().to_vec(),
            atoms: d.atoms().as_slice().to_vec(),
            classes: w.nrows(),
            weights: w.as_slice().to_vec(),
            lambda: model.classifier.lambda(),
            class_labels,
            iterations: model.iterations,
            converged: model.converged,
            warnings: model.warnings.clone(),
        }
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        let k = self.atom_labels.len();
        if self.atoms.len() != self.dim * k {
            return Err(Error::Data(format!(
                "model stores {} atom entries, expected {} x {k}",
                self.atoms.len(),
                self.dim
            )));
        }
        Dictionary::new(
            DMatrix::from_column_slice(self.dim, k, &self.atoms),
            self.atom_labels.clone(),
        )
    }

    pub fn classifier(&self) -> Result<LinearClassifier> {
        let k = self.atom_labels.len();
        if self.weights.len() != self.classes * k || self.class_labels.len() != self.classes {
            return Err(Error::Data("model classifier shape is inconsistent".into()));
        }
        LinearClassifier::from_weights(
            DMatrix::from_column_slice(self.classes, k, &self.weights),
            self.lambda,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot serialize model: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{} is not a model file: {e}", path.display())))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
