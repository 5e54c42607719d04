use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_and_score, preprocess, validate_against, validate_config, with_workers, Dataset, ExperimentConfig, RepeatSeeds};
use crate::data::{train_test_split, SplitSpec};
use crate::error::{Error, Result};
use crate::types::EsdlParams;

/// Candidate values for each balancing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        let v = vec![1e-4, 1e-3, 1e-2, 1e-1];
        Self {
            alphas: v.clone(),
            betas: v.clone(),
            gammas: v,
        }
    }
}

impl ParamGrid {
    fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &a in &self.alphas {
            for &b in &self.betas {
                for &g in &self.gammas {
                    out.push((a, b, g));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Highest mean accuracy; ties go to the smallest `(alpha, beta, gamma)`.
    pub best: EsdlParams,
    pub best_accuracy: f64,
    pub folds: usize,
    pub warnings: Vec<String>,
}

/// Assigns each class's samples round-robin to folds after a seeded shuffle.
fn stratified_folds(indices: &[usize], labels: &[usize], classes: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); classes];
    for &i in indices {
        by_class[labels[i]].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < folds {
            return Err(Error::InvalidParam(format!(
                "class {c} has {} training samples, fewer than {folds} folds; use fewer folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            out[j % folds].push(i);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Cross-validates every grid cell on the training split of repeat 0.
///
/// Test columns of that split are never touched.
pub fn grid_search(cfg: &ExperimentConfig, data: &Dataset, grid: &ParamGrid, folds: usize) -> Result<GridResult> {
    validate_config(cfg)?;
    validate_against(cfg, data)?;
    if folds < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 folds, got {folds}")));
    }
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::InvalidParam("parameter grid is empty".into()));
    }
    for &(a, b, g) in &cells {
        EsdlParams { alpha: a, beta: b, gamma: g, ..cfg.esdl }.validate()?;
    }
    let (data, mut warnings) = preprocess(cfg, data);
    let seeds = RepeatSeeds::derive(cfg.seed, 0);
    let split = train_test_split(&data.samples, &SplitSpec { seed: seeds.split, ..cfg.split })?;
    let fold_sets = stratified_folds(
        &split.train_indices,
        data.samples.labels(),
        data.samples.class_count(),
        folds,
        seeds.split ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    let test: std::collections::HashSet<usize> = split.test_indices.iter().copied().collect();
    assert!(fold_sets.iter().flatten().all(|i| !test.contains(i)));

    let evaluated: Vec<Result<(GridCell, Vec<String>)>> = with_workers(cfg.workers, || {
        cells
            .par_iter()
            .map(|&(alpha, beta, gamma)| {
                let cell_cfg = ExperimentConfig {
                    esdl: EsdlParams { alpha, beta, gamma, ..cfg.esdl },
                    ..cfg.clone()
                };
                let mut accs = Vec::with_capacity(folds);
                let mut notes = Vec::new();
                for (f, held_out) in fold_sets.iter().enumerate() {
                    let train: Vec<usize> = fold_sets
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != f)
                        .flat_map(|(_, s)| s.iter().copied())
                        .collect();
                    let mut train = train;
                    train.sort_unstable();
                    let out = fit_and_score(&cell_cfg, &data, &train, held_out, seeds)?;
                    accs.push(out.accuracy);
                    notes.extend(out.warnings.into_iter().map(|w| format!("fold {f}: {w}")));
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                let cell = GridCell {
                    alpha,
                    beta,
                    gamma,
                    fold_accuracies: accs,
                    mean_accuracy: mean,
                };
                Ok((cell, notes))
            })
            .collect()
    })?;
    let mut cells = Vec::with_capacity(evaluated.len());
    let mut notes = std::collections::BTreeSet::new();
    for r in evaluated {
        let (cell, n) = r?;
        cells.push(cell);
        notes.extend(n);
    }
    warnings.extend(notes);

    let best = cells
        .iter()
        .fold(None::<&GridCell>, |acc, c| match acc {
            None => Some(c),
            Some(b) => {
                let key = |x: &GridCell| (x.alpha, x.beta, x.gamma);
                if c.mean_accuracy > b.mean_accuracy
                    || (c.mean_accuracy == b.mean_accuracy && key(c) < key(b))
                {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        })
        .expect("grid is nonempty");
    Ok(GridResult {
        best: EsdlParams {
            alpha: best.alpha,
            beta: best.beta,
            gamma: best.gamma,
            ..cfg.esdl
        },
        best_accuracy: best.mean_accuracy,
        cells,
        folds,
        warnings,
    })
}
