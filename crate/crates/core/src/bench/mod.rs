//! Evaluation protocol: repeated seeded splits, training, classification and
//! report assembly.
//!
//! Training time covers dictionary initialization, the solver and the
//! classifier fit. Data loading and report writing are excluded.

mod grid;
mod report;
mod synth;

pub use grid::{grid_search, GridCell, GridResult, ParamGrid};
pub use report::{emit_report, format_sig6, report_value, strip_timing, ReportFormat};
pub use synth::make_synthetic;

use std::path::PathBuf;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{sdl_l1_train, AdmmParams};
use crate::classifier::{code_samples, evaluate, train_classifier, Coding, LinearClassifier, DEFAULT_LAMBDA};
use crate::data::{
    half_split_alternative, load_matrix, mirror_samples, normalize_columns, train_test_split,
    ImageMeta, LabelTable, Orientation, SplitSpec, TrainCount,
};
use crate::error::{Error, Result};
use crate::esdl::esdl_train;
use crate::ksvd::{init_dictionary_per_class, KsvdParams};
use crate::types::{Dictionary, EsdlParams, LabeledMatrix};

/// Training method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Esdl,
    SdlL1,
    /// Per-class K-SVD dictionary with no structured refinement.
    KsvdBaseline,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esdl" => Ok(Method::Esdl),
            "sdl_l1" | "sdl-l1" => Ok(Method::SdlL1),
            "ksvd_baseline" | "ksvd-baseline" | "ksvd" => Ok(Method::KsvdBaseline),
            other => Err(Error::InvalidParam(format!(
                "unknown method {other:?}; expected esdl, sdl_l1 or ksvd_baseline"
            ))),
        }
    }
}

/// How the alternative training samples are built from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltScheme {
    /// Left-right mirror images of the training samples.
    Mirror(ImageMeta),
    /// Each class's training samples split into two halves.
    HalfSplit,
    /// Columns of a separate file aligned with the dataset.
    File(PathBuf),
}

/// ADMM penalty schedule; balancing weights come from the ESDL parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSchedule {
    pub mu0: f64,
    pub mu_max: f64,
    pub rho: f64,
    pub primal_tol: f64,
    pub max_iters: usize,
}

impl Default for AdmmSchedule {
    fn default() -> Self {
        let p = AdmmParams::default();
        Self {
            mu0: p.mu0,
            mu_max: p.mu_max,
            rho: p.rho,
            primal_tol: p.primal_tol,
            max_iters: p.max_iters,
        }
    }
}

impl AdmmSchedule {
    pub fn params(&self, weights: &EsdlParams) -> AdmmParams {
        AdmmParams {
            mu0: self.mu0,
            mu_max: self.mu_max,
            rho: self.rho,
            primal_tol: self.primal_tol,
            max_iters: self.max_iters,
            ..AdmmParams::from_weights(weights)
        }
    }
}

/// K-SVD initializer settings; sparsity defaults to `min(5, K / C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSettings {
    pub iterations: usize,
    pub sparsity: Option<usize>,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            iterations: 10,
            sparsity: None,
        }
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    pub labels: Option<PathBuf>,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `None` when the dataset is supplied in memory.
    pub data: Option<DataSource>,
    pub method: Method,
    pub atoms: usize,
    pub esdl: EsdlParams,
    pub admm: AdmmSchedule,
    pub init: InitSettings,
    /// Ridge weight of the linear classifier.
    pub lambda: f64,
    pub split: SplitSpec,
    pub repeats: usize,
    pub alt_scheme: AltScheme,
    pub coding: Coding,
    /// Scale every sample to unit norm before splitting.
    pub normalize: bool,
    pub seed: u64,
    /// Thread cap; not part of the result, so kept out of the report echo.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            method: Method::Esdl,
            atoms: 40,
            esdl: EsdlParams::face(),
            admm: AdmmSchedule::default(),
            init: InitSettings::default(),
            lambda: DEFAULT_LAMBDA,
            split: SplitSpec {
                train_per_class: TrainCount::PerClass(20),
                seed: 0,
                pinned_prefix: 0,
            },
            repeats: 10,
            alt_scheme: AltScheme::HalfSplit,
            coding: Coding::default(),
            normalize: true,
            seed: 0,
            workers: 1,
        }
    }
}

/// A loaded dataset and, for [`AltScheme::File`], its aligned alternatives.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: LabeledMatrix,
    pub label_table: LabelTable,
    pub alternative: Option<LabeledMatrix>,
}

impl Dataset {
    pub fn in_memory(samples: LabeledMatrix) -> Self {
        let label_table = LabelTable::identity(samples.class_count());
        Self {
            samples,
            label_table,
            alternative: None,
        }
    }

    /// Loads the samples named in `cfg.data` and any alternative-sample file.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let src = cfg
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("no dataset path configured".into()))?;
        let loaded = load_matrix(&src.path, src.labels.as_deref(), src.orientation)?;
        let alternative = match &cfg.alt_scheme {
            AltScheme::File(path) => {
                let alt = load_matrix(path, src.labels.as_deref(), src.orientation)?;
                if alt.label_table != loaded.label_table || alt.matrix.labels() != loaded.matrix.labels() {
                    return Err(Error::Data(format!(
                        "{} is not label-aligned with {}",
                        path.display(),
                        src.path.display()
                    )));
                }
                Some(alt.matrix)
            }
            _ => None,
        };
        Ok(Self {
            samples: loaded.matrix,
            label_table: loaded.label_table,
            alternative,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatTiming {
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub test_seconds_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub split_seed: u64,
    /// `None` when the repeat failed.
    pub accuracy: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub test_samples: usize,
    pub error: Option<String>,
    pub timing: RepeatTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTiming {
    pub train_seconds_mean: f64,
    pub test_seconds_mean: f64,
    pub test_seconds_per_sample_mean: f64,
    pub workers: usize,
    pub convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: Method,
    pub repeats: Vec<RepeatReport>,
    /// Mean over successful repeats.
    pub mean_accuracy: f64,
    pub class_names: Vec<String>,
    /// Summed over successful repeats; rows are true classes.
    pub confusion: Vec<Vec<u64>>,
    pub config: serde_json::Value,
    pub warnings: Vec<String>,
    pub timing: ReportTiming,
}

impl BenchmarkReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.repeats.iter().filter_map(|r| r.accuracy).collect()
    }
}

pub(crate) const TIMING_CONVENTION: &str =
    "training includes K-SVD initialization and classifier fit; loading and report writing excluded";

/// Seeds for one repeat, derived from the master seed by repeat index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RepeatSeeds {
    pub split: u64,
    pub alternative: u64,
    pub init: u64,
}

impl RepeatSeeds {
    pub(crate) fn derive(master: u64, repeat: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        rng.set_stream(repeat as u64);
        Self {
            split: rng.next_u64(),
            alternative: rng.next_u64(),
            init: rng.next_u64(),
        }
    }
}

pub(crate) struct Outcome {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub iterations: usize,
    pub converged: bool,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub test_seconds_per_sample: f64,
    pub warnings: Vec<String>,
}

/// Checks that do not need the data.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidParam("repeats must be at least 1".into()));
    }
    if cfg.atoms == 0 {
        return Err(Error::InvalidParam("atoms must be at least 1".into()));
    }
    cfg.esdl.validate()?;
    cfg.admm.params(&cfg.esdl).validate()?;
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidParam(format!("lambda must be nonnegative, got {}", cfg.lambda)));
    }
    if cfg.init.iterations == 0 {
        return Err(Error::InvalidParam("initializer iterations must be at least 1".into()));
    }
    if let Coding::Omp(p) = cfg.coding {
        if p.sparsity == 0 || p.sparsity > cfg.atoms {
            return Err(Error::InvalidParam(format!(
                "OMP sparsity {} must be in 1..={}",
                p.sparsity, cfg.atoms
            )));
        }
    }
    Ok(())
}

/// Checks that need the class structure of the data.
pub fn validate_against(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let c = data.samples.class_count();
    if cfg.atoms % c != 0 {
        return Err(Error::InvalidParam(format!(
            "{} atoms cannot be split evenly over {c} classes; choose a multiple of {c}",
            cfg.atoms
        )));
    }
    if let AltScheme::Mirror(meta) = &cfg.alt_scheme {
        if meta.pixels() != data.samples.dim() {
            return Err(Error::InvalidParam(format!(
                "image metadata {}x{} does not match feature dimension {}",
                meta.width,
                meta.height,
                data.samples.dim()
            )));
        }
    }
    if matches!(cfg.alt_scheme, AltScheme::File(_)) && data.alternative.is_none() {
        return Err(Error::InvalidParam("alternative-sample file was not loaded".into()));
    }
    Ok(())
}

fn init_params(cfg: &ExperimentConfig, classes: usize, seed: u64) -> KsvdParams {
    let per_class = cfg.atoms / classes;
    let mut p = KsvdParams::initializer(per_class, seed);
    p.iterations = cfg.init.iterations;
    if let Some(s) = cfg.init.sparsity {
        p.sparsity = s.clamp(1, per_class);
    }
    p
}

/// A dictionary and classifier fitted on one training set.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub dictionary: Dictionary,
    pub classifier: LinearClassifier,
    pub iterations: usize,
    pub converged: bool,
    pub train_seconds: f64,
    pub warnings: Vec<String>,
}

pub(crate) fn fit(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_idx: &[usize],
    seeds: RepeatSeeds,
) -> Result<TrainedModel> {
    let mut warnings = Vec::new();
    let train = data.samples.select(train_idx);
    let (y, y_alter) = match &cfg.alt_scheme {
        AltScheme::Mirror(meta) => {
            let m = mirror_samples(&train, meta)?;
            (train, m)
        }
        AltScheme::HalfSplit => {
            let hs = half_split_alternative(&train, seeds.alternative)?;
            warnings.extend(hs.warnings);
            (hs.original, hs.alternative)
        }
        AltScheme::File(_) => {
            let alt = data
                .alternative
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("alternative-sample file was not loaded".into()))?;
            (train, alt.select(train_idx))
        }
    };
    let init = init_params(cfg, y.class_count(), seeds.init);

    let start = Instant::now();
    let (dictionary, coefficients, iterations, converged) = match cfg.method {
        Method::Esdl => {
            let m = esdl_train(&y, &y_alter, cfg.atoms, &cfg.esdl, &init)?;
            warnings.extend(m.report.warnings);
            (m.dictionary, m.coefficients, m.report.iterations_run, m.report.converged)
        }
        Method::SdlL1 => {
            let p = cfg.admm.params(&cfg.esdl);
            let m = sdl_l1_train(&y, &y_alter, cfg.atoms, &p, &init)?;
            warnings.extend(m.report.warnings);
            (m.dictionary, m.coefficients, m.report.iterations_run, m.report.converged)
        }
        Method::KsvdBaseline => {
            let d = init_dictionary_per_class(&y, cfg.atoms, &init)?;
            let x = code_samples(&d, y.data(), &cfg.coding)?;
            (d, x, init.iterations, true)
        }
    };
    let classifier = train_classifier(&coefficients, &y.label_matrix(), cfg.lambda)?;
    Ok(TrainedModel {
        dictionary,
        classifier,
        iterations,
        converged,
        train_seconds: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// Trains on the columns `train_idx` of `data` and scores on `test_idx`.
pub(crate) fn fit_and_score(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    seeds: RepeatSeeds,
) -> Result<Outcome> {
    let model = fit(cfg, data, train_idx, seeds)?;
    let test = data.samples.select(test_idx);
    let ev = evaluate(&model.classifier, &model.dictionary, &test, &cfg.coding)?;
    Ok(Outcome {
        accuracy: ev.accuracy,
        confusion: ev.confusion,
        iterations: model.iterations,
        converged: model.converged,
        train_seconds: model.train_seconds,
        test_seconds: ev.test_seconds,
        test_seconds_per_sample: ev.test_seconds_per_sample,
        warnings: model.warnings,
    })
}

/// Fits one model on every sample of `data`, using the seeds of repeat 0.
pub fn train_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainedModel> {
    validate_config(cfg)?;
    validate_against(cfg, data)?;
    let (data, mut warnings) = preprocess(cfg, data);
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let mut model = with_workers(cfg.workers, || fit(cfg, &data, &all, RepeatSeeds::derive(cfg.seed, 0)))??;
    warnings.append(&mut model.warnings);
    model.warnings = warnings;
    Ok(model)
}

pub(crate) fn preprocess(cfg: &ExperimentConfig, data: &Dataset) -> (Dataset, Vec<String>) {
    if !cfg.normalize {
        return (data.clone(), Vec::new());
    }
    let (samples, mut warnings) = normalize_columns(&data.samples);
    let alternative = data.alternative.as_ref().map(|a| {
        let (n, w) = normalize_columns(a);
        warnings.extend(w.into_iter().map(|m| format!("alternative file: {m}")));
        n
    });
    (
        Dataset {
            samples,
            label_table: data.label_table.clone(),
            alternative,
        },
        warnings,
    )
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the configured dataset and runs the protocol on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    validate_config(cfg)?;
    let data = Dataset::load(cfg)?;
    run_experiment_on(cfg, &data)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs `cfg.repeats` independent seeded repeats on `data`.
///
/// A failing repeat is recorded in the report; more than half failing aborts
/// with the first error.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<BenchmarkReport> {
    validate_config(cfg)?;
    validate_against(cfg, data)?;
    let (data, mut warnings) = preprocess(cfg, data);
    let classes = data.samples.class_count();

    let results: Vec<(RepeatSeeds, Result<(Outcome, usize)>)> = with_workers(cfg.workers, || {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                let seeds = RepeatSeeds::derive(cfg.seed, r);
                let run = || -> Result<(Outcome, usize)> {
                    let spec = SplitSpec {
                        seed: seeds.split,
                        ..cfg.split
                    };
                    let split = train_test_split(&data.samples, &spec)?;
                    let mut out = fit_and_score(cfg, &data, &split.train_indices, &split.test_indices, seeds)?;
                    let mut w = split.warnings;
                    w.append(&mut out.warnings);
                    out.warnings = w;
                    Ok((out, split.test_indices.len()))
                };
                (seeds, run())
            })
            .collect()
    })?;

    let failures = results.iter().filter(|(_, r)| r.is_err()).count();
    if failures * 2 > cfg.repeats {
        let (_, first) = results.into_iter().find(|(_, r)| r.is_err()).unwrap();
        return Err(first.err().unwrap());
    }

    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut repeats = Vec::with_capacity(cfg.repeats);
    for (r, (seeds, res)) in results.into_iter().enumerate() {
        match res {
            Ok((out, n_test)) => {
                for (row, add) in confusion.iter_mut().zip(&out.confusion) {
                    for (a, b) in row.iter_mut().zip(add) {
                        *a += b;
                    }
                }
                warnings.extend(out.warnings.iter().map(|w| format!("repeat {r}: {w}")));
                repeats.push(RepeatReport {
                    repeat: r,
                    split_seed: seeds.split,
                    accuracy: Some(out.accuracy),
                    iterations: Some(out.iterations),
                    converged: Some(out.converged),
                    test_samples: n_test,
                    error: None,
                    timing: RepeatTiming {
                        train_seconds: out.train_seconds,
                        test_seconds: out.test_seconds,
                        test_seconds_per_sample: out.test_seconds_per_sample,
                    },
                });
            }
            Err(e) => {
                warnings.push(format!("repeat {r} failed: {e}"));
                repeats.push(RepeatReport {
                    repeat: r,
                    split_seed: seeds.split,
                    accuracy: None,
                    iterations: None,
                    converged: None,
                    test_samples: 0,
                    error: Some(e.to_string()),
                    timing: RepeatTiming {
                        train_seconds: 0.0,
                        test_seconds: 0.0,
                        test_seconds_per_sample: 0.0,
                    },
                });
            }
        }
    }

    let ok: Vec<&RepeatReport> = repeats.iter().filter(|r| r.accuracy.is_some()).collect();
    let timing = ReportTiming {
        train_seconds_mean: mean(ok.iter().map(|r| r.timing.train_seconds)),
        test_seconds_mean: mean(ok.iter().map(|r| r.timing.test_seconds)),
        test_seconds_per_sample_mean: mean(ok.iter().map(|r| r.timing.test_seconds_per_sample)),
        workers: cfg.workers.max(1),
        convention: TIMING_CONVENTION.into(),
    };
    let class_names = data
        .label_table
        .originals()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let config = serde_json::to_value(cfg)
        .map_err(|e| Error::InvalidParam(format!("cannot serialize config: {e}")))?;
    Ok(BenchmarkReport {
        method: cfg.method,
        mean_accuracy: mean(ok.iter().filter_map(|r| r.accuracy)),
        repeats,
        class_names,
        confusion,
        config,
        warnings,
        timing,
    })
}
