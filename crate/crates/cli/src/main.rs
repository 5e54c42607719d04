mod model;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use structdict::bench::{
    emit_report, grid_search, make_synthetic, run_experiment_on, train_model, with_workers,
    AdmmSchedule, AltScheme, Dataset, DataSource, ExperimentConfig, InitSettings, Method,
    ParamGrid, ReportFormat,
};
use structdict::classifier::{evaluate, Coding, DEFAULT_LAMBDA};
use structdict::coding::OmpParams;
use structdict::data::{
    load_matrix, normalize_columns, save_matrix, DataFormat, ImageMeta, LabelTable, Orientation,
    SplitSpec, TrainCount,
};
use structdict::{Error, ErrorKind, EsdlParams, LabeledMatrix, Result};

use model::SavedModel;

#[derive(Parser)]
#[command(name = "structdict", version, about = "Structured dictionary learning for classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a dictionary and classifier on a whole dataset and save the model.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on a labelled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Overrides the coding stored in the model.
        #[arg(long)]
        coding: Option<CodingArg>,
        #[arg(long, env = "STRUCTDICT_WORKERS")]
        workers: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the repeated train/test protocol and write a report.
    Benchmark {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Cross-validate the balancing weights on the training split.
    Grid {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Candidate values for every weight; defaults to 1e-4,1e-3,0.01,0.1.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic union-of-subspaces dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        subspace_dim: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write CSV with labels to this file instead of the binary format.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Label file for CSV data; binary files carry their labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OrientationArg::Columns)]
    orientation: OrientationArg,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "esdl")]
    method: Method,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Start from the scene-type weights instead of the face-type ones.
    #[arg(long)]
    scene: bool,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 40)]
    atoms: usize,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    admm_iters: usize,
    /// mirror, half or file:PATH.
    #[arg(long, default_value = "half")]
    alt: AltArg,
    /// Image geometry file, required by --alt mirror.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// omp:T0 or ridge[:lambda].
    #[arg(long, default_value = "omp:30")]
    coding: CodingArg,
    #[arg(long, default_value_t = 20, conflicts_with = "train_fraction")]
    train_per_class: usize,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Leading samples of each class always used for training.
    #[arg(long, default_value_t = 0)]
    pinned: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "STRUCTDICT_WORKERS")]
    workers: Option<usize>,
    #[arg(long, overrides_with = "no_normalize")]
    normalize: bool,
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Columns,
    Rows,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Columns => Orientation::SamplesAsColumns,
            OrientationArg::Rows => Orientation::SamplesAsRows,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone)]
enum AltArg {
    Mirror,
    Half,
    File(PathBuf),
}

impl FromStr for AltArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mirror" => Ok(AltArg::Mirror),
            "half" => Ok(AltArg::Half),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(AltArg::File(PathBuf::from(p))),
                _ => Err(format!("expected mirror, half or file:PATH, got {s:?}")),
            },
        }
    }
}

#[derive(Clone, Copy)]
struct CodingArg(Coding);

impl FromStr for CodingArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, value) = s.split_once(':').map_or((s, None), |(n, v)| (n, Some(v)));
        match (name, value) {
            ("omp", v) => {
                let t0 = match v {
                    Some(v) => v.parse().map_err(|_| format!("bad OMP sparsity {v:?}"))?,
                    None => structdict::coding::DEFAULT_TEST_SPARSITY,
                };
                Ok(CodingArg(Coding::Omp(OmpParams::with_sparsity(t0))))
            }
            ("ridge", v) => {
                let lambda = match v {
                    Some(v) => v.parse().map_err(|_| format!("bad ridge weight {v:?}"))?,
                    None => DEFAULT_LAMBDA,
                };
                Ok(CodingArg(Coding::Ridge { lambda }))
            }
            _ => Err(format!("expected omp:T0 or ridge, got {s:?}")),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ExperimentArgs {
    fn config(&self, repeats: usize) -> Result<ExperimentConfig> {
        let base = if self.scene { EsdlParams::scene() } else { EsdlParams::face() };
        let esdl = EsdlParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            gamma: self.gamma.unwrap_or(base.gamma),
            max_iters: self.max_iters,
            tol: self.tol,
        };
        let alt_scheme = match &self.alt {
            AltArg::Mirror => {
                let meta = self.meta.as_ref().ok_or_else(|| {
                    Error::InvalidParam("--alt mirror needs --meta with the image size".into())
                })?;
                AltScheme::Mirror(ImageMeta::load(meta)?)
            }
            AltArg::Half => AltScheme::HalfSplit,
            AltArg::File(p) => AltScheme::File(p.clone()),
        };
        let train_per_class = match self.train_fraction {
            Some(f) => TrainCount::Fraction(f),
            None => TrainCount::PerClass(self.train_per_class),
        };
        Ok(ExperimentConfig {
            data: Some(DataSource {
                path: self.data.data.clone(),
                labels: self.data.labels.clone(),
                orientation: self.data.orientation.into(),
            }),
            method: self.method,
            atoms: self.atoms,
            esdl,
            admm: AdmmSchedule {
                max_iters: self.admm_iters,
                ..AdmmSchedule::default()
            },
            init: InitSettings::default(),
            lambda: self.lambda,
            split: SplitSpec {
                train_per_class,
                seed: self.seed,
                pinned_prefix: self.pinned,
            },
            repeats,
            alt_scheme,
            coding: self.coding.0,
            normalize: !self.no_normalize,
            seed: self.seed,
            workers: self.workers.unwrap_or_else(default_workers),
        })
    }
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize output: {e}")))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Maps the labels of `m` onto the class ids of a saved model.
fn align_labels(m: LabeledMatrix, table: &LabelTable, model: &SavedModel) -> Result<LabeledMatrix> {
    let ids: Vec<usize> = m
        .labels()
        .iter()
        .map(|&l| {
            let original = table.original(l).expect("label table covers every id");
            model
                .class_labels
                .iter()
                .position(|&c| c == original)
                .ok_or_else(|| Error::Data(format!("test label {original} is unknown to the model")))
        })
        .collect::<Result<_>>()?;
    let (data, _, _) = m.into_parts();
    LabeledMatrix::subset(data, ids, model.classes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { exp, out } => {
            let cfg = exp.config(1)?;
            let data = Dataset::load(&cfg)?;
            let model = train_model(&cfg, &data)?;
            for w in &model.warnings {
                log::warn!("{w}");
            }
            let saved = SavedModel::new(
                &model,
                cfg.method,
                cfg.normalize,
                cfg.coding,
                data.label_table.originals().to_vec(),
            );
            saved.save(&out)
        }
        Command::Evaluate { model, data, coding, workers, report } => {
            let saved = SavedModel::load(&model)?;
            let d = saved.dictionary()?;
            let classifier = saved.classifier()?;
            let loaded = load_matrix(&data.data, data.labels.as_deref(), data.orientation.into())?;
            let mut test = loaded.matrix;
            if saved.normalize {
                let (n, warnings) = normalize_columns(&test);
                warnings.iter().for_each(|w| log::warn!("{w}"));
                test = n;
            }
            let test = align_labels(test, &loaded.label_table, &saved)?;
            let coding = coding.map_or(saved.coding, |c| c.0);
            let workers = workers.unwrap_or_else(default_workers);
            let ev = with_workers(workers, || evaluate(&classifier, &d, &test, &coding))??;
            let out = serde_json::json!({
                "accuracy": ev.accuracy,
                "class_names": saved.class_labels.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                "confusion": ev.confusion,
                "test_samples": test.len(),
                "timing": {
                    "test_seconds": ev.test_seconds,
                    "test_seconds_per_sample": ev.test_seconds_per_sample,
                    "workers": workers,
                },
            });
            write_json(&out, report.as_deref())
        }
        Command::Benchmark { exp, repeats, report, format } => {
            let cfg = exp.config(repeats)?;
            structdict::bench::validate_config(&cfg)?;
            let data = Dataset::load(&cfg)?;
            let result = run_experiment_on(&cfg, &data)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            match report {
                Some(path) => {
                    let format = match format {
                        FormatArg::Json => ReportFormat::Json,
                        FormatArg::Csv => ReportFormat::Csv,
                    };
                    emit_report(&result, &path, format)
                }
                None => write_json(&structdict::bench::report_value(&result)?, None),
            }
        }
        Command::Grid { exp, folds, values, report } => {
            let cfg = exp.config(1)?;
            structdict::bench::validate_config(&cfg)?;
            let data = Dataset::load(&cfg)?;
            let grid = match values {
                Some(v) => ParamGrid {
                    alphas: v.clone(),
                    betas: v.clone(),
                    gammas: v,
                },
                None => ParamGrid::default(),
            };
            let result = grid_search(&cfg, &data, &grid, folds)?;
            write_json(&result, report.as_deref())
        }
        Command::Synth { classes, dim, subspace_dim, per_class, noise, seed, out, labels_out } => {
            let m = make_synthetic(classes, dim, subspace_dim, per_class, noise, seed)?;
            let table = LabelTable::identity(classes);
            let format = match labels_out {
                Some(_) => DataFormat::Csv(Orientation::SamplesAsColumns),
                None => DataFormat::Binary,
            };
            save_matrix(&out, labels_out.as_deref(), &m, &table, format)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
