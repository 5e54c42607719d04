//! Dataset ingestion, alternative-sample construction, splits and
//! preprocessing.
//!
//! Two on-disk matrix formats are supported:
//!
//! * CSV: decimal values, no header. With [`Orientation::SamplesAsColumns`]
//!   every CSV row is a feature and every CSV column a sample; with
//!   [`Orientation::SamplesAsRows`] the reverse. Labels live in a separate
//!   file, one integer per line, in sample order.
//! * Binary: the magic bytes `SDLM`, then `rows`, `cols` and `label_count` as
//!   little-endian `u64`, then `rows * cols` little-endian `f64` in
//!   column-major order, then `label_count` little-endian `i32` labels.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabeledMatrix;

pub const BINARY_MAGIC: &[u8; 4] = b"SDLM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    SamplesAsColumns,
    SamplesAsRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv(Orientation),
    Binary,
}

/// Original label values, indexed by their remapped id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelTable {
    originals: Vec<i64>,
}

impl LabelTable {
    /// Remaps arbitrary integer labels onto `0..C` in ascending order of the
    /// original values.
    pub fn remap(raw: &[i64]) -> (Self, Vec<usize>) {
        let mut uniq: Vec<i64> = raw.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let index: BTreeMap<i64, usize> = uniq.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mapped = raw.iter().map(|v| index[v]).collect();
        (Self { originals: uniq }, mapped)
    }

    /// Table mapping every id to itself.
    pub fn identity(class_count: usize) -> Self {
        Self {
            originals: (0..class_count as i64).collect(),
        }
    }

    pub fn original(&self, id: usize) -> Option<i64> {
        self.originals.get(id).copied()
    }

    pub fn originals(&self) -> &[i64] {
        &self.originals
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// `original -> remapped` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (i64, usize)> + '_ {
        self.originals.iter().enumerate().map(|(i, &v)| (v, i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub matrix: LabeledMatrix,
    pub label_table: LabelTable,
}

fn is_binary(path: &Path) -> Result<bool> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 4];
    match f.read_exact(&mut head) {
        Ok(()) => Ok(&head == BINARY_MAGIC),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Loads a labelled matrix, detecting the binary format by its magic bytes.
///
/// For CSV input `labels_path` is required; binary files carry their labels.
pub fn load_matrix(
    path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    orientation: Orientation,
) -> Result<LoadedMatrix> {
    let path = path.as_ref();
    let (data, raw_labels) = if is_binary(path)? {
        read_binary(path)?
    } else {
        let labels_path = labels_path.ok_or_else(|| {
            Error::InvalidParam(format!("{} is CSV and needs a labels file", path.display()))
        })?;
        let data = read_csv_matrix(path, orientation)?;
        (data, read_labels(labels_path)?)
    };
    if raw_labels.len() != data.ncols() {
        return Err(Error::Data(format!(
            "{} has {} samples but {} labels were given",
            path.display(),
            data.ncols(),
            raw_labels.len()
        )));
    }
    let (label_table, labels) = LabelTable::remap(&raw_labels);
    let matrix = LabeledMatrix::new(data, labels, label_table.len())?;
    Ok(LoadedMatrix { matrix, label_table })
}

fn read_csv_matrix(path: &Path, orientation: Orientation) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}: non-numeric cell {cell:?} at line {}, field {}",
                        path.display(),
                        r + 1,
                        c + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }
    let width = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = DMatrix::from_row_slice(rows.len(), width, &flat);
    Ok(match orientation {
        Orientation::SamplesAsColumns => m,
        Orientation::SamplesAsRows => m.transpose(),
    })
}

fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse::<i64>().map_err(|_| {
            Error::Data(format!("{}: non-integer label {t:?} at line {}", path.display(), i + 1))
        })?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} contains no labels", path.display())));
    }
    Ok(out)
}

fn read_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn read_binary(path: &Path) -> Result<(DMatrix<f64>, Vec<i64>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let truncated = || Error::Data(format!("{} is truncated", path.display()));
    if bytes.len() < 28 {
        return Err(truncated());
    }
    let rows = read_u64(&bytes, 4) as usize;
    let cols = read_u64(&bytes, 12) as usize;
    let nlabels = read_u64(&bytes, 20) as usize;
    let values = rows.checked_mul(cols).ok_or_else(truncated)?;
    let need = 28 + values * 8 + nlabels * 4;
    if bytes.len() != need {
        return Err(Error::Data(format!(
            "{}: expected {need} bytes for a {rows}x{cols} matrix with {nlabels} labels, found {}",
            path.display(),
            bytes.len()
        )));
    }
    if values == 0 {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }
    let data: Vec<f64> = bytes[28..28 + values * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[28 + values * 8..]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
        .collect();
    Ok((DMatrix::from_vec(rows, cols, data), labels))
}

/// Writes `m` with its labels translated back through `table`. For CSV the
/// labels go to `labels_path`.
pub fn save_matrix(
    path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    m: &LabeledMatrix,
    table: &LabelTable,
    format: DataFormat,
) -> Result<()> {
    let path = path.as_ref();
    let originals: Vec<i64> = m
        .labels()
        .iter()
        .map(|&l| {
            table
                .original(l)
                .ok_or_else(|| Error::Data(format!("label {l} missing from label table")))
        })
        .collect::<Result<_>>()?;
    match format {
        DataFormat::Binary => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
            put(BINARY_MAGIC)?;
            put(&(m.dim() as u64).to_le_bytes())?;
            put(&(m.len() as u64).to_le_bytes())?;
            put(&(originals.len() as u64).to_le_bytes())?;
            for v in m.data().iter() {
                put(&v.to_le_bytes())?;
            }
            for &l in &originals {
                let l = i32::try_from(l)
                    .map_err(|_| Error::Data(format!("label {l} does not fit in 32 bits")))?;
                put(&l.to_le_bytes())?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        DataFormat::Csv(orientation) => {
            let labels_path = labels_path.ok_or_else(|| {
                Error::InvalidParam("CSV output needs a labels path".into())
            })?;
            let grid = match orientation {
                Orientation::SamplesAsColumns => m.data().clone(),
                Orientation::SamplesAsRows => m.data().transpose(),
            };
            let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            for row in grid.row_iter() {
                // `{:?}` prints the shortest string that round-trips exactly
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            let mut lw = BufWriter::new(File::create(labels_path).map_err(|e| Error::io(labels_path, e))?);
            for l in &originals {
                writeln!(lw, "{l}").map_err(|e| Error::io(labels_path, e))?;
            }
            lw.flush().map_err(|e| Error::io(labels_path, e))
        }
    }
}

/// Image geometry of vectorized samples. Pixel `(row, col)` sits at index
/// `col * height + row` (column-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: usize,
    pub height: usize,
}

impl ImageMeta {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Parses a `key = value` (or `key: value`) sidecar with `width` and
    /// `height` entries. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Data(format!("image metadata line {}: expected key=value", i + 1)))?;
            let v: usize = v.trim().parse().map_err(|_| {
                Error::Data(format!("image metadata line {}: {:?} is not a positive integer", i + 1, v.trim()))
            })?;
            match k.trim() {
                "width" => width = Some(v),
                "height" => height = Some(v),
                _ => {}
            }
        }
        match (width, height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => Ok(Self { width: w, height: h }),
            _ => Err(Error::Data("image metadata needs positive width and height".into())),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Reflects every sample image left to right.
pub fn mirror_samples(y: &LabeledMatrix, meta: &ImageMeta) -> Result<LabeledMatrix> {
    if y.dim() != meta.pixels() {
        return Err(Error::Data(format!(
            "feature dimension {} does not match a {}x{} image",
            y.dim(),
            meta.width,
            meta.height
        )));
    }
    let (w, h) = (meta.width, meta.height);
    let src = y.data();
    let data = DMatrix::from_fn(src.nrows(), src.ncols(), |idx, i| {
        let (col, row) = (idx / h, idx % h);
        src[((w - 1 - col) * h + row, i)]
    });
    LabeledMatrix::subset(data, y.labels().to_vec(), y.class_count())
}

#[derive(Debug, Clone)]
pub struct HalfSplit {
    pub original: LabeledMatrix,
    pub alternative: LabeledMatrix,
    /// Column indices of `y` placed in each half.
    pub original_indices: Vec<usize>,
    pub alternative_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

fn class_rng(seed: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64);
    rng
}

/// Splits every class into two equal halves after a seeded shuffle. Both
/// halves come out grouped by class, so their label sequences coincide. A
/// class of odd size loses its last shuffled sample.
pub fn half_split_alternative(y: &LabeledMatrix, seed: u64) -> Result<HalfSplit> {
    let mut warnings = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut cols) in y.class_columns().into_iter().enumerate() {
        if cols.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} sample(s); half-splitting needs at least 2",
                cols.len()
            )));
        }
        cols.shuffle(&mut class_rng(seed, class));
        if cols.len() % 2 == 1 {
            let dropped = cols.pop().unwrap();
            let msg = format!("class {class} has an odd sample count; dropped column {dropped}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let half = cols.len() / 2;
        first.extend_from_slice(&cols[..half]);
        second.extend_from_slice(&cols[half..]);
    }
    Ok(HalfSplit {
        original: y.select(&first),
        alternative: y.select(&second),
        original_indices: first,
        alternative_indices: second,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainCount {
    PerClass(usize),
    /// Fraction of each class, rounded down.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_per_class: TrainCount,
    pub seed: u64,
    /// Leading samples of every class that always go to training.
    pub pinned_prefix: usize,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: LabeledMatrix,
    pub test: LabeledMatrix,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Per-class split: the first `pinned_prefix` samples of a class always go
/// to training, the remaining training slots are drawn without replacement,
/// and everything else is test data. Within each class the original column
/// order is kept.
pub fn train_test_split(y: &LabeledMatrix, spec: &SplitSpec) -> Result<Split> {
    let mut warnings = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, cols) in y.class_columns().into_iter().enumerate() {
        let n_train = match spec.train_per_class {
            TrainCount::PerClass(n) => n,
            TrainCount::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::InvalidParam(format!("train fraction {f} outside [0, 1]")));
                }
                (f * cols.len() as f64).floor() as usize
            }
        };
        if n_train > cols.len() {
            return Err(Error::InvalidParam(format!(
                "class {class} has {} samples, cannot take {n_train} for training",
                cols.len()
            )));
        }
        if spec.pinned_prefix > n_train {
            return Err(Error::InvalidParam(format!(
                "pinned prefix {} exceeds the {n_train} training samples of class {class}",
                spec.pinned_prefix
            )));
        }
        let mut rest: Vec<usize> = cols[spec.pinned_prefix..].to_vec();
        rest.shuffle(&mut class_rng(spec.seed, class));
        let mut chosen: Vec<usize> = cols[..spec.pinned_prefix].to_vec();
        chosen.extend_from_slice(&rest[..n_train - spec.pinned_prefix]);
        chosen.sort_unstable();
        let mut held: Vec<usize> = rest[n_train - spec.pinned_prefix..].to_vec();
        held.sort_unstable();
        if held.is_empty() {
            let msg = format!("class {class} has no test samples");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        train.extend(chosen);
        test.extend(held);
    }
    Ok(Split {
        train: y.select(&train),
        test: y.select(&test),
        train_indices: train,
        test_indices: test,
        warnings,
    })
}

/// Scales each column to unit ℓ2 norm; zero columns stay zero and produce a
/// warning.
pub fn normalize_columns(y: &LabeledMatrix) -> (LabeledMatrix, Vec<String>) {
    let mut data = y.data().clone();
    let mut warnings = Vec::new();
    for (i, mut c) in data.column_iter_mut().enumerate() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        } else {
            warnings.push(format!("sample column {i} is zero and was left unnormalized"));
        }
    }
    let out = LabeledMatrix::subset(data, y.labels().to_vec(), y.class_count())
        .expect("normalizing keeps entries finite");
    (out, warnings)
}
