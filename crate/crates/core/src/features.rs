//! Per-dataset feature matrices: loading, validation, persistence, subsampling.
//!
//! This is the single ingestion point for every downstream computation. A
//! [`FeatureMatrix`] is an `n_rows x dim` row-major matrix of finite values,
//! one row per image feature. Two on-disk formats exist:
//!
//! * binary (canonical): magic `BOPF`, format version as `u32`, `n_rows` as
//!   `u64`, `dim` as `u32`, then `n_rows * dim` IEEE-754 `f32` values
//!   row-major, all little-endian;
//! * CSV (convenience): one feature vector per line, comma-separated decimal
//!   numbers, no header.
//!
//! Storage is 32-bit; in-memory arithmetic downstream runs at the width of
//! the scalar type (`f64` for the default aliases).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const FEATURE_MAGIC: [u8; 4] = *b"BOPF";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

/// On-disk representation of a feature file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

/// Row-major matrix of image features for one dataset.
///
/// Invariants: at least one row and one column, every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<F: Real> {
    n_rows: usize,
    dim: usize,
    values: Vec<F>,
}

impl<F: Real> FeatureMatrix<F> {
    pub fn new(n_rows: usize, dim: usize, values: Vec<F>) -> Result<Self> {
        if n_rows == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix must be non-empty, got {n_rows} rows x {dim} columns"
            )));
        }
        if values.len() != n_rows * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {n_rows} x {dim} matrix, got {}",
                n_rows * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            n_rows,
            dim,
            values,
        })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self> {
        let n_rows = rows.len();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(
                "rows have inconsistent widths".into(),
            ));
        }
        let values: Vec<F> = rows.into_iter().flatten().collect();
        Self::new(n_rows, dim, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks_exact(self.dim)
    }

    /// Column-wise mean; the k=1 clustering prototype.
    pub fn column_mean(&self) -> Vec<F> {
        let mut mean = vec![F::zero(); self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        let n = F::of_usize(self.n_rows);
        for m in &mut mean {
            *m /= n;
        }
        mean
    }
}

/// A named dataset: feature matrix plus optional ground-truth model accuracy.
#[derive(Debug, Clone)]
pub struct DatasetRecord<F: Real> {
    pub id: String,
    pub features: FeatureMatrix<F>,
    /// Accuracy of some fixed model on this dataset, in `[0, 1]`. Used as the
    /// regression target / correlation variable; absent for unlabeled sets.
    pub accuracy: Option<f64>,
    pub source_path: PathBuf,
}

impl<F: Real> DatasetRecord<F> {
    pub fn new(
        id: impl Into<String>,
        features: FeatureMatrix<F>,
        accuracy: Option<f64>,
        source_path: impl Into<PathBuf>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidArgument("dataset id must be non-empty".into()));
        }
        if let Some(a) = accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "accuracy must lie in [0, 1], got {a}"
                )));
            }
        }
        Ok(Self {
            id,
            features,
            accuracy,
            source_path: source_path.into(),
        })
    }
}

/// Loads a feature matrix from disk under the declared format.
pub fn load_features<F: Real>(path: &Path, format: FileFormat) -> Result<FeatureMatrix<F>> {
    match format {
        FileFormat::Binary => load_binary(path),
        FileFormat::Csv => load_csv(path),
    }
}

/// Persists a feature matrix. Binary storage is 32-bit per value; a later
/// `load_features` reproduces the matrix exactly whenever the values are
/// representable in `f32` (in particular, always for matrices that came from
/// a feature file).
pub fn save_features<F: Real>(
    matrix: &FeatureMatrix<F>,
    path: &Path,
    format: FileFormat,
) -> Result<()> {
    match format {
        FileFormat::Binary => save_binary(matrix, path),
        FileFormat::Csv => save_csv(matrix, path),
    }
}

fn load_binary<F: Real>(path: &Path) -> Result<FeatureMatrix<F>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic, path, "magic bytes")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::load(path, "bad magic bytes, not a feature file"));
    }
    let version = read_u32(&mut reader, path, "format version")?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::load(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let n_rows = read_u64(&mut reader, path, "row count")? as usize;
    let dim = read_u32(&mut reader, path, "dimensionality")? as usize;
    if n_rows == 0 || dim == 0 {
        return Err(Error::load(path, "empty matrix header"));
    }
    let n_values = n_rows
        .checked_mul(dim)
        .ok_or_else(|| Error::load(path, "matrix size overflows"))?;

    let mut raw = vec![0u8; n_values * 4];
    read_exact(&mut reader, &mut raw, path, "feature values")?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::load(path, "trailing bytes after feature values"));
    }

    let mut values = Vec::with_capacity(n_values);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::load(
                path,
                format!("non-finite value at row {}, column {}", i / dim, i % dim),
            ));
        }
        values.push(F::of(f64::from(v)));
    }
    FeatureMatrix::new(n_rows, dim, values)
}

fn save_binary<F: Real>(matrix: &FeatureMatrix<F>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&FEATURE_MAGIC)?;
    w.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(matrix.n_rows as u64).to_le_bytes())?;
    w.write_all(&(matrix.dim as u32).to_le_bytes())?;
    for v in &matrix.values {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn load_csv<F: Real>(path: &Path) -> Result<FeatureMatrix<F>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut values: Vec<F> = Vec::new();
    let mut dim = 0usize;
    let mut n_rows = 0usize;

    for (line_idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row_no = line_idx + 1;
        let mut width = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::load(path, format!("row {row_no}: unparsable value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::load(
                    path,
                    format!("row {row_no}: non-finite value {field:?}"),
                ));
            }
            values.push(F::of(v));
            width += 1;
        }
        if n_rows == 0 {
            dim = width;
        } else if width != dim {
            return Err(Error::load(
                path,
                format!("row {row_no}: expected {dim} columns, got {width}"),
            ));
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::load(path, "no feature rows"));
    }
    FeatureMatrix::new(n_rows, dim, values)
}

fn save_csv<F: Real>(matrix: &FeatureMatrix<F>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for row in matrix.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            // 11 significant digits: round-trips any f32 exactly.
            write!(w, "{:.10e}", v.as_f64())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Draws `max(1, round(fraction * n_rows))` rows uniformly without
/// replacement via a seeded shuffle prefix. Deterministic given the seed.
pub fn subsample<F: Real>(
    matrix: &FeatureMatrix<F>,
    fraction: f64,
    seed: u64,
) -> Result<FeatureMatrix<F>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = matrix.n_rows;
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: only the first `count` positions are needed.
    for i in 0..count {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }

    let mut values = Vec::with_capacity(count * matrix.dim);
    for &i in &indices[..count] {
        values.extend_from_slice(matrix.row(i));
    }
    FeatureMatrix::new(count, matrix.dim, values)
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|e| Error::load(path, format!("truncated while reading {what}: {e}")))
}

fn read_u32(reader: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(reader, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(reader: &mut impl Read, path: &Path, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(reader, &mut b, path, what)?;
    Ok(u64::from_le_bytes(b))
}
