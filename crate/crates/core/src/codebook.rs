//! Prototype codebooks: k-means clustering of a reference dataset and
//! nearest-prototype assignment.
//!
//! The codebook is the ordered list of cluster centers ("prototypes") fitted
//! on a reference feature matrix. The order is fixed and persisted, and a
//! content hash of the prototypes binds downstream histograms to the exact
//! codebook they were computed against.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Real;

pub const CODEBOOK_MAGIC: [u8; 4] = *b"BOPC";
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// SHA-256 content hash binding histograms and models to a codebook.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint([u8; 32]);

impl Fingerprint {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Fingerprint(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::InvalidArgument(format!(
                "fingerprint must be 64 hex digits, got {hex:?}"
            )));
        }
        let mut bytes = [0u8; 32];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap();
        }
        Ok(Fingerprint(bytes))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.to_hex())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Fingerprint::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Ordered set of K prototypes with provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F: Real> {
    k: usize,
    dim: usize,
    /// K x dim, row i is prototype i. Order is fixed.
    prototypes: Vec<F>,
    reference_id: String,
    seed: u64,
    /// Sum of squared distances of the reference features to their assigned
    /// prototypes at the end of fitting.
    inertia: F,
    fingerprint: Fingerprint,
}

impl<F: Real> Codebook<F> {
    pub fn from_parts(
        prototypes: Vec<F>,
        k: usize,
        dim: usize,
        reference_id: impl Into<String>,
        seed: u64,
        inertia: F,
    ) -> Result<Self> {
        if k == 0 || dim == 0 || prototypes.len() != k * dim {
            return Err(Error::InvalidArgument(format!(
                "prototype matrix must be {k} x {dim}, got {} values",
                prototypes.len()
            )));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "prototypes contain non-finite values".into(),
            ));
        }
        if !(inertia >= F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "inertia must be non-negative, got {inertia}"
            )));
        }
        let fingerprint = fingerprint_of(k, dim, &prototypes);
        Ok(Self {
            k,
            dim,
            prototypes,
            reference_id: reference_id.into(),
            seed,
            inertia,
            fingerprint,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prototype(&self, i: usize) -> &[F] {
        &self.prototypes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn prototypes(&self) -> &[F] {
        &self.prototypes
    }

    pub fn reference_id(&self) -> &str {
        &self.reference_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inertia(&self) -> F {
        self.inertia
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// Content hash over the prototype matrix (shape plus values widened to f64,
/// little-endian).
fn fingerprint_of<F: Real>(k: usize, dim: usize, prototypes: &[F]) -> Fingerprint {
    let mut hasher = Sha256::new();
    hasher.update((k as u32).to_le_bytes());
    hasher.update((dim as u32).to_le_bytes());
    for v in prototypes {
        hasher.update(v.as_f64().to_le_bytes());
    }
    Fingerprint(hasher.finalize().into())
}

/// K-means fitting parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Relative inertia decrease below which iteration stops.
    pub tolerance: f64,
    pub seed: u64,
    pub n_restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iterations: 300,
            tolerance: 1e-6,
            seed,
            n_restarts: 3,
        }
    }

    fn validate(&self, n_rows: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.k > n_rows {
            return Err(Error::InvalidArgument(format!(
                "k ({}) exceeds the number of reference rows ({n_rows})",
                self.k
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument(
                "n_restarts must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Fit result carrying the training assignment and the per-iteration inertia
/// of the winning restart.
#[derive(Debug, Clone)]
pub struct KMeansFit<F: Real> {
    pub codebook: Codebook<F>,
    /// Assignment of each reference row to its prototype.
    pub assignments: Vec<usize>,
    /// Inertia after each Lloyd iteration (non-increasing).
    pub inertia_history: Vec<F>,
}

/// Lloyd's algorithm with k-means++ initialization; the restart with the
/// lowest inertia wins. Deterministic given the seed.
pub fn kmeans_fit<F: Real>(
    reference: &FeatureMatrix<F>,
    config: &KMeansConfig,
    reference_id: &str,
) -> Result<Codebook<F>> {
    kmeans_fit_full(reference, config, reference_id).map(|fit| fit.codebook)
}

/// As [`kmeans_fit`], also exposing the training assignment and the
/// iteration history.
pub fn kmeans_fit_full<F: Real>(
    reference: &FeatureMatrix<F>,
    config: &KMeansConfig,
    reference_id: &str,
) -> Result<KMeansFit<F>> {
    config.validate(reference.n_rows())?;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<LloydRun<F>> = None;
    for _ in 0..config.n_restarts {
        let restart_seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
        let run = lloyd(reference, config, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");

    let codebook = Codebook::from_parts(
        run.prototypes,
        config.k,
        reference.dim(),
        reference_id,
        config.seed,
        run.inertia,
    )?;
    Ok(KMeansFit {
        codebook,
        assignments: run.assignments,
        inertia_history: run.history,
    })
}

struct LloydRun<F: Real> {
    prototypes: Vec<F>,
    assignments: Vec<usize>,
    inertia: F,
    history: Vec<F>,
}

fn lloyd<F: Real>(
    data: &FeatureMatrix<F>,
    config: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> LloydRun<F> {
    let k = config.k;
    let dim = data.dim();
    let mut prototypes = kmeanspp_init(data, k, rng);
    let mut history: Vec<F> = Vec::new();
    let mut prev_assignments: Option<Vec<usize>> = None;

    loop {
        let (assignments, inertia) = assign_with_inertia(data, &prototypes, k, dim);
        history.push(inertia);

        let stable = prev_assignments.as_deref() == Some(&assignments[..]);
        let converged = match history.len().checked_sub(2).map(|i| history[i]) {
            Some(prev) if prev > F::zero() => {
                ((prev - inertia) / prev).as_f64() < config.tolerance
            }
            Some(_) => true, // already at zero inertia
            None => false,
        };
        if stable || converged || history.len() >= config.max_iterations {
            return LloydRun {
                prototypes,
                assignments,
                inertia,
                history,
            };
        }

        prototypes = update_means(data, &assignments, &prototypes, k, dim);
        prev_assignments = Some(assignments);
    }
}

/// k-means++ seeding: first center uniform, the rest sampled with
/// probability proportional to the squared distance to the nearest chosen
/// center.
fn kmeanspp_init<F: Real>(data: &FeatureMatrix<F>, k: usize, rng: &mut ChaCha8Rng) -> Vec<F> {
    let n = data.n_rows();
    let dim = data.dim();
    let mut prototypes: Vec<F> = Vec::with_capacity(k * dim);

    let first = rng.random_range(0..n);
    prototypes.extend_from_slice(data.row(first));

    let mut min_d2: Vec<F> = data
        .rows()
        .map(|row| squared_distance(row, data.row(first)))
        .collect();

    for _ in 1..k {
        let total: F = min_d2.iter().copied().sum();
        let idx = if total > F::zero() {
            let target = rng.random::<f64>() * total.as_f64();
            let mut cum = 0.0;
            let mut chosen = n - 1;
            for (i, d) in min_d2.iter().enumerate() {
                cum += d.as_f64();
                if cum >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All mass sits on chosen centers already; any row works.
            rng.random_range(0..n)
        };
        let center_start = prototypes.len();
        prototypes.extend_from_slice(data.row(idx));
        let center = &prototypes[center_start..center_start + dim];
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = squared_distance(data.row(i), center);
            if nd < *d {
                *d = nd;
            }
        }
    }
    prototypes
}

fn assign_with_inertia<F: Real>(
    data: &FeatureMatrix<F>,
    prototypes: &[F],
    k: usize,
    dim: usize,
) -> (Vec<usize>, F) {
    let per_row: Vec<(usize, F)> = (0..data.n_rows())
        .into_par_iter()
        .map(|i| nearest_prototype(data.row(i), prototypes, k, dim))
        .collect();
    let mut assignments = Vec::with_capacity(per_row.len());
    let mut inertia = F::zero();
    for (a, d) in per_row {
        assignments.push(a);
        inertia += d;
    }
    (assignments, inertia)
}

/// Index and squared distance of the nearest prototype; ties break to the
/// lowest index.
fn nearest_prototype<F: Real>(row: &[F], prototypes: &[F], k: usize, dim: usize) -> (usize, F) {
    let mut best = 0usize;
    let mut best_d = squared_distance(row, &prototypes[0..dim]);
    for j in 1..k {
        let d = squared_distance(row, &prototypes[j * dim..(j + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

fn update_means<F: Real>(
    data: &FeatureMatrix<F>,
    assignments: &[usize],
    old_prototypes: &[F],
    k: usize,
    dim: usize,
) -> Vec<F> {
    let mut sums = vec![F::zero(); k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        let row = data.row(i);
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row) {
            *s += *v;
        }
    }
    let mut prototypes = old_prototypes.to_vec();
    for j in 0..k {
        if counts[j] > 0 {
            let c = F::of_usize(counts[j]);
            for (p, s) in prototypes[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&sums[j * dim..(j + 1) * dim])
            {
                *p = *s / c;
            }
        }
    }
    // A cluster that lost all members is re-seeded on the feature farthest
    // from its current prototype, keeping K fixed.
    let mut used_for_repair: Vec<usize> = Vec::new();
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let proto = old_prototypes[j * dim..(j + 1) * dim].to_vec();
        let mut far_idx = None;
        let mut far_d = F::neg_infinity();
        for i in 0..data.n_rows() {
            if used_for_repair.contains(&i) {
                continue;
            }
            let d = squared_distance(data.row(i), &proto);
            if d > far_d {
                far_d = d;
                far_idx = Some(i);
            }
        }
        if let Some(i) = far_idx {
            prototypes[j * dim..(j + 1) * dim].copy_from_slice(data.row(i));
            used_for_repair.push(i);
        }
    }
    prototypes
}

fn squared_distance<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

/// Quantizes every feature row to the nearest prototype (squared Euclidean;
/// ties break to the lowest prototype index).
pub fn assign<F: Real>(features: &FeatureMatrix<F>, codebook: &Codebook<F>) -> Result<Vec<usize>> {
    if features.dim() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            got: features.dim(),
        });
    }
    let (assignments, _) =
        assign_with_inertia(features, &codebook.prototypes, codebook.k, codebook.dim);
    Ok(assignments)
}

/// Writes the codebook: magic `BOPC`, version, K, d, reference id, seed,
/// inertia, prototypes as f64, fingerprint; all little-endian.
pub fn save_codebook<F: Real>(codebook: &Codebook<F>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CODEBOOK_MAGIC)?;
    w.write_all(&CODEBOOK_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(codebook.k as u32).to_le_bytes())?;
    w.write_all(&(codebook.dim as u32).to_le_bytes())?;
    let id = codebook.reference_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&codebook.seed.to_le_bytes())?;
    w.write_all(&codebook.inertia.as_f64().to_le_bytes())?;
    for v in &codebook.prototypes {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.write_all(codebook.fingerprint.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_codebook<F: Real>(path: &Path) -> Result<Codebook<F>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "magic bytes")?;
    if magic != CODEBOOK_MAGIC {
        return Err(Error::integrity(path, "bad magic bytes, not a codebook"));
    }
    let version = read_u32(&mut r, path, "format version")?;
    if version != CODEBOOK_FORMAT_VERSION {
        return Err(Error::integrity(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let k = read_u32(&mut r, path, "prototype count")? as usize;
    let dim = read_u32(&mut r, path, "dimensionality")? as usize;
    let id_len = read_u32(&mut r, path, "reference id length")? as usize;
    let mut id_bytes = vec![0u8; id_len];
    read_exact(&mut r, &mut id_bytes, path, "reference id")?;
    let reference_id = String::from_utf8(id_bytes)
        .map_err(|_| Error::integrity(path, "reference id is not valid UTF-8"))?;
    let seed = read_u64(&mut r, path, "seed")?;
    let inertia = read_f64(&mut r, path, "inertia")?;

    let n_values = k
        .checked_mul(dim)
        .ok_or_else(|| Error::integrity(path, "prototype matrix size overflows"))?;
    let mut raw = vec![0u8; n_values * 8];
    read_exact(&mut r, &mut raw, path, "prototypes")?;
    let prototypes: Vec<F> = raw
        .chunks_exact(8)
        .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();

    let mut fp_bytes = [0u8; 32];
    read_exact(&mut r, &mut fp_bytes, path, "fingerprint")?;
    let stored = Fingerprint::from_bytes(fp_bytes);

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::integrity(path, "trailing bytes after fingerprint"));
    }

    let codebook = Codebook::from_parts(prototypes, k, dim, reference_id, seed, F::of(inertia))
        .map_err(|e| Error::integrity(path, e.to_string()))?;
    if codebook.fingerprint != stored {
        return Err(Error::integrity(
            path,
            format!(
                "fingerprint mismatch: stored {stored}, recomputed {}",
                codebook.fingerprint
            ),
        ));
    }
    Ok(codebook)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::integrity(path, format!("truncated while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path, what)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * d)
            .map(|_| rng.next_u32() as f64 / u32::MAX as f64)
            .collect();
        FeatureMatrix::new(n, d, values).unwrap()
    }

    #[test]
    fn k1_prototype_is_column_mean() {
        let m = random_matrix(40, 3, 5);
        let fit = kmeans_fit_full(&m, &KMeansConfig::new(1, 0), "ref").unwrap();
        let mean = m.column_mean();
        for (p, c) in fit.codebook.prototype(0).iter().zip(&mean) {
            assert!((p - c).abs() < 1e-12);
        }
        let expected: f64 = m
            .rows()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .map(|(v, c)| (v - c) * (v - c))
                    .sum::<f64>()
            })
            .sum();
        assert!((fit.codebook.inertia() - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn k_equals_n_on_distinct_points_gives_zero_inertia() {
        let m: FeatureMatrix<f64> = FeatureMatrix::from_rows(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![5.0, 5.0],
        ])
        .unwrap();
        let cb = kmeans_fit(&m, &KMeansConfig::new(4, 3), "ref").unwrap();
        assert!(cb.inertia() <= 1e-12);
        let mut protos: Vec<Vec<u64>> = (0..4)
            .map(|j| cb.prototype(j).iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut points: Vec<Vec<u64>> = m.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        protos.sort();
        points.sort();
        assert_eq!(protos, points);
    }

    #[test]
    fn two_tight_triads_reach_partition_optimum() {
        // Two clusters of three points each, far apart.
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
            vec![10.0, 10.1],
        ];
        let m = FeatureMatrix::from_rows(rows.clone()).unwrap();
        let cb = kmeans_fit(&m, &KMeansConfig::new(2, 9), "ref").unwrap();

        // Exhaustive search over all 2-partitions.
        let n = rows.len();
        let mut best = f64::INFINITY;
        for mask in 0..(1u32 << n) {
            let inertia = partition_inertia(&rows, |i| ((mask >> i) & 1) as usize, 2);
            if inertia < best {
                best = inertia;
            }
        }
        assert!(
            (cb.inertia() - best).abs() <= 1e-9 * best.max(1.0),
            "kmeans {} vs optimum {}",
            cb.inertia(),
            best
        );
    }

    fn partition_inertia(rows: &[Vec<f64>], label: impl Fn(usize) -> usize, k: usize) -> f64 {
        let d = rows[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            let c = label(i);
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut inertia = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let c = label(i);
            for (s, v) in sums[c].iter().zip(r) {
                let mean = s / counts[c] as f64;
                inertia += (v - mean) * (v - mean);
            }
        }
        inertia
    }

    #[test]
    fn assign_is_identity_on_prototypes() {
        let m = random_matrix(30, 4, 2);
        let cb = kmeans_fit(&m, &KMeansConfig::new(5, 1), "ref").unwrap();
        let protos =
            FeatureMatrix::new(5, 4, cb.prototypes().to_vec()).unwrap();
        assert_eq!(assign(&protos, &cb).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn assign_breaks_ties_to_lowest_index() {
        // Prototypes at x = -1 and x = +1; a feature at 0 is equidistant.
        let protos = vec![-1.0, 1.0];
        let cb = Codebook::from_parts(protos, 2, 1, "ref", 0, 0.0).unwrap();
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(assign(&m, &cb).unwrap(), vec![0]);
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let m = random_matrix(50, 4, 77);
        let cb = kmeans_fit(&m, &KMeansConfig::new(5, 4), "ref").unwrap();
        let got = assign(&m, &cb).unwrap();
        // Independent exhaustive scan.
        for (i, row) in m.rows().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..cb.k() {
                let d: f64 = row
                    .iter()
                    .zip(cb.prototype(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(got[i], best, "row {i}");
        }
    }

    #[test]
    fn assign_rejects_dimension_mismatch() {
        let m = random_matrix(10, 3, 0);
        let cb = kmeans_fit(&m, &KMeansConfig::new(2, 0), "ref").unwrap();
        let wrong = random_matrix(4, 5, 1);
        assert!(matches!(
            assign(&wrong, &cb),
            Err(Error::DimensionMismatch { expected: 3, got: 5 })
        ));
    }

    #[test]
    fn inertia_history_is_non_increasing() {
        let m = random_matrix(200, 6, 13);
        let fit = kmeans_fit_full(&m, &KMeansConfig::new(7, 21), "ref").unwrap();
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "history not monotone: {w:?}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let m = random_matrix(120, 5, 31);
        let cfg = KMeansConfig::new(6, 17);
        let a = kmeans_fit(&m, &cfg, "ref").unwrap();
        let b = kmeans_fit(&m, &cfg, "ref").unwrap();
        assert_eq!(a, b);
        let a_bits: Vec<u64> = a.prototypes().iter().map(|v| v.to_bits()).collect();
        let b_bits: Vec<u64> = b.prototypes().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a_bits, b_bits);
    }

    #[test]
    fn prototypes_are_cluster_means_at_convergence() {
        let m = random_matrix(150, 4, 8);
        let mut cfg = KMeansConfig::new(5, 3);
        cfg.tolerance = 0.0; // run to a stable assignment
        let fit = kmeans_fit_full(&m, &cfg, "ref").unwrap();
        let k = fit.codebook.k();
        let d = fit.codebook.dim();
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in fit.assignments.iter().enumerate() {
            counts[a] += 1;
            for (j, v) in m.row(i).iter().enumerate() {
                sums[a * d + j] += v;
            }
        }
        for j in 0..k {
            assert!(counts[j] > 0);
            for c in 0..d {
                let mean = sums[j * d + c] / counts[j] as f64;
                let p = fit.codebook.prototype(j)[c];
                let rel = (p - mean).abs() / mean.abs().max(1.0);
                assert!(rel <= 1e-9, "cluster {j} column {c}: {p} vs {mean}");
            }
        }
    }

    #[test]
    fn training_assignment_matches_assign() {
        let m = random_matrix(90, 3, 6);
        let fit = kmeans_fit_full(&m, &KMeansConfig::new(4, 11), "ref").unwrap();
        assert_eq!(assign(&m, &fit.codebook).unwrap(), fit.assignments);
    }

    #[test]
    fn rejects_bad_k() {
        let m = random_matrix(5, 2, 0);
        assert!(kmeans_fit(&m, &KMeansConfig::new(0, 0), "r").is_err());
        let err = kmeans_fit(&m, &KMeansConfig::new(9, 0), "r").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('9') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn codebook_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bopc");
        let m = random_matrix(60, 4, 12);
        let cb = kmeans_fit(&m, &KMeansConfig::new(6, 2), "reference-set").unwrap();
        save_codebook(&cb, &path).unwrap();
        let back: Codebook<f64> = load_codebook(&path).unwrap();
        assert_eq!(cb, back);
        assert_eq!(back.fingerprint(), cb.fingerprint());
    }

    #[test]
    fn truncated_codebook_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bopc");
        let m = random_matrix(20, 3, 1);
        let cb = kmeans_fit(&m, &KMeansConfig::new(3, 2), "r").unwrap();
        save_codebook(&cb, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let trunc = dir.path().join("trunc.bopc");
        std::fs::write(&trunc, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            load_codebook::<f64>(&trunc),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn corrupted_prototype_fails_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bopc");
        let m = random_matrix(20, 3, 1);
        let cb = kmeans_fit(&m, &KMeansConfig::new(3, 2), "r").unwrap();
        save_codebook(&cb, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let len = bytes.len();
        bytes[len - 40] ^= 0x01; // flip a prototype bit
        let bad = dir.path().join("bad.bopc");
        std::fs::write(&bad, &bytes).unwrap();
        let err = load_codebook::<f64>(&bad).unwrap_err();
        assert!(err.to_string().contains("fingerprint"), "{err}");
    }

    #[test]
    fn fingerprint_hex_round_trip() {
        let fp = fingerprint_of(2, 1, &[1.0f64, 2.0]);
        assert_eq!(Fingerprint::from_hex(&fp.to_hex()).unwrap(), fp);
        assert!(Fingerprint::from_hex("zz").is_err());
    }

    #[test]
    fn empty_cluster_repair_keeps_k_prototypes() {
        // Nine coincident points plus one far outlier, k = 3: clusters go
        // empty during Lloyd updates and must be repaired.
        let mut rows = vec![vec![0.0f64, 0.0]; 9];
        rows.push(vec![100.0, 100.0]);
        let m = FeatureMatrix::from_rows(rows).unwrap();
        let cb = kmeans_fit(&m, &KMeansConfig::new(3, 0), "r").unwrap();
        assert_eq!(cb.k(), 3);
        assert!(cb.prototypes().iter().all(|v| v.is_finite()));
    }
}
