//! Bag-of-prototypes histograms and histogram divergences.
//!
//! Encoding a dataset counts how many of its features quantize to each
//! prototype and normalizes by the dataset size; the resulting K-bin
//! probability vector is the dataset representation. Histograms carry the
//! fingerprint of the codebook they were computed against, and divergences
//! refuse to compare histograms from different codebooks: bins over
//! different Voronoi partitions are not commensurable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{assign, Codebook, Fingerprint};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Real;

/// K-dimensional probability vector: the BoP representation of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct BopHistogram<F: Real> {
    codebook_fingerprint: Fingerprint,
    n_encoded: u64,
    bins: Vec<F>,
}

impl<F: Real> BopHistogram<F> {
    /// Validates the probability-vector invariants: non-negative bins that
    /// sum to one within 1e-9.
    pub fn new(bins: Vec<F>, codebook_fingerprint: Fingerprint, n_encoded: u64) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidArgument("histogram has no bins".into()));
        }
        if bins.iter().any(|b| !(*b >= F::zero()) || !b.is_finite()) {
            return Err(Error::InvalidArgument(
                "histogram bins must be finite and non-negative".into(),
            ));
        }
        let total: F = bins.iter().copied().sum();
        if (total.as_f64() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "histogram bins must sum to 1, got {total}"
            )));
        }
        Ok(Self {
            codebook_fingerprint,
            n_encoded,
            bins,
        })
    }

    pub fn bins(&self) -> &[F] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn codebook_fingerprint(&self) -> Fingerprint {
        self.codebook_fingerprint
    }

    pub fn n_encoded(&self) -> u64 {
        self.n_encoded
    }
}

/// Per-prototype assignment counts. Integer counts are kept until the final
/// normalization so the encoded mass is exact.
pub fn assignment_counts<F: Real>(
    features: &FeatureMatrix<F>,
    codebook: &Codebook<F>,
) -> Result<Vec<u64>> {
    let assignments = assign(features, codebook)?;
    let mut counts = vec![0u64; codebook.k()];
    for a in assignments {
        counts[a] += 1;
    }
    Ok(counts)
}

/// Encodes a dataset against a codebook: bin i is the fraction of features
/// whose nearest prototype is prototype i.
pub fn encode<F: Real>(
    features: &FeatureMatrix<F>,
    codebook: &Codebook<F>,
) -> Result<BopHistogram<F>> {
    let counts = assignment_counts(features, codebook)?;
    let n = features.n_rows() as u64;
    let denom = F::of_usize(features.n_rows());
    let bins = counts
        .iter()
        .map(|&c| F::of(c as f64) / denom)
        .collect();
    BopHistogram::new(bins, codebook.fingerprint(), n)
}

fn check_comparable<F: Real>(a: &BopHistogram<F>, b: &BopHistogram<F>) -> Result<()> {
    if a.codebook_fingerprint != b.codebook_fingerprint {
        return Err(Error::Comparability(format!(
            "histograms come from different codebooks ({} vs {})",
            a.codebook_fingerprint, b.codebook_fingerprint
        )));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Jensen-Shannon divergence in natural log units:
/// `JS(a, b) = KL(a || m)/2 + KL(b || m)/2` with `m = (a + b)/2` and the
/// convention `0 * log(0/x) = 0`. Lies in `[0, ln 2]`.
pub fn js_divergence<F: Real>(a: &BopHistogram<F>, b: &BopHistogram<F>) -> Result<F> {
    check_comparable(a, b)?;
    let half = F::of(0.5);
    let mut acc = F::zero();
    for (&p, &q) in a.bins.iter().zip(&b.bins) {
        let m = half * (p + q);
        if p > F::zero() {
            acc += half * p * (p / m).ln();
        }
        if q > F::zero() {
            acc += half * q * (q / m).ln();
        }
    }
    Ok(acc.max(F::zero()))
}

/// Hellinger distance `H(a, b) = sqrt(sum_i (sqrt(a_i) - sqrt(b_i))^2) / sqrt(2)`,
/// in `[0, 1]`.
pub fn hellinger<F: Real>(a: &BopHistogram<F>, b: &BopHistogram<F>) -> Result<F> {
    check_comparable(a, b)?;
    let mut acc = F::zero();
    for (&p, &q) in a.bins.iter().zip(&b.bins) {
        let d = p.sqrt() - q.sqrt();
        acc += d * d;
    }
    Ok((acc / F::of(2.0)).sqrt())
}

/// Symmetric chi-squared distance
/// `0.5 * sum_i (a_i - b_i)^2 / (a_i + b_i)`, empty bins contributing zero;
/// in `[0, 1]`.
pub fn chi_squared<F: Real>(a: &BopHistogram<F>, b: &BopHistogram<F>) -> Result<F> {
    check_comparable(a, b)?;
    let mut acc = F::zero();
    for (&p, &q) in a.bins.iter().zip(&b.bins) {
        let s = p + q;
        if s > F::zero() {
            let d = p - q;
            acc += d * d / s;
        }
    }
    Ok(acc * F::of(0.5))
}

/// Writes the histogram as JSON (`codebook_fingerprint`, `n_encoded`,
/// `bins`) at full 64-bit precision.
pub fn save_histogram<F: Real>(histogram: &BopHistogram<F>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, histogram)
        .map_err(|e| Error::Numerical(format!("histogram serialization failed: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_histogram<F: Real>(path: &Path) -> Result<BopHistogram<F>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let raw: BopHistogram<F> = serde_json::from_reader(reader)
        .map_err(|e| Error::load(path, format!("not a histogram JSON object: {e}")))?;
    // Re-validate invariants; serde bypasses the constructor.
    BopHistogram::new(raw.bins, raw.codebook_fingerprint, raw.n_encoded)
        .map_err(|e| Error::load(path, e.to_string()))
}
