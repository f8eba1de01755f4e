//! Baseline dataset distances over raw feature matrices: Frechet distance
//! from Gaussian moment summaries, maximum mean discrepancy, and kernel
//! inception distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{mat_mul, sym_eigen, sym_sqrt, trace};
use crate::scalar::Real;

/// First two moments of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary<F: Real> {
    mean: Vec<F>,
    /// dim x dim, row-major, symmetric positive-semidefinite up to noise.
    covariance: Vec<F>,
    n: usize,
}

impl<F: Real> GaussianSummary<F> {
    /// Validates symmetry (within 1e-9, scaled) and numerical positive
    /// semidefiniteness (eigenvalues >= -1e-8, scaled).
    pub fn new(mean: Vec<F>, covariance: Vec<F>, n: usize) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "covariance must be {d} x {d}, got {} values",
                covariance.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "summary needs at least 2 samples, got {n}"
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "summary contains non-finite values".into(),
            ));
        }
        let scale = covariance
            .iter()
            .fold(F::one(), |acc, v| acc.max(v.abs()));
        let sym_tol = F::of(1e-9) * scale;
        for i in 0..d {
            for j in (i + 1)..d {
                if (covariance[i * d + j] - covariance[j * d + i]).abs() > sym_tol {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let (eigenvalues, _) = sym_eigen(&covariance, d);
        let psd_tol = F::of(1e-8) * scale;
        if eigenvalues.first().is_some_and(|l| *l < -psd_tol) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not positive semidefinite (lambda_min = {})",
                eigenvalues[0]
            )));
        }
        Ok(Self {
            mean,
            covariance,
            n,
        })
    }

    pub fn mean(&self) -> &[F] {
        &self.mean
    }

    pub fn covariance(&self) -> &[F] {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Column mean and unbiased sample covariance (divisor n - 1), two-pass.
pub fn summarize<F: Real>(features: &FeatureMatrix<F>) -> Result<GaussianSummary<F>> {
    let n = features.n_rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let d = features.dim();
    let mean = features.column_mean();

    let mut cov = vec![F::zero(); d * d];
    let mut centered = vec![F::zero(); d];
    for row in features.rows() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = *v - *m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    let denom = F::of_usize(n - 1);
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    GaussianSummary::new(mean, cov, n)
}

/// Frechet distance between Gaussian summaries:
/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, the cross term
/// computed as `tr sqrt(S_a^{1/2} S_b S_a^{1/2})` via symmetric
/// eigendecomposition with negative eigenvalues clamped to zero.
pub fn frechet_distance<F: Real>(
    a: &GaussianSummary<F>,
    b: &GaussianSummary<F>,
) -> Result<F> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.dim(),
        });
    }
    let mean_term: F = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();

    let sqrt_a = sym_sqrt(&a.covariance, d);
    let inner = mat_mul(&sqrt_a, &mat_mul(&b.covariance, &sqrt_a, d), d);
    // Symmetrize to cancel accumulation noise before eigendecomposition.
    let mut sym_inner = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym_inner[i * d + j] =
                (inner[i * d + j] + inner[j * d + i]) / F::of(2.0);
        }
    }
    let (eigenvalues, _) = sym_eigen(&sym_inner, d);
    let tr_sqrt: F = eigenvalues
        .iter()
        .map(|l| l.max(F::zero()).sqrt())
        .sum();

    let value =
        mean_term + trace(&a.covariance, d) + trace(&b.covariance, d) - F::of(2.0) * tr_sqrt;
    if !value.is_finite() {
        return Err(Error::Numerical("Frechet distance is not finite".into()));
    }
    if value < F::of(-1e-6) {
        return Err(Error::Numerical(format!(
            "Frechet distance is negative beyond tolerance: {value}"
        )));
    }
    Ok(value.max(F::zero()))
}

/// Kernel family for MMD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Polynomial,
}

/// RBF bandwidth: explicit, or the median of pooled pairwise distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    MedianHeuristic,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
    pub degree: u32,
    pub coef: f64,
    pub scale: f64,
}

impl KernelConfig {
    /// Default MMD kernel: RBF with median-heuristic bandwidth.
    pub fn rbf_median() -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::MedianHeuristic,
            degree: 1,
            coef: 0.0,
            scale: 1.0,
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Explicit(sigma),
            ..Self::rbf_median()
        }
    }

    /// `k(x, y) = (scale * <x, y> + coef)^degree`
    pub fn polynomial(degree: u32, scale: f64, coef: f64) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            bandwidth: Bandwidth::Explicit(1.0),
            degree,
            coef,
            scale,
        }
    }

    pub fn linear() -> Self {
        Self::polynomial(1, 1.0, 0.0)
    }

    /// The KID kernel: `(<x, y>/d + 1)^3`.
    pub fn kid(dim: usize) -> Self {
        Self::polynomial(3, 1.0 / dim as f64, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if let Bandwidth::Explicit(s) = self.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive, got {s}"
                )));
            }
        }
        if self.kind == KernelKind::Polynomial && self.degree == 0 {
            return Err(Error::InvalidArgument(
                "polynomial degree must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// V-statistic, includes within-set diagonal terms.
    Biased,
    /// U-statistic, excludes within-set diagonal terms. May be negative.
    Unbiased,
}

struct ResolvedKernel<F: Real> {
    kind: KernelKind,
    inv_two_sigma_sq: F,
    degree: i32,
    coef: F,
    scale: F,
}

impl<F: Real> ResolvedKernel<F> {
    fn from_config(cfg: &KernelConfig, sigma: f64) -> Self {
        Self {
            kind: cfg.kind,
            inv_two_sigma_sq: F::of(1.0 / (2.0 * sigma * sigma)),
            degree: cfg.degree as i32,
            coef: F::of(cfg.coef),
            scale: F::of(cfg.scale),
        }
    }

    #[inline]
    fn eval(&self, dot: F, norm_a: F, norm_b: F) -> F {
        match self.kind {
            KernelKind::Rbf => {
                let sq_dist = (norm_a + norm_b - F::of(2.0) * dot).max(F::zero());
                (-sq_dist * self.inv_two_sigma_sq).exp()
            }
            KernelKind::Polynomial => (self.scale * dot + self.coef).powi(self.degree),
        }
    }
}

/// Median of pooled pairwise Euclidean distances, the standard RBF
/// bandwidth heuristic. Pools are capped at 1024 rows by deterministic
/// striding to keep the pair count tractable; falls back to 1.0 when the
/// median vanishes (all pooled rows identical).
pub fn median_heuristic_bandwidth<F: Real>(
    a: &FeatureMatrix<F>,
    b: &FeatureMatrix<F>,
) -> f64 {
    const CAP: usize = 1024;
    let total = a.n_rows() + b.n_rows();
    let step = total.div_ceil(CAP).max(1);
    let pooled: Vec<&[F]> = a
        .rows()
        .chain(b.rows())
        .step_by(step)
        .collect();

    let mut distances: Vec<f64> = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            let d2: F = pooled[i]
                .iter()
                .zip(pooled[j])
                .map(|(x, y)| (*x - *y) * (*x - *y))
                .sum();
            distances.push(d2.as_f64().sqrt());
        }
    }
    if distances.is_empty() {
        return 1.0;
    }
    distances.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mid = distances.len() / 2;
    let median = if distances.len() % 2 == 0 {
        (distances[mid - 1] + distances[mid]) / 2.0
    } else {
        distances[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn squared_norms<F: Real>(m: &FeatureMatrix<F>) -> Vec<F> {
    m.rows()
        .map(|r| r.iter().map(|v| *v * *v).sum())
        .collect()
}

/// For each kernel, the full pair sum `sum_ij k(x_i, y_j)` and, when `x`
/// and `y` are the same matrix, the diagonal sum `sum_i k(x_i, x_i)`.
/// Row-major accumulation order is fixed so results are independent of the
/// rayon thread count.
fn kernel_sums<F: Real>(
    x: &FeatureMatrix<F>,
    y: &FeatureMatrix<F>,
    kernels: &[ResolvedKernel<F>],
) -> Vec<F> {
    let x_norms = squared_norms(x);
    let y_norms = squared_norms(y);
    let dim = x.dim();
    let per_row: Vec<Vec<F>> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let nxi = x_norms[i];
            let mut sums = vec![F::zero(); kernels.len()];
            for (j, yj) in y.rows().enumerate() {
                let mut dot = F::zero();
                for c in 0..dim {
                    dot += xi[c] * yj[c];
                }
                for (s, k) in sums.iter_mut().zip(kernels) {
                    *s += k.eval(dot, nxi, y_norms[j]);
                }
            }
            sums
        })
        .collect();

    let mut totals = vec![F::zero(); kernels.len()];
    for row in &per_row {
        for (t, v) in totals.iter_mut().zip(row) {
            *t += *v;
        }
    }
    totals
}

fn kernel_diag_sums<F: Real>(x: &FeatureMatrix<F>, kernels: &[ResolvedKernel<F>]) -> Vec<F> {
    let norms = squared_norms(x);
    let mut sums = vec![F::zero(); kernels.len()];
    for (i, _) in x.rows().enumerate() {
        let n = norms[i];
        for (s, k) in sums.iter_mut().zip(kernels) {
            *s += k.eval(n, n, n);
        }
    }
    sums
}

fn mmd_from_sums<F: Real>(
    kxx_full: F,
    kxx_diag: F,
    kyy_full: F,
    kyy_diag: F,
    kxy: F,
    m: usize,
    n: usize,
    estimator: Estimator,
) -> F {
    let mf = F::of_usize(m);
    let nf = F::of_usize(n);
    match estimator {
        Estimator::Biased => {
            kxx_full / (mf * mf) + kyy_full / (nf * nf) - F::of(2.0) * kxy / (mf * nf)
        }
        Estimator::Unbiased => {
            (kxx_full - kxx_diag) / (mf * (mf - F::one()))
                + (kyy_full - kyy_diag) / (nf * (nf - F::one()))
                - F::of(2.0) * kxy / (mf * nf)
        }
    }
}

/// Squared maximum mean discrepancy between two feature sets.
pub fn mmd<F: Real>(
    a: &FeatureMatrix<F>,
    b: &FeatureMatrix<F>,
    kernel: &KernelConfig,
    estimator: Estimator,
) -> Result<F> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    kernel.validate()?;
    if estimator == Estimator::Unbiased && (a.n_rows() < 2 || b.n_rows() < 2) {
        return Err(Error::InvalidArgument(
            "the unbiased estimator needs at least 2 rows per set".into(),
        ));
    }
    let sigma = match kernel.bandwidth {
        Bandwidth::Explicit(s) => s,
        Bandwidth::MedianHeuristic => median_heuristic_bandwidth(a, b),
    };
    let k = [ResolvedKernel::from_config(kernel, sigma)];
    let kxx = kernel_sums(a, a, &k)[0];
    let kyy = kernel_sums(b, b, &k)[0];
    let kxy = kernel_sums(a, b, &k)[0];
    let kxx_diag = kernel_diag_sums(a, &k)[0];
    let kyy_diag = kernel_diag_sums(b, &k)[0];
    Ok(mmd_from_sums(
        kxx,
        kxx_diag,
        kyy,
        kyy_diag,
        kxy,
        a.n_rows(),
        b.n_rows(),
        estimator,
    ))
}

/// Kernel inception distance: unbiased squared MMD under the cubic
/// polynomial kernel `(<x, y>/d + 1)^3`.
pub fn kid<F: Real>(a: &FeatureMatrix<F>, b: &FeatureMatrix<F>) -> Result<F> {
    mmd(a, b, &KernelConfig::kid(a.dim()), Estimator::Unbiased)
}

/// All three baseline distances in one pass. The MMD and KID estimates share
/// the dot-product Gram blocks and equal what the individual operations
/// return.
#[derive(Debug, Clone, Copy)]
pub struct BaselineDistances<F: Real> {
    pub frechet: F,
    pub mmd: F,
    pub kid: F,
    /// Resolved RBF bandwidth used by the MMD estimate.
    pub mmd_bandwidth: f64,
}

pub fn baseline_distances<F: Real>(
    a: &FeatureMatrix<F>,
    b: &FeatureMatrix<F>,
) -> Result<BaselineDistances<F>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.n_rows() < 2 || b.n_rows() < 2 {
        return Err(Error::InvalidArgument(
            "baseline distances need at least 2 rows per set".into(),
        ));
    }
    let frechet = frechet_distance(&summarize(a)?, &summarize(b)?)?;

    let sigma = median_heuristic_bandwidth(a, b);
    let rbf_cfg = KernelConfig::rbf(sigma);
    let kid_cfg = KernelConfig::kid(a.dim());
    let kernels = [
        ResolvedKernel::from_config(&rbf_cfg, sigma),
        ResolvedKernel::from_config(&kid_cfg, 1.0),
    ];
    let kxx = kernel_sums(a, a, &kernels);
    let kyy = kernel_sums(b, b, &kernels);
    let kxy = kernel_sums(a, b, &kernels);
    let kxx_diag = kernel_diag_sums(a, &kernels);
    let kyy_diag = kernel_diag_sums(b, &kernels);

    let (m, n) = (a.n_rows(), b.n_rows());
    let mmd_value = mmd_from_sums(
        kxx[0],
        kxx_diag[0],
        kyy[0],
        kyy_diag[0],
        kxy[0],
        m,
        n,
        Estimator::Unbiased,
    );
    let kid_value = mmd_from_sums(
        kxx[1],
        kxx_diag[1],
        kyy[1],
        kyy_diag[1],
        kxy[1],
        m,
        n,
        Estimator::Unbiased,
    );
    Ok(BaselineDistances {
        frechet,
        mmd: mmd_value,
        kid: kid_value,
        mmd_bandwidth: sigma,
    })
}
