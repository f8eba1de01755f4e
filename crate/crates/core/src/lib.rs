//! Bag-of-prototypes (BoP) dataset representations and dataset-level analyses.
//!
//! A dataset is summarized by quantizing its image features against a
//! codebook of k-means prototypes built from a reference dataset; the
//! normalized assignment histogram is the BoP representation. Histogram
//! divergences (Jensen-Shannon, Hellinger, chi-squared) measure
//! dataset-to-dataset similarity; Frechet distance, MMD, and KID over raw
//! features serve as baselines. On top of these sit correlation statistics,
//! a small histogram-to-accuracy regressor, and a synthetic distribution
//! shift benchmark tying everything together.
//!
//! The numeric core is generic over the scalar type via [`scalar::Real`];
//! the aliases at the crate root fix `f64`, which is what the CLI and the
//! benchmark use.

pub mod baselines;
pub mod bop;
pub mod codebook;
pub mod error;
pub mod features;
pub mod linalg;
pub mod predictor;
pub mod scalar;
pub mod stats;

pub use baselines::{
    baseline_distances, frechet_distance, kid, median_heuristic_bandwidth, mmd, summarize,
    Bandwidth, Estimator, KernelConfig, KernelKind,
};
pub use bop::{
    assignment_counts, chi_squared, encode, hellinger, js_divergence, load_histogram,
    save_histogram,
};
pub use codebook::{assign, kmeans_fit, kmeans_fit_full, load_codebook, save_codebook};
pub use codebook::{Fingerprint, KMeansConfig};
pub use error::{Error, Result};
pub use predictor::{grad_check, grad_check_with_step, load_model, predict, save_model, train};
pub use predictor::{TrainConfig, TrainOutcome};
pub use stats::{
    correlation_report, huber_fit, kendall_with_weights, pearson, rmse, spearman,
    weighted_kendall,
};
pub use features::{load_features, save_features, subsample, FileFormat};
pub use scalar::Real;

/// Double-precision feature matrix.
pub type FeatureMatrix = features::FeatureMatrix<f64>;
/// Double-precision dataset record.
pub type DatasetRecord = features::DatasetRecord<f64>;
/// Double-precision codebook.
pub type Codebook = codebook::Codebook<f64>;
/// Double-precision BoP histogram.
pub type BopHistogram = bop::BopHistogram<f64>;
/// Double-precision Gaussian moment summary.
pub type GaussianSummary = baselines::GaussianSummary<f64>;
/// Double-precision paired series.
pub type PairedSeries = stats::PairedSeries<f64>;
/// Double-precision correlation report.
pub type CorrelationReport = stats::CorrelationReport<f64>;
/// Double-precision accuracy regressor.
pub type MlpModel = predictor::MlpModel<f64>;
