//! Correlation and error statistics for the two dataset-level studies:
//! Pearson r, Spearman rho, a weighted Kendall rank correlation, RMSE, and
//! robust (Huber) line fitting for report figures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A paired sample of equal-length finite series, e.g. distances vs
/// accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries<F: Real> {
    x: Vec<F>,
    y: Vec<F>,
}

impl<F: Real> PairedSeries<F> {
    pub fn new(x: Vec<F>, y: Vec<F>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "paired series needs at least 2 points, got {}",
                x.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "paired series contains non-finite values".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[F] {
        &self.x
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Per-method correlation statistics plus the robust fitted line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CorrelationReport<F: Real> {
    pub method_label: String,
    pub n: usize,
    pub pearson_r: F,
    pub spearman_rho: F,
    /// Absent when the reference ranking has ties (the weighting scheme is
    /// then ambiguous; use `spearman_rho`).
    pub kendall_tau_w: Option<F>,
    pub huber_slope: F,
    pub huber_intercept: F,
}

/// Builds a full report for one method; tau_w degrades to `None` on tied
/// reference rankings instead of failing the whole report.
pub fn correlation_report<F: Real>(
    series: &PairedSeries<F>,
    method_label: impl Into<String>,
) -> Result<CorrelationReport<F>> {
    let tau = match weighted_kendall(series) {
        Ok(t) => Some(t),
        Err(Error::UnsupportedTies(_)) => None,
        Err(e) => return Err(e),
    };
    let (huber_slope, huber_intercept) = huber_fit(series)?;
    Ok(CorrelationReport {
        method_label: method_label.into(),
        n: series.len(),
        pearson_r: pearson(series)?,
        spearman_rho: spearman(series)?,
        kendall_tau_w: tau,
        huber_slope,
        huber_intercept,
    })
}

/// Product-moment correlation, in `[-1, 1]`.
pub fn pearson<F: Real>(series: &PairedSeries<F>) -> Result<F> {
    pearson_of(&series.x, &series.y)
}

fn pearson_of<F: Real>(x: &[F], y: &[F]) -> Result<F> {
    let n = F::of_usize(x.len());
    let mean_x = x.iter().copied().sum::<F>() / n;
    let mean_y = y.iter().copied().sum::<F>() / n;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::UndefinedCorrelation(
            "a series is constant".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-F::one()).min(F::one()))
}

/// Average ranks (1-based); ties receive the mean of their rank range.
fn average_ranks<F: Real>(values: &[F]) -> Vec<F> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank.
        let avg = F::of((i + j) as f64 / 2.0 + 1.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average-ranked data.
pub fn spearman<F: Real>(series: &PairedSeries<F>) -> Result<F> {
    let rx = average_ranks(&series.x);
    let ry = average_ranks(&series.y);
    pearson_of(&rx, &ry)
}

/// Weighted Kendall rank correlation with additive hyperbolic weights:
/// `w(i, j) = 1/(r_i + 1) + 1/(r_j + 1)` where `r_k` is the zero-based rank
/// of `y_k` in descending order (the best-ranked item weighs most), and
/// `tau_w = sum_{i<j} w(i,j) sgn(x_i - x_j) sgn(y_i - y_j) / sum_{i<j} w(i,j)`.
///
/// The reference series `y` must be tie-free; report Spearman instead when
/// it is not.
pub fn weighted_kendall<F: Real>(series: &PairedSeries<F>) -> Result<F> {
    let ranks = descending_ranks(&series.y)?;
    kendall_with_weights(series, |i, j| {
        1.0 / (ranks[i] as f64 + 1.0) + 1.0 / (ranks[j] as f64 + 1.0)
    })
}

/// Generalized weighted Kendall correlation; `weight(i, j)` receives item
/// indices. With a constant weight this reduces to the unweighted tau.
pub fn kendall_with_weights<F: Real>(
    series: &PairedSeries<F>,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<F> {
    let n = series.len();
    let mut num = F::zero();
    let mut den = F::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = F::of(weight(i, j));
            let sx = sign(series.x[i] - series.x[j]);
            let sy = sign(series.y[i] - series.y[j]);
            num += w * sx * sy;
            den += w;
        }
    }
    if den == F::zero() {
        return Err(Error::UndefinedCorrelation("all pair weights vanish".into()));
    }
    Ok((num / den).max(-F::one()).min(F::one()))
}

fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Zero-based ranks of `values` in descending order (largest value gets 0).
fn descending_ranks<F: Real>(values: &[F]) -> Result<Vec<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
    for w in order.windows(2) {
        if values[w[0]] == values[w[1]] {
            return Err(Error::UnsupportedTies(format!(
                "reference ranking has tied value {}",
                values[w[0]]
            )));
        }
    }
    let mut ranks = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank;
    }
    Ok(ranks)
}

/// Root mean squared error between predictions and ground truth.
pub fn rmse<F: Real>(pred: &[F], truth: &[F]) -> Result<F> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            got: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("rmse needs at least one pair".into()));
    }
    let n = F::of_usize(pred.len());
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<F>()
        / n;
    Ok(mse.sqrt())
}

const HUBER_TUNING: f64 = 1.345;
const MAD_TO_SIGMA: f64 = 1.4826;
const HUBER_MAX_ITERATIONS: usize = 100;
const HUBER_PARAM_TOLERANCE: f64 = 1e-8;

/// Robust line fit minimizing the Huber loss via iteratively reweighted
/// least squares. The threshold is `1.345 * s` with `s = 1.4826 * MAD` of
/// the current residuals, re-estimated every round; iteration stops when
/// the parameters move less than 1e-8 or after 100 rounds.
pub fn huber_fit<F: Real>(series: &PairedSeries<F>) -> Result<(F, F)> {
    let x = &series.x;
    let y = &series.y;
    let ones = vec![F::one(); x.len()];
    let (mut slope, mut intercept) = weighted_least_squares(x, y, &ones)
        .ok_or_else(|| Error::DegenerateFit("x series is constant".into()))?;

    let mut residuals = vec![F::zero(); x.len()];
    let mut weights = vec![F::one(); x.len()];
    for _ in 0..HUBER_MAX_ITERATIONS {
        for (r, (&xi, &yi)) in residuals.iter_mut().zip(x.iter().zip(y)) {
            *r = yi - (slope * xi + intercept);
        }
        let scale = F::of(MAD_TO_SIGMA) * mad(&residuals);
        let delta = F::of(HUBER_TUNING) * scale;
        for (w, r) in weights.iter_mut().zip(&residuals) {
            let ar = r.abs();
            *w = if ar <= delta { F::one() } else { delta / ar };
        }
        let Some((new_slope, new_intercept)) = weighted_least_squares(x, y, &weights) else {
            break; // weights collapsed; keep the current fit
        };
        let moved = (new_slope - slope)
            .abs()
            .max((new_intercept - intercept).abs());
        slope = new_slope;
        intercept = new_intercept;
        if moved.as_f64() < HUBER_PARAM_TOLERANCE {
            break;
        }
    }
    Ok((slope, intercept))
}

fn weighted_least_squares<F: Real>(x: &[F], y: &[F], w: &[F]) -> Option<(F, F)> {
    let mut sw = F::zero();
    let mut sx = F::zero();
    let mut sxx = F::zero();
    let mut sy = F::zero();
    let mut sxy = F::zero();
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sw += wi;
        sx += wi * xi;
        sxx += wi * xi * xi;
        sy += wi * yi;
        sxy += wi * xi * yi;
    }
    let det = sw * sxx - sx * sx;
    if det <= F::zero() || !det.is_finite() {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Some((slope, intercept))
}

/// Median absolute deviation about the median.
fn mad<F: Real>(values: &[F]) -> F {
    let med = median(values);
    let deviations: Vec<F> = values.iter().map(|v| (*v - med).abs()).collect();
    median(&deviations)
}

fn median<F: Real>(values: &[F]) -> F {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / F::of(2.0)
    } else {
        sorted[mid]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(x: &[f64], y: &[f64]) -> PairedSeries<f64> {
        PairedSeries::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn pearson_of_affine_series_is_unit() {
        let x = [1.0, 2.0, 3.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&series(&x, &y)).unwrap() - 1.0).abs() < 1e-14);
        let ny: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&series(&x, &ny)).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn pearson_worked_value() {
        // Direct evaluation: r = 22 / sqrt(20 * 35) = 0.8315218406202999.
        let s = series(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0]);
        let r = pearson(&s).unwrap();
        assert!((r - 0.8315218406203).abs() < 1e-10, "{r}");
    }

    #[test]
    fn pearson_rejects_constant_series() {
        let s = series(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(pearson(&s), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn spearman_of_monotone_map_is_unit() {
        let x = [0.3f64, 1.2, 2.2, 5.0];
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&series(&x, &y)).unwrap() - 1.0).abs() < 1e-14);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&series(&x, &rev)).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn spearman_matches_rank_then_pearson_oracle() {
        let s = series(&[1.0, 2.0, 2.0, 4.0], &[10.0, 20.0, 30.0, 40.0]);
        let got = spearman(&s).unwrap();
        // Average ranks of x: [1, 2.5, 2.5, 4]; ranks of y: [1, 2, 3, 4].
        let rx = [1.0, 2.5, 2.5, 4.0];
        let ry = [1.0, 2.0, 3.0, 4.0];
        let expected = pearson(&series(&rx, &ry)).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.9f64.sqrt()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn weighted_kendall_concordant_and_discordant_extremes() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((weighted_kendall(&series(&x, &y)).unwrap() - 1.0).abs() < 1e-14);
        let yr = [4.0, 3.0, 2.0, 1.0];
        assert!((weighted_kendall(&series(&x, &yr)).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_kendall_worked_case_matches_pair_enumeration() {
        // x = [0.1, 0.4, 0.2, 0.9], y = [4, 3, 2, 1]: descending y ranks are
        // [0, 1, 2, 3]; enumerating all 6 pairs with w = 1/(r_i+1) + 1/(r_j+1)
        // gives -4.583333/6.25 = -11/15.
        let s = series(&[0.1, 0.4, 0.2, 0.9], &[4.0, 3.0, 2.0, 1.0]);
        let got = weighted_kendall(&s).unwrap();
        assert!((got - (-11.0 / 15.0)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn weighted_kendall_rejects_ties_in_reference() {
        let s = series(&[1.0, 2.0, 3.0], &[5.0, 5.0, 1.0]);
        assert!(matches!(
            weighted_kendall(&s),
            Err(Error::UnsupportedTies(_))
        ));
    }

    #[test]
    fn constant_weights_reduce_to_unweighted_tau() {
        let s = series(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        let got = kendall_with_weights(&s, |_, _| 1.0).unwrap();
        // 5 concordant pairs, 1 discordant, 6 total.
        assert!((got - 4.0 / 6.0).abs() < 1e-14, "{got}");
    }

    #[test]
    fn rmse_basics_and_worked_value() {
        let p = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        let shifted: Vec<f64> = p.iter().map(|v| v + 0.3).collect();
        assert!((rmse(&shifted, &p).unwrap() - 0.3).abs() < 1e-12);
        let v = rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap();
        assert!((v - (5.0f64 / 3.0).sqrt()).abs() < 1e-12, "{v}");
        assert!(rmse(&p, &[1.0]).is_err());
    }

    #[test]
    fn huber_recovers_exact_line_on_collinear_points() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -1.5 * v + 0.75).collect();
        let (slope, intercept) = huber_fit(&series(&x, &y)).unwrap();
        assert!((slope + 1.5).abs() < 1e-10);
        assert!((intercept - 0.75).abs() < 1e-10);
    }

    #[test]
    fn huber_shrugs_off_a_gross_outlier() {
        let mut x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 2.0 * v - 3.0).collect();
        x.push(5.0);
        y.push(500.0); // gross outlier
        let (slope, intercept) = huber_fit(&series(&x, &y)).unwrap();
        // OLS on the clean subset gives the exact generating line.
        assert!((slope - 2.0).abs() < 1e-3, "slope {slope}");
        assert!((intercept + 3.0).abs() < 1e-3, "intercept {intercept}");
    }

    #[test]
    fn huber_slope_is_zero_for_symmetric_data() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let y = [1.0, -1.0, 0.0, -1.0, 1.0];
        let (slope, _) = huber_fit(&series(&x, &y)).unwrap();
        assert!(slope.abs() < 1e-10, "{slope}");
    }

    #[test]
    fn huber_rejects_constant_x() {
        let s = series(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(huber_fit(&s), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn report_degrades_tau_on_ties() {
        let s = series(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.5, 0.8, 0.9]);
        let report = correlation_report(&s, "js").unwrap();
        assert!(report.kendall_tau_w.is_none());
        assert_eq!(report.n, 4);
        assert_eq!(report.method_label, "js");
    }

    fn random_series(seed: u64, n: usize) -> PairedSeries<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Distinct y values so tau_w is defined.
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| rng.random::<f64>() + i as f64 * 1e-3)
            .collect();
        PairedSeries::new(x, y).unwrap()
    }

    proptest! {
        #[test]
        fn sign_flip_antisymmetry(seed in 0u64..200, n in 3usize..25) {
            let s = random_series(seed, n);
            let neg = PairedSeries::new(
                s.x().to_vec(),
                s.y().iter().map(|v| -v).collect(),
            ).unwrap();
            if let (Ok(a), Ok(b)) = (pearson(&s), pearson(&neg)) {
                prop_assert!((a + b).abs() <= 1e-12);
            }
            if let (Ok(a), Ok(b)) = (spearman(&s), spearman(&neg)) {
                prop_assert!((a + b).abs() <= 1e-12);
            }
            // tau_w weights come from the y ranking, so negating y changes
            // them; the antisymmetry that holds exactly is in x.
            let neg_x = PairedSeries::new(
                s.x().iter().map(|v| -v).collect(),
                s.y().to_vec(),
            ).unwrap();
            let t1 = weighted_kendall(&s).unwrap();
            let t2 = weighted_kendall(&neg_x).unwrap();
            prop_assert!((t1 + t2).abs() <= 1e-12);
        }

        #[test]
        fn rank_statistics_ignore_monotone_maps_of_x(seed in 0u64..200, n in 3usize..20) {
            let s = random_series(seed, n);
            let mapped = PairedSeries::new(
                s.x().iter().map(|v| (v * 0.3).exp() + v.powi(3) * 1e-3).collect(),
                s.y().to_vec(),
            ).unwrap();
            let rho = spearman(&s).unwrap();
            let rho_m = spearman(&mapped).unwrap();
            prop_assert!((rho - rho_m).abs() <= 1e-12);
            let tau = weighted_kendall(&s).unwrap();
            let tau_m = weighted_kendall(&mapped).unwrap();
            prop_assert!((tau - tau_m).abs() <= 1e-12);
        }

        #[test]
        fn pearson_ignores_positive_affine_maps(seed in 0u64..200, n in 3usize..20,
                                                a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let s = random_series(seed, n);
            let mapped = PairedSeries::new(
                s.x().iter().map(|v| a * v + b).collect(),
                s.y().to_vec(),
            ).unwrap();
            let r = pearson(&s).unwrap();
            let rm = pearson(&mapped).unwrap();
            prop_assert!((r - rm).abs() <= 1e-9);
        }

        #[test]
        fn rmse_is_zero_iff_equal(seed in 0u64..100, n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut b = a.clone();
            prop_assert_eq!(rmse(&a, &b).unwrap(), 0.0);
            b[0] += 0.5;
            prop_assert!(rmse(&a, &b).unwrap() > 0.0);
        }
    }
}
