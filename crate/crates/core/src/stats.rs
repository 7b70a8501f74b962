//! Sample moments and normality diagnostics. All sums run in slice order.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

pub const SKEW_LIMIT: f64 = 0.25;
pub const KURTOSIS_LIMIT: f64 = 0.5;
/// Kolmogorov–Smirnov critical constant at level ≈ 0.01.
pub const KS_CONSTANT: f64 = 1.63;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Moment skewness `m₃ / m₂^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(xs);
    m3 / m2.powf(1.5)
}

/// `m₄ / m₂² − 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(xs);
    m4 / (m2 * m2) - 3.0
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and N(0, 1).
pub fn ks_standard_normal(xs: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateNormality {
    pub coordinate: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalityReport {
    pub n: usize,
    pub skew_limit: f64,
    pub kurtosis_limit: f64,
    pub ks_limit: f64,
    pub coordinates: Vec<CoordinateNormality>,
    pub pass: bool,
}

/// Checks each coordinate sample against N(0, 1).
pub fn normality_report(coords: &[Vec<f64>]) -> NormalityReport {
    let n = coords.first().map_or(0, Vec::len);
    let ks_limit = KS_CONSTANT / (n as f64).sqrt();
    let coordinates: Vec<CoordinateNormality> = coords
        .iter()
        .enumerate()
        .map(|(i, xs)| {
            let skew = skewness(xs);
            let kurt = excess_kurtosis(xs);
            let ks = ks_standard_normal(xs);
            // NaN moments (constant samples) fail every comparison
            let pass = skew.abs() < SKEW_LIMIT && kurt.abs() < KURTOSIS_LIMIT && ks < ks_limit;
            CoordinateNormality { coordinate: i, skewness: skew, excess_kurtosis: kurt, ks_distance: ks, pass }
        })
        .collect();
    NormalityReport {
        n,
        skew_limit: SKEW_LIMIT,
        kurtosis_limit: KURTOSIS_LIMIT,
        ks_limit,
        pass: n > 1 && coordinates.iter().all(|c| c.pass),
        coordinates,
    }
}
