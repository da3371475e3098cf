//! Numeric kernels: multiset statistics, spectral and wavelet coefficients,
//! autocorrelation and calendar fields.

use std::f64::consts::SQRT_2;

use chrono::{DateTime, Datelike, Timelike, Weekday};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub const MULTISET_TAGS: [&str; 6] = ["mean", "variance", "max", "min", "sum", "count"];

/// `(mean, population variance, max, min, sum, count)`. An empty input gives
/// nulls with a count of 0.
pub fn multiset_stats(values: &[f64]) -> [Option<f64>; 6] {
    if values.is_empty() {
        return [None, None, None, None, None, Some(0.0)];
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / n;
    let variance = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    [Some(mean), Some(variance), Some(max), Some(min), Some(sum), Some(n)]
}

/// Magnitudes of the first `count` DFT coefficients after zero-padding to the
/// next power of two. Coefficients past the padded length are null.
pub fn dft_magnitudes(values: &[f64], count: usize) -> Vec<Option<f64>> {
    if values.is_empty() {
        return vec![None; count];
    }
    let n = values.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..count).map(|k| buf.get(k).map(|c| c.norm())).collect()
}

/// Full Haar decomposition of the zero-padded series, laid out as
/// `[coarsest approximation, coarsest detail, ..., finest details]`,
/// truncated or zero-padded to `count`.
pub fn haar_coefficients(values: &[f64], count: usize) -> Vec<Option<f64>> {
    if values.is_empty() {
        return vec![None; count];
    }
    let n = values.len().next_power_of_two();
    let mut approx = values.to_vec();
    approx.resize(n, 0.0);
    let mut details: Vec<Vec<f64>> = Vec::new();
    while approx.len() > 1 {
        let (a, d): (Vec<f64>, Vec<f64>) =
            approx.chunks_exact(2).map(|p| ((p[0] + p[1]) / SQRT_2, (p[0] - p[1]) / SQRT_2)).unzip();
        details.push(d);
        approx = a;
    }
    let layout: Vec<f64> = approx.into_iter().chain(details.into_iter().rev().flatten()).collect();
    (0..count).map(|i| Some(layout.get(i).copied().unwrap_or(0.0))).collect()
}

/// Autocorrelation at `lag`: the mean lagged product of deviations divided
/// by the population variance. Null when `n <= lag` or the variance is 0.
pub fn autocorrelation(values: &[f64], lag: usize) -> Option<f64> {
    let n = values.len();
    if n <= lag {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return None;
    }
    let cov = (0..n - lag).map(|t| (values[t] - mean) * (values[t + lag] - mean)).sum::<f64>() / (n - lag) as f64;
    Some(cov / var)
}

pub const CALENDAR_TAGS: [&str; 8] = ["year", "month", "day", "hour", "minute", "dayofweek", "weekend", "dayofyear"];

/// `(year, month, day, hour, minute, weekday with Monday = 0, is_weekend,
/// day of year)` for a UTC epoch-seconds timestamp.
pub fn calendar_features(ts: i64) -> [f64; 8] {
    let Some(dt) = DateTime::from_timestamp(ts, 0) else { return [f64::NAN; 8] };
    let weekend = matches!(dt.weekday(), Weekday::Sat | Weekday::Sun);
    [
        dt.year() as f64,
        dt.month() as f64,
        dt.day() as f64,
        dt.hour() as f64,
        dt.minute() as f64,
        dt.weekday().num_days_from_monday() as f64,
        if weekend { 1.0 } else { 0.0 },
        dt.ordinal() as f64,
    ]
}
