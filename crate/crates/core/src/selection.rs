//! Feature filtering: constant and duplicate removal, drift detection on an
//! ordered split, and a chi-square independence test against the target.
//!
//! Every decision is made from training rows only and then applied to the
//! whole matrix.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::pipeline::FeatureMatrix;
use crate::transform::{Task, TargetColumn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Remove when the KS statistic exceeds this.
    pub ks_threshold: f64,
    /// Remove when the chi-square p-value exceeds this.
    pub alpha: f64,
    /// Share of ordered training rows in the reference split.
    pub train_fraction: f64,
    pub max_bins: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { ks_threshold: 0.2, alpha: 0.05, train_fraction: 0.8, max_bins: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RemovalReason {
    Constant,
    Duplicate,
    Drift,
    Independent,
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalReason::Constant => "constant",
            RemovalReason::Duplicate => "duplicate",
            RemovalReason::Drift => "drift",
            RemovalReason::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub feature: String,
    pub reason: RemovalReason,
    /// Distinct value count for constants, KS statistic for drift, p-value
    /// for independence, none for duplicates.
    pub statistic: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionReport {
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
}

impl SelectionReport {
    pub fn reason_of(&self, feature: &str) -> Option<RemovalReason> {
        self.removed.iter().find(|r| r.feature == feature).map(|r| r.reason)
    }

    /// `feature,reason,statistic`, one row per removed feature.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "reason", "statistic"])?;
        for r in &self.removed {
            let stat = r.statistic.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([r.feature.as_str(), &r.reason.to_string(), &stat])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hashable identity of a value vector: nulls, NaNs and signed zeros unified.
fn fingerprint(values: &[Option<f64>], rows: &[usize]) -> Vec<u64> {
    rows.iter()
        .map(|&r| match values[r] {
            None => u64::MAX,
            Some(x) if x.is_nan() => f64::NAN.to_bits(),
            // -0.0 and 0.0 compare equal
            Some(0.0) => 0,
            Some(x) => x.to_bits(),
        })
        .collect()
}

fn distinct_non_null(values: &[Option<f64>], rows: &[usize]) -> usize {
    rows.iter()
        .filter_map(|&r| values[r])
        .map(|x| if x == 0.0 { 0 } else if x.is_nan() { f64::NAN.to_bits() } else { x.to_bits() })
        .collect::<HashSet<_>>()
        .len()
}

/// Removes constant columns, then keeps the lexicographically smallest name of
/// every group of identical columns. Only `rows` are compared.
pub fn remove_duplicates(matrix: &FeatureMatrix, rows: &[usize]) -> Vec<Removal> {
    let mut order: Vec<usize> = (0..matrix.columns.len()).collect();
    order.sort_by(|&a, &b| matrix.columns[a].name.cmp(&matrix.columns[b].name));
    let mut removed = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in order {
        let col = &matrix.columns[i];
        let distinct = distinct_non_null(&col.values, rows);
        if distinct <= 1 {
            removed.push(Removal { feature: col.name.clone(), reason: RemovalReason::Constant, statistic: Some(distinct as f64) });
            continue;
        }
        if seen.insert(fingerprint(&col.values, rows), i).is_some() {
            removed.push(Removal { feature: col.name.clone(), reason: RemovalReason::Duplicate, statistic: None });
        }
    }
    removed
}

/// Two-sample Kolmogorov-Smirnov statistic `max |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i].total_cmp(&b[j]).is_le() { a[i] } else { b[j] };
        while i < a.len() && a[i].total_cmp(&x).is_le() {
            i += 1;
        }
        while j < b.len() && b[j].total_cmp(&x).is_le() {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Splits `rows` by `order` (ties by row) into the first `fraction` and the rest.
pub fn ordered_split(rows: &[usize], order: &[Option<f64>], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut ordered: Vec<usize> = rows.iter().copied().filter(|&r| order[r].is_some()).collect();
    ordered.sort_by(|&a, &b| order[a].unwrap().total_cmp(&order[b].unwrap()).then(a.cmp(&b)));
    let cut = ((ordered.len() as f64) * fraction).floor() as usize;
    let late = ordered.split_off(cut);
    (ordered, late)
}

/// Columns whose distribution shifts between the early and late splits.
pub fn detect_drift(
    matrix: &FeatureMatrix,
    rows: &[usize],
    order: Option<&[Option<f64>]>,
    cfg: &SelectionConfig,
) -> Vec<Removal> {
    let Some(order) = order else { return Vec::new() };
    let (early, late) = ordered_split(rows, order, cfg.train_fraction);
    if early.is_empty() || late.is_empty() {
        return Vec::new();
    }
    let mut removed: Vec<Removal> = matrix
        .columns
        .par_iter()
        .filter_map(|col| {
            let a: Vec<f64> = early.iter().filter_map(|&r| col.values[r]).collect();
            let b: Vec<f64> = late.iter().filter_map(|&r| col.values[r]).collect();
            let d = ks_statistic(&a, &b);
            (d > cfg.ks_threshold).then(|| Removal { feature: col.name.clone(), reason: RemovalReason::Drift, statistic: Some(d) })
        })
        .collect();
    removed.sort_by(|a, b| a.feature.cmp(&b.feature));
    removed
}

/// Equal-frequency bin of each value among `rows`; nulls share one extra bin.
/// Equal values always land in the same bin.
pub fn equal_frequency_bins(values: &[Option<f64>], rows: &[usize], max_bins: usize) -> Vec<usize> {
    let mut present: Vec<f64> = rows.iter().filter_map(|&r| values[r]).collect();
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let bins = max_bins.min(n).max(1);
    rows.iter()
        .map(|&r| match values[r] {
            None => bins,
            Some(x) => {
                let rank_lo = present.partition_point(|v| v.total_cmp(&x).is_lt());
                (bins * rank_lo / n).min(bins - 1)
            }
        })
        .collect()
}

/// Pearson chi-square statistic and degrees of freedom of the contingency
/// table of two labelings, or `None` when either has fewer than two levels.
pub fn chi_square_statistic(x: &[usize], y: &[usize]) -> Option<(f64, usize)> {
    let relabel = |v: &[usize]| -> (Vec<usize>, usize) {
        let mut levels: Vec<usize> = v.to_vec();
        levels.sort_unstable();
        levels.dedup();
        (v.iter().map(|a| levels.binary_search(a).unwrap()).collect(), levels.len())
    };
    let (x, r) = relabel(x);
    let (y, c) = relabel(y);
    if r < 2 || c < 2 {
        return None;
    }
    let mut table = vec![0.0; r * c];
    for (&a, &b) in x.iter().zip(&y) {
        table[a * c + b] += 1.0;
    }
    let n = x.len() as f64;
    let row_tot: Vec<f64> = (0..r).map(|i| (0..c).map(|j| table[i * c + j]).sum()).collect();
    let col_tot: Vec<f64> = (0..c).map(|j| (0..r).map(|i| table[i * c + j]).sum()).collect();
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = row_tot[i] * col_tot[j] / n;
            stat += (table[i * c + j] - e).powi(2) / e;
        }
    }
    Some((stat, (r - 1) * (c - 1)))
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_p_value(stat: f64, df: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, stat / 2.0)
}

/// Removes columns independent of the target at level `alpha`. Columns whose
/// table is degenerate are removed as constant.
pub fn chi_square_filter(matrix: &FeatureMatrix, target: &TargetColumn, rows: &[usize], cfg: &SelectionConfig) -> Vec<Removal> {
    let rows: Vec<usize> = rows.iter().copied().filter(|&r| target.is_training(r)).collect();
    let target_bins: Vec<usize> = match target.task() {
        Task::Classification => rows.iter().map(|&r| target.class_of(r).unwrap()).collect(),
        Task::Regression => {
            let values: Vec<Option<f64>> = (0..target.len()).map(|e| target.number(e)).collect();
            equal_frequency_bins(&values, &rows, cfg.max_bins)
        }
    };
    let mut removed: Vec<Removal> = matrix
        .columns
        .par_iter()
        .filter_map(|col| {
            let bins = equal_frequency_bins(&col.values, &rows, cfg.max_bins);
            match chi_square_statistic(&bins, &target_bins) {
                None => Some(Removal { feature: col.name.clone(), reason: RemovalReason::Constant, statistic: Some(1.0) }),
                Some((stat, df)) => {
                    let p = chi_square_p_value(stat, df);
                    (p > cfg.alpha).then(|| Removal { feature: col.name.clone(), reason: RemovalReason::Independent, statistic: Some(p) })
                }
            }
        })
        .collect();
    removed.sort_by(|a, b| a.feature.cmp(&b.feature));
    removed
}

/// Runs duplicate, drift and independence filtering in that order over the
/// training rows and returns the reduced matrix with its report.
///
/// `training` marks the rows used for every decision. The chi-square stage
/// runs only when the target has training entities.
pub fn select(
    matrix: &FeatureMatrix,
    target: &TargetColumn,
    training: &[bool],
    order: Option<&[Option<f64>]>,
    cfg: &SelectionConfig,
) -> (FeatureMatrix, SelectionReport) {
    let rows: Vec<usize> = (0..matrix.row_count()).filter(|&r| training[r]).collect();
    let mut removed = remove_duplicates(matrix, &rows);
    let mut current = matrix.without(removed.iter().map(|r| r.feature.as_str()));

    let drift = detect_drift(&current, &rows, order, cfg);
    current = current.without(drift.iter().map(|r| r.feature.as_str()));
    removed.extend(drift);

    if rows.iter().any(|&r| target.is_training(r)) {
        let independent = chi_square_filter(&current, target, &rows, cfg);
        current = current.without(independent.iter().map(|r| r.feature.as_str()));
        removed.extend(independent);
    }
    let kept = current.names().map(str::to_string).collect();
    (current, SelectionReport { kept, removed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::FeatureColumn;

    fn matrix(cols: &[(&str, Vec<Option<f64>>)]) -> FeatureMatrix {
        let n = cols.first().map_or(0, |c| c.1.len());
        FeatureMatrix {
            key_name: "id".into(),
            entity_ids: (0..n).map(|i| i.to_string()).collect(),
            columns: cols.iter().map(|(n, v)| FeatureColumn::new(*n, None, v.clone())).collect(),
        }
    }

    #[test]
    fn duplicates_keep_smallest_name() {
        let v = vec![Some(1.0), Some(2.0), None];
        let m = matrix(&[("f-b", v.clone()), ("f-a", v.clone()), ("g", vec![Some(1.0), Some(2.0), Some(3.0)])]);
        let removed = remove_duplicates(&m, &[0, 1, 2]);
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].feature, "f-b");
        assert_eq!(removed[0].reason, RemovalReason::Duplicate);
    }

    #[test]
    fn all_null_is_constant() {
        let m = matrix(&[("x", vec![None, None]), ("y", vec![Some(-0.0), Some(0.0)])]);
        let removed = remove_duplicates(&m, &[0, 1]);
        assert!(removed.iter().all(|r| r.reason == RemovalReason::Constant));
        assert_eq!(removed.len(), 2);
    }

    #[test]
    fn ks_disjoint_and_identical() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((ks_statistic(&[1.0, 2.0], &[2.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_identity_table() {
        let x: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let (stat, df) = chi_square_statistic(&x, &x).unwrap();
        assert_eq!(df, 1);
        assert!((stat - 200.0).abs() < 1e-9);
        assert!(chi_square_p_value(stat, df) < 1e-10);
        assert_eq!(chi_square_statistic(&[0, 0], &[0, 1]), None);
    }

    #[test]
    fn critical_value_df1() {
        let p = chi_square_p_value(3.841458820694124, 1);
        assert!((p - 0.05).abs() < 1e-9);
    }

    #[test]
    fn bins_are_equal_frequency() {
        let v: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64)).chain([None]).collect();
        let rows: Vec<usize> = (0..21).collect();
        let b = equal_frequency_bins(&v, &rows, 10);
        assert_eq!(&b[..4], &[0, 0, 1, 1]);
        assert_eq!(b[19], 9);
        assert_eq!(b[20], 10);
    }

    #[test]
    fn empty_matrix_selects_nothing() {
        let m = matrix(&[]);
        let t = TargetColumn::regression(vec![]);
        let (out, report) = select(&m, &t, &[], None, &SelectionConfig::default());
        assert!(out.columns.is_empty());
        assert_eq!(report, SelectionReport::default());
    }
}
