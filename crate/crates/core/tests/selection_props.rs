mod common;

use onebm::pipeline::{FeatureColumn, FeatureMatrix};
use onebm::selection::{
    chi_square_p_value, chi_square_statistic, equal_frequency_bins, ks_statistic, select, SelectionConfig,
};
use onebm::transform::TargetColumn;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
}

fn chi_oracle(x: &[usize], y: &[usize]) -> f64 {
    let xs: Vec<usize> = { let mut v = x.to_vec(); v.sort(); v.dedup(); v };
    let ys: Vec<usize> = { let mut v = y.to_vec(); v.sort(); v.dedup(); v };
    let n = x.len() as f64;
    let mut stat = 0.0;
    for &a in &xs {
        for &b in &ys {
            let o = x.iter().zip(y).filter(|(p, q)| **p == a && **q == b).count() as f64;
            let r = x.iter().filter(|p| **p == a).count() as f64;
            let c = y.iter().filter(|q| **q == b).count() as f64;
            let e = r * c / n;
            stat += (o - e) * (o - e) / e;
        }
    }
    stat
}

fn random_matrix(seed: u64, n: usize, width: usize) -> (FeatureMatrix, TargetColumn, Vec<Option<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Option<f64>> = (0..n).map(|_| if rng.random_bool(0.2) { None } else { Some(rng.random_range(0.0..1.0)) }).collect();
    let mut columns = Vec::new();
    for j in 0..width {
        let values: Vec<Option<f64>> = match j % 4 {
            0 => y.iter().map(|v| v.map(|v| v * 3.0 + rng.random_range(0.0..0.3)).or(Some(0.5))).collect(),
            1 => (0..n).map(|_| Some(rng.random_range(0..3) as f64)).collect(),
            2 => (0..n).map(|i| Some(i as f64)).collect(),
            _ => (0..n).map(|_| if rng.random_bool(0.3) { None } else { Some(rng.random_range(0.0..1.0)) }).collect(),
        };
        columns.push(FeatureColumn::new(format!("f{j:02}"), None, values));
    }
    if width > 1 {
        let dup = columns[0].values.clone();
        columns.push(FeatureColumn::new("a-dup", None, dup));
        columns.push(FeatureColumn::new("z-const", None, vec![Some(1.0); n]));
    }
    let m = FeatureMatrix { key_name: "id".into(), entity_ids: (0..n).map(|i| i.to_string()).collect(), columns };
    let order = (0..n).map(|i| Some(i as f64)).collect();
    (m, TargetColumn::regression(y), order)
}

#[test]
fn critical_value_reproduced() {
    // bisect p(x) = 0.05 for df = 1
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if chi_square_p_value(mid, 1) > 0.05 { lo = mid } else { hi = mid }
    }
    assert!((lo - 3.841).abs() < 1e-3, "{lo}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_matches_definition(a in prop::collection::vec(0i32..20, 1..60), b in prop::collection::vec(0i32..20, 1..60)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        prop_assert!((ks_statistic(&a, &b) - ks_oracle(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn chi_square_matches_table_oracle(pairs in prop::collection::vec((0usize..4, 0usize..3), 2..200)) {
        let (x, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        match chi_square_statistic(&x, &y) {
            Some((stat, _)) => {
                let want = chi_oracle(&x, &y);
                prop_assert!((stat - want).abs() <= 1e-9 * want.max(1.0));
            }
            None => {
                let distinct = |v: &[usize]| { let mut s = v.to_vec(); s.sort(); s.dedup(); s.len() };
                prop_assert!(distinct(&x) < 2 || distinct(&y) < 2);
            }
        }
    }

    #[test]
    fn bins_respect_order(values in prop::collection::vec(prop::option::of(-50i32..50), 1..100)) {
        let values: Vec<Option<f64>> = values.into_iter().map(|v| v.map(f64::from)).collect();
        let rows: Vec<usize> = (0..values.len()).collect();
        let bins = equal_frequency_bins(&values, &rows, 10);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if let (Some(a), Some(b)) = (values[i], values[j]) {
                    if a <= b { prop_assert!(bins[i] <= bins[j]); }
                    if a == b { prop_assert_eq!(bins[i], bins[j]); }
                }
            }
        }
    }

    #[test]
    fn selection_is_order_invariant_and_idempotent(seed in any::<u64>(), width in 0usize..10) {
        let (m, target, order) = random_matrix(seed, 120, width);
        let training = target.training_mask();
        let cfg = SelectionConfig::default();
        let (once, report) = select(&m, &target, &training, Some(&order), &cfg);
        let (twice, report2) = select(&once, &target, &training, Some(&order), &cfg);
        prop_assert_eq!(&once, &twice);
        prop_assert!(report2.removed.is_empty());

        let mut permuted = m.clone();
        permuted.columns.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let (_, report_p) = select(&permuted, &target, &training, Some(&order), &cfg);
        let mut kept_a = report.kept.clone();
        let mut kept_b = report_p.kept.clone();
        kept_a.sort();
        kept_b.sort();
        prop_assert_eq!(kept_a, kept_b);
        for r in &report.removed {
            prop_assert_eq!(report_p.reason_of(&r.feature), Some(r.reason));
        }
        let mut all: Vec<String> = report.kept.iter().cloned().chain(report.removed.iter().map(|r| r.feature.clone())).collect();
        all.sort();
        let mut names: Vec<String> = m.names().map(String::from).collect();
        names.sort();
        prop_assert_eq!(all, names);
    }
}
