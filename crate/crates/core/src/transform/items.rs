//! Item and sub-sequence features with target-correlation selection.

use std::collections::HashMap;
use std::sync::Arc;

use super::TargetColumn;

/// Lowercased alphanumeric runs, in source order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Separator between the items of an n-gram in its rendered key.
pub const GRAM_SEPARATOR: &str = ">";

/// Counts of contiguous n-grams with lengths in `min_len..=max_len`, keyed by
/// the items joined with [`GRAM_SEPARATOR`].
pub fn ngram_counts(seq: &[Arc<str>], min_len: usize, max_len: usize) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for n in min_len..=max_len {
        if n == 0 || n > seq.len() {
            continue;
        }
        for w in seq.windows(n) {
            let key = w.iter().map(|s| &**s).collect::<Vec<_>>().join(GRAM_SEPARATOR);
            *out.entry(key).or_insert(0.0) += 1.0;
        }
    }
    out
}

pub fn item_counts(items: &[Arc<str>]) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for it in items {
        *out.entry(it.to_string()).or_insert(0.0) += 1.0;
    }
    out
}

/// Absolute Pearson correlation, 0 when either side has no variance.
pub fn pearson_from_sums(n: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if n < 2.0 || vx <= 1e-12 * (n * sxx) || vy <= 1e-12 * (n * syy) {
        return 0.0;
    }
    ((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)
}

/// Selection score of each candidate over training entities: |Pearson| with a
/// numeric target, or the largest |Pearson| against each one-hot class
/// indicator for classification.
///
/// `counts[e]` holds entity `e`'s candidate counts; absent candidates count 0.
pub fn correlation_scores(counts: &[HashMap<String, f64>], target: &TargetColumn) -> HashMap<String, f64> {
    let train: Vec<usize> = (0..counts.len()).filter(|&e| target.is_training(e)).collect();
    let n = train.len() as f64;
    let dims = target.dims();

    // per candidate: sx, sxx, sxy per dim
    let mut acc: HashMap<&str, (f64, f64, Vec<f64>)> = HashMap::new();
    let mut sy = vec![0.0; dims];
    let mut syy = vec![0.0; dims];
    for &e in &train {
        let y = target.encoded(e);
        for d in 0..dims {
            sy[d] += y[d];
            syy[d] += y[d] * y[d];
        }
        for (item, &c) in &counts[e] {
            let entry = acc.entry(item.as_str()).or_insert_with(|| (0.0, 0.0, vec![0.0; dims]));
            entry.0 += c;
            entry.1 += c * c;
            for (acc, yd) in entry.2.iter_mut().zip(y.iter()) {
                *acc += c * yd;
            }
        }
    }
    acc.into_iter()
        .map(|(item, (sx, sxx, sxy))| {
            let score = (0..dims)
                .map(|d| pearson_from_sums(n, sx, sy[d], sxx, syy[d], sxy[d]).abs())
                .fold(0.0, f64::max);
            (item.to_string(), score)
        })
        .collect()
}

/// The top `limit` candidates with score at least `min_abs_corr`, ranked by
/// score then by name.
pub fn select_correlated(
    counts: &[HashMap<String, f64>],
    target: &TargetColumn,
    limit: usize,
    min_abs_corr: f64,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> =
        correlation_scores(counts, target).into_iter().filter(|(_, s)| *s >= min_abs_corr && *s > 0.0).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(limit);
    scored
}
