//! Target-conditioned encoding of categorical scalars.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Task, TargetColumn};

/// Encoding fitted on training entities and reapplied to every entity.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoryEncoding {
    /// Per category, the count of training entities in each class (classes in
    /// the target's order) and the class priors.
    Classification { counts: HashMap<Arc<str>, Vec<f64>>, priors: Vec<f64>, alpha: f64 },
    /// Per category, `(target sum, count)`, plus the global target mean.
    Regression { sums: HashMap<Arc<str>, (f64, f64)>, global_mean: f64, alpha: f64 },
}

impl CategoryEncoding {
    pub fn fit(values: &[Option<Arc<str>>], target: &TargetColumn, alpha: f64) -> Self {
        let train = (0..values.len()).filter(|&e| target.is_training(e));
        match target.task() {
            Task::Classification => {
                let m = target.class_count();
                let mut counts: HashMap<Arc<str>, Vec<f64>> = HashMap::new();
                let mut class_totals = vec![0.0; m];
                let mut n = 0.0;
                for e in train {
                    let class = target.class_of(e).expect("training entity");
                    class_totals[class] += 1.0;
                    n += 1.0;
                    if let Some(v) = &values[e] {
                        counts.entry(v.clone()).or_insert_with(|| vec![0.0; m])[class] += 1.0;
                    }
                }
                let priors = class_totals.iter().map(|c| if n > 0.0 { c / n } else { 0.0 }).collect();
                CategoryEncoding::Classification { counts, priors, alpha }
            }
            Task::Regression => {
                let mut sums: HashMap<Arc<str>, (f64, f64)> = HashMap::new();
                let (mut total, mut n) = (0.0, 0.0);
                for e in train {
                    let y = target.number(e).expect("training entity");
                    total += y;
                    n += 1.0;
                    if let Some(v) = &values[e] {
                        let s = sums.entry(v.clone()).or_insert((0.0, 0.0));
                        s.0 += y;
                        s.1 += 1.0;
                    }
                }
                let global_mean = if n > 0.0 { total / n } else { 0.0 };
                CategoryEncoding::Regression { sums, global_mean, alpha }
            }
        }
    }

    /// Feature tags in output order with their normalized flag.
    pub fn tags(&self) -> Vec<(String, bool)> {
        match self {
            CategoryEncoding::Classification { priors, .. } => {
                (0..priors.len()).flat_map(|j| [(format!("{j}T"), false), (format!("{j}T"), true)]).collect()
            }
            CategoryEncoding::Regression { .. } => vec![("tmean".into(), false), ("catcount".into(), false)],
        }
    }

    /// Encoded features for one value; nulls stay null.
    pub fn apply(&self, value: Option<&Arc<str>>) -> Vec<Option<f64>> {
        let width = self.tags().len();
        let Some(v) = value else { return vec![None; width] };
        match self {
            CategoryEncoding::Classification { counts, priors, alpha } => {
                let row = counts.get(v);
                let total: f64 = row.map_or(0.0, |r| r.iter().sum());
                let mut out = Vec::with_capacity(width);
                for (j, prior) in priors.iter().enumerate() {
                    let c = row.map_or(0.0, |r| r[j]);
                    let denom = total + alpha;
                    out.push(Some(c));
                    out.push((denom > 0.0).then(|| (c + alpha * prior) / denom));
                }
                out
            }
            CategoryEncoding::Regression { sums, global_mean, alpha } => {
                let (s, n) = sums.get(v).copied().unwrap_or((0.0, 0.0));
                let denom = n + alpha;
                let mean = if denom > 0.0 { (s + alpha * global_mean) / denom } else { *global_mean };
                vec![Some(mean), Some(n)]
            }
        }
    }
}
