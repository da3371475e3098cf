//! Turns collected data into fixed-width numeric features.
//!
//! Each [`CollectedType`] has a built-in family of features. Families that
//! look at the target (correlated items and sub-sequences, categorical
//! encodings) are fitted on training entities only, i.e. entities whose
//! target is present, and then applied to all entities.

pub mod encoding;
pub mod items;
pub mod numeric;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::{group_by, CollectedColumn, CollectedType};
use crate::ingest::{CellValue, ColumnData};

use encoding::CategoryEncoding;
use items::{item_counts, ngram_counts, select_correlated, tokenize, GRAM_SEPARATOR};
use numeric::{autocorrelation, calendar_features, dft_magnitudes, haar_coefficients, multiset_stats, CALENDAR_TAGS, MULTISET_TAGS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub recent_k: usize,
    pub fft_coeffs: usize,
    pub dwt_coeffs: usize,
    pub autocorr_lags: usize,
    pub top_items: usize,
    pub min_abs_corr: f64,
    pub max_subseq_len: usize,
    pub smoothing_alpha: f64,
    pub nested_depths: BTreeSet<usize>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            recent_k: 5,
            fft_coeffs: 5,
            dwt_coeffs: 5,
            autocorr_lags: 3,
            top_items: 10,
            min_abs_corr: 0.05,
            max_subseq_len: 3,
            smoothing_alpha: 10.0,
            nested_depths: BTreeSet::from([0]),
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), TransformError> {
        let positive = [
            ("recent_k", self.recent_k),
            ("fft_coeffs", self.fft_coeffs),
            ("dwt_coeffs", self.dwt_coeffs),
            ("autocorr_lags", self.autocorr_lags),
            ("top_items", self.top_items),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TransformError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_abs_corr) {
            return Err(TransformError::InvalidConfig("min_abs_corr must lie in [0, 1]".into()));
        }
        if self.max_subseq_len < 2 {
            return Err(TransformError::InvalidConfig("max_subseq_len must be at least 2".into()));
        }
        if !(self.smoothing_alpha >= 0.0 && self.smoothing_alpha.is_finite()) {
            return Err(TransformError::InvalidConfig("smoothing_alpha must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Reads a JSON config; absent fields take their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self, TransformError> {
        let text = std::fs::read_to_string(path).map_err(|e| TransformError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| TransformError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("no transformation registered for type `{0}`")]
    UnknownType(String),
    #[error("an extractor named `{0}` is already registered")]
    DuplicateRegistration(String),
    #[error("extractor `{name}` declared width {declared} but produced {produced} values")]
    PluginWidth { name: String, declared: usize, produced: usize },
    #[error("invalid transform config: {0}")]
    InvalidConfig(String),
}

impl FromStr for CollectedType {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use CollectedType::*;
        Ok(match s {
            "numeric_scalar" => NumericScalar,
            "category_scalar" => CategoryScalar,
            "text_scalar" => TextScalar,
            "timestamp_scalar" => TimestampScalar,
            "number_multiset" => NumberMultiset,
            "item_multiset" => ItemMultiset,
            "text_set" => TextSet,
            "time_series" => TimeSeries,
            "sequence" => Sequence,
            other => return Err(TransformError::UnknownType(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Target per entity; entities with a target are the training entities.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetColumn {
    task: Task,
    numbers: Vec<Option<f64>>,
    /// Class labels ordered by descending training frequency, then label.
    classes: Vec<String>,
    class_idx: Vec<Option<usize>>,
}

impl TargetColumn {
    pub fn regression(values: Vec<Option<f64>>) -> Self {
        let class_idx = vec![None; values.len()];
        Self { task: Task::Regression, numbers: values, classes: Vec::new(), class_idx }
    }

    pub fn classification<S: AsRef<str>>(labels: &[Option<S>]) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for l in labels.iter().flatten() {
            *freq.entry(l.as_ref()).or_default() += 1;
        }
        let mut classes: Vec<(&str, usize)> = freq.into_iter().collect();
        classes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let pos: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, (c, _))| (*c, i)).collect();
        let class_idx = labels.iter().map(|l| l.as_ref().map(|l| pos[l.as_ref()])).collect();
        Self {
            task: Task::Classification,
            numbers: vec![None; labels.len()],
            classes: classes.into_iter().map(|(c, _)| c.to_string()).collect(),
            class_idx,
        }
    }

    /// Numerical columns give regression targets, anything else classification.
    pub fn from_column(data: &ColumnData) -> Self {
        match data {
            ColumnData::Numerical(v) => Self::regression(v.clone()),
            ColumnData::Timestamp(v) => Self::regression(v.iter().map(|t| t.map(|t| t as f64)).collect()),
            ColumnData::Categorical(v) | ColumnData::Text(v) => Self::classification(v),
        }
    }

    /// A target with no training entity.
    pub fn unlabeled(n: usize) -> Self {
        Self::regression(vec![None; n])
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.class_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_training(&self, entity: usize) -> bool {
        match self.task {
            Task::Regression => self.numbers[entity].is_some(),
            Task::Classification => self.class_idx[entity].is_some(),
        }
    }

    pub fn training_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|e| self.is_training(e)).collect()
    }

    pub fn number(&self, entity: usize) -> Option<f64> {
        self.numbers[entity]
    }

    pub fn class_of(&self, entity: usize) -> Option<usize> {
        self.class_idx[entity]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Width of the numeric encoding used for correlations.
    pub fn dims(&self) -> usize {
        match self.task {
            Task::Regression => 1,
            Task::Classification => self.classes.len(),
        }
    }

    /// The numeric value (regression) or one-hot class vector of a training entity.
    pub fn encoded(&self, entity: usize) -> Vec<f64> {
        match self.task {
            Task::Regression => vec![self.numbers[entity].unwrap_or(f64::NAN)],
            Task::Classification => {
                let mut v = vec![0.0; self.classes.len()];
                if let Some(c) = self.class_idx[entity] {
                    v[c] = 1.0;
                }
                v
            }
        }
    }
}

/// Metadata of one produced feature; the pipeline renders it into a name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub tag: String,
    pub index: Option<usize>,
    pub normalized: bool,
    /// Missing entities get 0 instead of null.
    pub count_like: bool,
}

impl FeatureSpec {
    fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), index: None, normalized: false, count_like: false }
    }

    fn indexed(tag: &str, index: usize) -> Self {
        Self { index: Some(index), ..Self::new(tag) }
    }

    fn count(tag: impl Into<String>) -> Self {
        Self { count_like: true, ..Self::new(tag) }
    }

    /// `tag[.index][.norm]`
    pub fn suffix(&self) -> String {
        let mut s = self.tag.clone();
        if let Some(i) = self.index {
            s.push_str(&format!(".{i}"));
        }
        if self.normalized {
            s.push_str(".norm");
        }
        s
    }
}

/// Features produced for one collected column. `columns[j][i]` is feature
/// `j` of entity `entities[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub plan_index: usize,
    pub specs: Vec<FeatureSpec>,
    pub entities: Vec<u32>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl FeatureVector {
    pub fn width(&self) -> usize {
        self.specs.len()
    }

    pub fn column(&self, suffix: &str) -> Option<&[Option<f64>]> {
        self.specs.iter().position(|s| s.suffix() == suffix).map(|i| self.columns[i].as_slice())
    }
}

/// One entity's collected values at group-by depth 0, ordered by event time
/// when the path has one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityData {
    pub values: Vec<CellValue>,
    pub times: Vec<Option<i64>>,
}

impl EntityData {
    pub fn numbers(&self) -> Vec<f64> {
        self.values.iter().filter_map(CellValue::as_number).collect()
    }

    pub fn items(&self) -> Vec<Arc<str>> {
        self.values
            .iter()
            .filter_map(|v| match v {
                CellValue::Category(s) | CellValue::Text(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }
}

/// User-supplied feature extractor for one collected type.
pub trait Extractor: Send + Sync {
    fn width(&self, cfg: &TransformConfig) -> usize;
    fn extract(&self, data: &EntityData, cfg: &TransformConfig) -> Vec<Option<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PluginHandle(pub usize);

struct Plugin {
    name: String,
    ctype: CollectedType,
    extractor: Arc<dyn Extractor>,
}

/// Extractors appended after the built-in features of their type.
#[derive(Default, Clone)]
pub struct PluginRegistry {
    plugins: Vec<Arc<Plugin>>,
}

impl std::fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.plugins.iter().map(|p| (&p.name, p.ctype))).finish()
    }
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        ctype: CollectedType,
        extractor: Arc<dyn Extractor>,
    ) -> Result<PluginHandle, TransformError> {
        if self.plugins.iter().any(|p| p.name == name) {
            return Err(TransformError::DuplicateRegistration(name.to_string()));
        }
        self.plugins.push(Arc::new(Plugin { name: name.to_string(), ctype, extractor }));
        Ok(PluginHandle(self.plugins.len() - 1))
    }

    pub fn is_empty(&self) -> bool {
        self.plugins.is_empty()
    }

    fn for_type(&self, ctype: CollectedType) -> impl Iterator<Item = &Plugin> {
        self.plugins.iter().filter(move |p| p.ctype == ctype).map(|p| &**p)
    }
}

/// Per-entity data at depth 0, sorted by event time (stable, missing first).
pub fn entity_data(col: &CollectedColumn) -> Vec<EntityData> {
    let mut out = vec![EntityData::default(); col.entity_count];
    for t in &col.tuples {
        let d = &mut out[t.entity as usize];
        d.values.push(t.value.clone());
        d.times.push(t.event_time);
    }
    if col.has_time {
        for d in &mut out {
            let mut order: Vec<usize> = (0..d.values.len()).collect();
            order.sort_by_key(|&i| d.times[i]);
            d.values = order.iter().map(|&i| d.values[i].clone()).collect();
            d.times = order.iter().map(|&i| d.times[i]).collect();
        }
    }
    out
}

struct Builder {
    specs: Vec<FeatureSpec>,
    columns: Vec<Vec<Option<f64>>>,
}

impl Builder {
    fn new() -> Self {
        Self { specs: Vec::new(), columns: Vec::new() }
    }

    fn push(&mut self, spec: FeatureSpec, column: Vec<Option<f64>>) {
        self.specs.push(spec);
        self.columns.push(column);
    }

    /// Adds features given entity-major rows of equal width.
    fn push_rows(&mut self, specs: Vec<FeatureSpec>, rows: &[Vec<Option<f64>>]) {
        for (j, spec) in specs.into_iter().enumerate() {
            self.push(spec, rows.iter().map(|r| r[j]).collect());
        }
    }
}

/// Produces the features of one collected column: built-ins for its type,
/// nested group-by features for configured depths, then plugins.
pub fn transform(
    col: &CollectedColumn,
    target: &TargetColumn,
    cfg: &TransformConfig,
    plugins: &PluginRegistry,
) -> Result<FeatureVector, TransformError> {
    let data = entity_data(col);
    let mut b = Builder::new();
    if cfg.nested_depths.contains(&0) {
        builtin(col.ctype, &data, target, cfg, &mut b);
    }
    for &depth in cfg.nested_depths.iter().filter(|d| **d > 0) {
        if depth < col.path.hops.len() && !col.ctype.is_scalar() {
            nested(col, depth, target, cfg, &mut b);
        }
    }
    for plugin in plugins.for_type(col.ctype) {
        let width = plugin.extractor.width(cfg);
        let mut rows = Vec::with_capacity(data.len());
        for d in &data {
            let row = plugin.extractor.extract(d, cfg);
            if row.len() != width {
                return Err(TransformError::PluginWidth { name: plugin.name.clone(), declared: width, produced: row.len() });
            }
            rows.push(row);
        }
        let specs = (0..width)
            .map(|i| if width == 1 { FeatureSpec::new(&plugin.name) } else { FeatureSpec::indexed(&plugin.name, i) })
            .collect();
        b.push_rows(specs, &rows);
    }
    Ok(FeatureVector {
        plan_index: col.plan_index,
        specs: b.specs,
        entities: (0..col.entity_count as u32).collect(),
        columns: b.columns,
    })
}

fn builtin(ctype: CollectedType, data: &[EntityData], target: &TargetColumn, cfg: &TransformConfig, b: &mut Builder) {
    match ctype {
        CollectedType::NumericScalar => {
            b.push(FeatureSpec::new("value"), data.iter().map(|d| d.numbers().first().copied()).collect());
        }
        CollectedType::TimestampScalar => {
            let rows: Vec<Vec<Option<f64>>> = data
                .iter()
                .map(|d| match d.values.iter().find_map(|v| if let CellValue::Timestamp(t) = v { Some(*t) } else { None }) {
                    Some(t) => calendar_features(t).into_iter().map(Some).collect(),
                    None => vec![None; CALENDAR_TAGS.len()],
                })
                .collect();
            b.push_rows(CALENDAR_TAGS.iter().map(|t| FeatureSpec::new(*t)).collect(), &rows);
        }
        CollectedType::CategoryScalar => {
            let values: Vec<Option<Arc<str>>> = data.iter().map(|d| d.items().into_iter().next()).collect();
            let enc = CategoryEncoding::fit(&values, target, cfg.smoothing_alpha);
            let rows: Vec<Vec<Option<f64>>> = values.iter().map(|v| enc.apply(v.as_ref())).collect();
            let specs = enc
                .tags()
                .into_iter()
                .map(|(tag, normalized)| FeatureSpec { normalized, count_like: !normalized, ..FeatureSpec::new(tag) })
                .collect();
            b.push_rows(specs, &rows);
        }
        CollectedType::NumberMultiset => {
            let rows: Vec<Vec<Option<f64>>> = data.iter().map(|d| multiset_stats(&d.numbers()).to_vec()).collect();
            b.push_rows(multiset_specs(), &rows);
        }
        CollectedType::TimeSeries => {
            let rows: Vec<Vec<Option<f64>>> = data.iter().map(|d| series_row(&d.numbers(), cfg)).collect();
            b.push_rows(series_specs(cfg), &rows);
        }
        CollectedType::ItemMultiset => {
            let items: Vec<Vec<Arc<str>>> = data.iter().map(EntityData::items).collect();
            let counts: Vec<HashMap<String, f64>> = items.iter().map(|i| item_counts(i)).collect();
            sequence_family(&items, &counts, target, cfg, b);
        }
        CollectedType::Sequence => {
            let items: Vec<Vec<Arc<str>>> = data.iter().map(EntityData::items).collect();
            let counts: Vec<HashMap<String, f64>> = items.iter().map(|s| ngram_counts(s, 2, cfg.max_subseq_len)).collect();
            sequence_family(&items, &counts, target, cfg, b);
        }
        CollectedType::TextScalar | CollectedType::TextSet => {
            let items: Vec<Vec<Arc<str>>> = data.iter().map(text_tokens).collect();
            let counts: Vec<HashMap<String, f64>> = items.iter().map(|s| ngram_counts(s, 2, cfg.max_subseq_len)).collect();
            sequence_family(&items, &counts, target, cfg, b);
        }
    }
}

/// Tokens of every text value concatenated in order.
pub fn text_tokens(d: &EntityData) -> Vec<Arc<str>> {
    d.values.iter().filter_map(|v| v.as_str()).flat_map(tokenize).map(Arc::from).collect()
}

fn multiset_specs() -> Vec<FeatureSpec> {
    MULTISET_TAGS
        .iter()
        .map(|t| if *t == "count" { FeatureSpec::count(*t) } else { FeatureSpec::new(*t) })
        .collect()
}

fn series_specs(cfg: &TransformConfig) -> Vec<FeatureSpec> {
    let mut specs = multiset_specs();
    specs.extend((0..cfg.recent_k).map(|i| FeatureSpec::indexed("recent", i)));
    specs.extend((0..cfg.fft_coeffs).map(|i| FeatureSpec::indexed("fft", i)));
    specs.extend((0..cfg.dwt_coeffs).map(|i| FeatureSpec::indexed("dwt", i)));
    specs.extend((1..=cfg.autocorr_lags).map(|lag| FeatureSpec::indexed("acf", lag)));
    specs
}

/// Time-series features of values already in time order.
pub fn series_row(values: &[f64], cfg: &TransformConfig) -> Vec<Option<f64>> {
    let mut row = multiset_stats(values).to_vec();
    row.extend((0..cfg.recent_k).map(|i| values.len().checked_sub(i + 1).map(|j| values[j])));
    row.extend(dft_magnitudes(values, cfg.fft_coeffs));
    row.extend(haar_coefficients(values, cfg.dwt_coeffs));
    row.extend((1..=cfg.autocorr_lags).map(|lag| autocorrelation(values, lag)));
    row
}

/// Time-series features from `(timestamp, value)` points sorted by time.
pub fn transform_time_series(points: &[(i64, f64)], cfg: &TransformConfig) -> Vec<Option<f64>> {
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    series_row(&values, cfg)
}

/// `(count, distinct count)` then one count per correlated candidate.
fn sequence_family(
    items: &[Vec<Arc<str>>],
    counts: &[HashMap<String, f64>],
    target: &TargetColumn,
    cfg: &TransformConfig,
    b: &mut Builder,
) {
    b.push(FeatureSpec::count("count"), items.iter().map(|s| Some(s.len() as f64)).collect());
    b.push(
        FeatureSpec::count("distinct"),
        items.iter().map(|s| Some(s.iter().collect::<std::collections::HashSet<_>>().len() as f64)).collect(),
    );
    for (cand, _) in select_correlated(counts, target, cfg.top_items, cfg.min_abs_corr) {
        let col = counts.iter().map(|c| Some(c.get(&cand).copied().unwrap_or(0.0))).collect();
        b.push(FeatureSpec::count(format!("COR-{cand}")), col);
    }
}

/// Two-stage aggregation over the groups at `depth`: an inner statistic per
/// group, then the mean, min and max of it across groups.
fn nested(col: &CollectedColumn, depth: usize, target: &TargetColumn, cfg: &TransformConfig, b: &mut Builder) {
    let Ok(groups) = group_by(col, depth) else { return };
    let mut inner: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    match col.ctype {
        CollectedType::NumberMultiset | CollectedType::TimeSeries => {
            let per: Vec<Vec<[Option<f64>; 6]>> = groups
                .iter()
                .map(|gs| gs.iter().map(|g| multiset_stats(&g.iter().filter_map(CellValue::as_number).collect::<Vec<_>>())).collect())
                .collect();
            for (k, tag) in MULTISET_TAGS.iter().enumerate().filter(|(_, t)| **t != "variance") {
                inner.push((tag.to_string(), per.iter().map(|gs| gs.iter().filter_map(|s| s[k]).collect()).collect()));
            }
        }
        CollectedType::ItemMultiset | CollectedType::Sequence | CollectedType::TextSet => {
            let to_items = |g: &Vec<CellValue>| -> Vec<Arc<str>> {
                if col.ctype == CollectedType::TextSet {
                    text_tokens(&EntityData { values: g.clone(), times: vec![] })
                } else {
                    g.iter().filter_map(|v| v.as_str().map(Arc::from)).collect()
                }
            };
            let grouped: Vec<Vec<Vec<Arc<str>>>> = groups.iter().map(|gs| gs.iter().map(to_items).collect()).collect();
            inner.push(("count".into(), grouped.iter().map(|gs| gs.iter().map(|g| g.len() as f64).collect()).collect()));
            inner.push((
                "distinct".into(),
                grouped
                    .iter()
                    .map(|gs| gs.iter().map(|g| g.iter().collect::<std::collections::HashSet<_>>().len() as f64).collect())
                    .collect(),
            ));
            if col.ctype == CollectedType::ItemMultiset {
                let flat: Vec<HashMap<String, f64>> =
                    grouped.iter().map(|gs| item_counts(&gs.iter().flatten().cloned().collect::<Vec<_>>())).collect();
                for (item, _) in select_correlated(&flat, target, cfg.top_items, cfg.min_abs_corr) {
                    let per = grouped
                        .iter()
                        .map(|gs| gs.iter().map(|g| g.iter().filter(|x| ***x == *item).count() as f64).collect())
                        .collect();
                    inner.push((format!("COR-{item}"), per));
                }
            }
        }
        _ => return,
    }
    for (tag, per_entity) in inner {
        let stats: Vec<[Option<f64>; 6]> = per_entity.iter().map(|v| multiset_stats(v)).collect();
        for (outer, k) in [("mean", 0usize), ("min", 3), ("max", 2)] {
            b.push(FeatureSpec::new(format!("by{depth}-{tag}-{outer}")), stats.iter().map(|s| s[k]).collect());
        }
    }
}

/// Sequence features of one entity's tokens given fitted candidates.
pub fn sequence_features(seq: &[Arc<str>], selected: &[String], max_len: usize) -> Vec<Option<f64>> {
    let counts = ngram_counts(seq, 2, max_len);
    let mut out = vec![Some(seq.len() as f64), Some(seq.iter().collect::<std::collections::HashSet<_>>().len() as f64)];
    out.extend(selected.iter().map(|g| Some(counts.get(g).copied().unwrap_or(0.0))));
    out
}

/// Renders an n-gram key from its items.
pub fn gram_key(items: &[&str]) -> String {
    items.join(GRAM_SEPARATOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::{PathStats, RelationalTuple};
    use crate::schema::{ColumnType, Direction, Hop, JoiningPath, PathKind};
    use smallvec::smallvec;

    fn series_column(values: &[(u32, i64, f64)], entities: usize) -> CollectedColumn {
        CollectedColumn {
            plan_index: 0,
            path: JoiningPath::new(vec![Hop { relation: 0, direction: Direction::FromLeft }], "v"),
            kind: PathKind::Multiple,
            value_type: ColumnType::Numerical,
            ctype: CollectedType::TimeSeries,
            has_time: true,
            entity_count: entities,
            tuples: values
                .iter()
                .map(|&(e, t, v)| RelationalTuple { entity: e, group_ids: smallvec![], value: CellValue::Number(v), event_time: Some(t) })
                .collect(),
            stats: PathStats::default(),
        }
    }

    struct Length;

    impl Extractor for Length {
        fn width(&self, _: &TransformConfig) -> usize {
            1
        }
        fn extract(&self, data: &EntityData, _: &TransformConfig) -> Vec<Option<f64>> {
            vec![Some(data.values.len() as f64)]
        }
    }

    #[test]
    fn time_series_default_width() {
        let col = series_column(&[(0, 3, 1.0), (0, 1, 2.0), (1, 5, 4.0)], 3);
        let fv = transform(&col, &TargetColumn::unlabeled(3), &TransformConfig::default(), &PluginRegistry::new()).unwrap();
        assert_eq!(fv.width(), 24);
        // sorted by time: entity 0 is [2, 1], so the most recent value is 1
        assert_eq!(fv.column("recent.0").unwrap(), &[Some(1.0), Some(4.0), None]);
        assert_eq!(fv.column("count").unwrap()[2], Some(0.0));
        assert_eq!(fv.column("mean").unwrap()[2], None);
    }

    #[test]
    fn width_ignores_entity_data() {
        let cfg = TransformConfig::default();
        let a = transform(&series_column(&[], 2), &TargetColumn::unlabeled(2), &cfg, &PluginRegistry::new()).unwrap();
        let b = transform(&series_column(&[(1, 1, 9.0); 40], 2), &TargetColumn::unlabeled(2), &cfg, &PluginRegistry::new()).unwrap();
        assert_eq!(a.specs, b.specs);
    }

    #[test]
    fn plugins_append_after_builtins() {
        let mut reg = PluginRegistry::new();
        reg.register("len", CollectedType::TimeSeries, Arc::new(Length)).unwrap();
        assert_eq!(
            reg.register("len", CollectedType::TimeSeries, Arc::new(Length)),
            Err(TransformError::DuplicateRegistration("len".into()))
        );
        let col = series_column(&[(0, 1, 1.0), (0, 2, 1.0)], 1);
        let fv = transform(&col, &TargetColumn::unlabeled(1), &TransformConfig::default(), &reg).unwrap();
        assert_eq!(fv.specs.last().unwrap().tag, "len");
        assert_eq!(fv.columns.last().unwrap(), &vec![Some(2.0)]);
    }

    #[test]
    fn config_validation() {
        let cfg = TransformConfig { max_subseq_len: 1, ..TransformConfig::default() };
        assert!(cfg.validate().is_err());
        let parsed: TransformConfig = serde_json::from_str(r#"{"recent_k": 2}"#).unwrap();
        assert_eq!(parsed.recent_k, 2);
        assert_eq!(parsed.fft_coeffs, 5);
        assert!(serde_json::from_str::<TransformConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn nested_depth_one_on_items() {
        // entity 0 has two messages: [a, a, b] and [a]
        let tuples = [(0u32, 10u32, "a"), (0, 10, "a"), (0, 10, "b"), (0, 11, "a")]
            .iter()
            .map(|&(e, g, v)| RelationalTuple {
                entity: e,
                group_ids: smallvec![g],
                value: CellValue::Category(Arc::from(v)),
                event_time: None,
            })
            .collect();
        let hop = Hop { relation: 0, direction: Direction::FromLeft };
        let col = CollectedColumn {
            plan_index: 0,
            path: JoiningPath::new(vec![hop, hop], "c"),
            kind: PathKind::Multiple,
            value_type: ColumnType::Categorical,
            ctype: CollectedType::ItemMultiset,
            has_time: false,
            entity_count: 2,
            tuples,
            stats: PathStats::default(),
        };
        let cfg = TransformConfig { nested_depths: BTreeSet::from([0, 1]), ..TransformConfig::default() };
        let fv = transform(&col, &TargetColumn::unlabeled(2), &cfg, &PluginRegistry::new()).unwrap();
        assert_eq!(fv.column("count").unwrap(), &[Some(4.0), Some(0.0)]);
        assert_eq!(fv.column("by1-count-mean").unwrap(), &[Some(2.0), None]);
        assert_eq!(fv.column("by1-count-max").unwrap(), &[Some(3.0), None]);
        assert_eq!(fv.column("by1-distinct-min").unwrap(), &[Some(1.0), None]);
    }

    #[test]
    fn classification_target_orders_classes_by_frequency() {
        let t = TargetColumn::classification(&[Some("b"), Some("a"), Some("b"), None]);
        assert_eq!(t.classes(), &["b".to_string(), "a".to_string()]);
        assert_eq!(t.encoded(1), vec![0.0, 1.0]);
        assert!(!t.is_training(3));
    }
}
