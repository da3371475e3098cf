//! End-to-end run: load, enumerate, collect, transform, assemble, select and
//! write. Also owns feature naming and the output formats.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::collect::{entity_cutoffs, CollectedType, Collector, PathStats, SamplingPolicy};
use crate::ingest::{load_database, CellValue, IngestError};
use crate::paths::{enumerate_paths, render_route, PathPlan, TraversalMode};
use crate::schema::{ColumnRole, JoiningPath, ValidatedDatabase};
use crate::selection::{select, SelectionConfig, SelectionReport};
use crate::transform::{transform, FeatureVector, PluginRegistry, TargetColumn, TransformConfig, TransformError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("feature name `{0}` produced twice")]
    NameCollision(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub schema_path: PathBuf,
    pub data_dir: PathBuf,
    pub output_path: PathBuf,
    pub max_depth: usize,
    pub mode: TraversalMode,
    pub policy: SamplingPolicy,
    pub transform_cfg: TransformConfig,
    pub selection_cfg: SelectionConfig,
    pub emit_report: bool,
    pub explain_only: bool,
}

impl PipelineConfig {
    pub fn new(schema_path: impl Into<PathBuf>, data_dir: impl Into<PathBuf>, output_path: impl Into<PathBuf>) -> Self {
        Self {
            schema_path: schema_path.into(),
            data_dir: data_dir.into(),
            output_path: output_path.into(),
            max_depth: 2,
            mode: TraversalMode::ForwardOnly,
            policy: SamplingPolicy::default(),
            transform_cfg: TransformConfig::default(),
            selection_cfg: SelectionConfig::default(),
            emit_report: false,
            explain_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_depth == 0 {
            return Err(PipelineError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.policy.max_joined_size == 0 {
            return Err(PipelineError::InvalidConfig("max_joined_size must be positive".into()));
        }
        self.transform_cfg.validate()?;
        Ok(())
    }

    /// `<dir>/<stem>.report.csv` next to the output matrix.
    pub fn report_path(&self) -> PathBuf {
        let stem = self.output_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "features".into());
        self.output_path.with_file_name(format!("{stem}.report.csv"))
    }
}

/// `key-table` for every hop, or the main table name for a hop-less path.
pub fn feature_prefix(path: &JoiningPath, db: &ValidatedDatabase) -> String {
    if path.hops.is_empty() {
        return db.main().spec.name.clone();
    }
    path.hops
        .iter()
        .map(|hop| format!("{}-{}", db.relations()[hop.relation].key_label, db.table(db.hop_ends(*hop).to_table).spec.name))
        .collect::<Vec<_>>()
        .join("-")
}

/// `key1-table1[-key2-table2...]-column-tag[.index][.norm]`
pub fn name_feature(path: &JoiningPath, db: &ValidatedDatabase, tag: &str, index: Option<usize>, normalized: bool) -> String {
    let mut s = format!("{}-{}-{tag}", feature_prefix(path, db), path.collected_column);
    if let Some(i) = index {
        write!(s, ".{i}").unwrap();
    }
    if normalized {
        s.push_str(".norm");
    }
    s
}

const FIXED_TAGS: &[&str] = &[
    "value", "mean", "variance", "max", "min", "sum", "count", "distinct", "recent", "fft", "dwt", "acf", "tmean",
    "catcount", "year", "month", "day", "hour", "minute", "dayofweek", "weekend", "dayofyear",
];

/// True for a rendered `tag[.index][.norm]` that a built-in or one of
/// `plugin_names` can produce.
pub fn is_known_suffix(suffix: &str, plugin_names: &[&str]) -> bool {
    let s = suffix.strip_suffix(".norm").unwrap_or(suffix);
    if s.starts_with("COR-") && s.len() > 4 {
        return true;
    }
    let base = match s.rsplit_once('.') {
        Some((b, i)) if !i.is_empty() && i.bytes().all(|c| c.is_ascii_digit()) => b,
        _ => s,
    };
    if FIXED_TAGS.contains(&base) || plugin_names.contains(&base) {
        return true;
    }
    if let Some(j) = base.strip_suffix('T') {
        return !j.is_empty() && j.bytes().all(|c| c.is_ascii_digit());
    }
    if let Some(rest) = base.strip_prefix("by") {
        let mut parts = rest.splitn(2, '-');
        let depth_ok = parts.next().is_some_and(|d| !d.is_empty() && d.bytes().all(|c| c.is_ascii_digit()));
        return depth_ok
            && parts.next().and_then(|r| r.rsplit_once('-')).is_some_and(|(inner, outer)| {
                ["mean", "min", "max"].contains(&outer) && is_known_suffix(inner, plugin_names)
            });
    }
    false
}

/// Recovers `(plan index, tag suffix)` from a feature name.
pub fn parse_feature_name(name: &str, plan: &PathPlan, db: &ValidatedDatabase, plugin_names: &[&str]) -> Option<(usize, String)> {
    plan.paths
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let head = format!("{}-{}-", feature_prefix(p, db), p.collected_column);
            name.strip_prefix(&head).map(|rest| (i, head.len(), rest.to_string()))
        })
        .filter(|(_, _, rest)| is_known_suffix(rest, plugin_names))
        .max_by_key(|(_, len, _)| *len)
        .map(|(i, _, rest)| (i, rest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub plan_index: Option<usize>,
    pub values: Vec<Option<f64>>,
}

impl FeatureColumn {
    pub fn new(name: impl Into<String>, plan_index: Option<usize>, values: Vec<Option<f64>>) -> Self {
        Self { name: name.into(), plan_index, values }
    }
}

/// One row per main-table entity, in main-table order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub key_name: String,
    pub entity_ids: Vec<String>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureMatrix {
    pub fn row_count(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// A copy without the named columns.
    pub fn without<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> FeatureMatrix {
        let drop: HashSet<&str> = names.into_iter().collect();
        FeatureMatrix {
            key_name: self.key_name.clone(),
            entity_ids: self.entity_ids.clone(),
            columns: self.columns.iter().filter(|c| !drop.contains(c.name.as_str())).cloned().collect(),
        }
    }

    /// Header of key and feature names; nulls are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once(self.key_name.as_str()).chain(self.names()))?;
        let mut record: Vec<String> = Vec::with_capacity(self.width() + 1);
        for (row, id) in self.entity_ids.iter().enumerate() {
            record.clear();
            record.push(id.clone());
            record.extend(self.columns.iter().map(|c| c.values[row].map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Concatenates feature vectors in plan order, then name order within a
/// vector. Entities a vector lacks get null, or 0 for count-type features.
pub fn assemble_matrix(
    vectors: &[FeatureVector],
    plan: &PathPlan,
    db: &ValidatedDatabase,
) -> Result<FeatureMatrix, PipelineError> {
    let n = db.entity_count();
    let mut sorted: Vec<&FeatureVector> = vectors.iter().collect();
    sorted.sort_by_key(|v| v.plan_index);
    let mut seen = HashSet::new();
    let mut columns = Vec::new();
    for v in sorted {
        let path = &plan.paths[v.plan_index];
        let mut named: Vec<(String, usize)> = v
            .specs
            .iter()
            .enumerate()
            .map(|(j, s)| (name_feature(path, db, &s.tag, s.index, s.normalized), j))
            .collect();
        named.sort();
        for (name, j) in named {
            if !seen.insert(name.clone()) {
                return Err(PipelineError::NameCollision(name));
            }
            let fill = v.specs[j].count_like.then_some(0.0);
            let mut values = vec![fill; n];
            for (i, &e) in v.entities.iter().enumerate() {
                values[e as usize] = v.columns[j][i];
            }
            columns.push(FeatureColumn::new(name, Some(v.plan_index), values));
        }
    }
    Ok(FeatureMatrix { key_name: main_key_name(db), entity_ids: entity_ids(db), columns })
}

fn main_key_name(db: &ValidatedDatabase) -> String {
    db.main().spec.columns[db.entity_column()].name.clone()
}

/// Rendered primary key of every main-table row.
pub fn entity_ids(db: &ValidatedDatabase) -> Vec<String> {
    let main = db.main();
    let col = &main.columns[db.entity_column()];
    (0..main.row_count).map(|r| col.get(r).to_string()).collect()
}

/// The main table's target column, if one is declared.
pub fn main_target(db: &ValidatedDatabase) -> Option<TargetColumn> {
    let main = db.main();
    let spec = main.spec.columns_with_role(ColumnRole::Target).next()?;
    Some(TargetColumn::from_column(main.column(&spec.name)?))
}

/// Values of the main table's order column, with text ranked lexically.
pub fn main_order(db: &ValidatedDatabase) -> Option<Vec<Option<f64>>> {
    let main = db.main();
    let spec = main.spec.columns_with_role(ColumnRole::Order).next()?;
    let data = main.column(&spec.name)?;
    let cells: Vec<CellValue> = (0..main.row_count).map(|r| data.get(r)).collect();
    let mut labels: Vec<&str> = cells.iter().filter_map(CellValue::as_str).collect();
    labels.sort_unstable();
    labels.dedup();
    Some(
        cells
            .iter()
            .map(|c| match c {
                CellValue::Number(x) => Some(*x),
                CellValue::Timestamp(t) => Some(*t as f64),
                CellValue::Category(s) | CellValue::Text(s) => labels.binary_search(&&**s).ok().map(|i| i as f64),
                CellValue::Null => None,
            })
            .collect(),
    )
}

/// Plan indices grouped by first hop; each group is one root branch of the
/// depth-first traversal and owns its own join cache.
fn root_branches(plan: &PathPlan) -> Vec<Vec<(usize, &JoiningPath)>> {
    let mut groups: BTreeMap<Option<_>, Vec<(usize, &JoiningPath)>> = BTreeMap::new();
    for (i, p) in plan.paths.iter().enumerate() {
        groups.entry(p.hops.first().copied()).or_default().push((i, p));
    }
    groups.into_values().collect()
}

#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub stats: PathStats,
    pub ctype: CollectedType,
}

/// Everything produced before selection.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub plan: PathPlan,
    /// Per plan path; `None` when the path failed and was skipped.
    pub outcomes: Vec<Option<PathOutcome>>,
    pub matrix: FeatureMatrix,
    pub target: TargetColumn,
    /// Rows whose target is present, or every row when no target is declared.
    pub training: Vec<bool>,
    pub has_target: bool,
    pub order: Option<Vec<Option<f64>>>,
}

/// Collects every planned path and, unless `collect_only`, transforms it.
fn run_paths(
    db: &ValidatedDatabase,
    plan: &PathPlan,
    policy: SamplingPolicy,
    target: &TargetColumn,
    tcfg: &TransformConfig,
    plugins: &PluginRegistry,
    collect_only: bool,
) -> Vec<(usize, Option<PathOutcome>, Option<FeatureVector>)> {
    let cutoffs = entity_cutoffs(db);
    let branches = root_branches(plan);
    let mut results: Vec<_> = branches
        .into_par_iter()
        .flat_map_iter(|branch| {
            let indices: Vec<usize> = branch.iter().map(|b| b.0).collect();
            let collector = Collector::new(db, branch, policy, cutoffs.clone());
            indices
                .into_iter()
                .zip(collector)
                .map(|(i, collected)| match collected {
                    Err(e) => {
                        warn!("skipping path {i}: {e}");
                        (i, None, None)
                    }
                    Ok(col) => {
                        let outcome = PathOutcome { stats: col.stats, ctype: col.ctype };
                        if collect_only {
                            return (i, Some(outcome), None);
                        }
                        match transform(&col, target, tcfg, plugins) {
                            Ok(v) => (i, Some(outcome), Some(v)),
                            Err(e) => {
                                warn!("skipping path {i}: {e}");
                                (i, Some(outcome), None)
                            }
                        }
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    results.sort_by_key(|r| r.0);
    results
}

/// Builds the full, unselected feature matrix of a loaded database.
pub fn extract_features(
    db: &ValidatedDatabase,
    cfg: &PipelineConfig,
    plugins: &PluginRegistry,
) -> Result<Extraction, PipelineError> {
    cfg.validate()?;
    let plan = enumerate_paths(db, cfg.max_depth, cfg.mode);
    info!("{} joining paths planned", plan.paths.len());
    let declared = main_target(db);
    let has_target = declared.is_some();
    let target = declared.unwrap_or_else(|| TargetColumn::unlabeled(db.entity_count()));
    let training = if has_target { target.training_mask() } else { vec![true; db.entity_count()] };

    let results = run_paths(db, &plan, cfg.policy, &target, &cfg.transform_cfg, plugins, false);
    let mut outcomes = Vec::with_capacity(results.len());
    let mut vectors = Vec::new();
    for (_, outcome, vector) in results {
        outcomes.push(outcome);
        vectors.extend(vector);
    }
    let matrix = assemble_matrix(&vectors, &plan, db)?;
    Ok(Extraction { plan, outcomes, matrix, target, training, has_target, order: main_order(db) })
}

/// Path listing followed by per-path collection statistics.
pub fn explain(db: &ValidatedDatabase, cfg: &PipelineConfig) -> Result<String, PipelineError> {
    cfg.validate()?;
    let plan = enumerate_paths(db, cfg.max_depth, cfg.mode);
    let target = TargetColumn::unlabeled(db.entity_count());
    let results = run_paths(db, &plan, cfg.policy, &target, &cfg.transform_cfg, &PluginRegistry::new(), true);
    let mut out = plan.listing(db);
    out.push('\n');
    out.push_str("path,column,type,estimated,joined,after_cutoff,kept,sampling_ratio\n");
    for (i, outcome, _) in results {
        let p = &plan.paths[i];
        let route = render_route(p, db);
        match outcome {
            Some(o) => writeln!(
                out,
                "{route},{},{},{},{},{},{},{}",
                p.collected_column, o.ctype, o.stats.estimated_size, o.stats.joined, o.stats.after_cutoff, o.stats.kept, o.stats.sampling_ratio
            ),
            None => writeln!(out, "{route},{},failed,,,,,", p.collected_column),
        }
        .unwrap();
    }
    Ok(out)
}

/// Applies selection to an extraction.
pub fn select_features(ex: &Extraction, cfg: &SelectionConfig) -> (FeatureMatrix, SelectionReport) {
    let target = if ex.has_target { ex.target.clone() } else { TargetColumn::unlabeled(ex.matrix.row_count()) };
    select(&ex.matrix, &target, &ex.training, ex.order.as_deref(), cfg)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub matrix: Option<FeatureMatrix>,
    pub report: Option<SelectionReport>,
    /// Set in explain mode.
    pub explanation: Option<String>,
    pub written: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    run_pipeline_with(cfg, &PluginRegistry::new())
}

/// Runs the whole pipeline and writes the matrix, and the report when asked.
/// In explain mode only the plan and collection statistics are produced.
pub fn run_pipeline_with(cfg: &PipelineConfig, plugins: &PluginRegistry) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let db = load_database(&cfg.schema_path, &cfg.data_dir)?;
    if cfg.explain_only {
        return Ok(PipelineOutcome { matrix: None, report: None, explanation: Some(explain(&db, cfg)?), written: vec![] });
    }
    let ex = extract_features(&db, cfg, plugins)?;
    let (matrix, report) = select_features(&ex, &cfg.selection_cfg);
    info!("kept {} of {} features", matrix.width(), ex.matrix.width());

    let mut written = Vec::new();
    matrix.write_csv(create(&cfg.output_path)?)?;
    written.push(cfg.output_path.clone());
    if cfg.emit_report {
        let path = cfg.report_path();
        report.write_csv(create(&path)?)?;
        written.push(path);
    }
    Ok(PipelineOutcome { matrix: Some(matrix), report: Some(report), explanation: None, written })
}
