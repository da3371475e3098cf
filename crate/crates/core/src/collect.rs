//! Depth-first data collection along joining paths.
//!
//! Join results are kept as chains of [`JoinLevel`]s holding only row
//! indices. A stack of levels follows the current DFS branch so that a path
//! sharing a prefix with its predecessor only joins the missing hops.

use std::collections::HashMap;
use std::fmt;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::ingest::{resolve_cutoff_column, CellValue, Key};
use crate::paths::PathPlan;
use crate::schema::{classify_path, ColumnType, Hop, JoiningPath, PathKind, ValidatedDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectedType {
    NumericScalar,
    CategoryScalar,
    TextScalar,
    TimestampScalar,
    NumberMultiset,
    ItemMultiset,
    TextSet,
    TimeSeries,
    Sequence,
}

impl CollectedType {
    pub fn is_scalar(self) -> bool {
        matches!(
            self,
            CollectedType::NumericScalar
                | CollectedType::CategoryScalar
                | CollectedType::TextScalar
                | CollectedType::TimestampScalar
        )
    }
}

impl fmt::Display for CollectedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CollectedType::NumericScalar => "numeric_scalar",
            CollectedType::CategoryScalar => "category_scalar",
            CollectedType::TextScalar => "text_scalar",
            CollectedType::TimestampScalar => "timestamp_scalar",
            CollectedType::NumberMultiset => "number_multiset",
            CollectedType::ItemMultiset => "item_multiset",
            CollectedType::TextSet => "text_set",
            CollectedType::TimeSeries => "time_series",
            CollectedType::Sequence => "sequence",
        };
        f.write_str(s)
    }
}

/// Type of the data a path collects per entity.
///
/// Timestamp columns on multiple paths are treated as numbers (epoch seconds).
pub fn identify_collected_type(kind: PathKind, ctype: ColumnType, has_time_on_path: bool) -> CollectedType {
    match (kind, ctype) {
        (PathKind::OneToOne, ColumnType::Numerical) => CollectedType::NumericScalar,
        (PathKind::OneToOne, ColumnType::Categorical) => CollectedType::CategoryScalar,
        (PathKind::OneToOne, ColumnType::Text) => CollectedType::TextScalar,
        (PathKind::OneToOne, ColumnType::Timestamp) => CollectedType::TimestampScalar,
        (PathKind::Multiple, ColumnType::Numerical | ColumnType::Timestamp) => {
            if has_time_on_path {
                CollectedType::TimeSeries
            } else {
                CollectedType::NumberMultiset
            }
        }
        (PathKind::Multiple, ColumnType::Categorical) => {
            if has_time_on_path {
                CollectedType::Sequence
            } else {
                CollectedType::ItemMultiset
            }
        }
        (PathKind::Multiple, ColumnType::Text) => CollectedType::TextSet,
    }
}

/// One leaf of an entity's relational tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalTuple {
    /// Row of the entity in the main table.
    pub entity: u32,
    /// Row indices in the intermediate tables, outermost first.
    pub group_ids: SmallVec<[u32; 4]>,
    pub value: CellValue,
    pub event_time: Option<i64>,
}

/// Per-path collection counters, reported by `--explain`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathStats {
    pub estimated_size: u64,
    pub joined: usize,
    pub after_cutoff: usize,
    pub kept: usize,
    /// `max_joined_size / estimated_size` when sampling applied, else 1.
    pub sampling_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct CollectedColumn {
    pub plan_index: usize,
    pub path: JoiningPath,
    pub kind: PathKind,
    pub value_type: ColumnType,
    pub ctype: CollectedType,
    pub has_time: bool,
    pub entity_count: usize,
    /// Grouped contiguously by entity, in main-table row order.
    pub tuples: Vec<RelationalTuple>,
    pub stats: PathStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub max_joined_size: u64,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self { max_joined_size: 10_000_000, seed: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectError {
    #[error("group-by depth {depth} exceeds the path's intermediate depth {max}")]
    DepthOutOfRange { depth: usize, max: usize },
    #[error("path is not valid in this database: {0}")]
    InvalidPath(String),
}

/// Σ over shared keys of left count × right count.
pub fn estimate_join_size(left_index: &HashMap<Key, u64>, right_index: &HashMap<Key, u64>) -> u64 {
    let (small, large) =
        if left_index.len() <= right_index.len() { (left_index, right_index) } else { (right_index, left_index) };
    small.iter().filter_map(|(k, a)| large.get(k).map(|b| a * b)).sum()
}

/// Keeps tuples whose event time is strictly before their entity's cutoff.
/// Tuples without an event time, and entities without a cutoff, pass.
pub fn apply_cutoff_filter(tuples: Vec<RelationalTuple>, cutoff_of: &HashMap<u32, i64>) -> Vec<RelationalTuple> {
    tuples
        .into_iter()
        .filter(|t| match (t.event_time, cutoff_of.get(&t.entity)) {
            (Some(time), Some(cutoff)) => time < *cutoff,
            _ => true,
        })
        .collect()
}

/// Per-entity tuple budget `max(1, ceil(n_e * max_joined_size / estimated_size))`.
pub fn entity_budget(n_e: usize, max_joined_size: u64, estimated_size: u64) -> usize {
    if estimated_size == 0 {
        return n_e.max(1);
    }
    let num = n_e as u128 * max_joined_size as u128;
    let budget = num.div_ceil(estimated_size as u128);
    budget.max(1).min(usize::MAX as u128) as usize
}

/// Stratified per-entity subsampling, applied only when the estimated join
/// size exceeds the policy cap. With event times the most recent tuples are
/// kept; otherwise a uniform sample seeded by (seed, entity). Surviving tuples
/// keep their input order.
pub fn sample_tuples(
    tuples: Vec<RelationalTuple>,
    estimated_size: u64,
    policy: &SamplingPolicy,
    has_time: bool,
) -> Vec<RelationalTuple> {
    if estimated_size <= policy.max_joined_size {
        return tuples;
    }
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<u32, usize> = HashMap::new();
    for (i, t) in tuples.iter().enumerate() {
        let g = *slot.entry(t.entity).or_insert_with(|| {
            groups.push((t.entity, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }

    let mut keep = vec![false; tuples.len()];
    for (entity, members) in &groups {
        let budget = entity_budget(members.len(), policy.max_joined_size, estimated_size);
        if budget >= members.len() {
            members.iter().for_each(|&i| keep[i] = true);
        } else if has_time {
            let mut order = members.clone();
            // Latest first; missing times count as oldest; later rows win ties.
            order.sort_by(|&a, &b| tuples[b].event_time.cmp(&tuples[a].event_time).then(b.cmp(&a)));
            order[..budget].iter().for_each(|&i| keep[i] = true);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(policy.seed, *entity));
            for j in index::sample(&mut rng, members.len(), budget) {
                keep[members[j]] = true;
            }
        }
    }
    tuples.into_iter().zip(keep).filter(|(_, k)| *k).map(|(t, _)| t).collect()
}

fn mix_seed(seed: u64, entity: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (entity as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Leaves of each entity's relational tree grouped under the nodes at
/// `depth`. Depth 0 gives one multiset per entity; depth `d > 0` gives one
/// multiset per distinct length-`d` prefix of group ids, in first-seen order.
/// The result is indexed by entity row.
pub fn group_by(col: &CollectedColumn, depth: usize) -> Result<Vec<Vec<Vec<CellValue>>>, CollectError> {
    let max = col.path.hops.len().saturating_sub(1);
    if depth > max {
        return Err(CollectError::DepthOutOfRange { depth, max });
    }
    let mut out: Vec<Vec<Vec<CellValue>>> =
        (0..col.entity_count).map(|_| if depth == 0 { vec![Vec::new()] } else { Vec::new() }).collect();
    if depth == 0 {
        for t in &col.tuples {
            out[t.entity as usize][0].push(t.value.clone());
        }
        return Ok(out);
    }
    let mut slots: HashMap<(u32, &[u32]), usize> = HashMap::new();
    for t in &col.tuples {
        let groups = &mut out[t.entity as usize];
        let key = (t.entity, &t.group_ids[..depth]);
        let g = *slots.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(t.value.clone());
    }
    Ok(out)
}

/// Join result for one path prefix: one entry per node at that depth of the
/// relational trees, grouped by entity.
#[derive(Debug, Clone, Default)]
pub struct JoinLevel {
    pub entity: Vec<u32>,
    /// Index of the parent entry in the previous level.
    pub parent: Vec<u32>,
    /// Row in this level's table.
    pub row: Vec<u32>,
}

impl JoinLevel {
    fn root(entities: usize) -> Self {
        let ids: Vec<u32> = (0..entities as u32).collect();
        Self { entity: ids.clone(), parent: ids.clone(), row: ids }
    }

    pub fn len(&self) -> usize {
        self.row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row.is_empty()
    }

    /// Key-frequency histogram of `column` over this level's rows.
    fn key_histogram(&self, db: &ValidatedDatabase, table: usize, column: usize) -> HashMap<Key, u64> {
        let data = &db.table(table).columns[column];
        let mut hist = HashMap::new();
        for &r in &self.row {
            if let Some(k) = data.key(r as usize) {
                *hist.entry(k).or_insert(0) += 1;
            }
        }
        hist
    }

    fn extend(&self, db: &ValidatedDatabase, hop: Hop) -> JoinLevel {
        let ends = db.hop_ends(hop);
        let source = &db.table(ends.from_table).columns[ends.from_column];
        let index = db.key_index(ends.to_table, ends.to_column);
        let mut next = JoinLevel::default();
        for (i, &r) in self.row.iter().enumerate() {
            let Some(k) = source.key(r as usize) else { continue };
            for &dest in index.rows(&k) {
                next.entity.push(self.entity[i]);
                next.parent.push(i as u32);
                next.row.push(dest);
            }
        }
        next
    }
}

/// Observed cache behaviour over a collection run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    /// Largest number of cached join levels at any time (main excluded).
    pub max_stack: usize,
    /// Number of hop joins computed.
    pub joins_built: usize,
}

struct CacheEntry {
    hops: Vec<Hop>,
    level: JoinLevel,
}

/// Streams one [`CollectedColumn`] per path, in input order.
pub struct Collector<'a> {
    db: &'a ValidatedDatabase,
    paths: Vec<(usize, &'a JoiningPath)>,
    next: usize,
    policy: SamplingPolicy,
    cutoffs: HashMap<u32, i64>,
    root: JoinLevel,
    stack: Vec<CacheEntry>,
    stats: CacheStats,
}

/// Per-entity cutoff times from the main table's cutoff column, if any.
pub fn entity_cutoffs(db: &ValidatedDatabase) -> HashMap<u32, i64> {
    let main = db.main();
    let column = match resolve_cutoff_column(&main.spec) {
        Ok(Some(c)) => c,
        Ok(None) => return HashMap::new(),
        Err(e) => {
            warn!("{e}; temporal filtering disabled");
            return HashMap::new();
        }
    };
    let data = main.column(&column).expect("resolved column exists");
    (0..main.row_count).filter_map(|r| data.timestamp(r).map(|t| (r as u32, t))).collect()
}

/// Collects every path of `plan` with temporal filtering and sampling.
pub fn dfs_collect<'a>(plan: &'a PathPlan, db: &'a ValidatedDatabase, policy: SamplingPolicy) -> Collector<'a> {
    Collector::new(db, plan.paths.iter().enumerate().collect(), policy, entity_cutoffs(db))
}

impl<'a> Collector<'a> {
    /// `paths` pairs each path with its index in the plan.
    pub fn new(
        db: &'a ValidatedDatabase,
        paths: Vec<(usize, &'a JoiningPath)>,
        policy: SamplingPolicy,
        cutoffs: HashMap<u32, i64>,
    ) -> Self {
        Self {
            db,
            paths,
            next: 0,
            policy,
            cutoffs,
            root: JoinLevel::root(db.entity_count()),
            stack: Vec::new(),
            stats: CacheStats::default(),
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn stack_len(&self) -> usize {
        self.stack.len()
    }

    /// Makes the stack hold exactly the levels for `hops`, reusing the
    /// longest cached prefix.
    fn align_stack(&mut self, hops: &[Hop]) {
        let shared = self.stack.iter().zip(1..).take_while(|(e, n)| *n <= hops.len() && e.hops[..] == hops[..*n]).count();
        self.stack.truncate(shared);
        for depth in shared..hops.len() {
            let prev = self.stack.last().map_or(&self.root, |e| &e.level);
            let level = prev.extend(self.db, hops[depth]);
            self.stats.joins_built += 1;
            self.stack.push(CacheEntry { hops: hops[..=depth].to_vec(), level });
            self.stats.max_stack = self.stats.max_stack.max(self.stack.len());
        }
    }

    fn collect_one(&mut self, plan_index: usize, path: &JoiningPath) -> Result<CollectedColumn, CollectError> {
        let db = self.db;
        if !db.is_valid_path(path) {
            return Err(CollectError::InvalidPath(format!("{path:?}")));
        }
        let tables = db.path_tables(path);
        let k = path.hops.len();
        let terminal = tables[k];
        let col_idx = db.table(terminal).spec.column_index(&path.collected_column).expect("valid path");
        let value_type = db.table(terminal).spec.columns[col_idx].ctype;

        // Deepest non-main table on the path with an event time column.
        let time_level = (1..=k).rev().find_map(|l| db.table(tables[l]).spec.event_time_column().map(|c| (l, c)));

        let estimated_size = if k == 0 {
            db.entity_count() as u64
        } else {
            self.align_stack(&path.hops[..k - 1]);
            let prev = self.stack.last().map_or(&self.root, |e| &e.level);
            let ends = db.hop_ends(path.hops[k - 1]);
            let left = prev.key_histogram(db, ends.from_table, ends.from_column);
            let right = db.key_index(ends.to_table, ends.to_column).histogram();
            let est = estimate_join_size(&left, &right);
            self.align_stack(&path.hops);
            est
        };

        let levels: Vec<&JoinLevel> = std::iter::once(&self.root).chain(self.stack.iter().map(|e| &e.level)).collect();
        let last = levels[k];
        let values = &db.table(terminal).columns[col_idx];
        let mut tuples = Vec::with_capacity(last.len());
        let mut rows = vec![0u32; k + 1];
        for e in 0..last.len() {
            let mut idx = e;
            for l in (1..=k).rev() {
                rows[l] = levels[l].row[idx];
                idx = levels[l].parent[idx] as usize;
            }
            let event_time = time_level.and_then(|(l, c)| db.table(tables[l]).columns[c].timestamp(rows[l] as usize));
            tuples.push(RelationalTuple {
                entity: last.entity[e],
                group_ids: if k > 1 { rows[1..k].iter().copied().collect() } else { SmallVec::new() },
                value: values.get(last.row[e] as usize),
                event_time,
            });
        }

        let joined = tuples.len();
        let tuples = apply_cutoff_filter(tuples, &self.cutoffs);
        let after_cutoff = tuples.len();
        let has_time = time_level.is_some();
        let tuples = sample_tuples(tuples, estimated_size, &self.policy, has_time);
        let sampling_ratio = if estimated_size > self.policy.max_joined_size {
            self.policy.max_joined_size as f64 / estimated_size as f64
        } else {
            1.0
        };
        let kind = classify_path(path, db);
        Ok(CollectedColumn {
            plan_index,
            path: path.clone(),
            kind,
            value_type,
            ctype: identify_collected_type(kind, value_type, has_time),
            has_time,
            entity_count: db.entity_count(),
            stats: PathStats { estimated_size, joined, after_cutoff, kept: tuples.len(), sampling_ratio },
            tuples,
        })
    }
}

impl Iterator for Collector<'_> {
    type Item = Result<CollectedColumn, CollectError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (plan_index, path) = *self.paths.get(self.next)?;
        self.next += 1;
        Some(self.collect_one(plan_index, path))
    }
}
