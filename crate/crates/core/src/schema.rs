//! Schema declaration, validation and the entity graph.
//!
//! A [`DatabaseSchema`] names a main table, a set of tables and the key
//! relations between them. [`validate_schema`] pairs the schema with loaded
//! data and produces an immutable [`ValidatedDatabase`] that every later stage
//! reads from.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Key, LoadedTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Numerical,
    Categorical,
    Text,
    Timestamp,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnType::Numerical => "numerical",
            ColumnType::Categorical => "categorical",
            ColumnType::Text => "text",
            ColumnType::Timestamp => "timestamp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    PrimaryKey,
    ForeignKey,
    Attribute,
    Target,
    CutoffTime,
    EventTime,
    Order,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub ctype: ColumnType,
    pub roles: BTreeSet<ColumnRole>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, ctype: ColumnType) -> Self {
        Self { name: name.into(), ctype, roles: BTreeSet::new() }
    }

    pub fn with_role(mut self, role: ColumnRole) -> Self {
        self.roles.insert(role);
        self
    }

    pub fn has_role(&self, role: ColumnRole) -> bool {
        self.roles.contains(&role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSpec {
    pub name: String,
    pub source_file: PathBuf,
    pub columns: Vec<ColumnSpec>,
    pub primary_key: Option<String>,
}

impl TableSpec {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>) -> Self {
        let name = name.into();
        Self { source_file: PathBuf::from(format!("{name}.csv")), name, columns, primary_key: None }
    }

    pub fn with_primary_key(mut self, column: impl Into<String>) -> Self {
        self.primary_key = Some(column.into());
        self
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Columns carrying `role`, in declaration order.
    pub fn columns_with_role(&self, role: ColumnRole) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(move |c| c.has_role(role))
    }

    pub fn event_time_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.has_role(ColumnRole::EventTime))
    }

    pub fn is_primary_key(&self, column: &str) -> bool {
        self.primary_key.as_deref() == Some(column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub left_table: String,
    pub left_column: String,
    pub right_table: String,
    pub right_column: String,
    /// Display name of the shared key, used in feature names.
    pub key_label: String,
}

impl Relation {
    pub fn new(left_table: &str, left_column: &str, right_table: &str, right_column: &str) -> Self {
        Self {
            left_table: left_table.to_string(),
            left_column: left_column.to_string(),
            right_table: right_table.to_string(),
            right_column: right_column.to_string(),
            key_label: default_key_label(left_column, right_column),
        }
    }
}

/// The key label used when a relation does not name one.
pub fn default_key_label(left_column: &str, right_column: &str) -> String {
    if left_column == right_column {
        left_column.to_string()
    } else {
        format!("{left_column}_{right_column}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseSchema {
    pub main_table: String,
    pub tables: Vec<TableSpec>,
    pub relations: Vec<Relation>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("main table `{0}` is not declared")]
    NoMainTable(String),
    #[error("main table `{0}` has no primary key")]
    MainTableWithoutKey(String),
    #[error("table `{0}` is declared but was not loaded")]
    MissingTable(String),
    #[error("table `{0}` is declared twice")]
    DuplicateTable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("table `{table}` declares column `{column}` twice")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key {table}.{column} has duplicate value `{value}`")]
    DuplicateKeyValue { table: String, column: String, value: String },
    #[error("primary key {table}.{column} is null at row {row}")]
    NullKeyValue { table: String, column: String, row: usize },
    #[error("relation {left} = {right} joins {left_type} with {right_type}")]
    TypeMismatch { left: String, right: String, left_type: ColumnType, right_type: ColumnType },
    #[error("relation on table `{0}` joins the table with itself")]
    SelfRelation(String),
    #[error("role violation: {0}")]
    RoleViolation(String),
    #[error("loaded table `{table}` does not match its declaration: {reason}")]
    LoadedMismatch { table: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    FromLeft,
    FromRight,
}

/// One step of a joining path: a relation traversed in a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hop {
    pub relation: usize,
    pub direction: Direction,
}

/// Table and column indices at both ends of a hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopEnds {
    pub from_table: usize,
    pub from_column: usize,
    pub to_table: usize,
    pub to_column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    OneToOne,
    Multiple,
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathKind::OneToOne => "one_to_one",
            PathKind::Multiple => "multiple",
        })
    }
}

/// A sequence of hops starting at the main table plus the column collected
/// from the terminal table. A path without hops collects a main-table column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JoiningPath {
    pub hops: Vec<Hop>,
    pub collected_column: String,
}

impl JoiningPath {
    pub fn new(hops: Vec<Hop>, collected_column: impl Into<String>) -> Self {
        Self { hops, collected_column: collected_column.into() }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// True when `other`'s hops start with all of this path's hops.
    pub fn is_prefix_of(&self, other: &JoiningPath) -> bool {
        other.hops.len() >= self.hops.len() && other.hops[..self.hops.len()] == self.hops[..]
    }
}

/// Key lookup for one column: key value to the rows holding it, in row order.
#[derive(Debug, Default, Clone)]
pub struct KeyIndex {
    rows: HashMap<Key, Vec<u32>>,
}

impl KeyIndex {
    pub fn build(table: &LoadedTable, column: usize) -> Self {
        let mut rows: HashMap<Key, Vec<u32>> = HashMap::new();
        let data = &table.columns[column];
        for r in 0..table.row_count {
            if let Some(k) = data.key(r) {
                rows.entry(k).or_default().push(r as u32);
            }
        }
        Self { rows }
    }

    pub fn rows(&self, key: &Key) -> &[u32] {
        self.rows.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count(&self, key: &Key) -> u64 {
        self.rows.get(key).map_or(0, |r| r.len() as u64)
    }

    /// Key-frequency histogram.
    pub fn histogram(&self) -> HashMap<Key, u64> {
        self.rows.iter().map(|(k, v)| (k.clone(), v.len() as u64)).collect()
    }
}

/// A schema whose data has been loaded and checked. Immutable and `Sync`.
#[derive(Debug)]
pub struct ValidatedDatabase {
    schema: DatabaseSchema,
    tables: Vec<LoadedTable>,
    main: usize,
    relation_ends: Vec<(usize, usize, usize, usize)>,
    key_indexes: HashMap<(usize, usize), KeyIndex>,
}

impl ValidatedDatabase {
    pub fn schema(&self) -> &DatabaseSchema {
        &self.schema
    }

    pub fn tables(&self) -> &[LoadedTable] {
        &self.tables
    }

    pub fn table(&self, idx: usize) -> &LoadedTable {
        &self.tables[idx]
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.spec.name == name)
    }

    pub fn table_by_name(&self, name: &str) -> Option<&LoadedTable> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    pub fn main_index(&self) -> usize {
        self.main
    }

    pub fn main(&self) -> &LoadedTable {
        &self.tables[self.main]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.schema.relations
    }

    pub fn entity_count(&self) -> usize {
        self.main().row_count
    }

    /// Column index of the main table's primary key.
    pub fn entity_column(&self) -> usize {
        let main = self.main();
        main.spec
            .primary_key
            .as_deref()
            .and_then(|k| main.spec.column_index(k))
            .expect("validated main table has a primary key")
    }

    pub fn hop_ends(&self, hop: Hop) -> HopEnds {
        let (lt, lc, rt, rc) = self.relation_ends[hop.relation];
        match hop.direction {
            Direction::FromLeft => HopEnds { from_table: lt, from_column: lc, to_table: rt, to_column: rc },
            Direction::FromRight => HopEnds { from_table: rt, from_column: rc, to_table: lt, to_column: lc },
        }
    }

    /// Key index of a relation endpoint column.
    pub fn key_index(&self, table: usize, column: usize) -> &KeyIndex {
        &self.key_indexes[&(table, column)]
    }

    /// Tables visited by a path, main table first.
    pub fn path_tables(&self, path: &JoiningPath) -> Vec<usize> {
        let mut out = vec![self.main];
        out.extend(path.hops.iter().map(|h| self.hop_ends(*h).to_table));
        out
    }

    pub fn terminal_table(&self, path: &JoiningPath) -> usize {
        path.hops.last().map_or(self.main, |h| self.hop_ends(*h).to_table)
    }

    /// True when every hop is a declared relation, consecutive hops share a
    /// table, no table repeats and the collected column exists.
    pub fn is_valid_path(&self, path: &JoiningPath) -> bool {
        let mut current = self.main;
        let mut seen = HashSet::from([self.main]);
        for hop in &path.hops {
            if hop.relation >= self.relation_ends.len() {
                return false;
            }
            let ends = self.hop_ends(*hop);
            if ends.from_table != current || !seen.insert(ends.to_table) {
                return false;
            }
            current = ends.to_table;
        }
        self.tables[current].spec.column_index(&path.collected_column).is_some()
    }
}

/// Checks the schema against its loaded tables and builds the key indexes.
pub fn validate_schema(
    mut schema: DatabaseSchema,
    loaded_tables: Vec<LoadedTable>,
) -> Result<ValidatedDatabase, SchemaError> {
    let mut names: HashSet<String> = HashSet::new();
    for t in &schema.tables {
        if !names.insert(t.name.clone()) {
            return Err(SchemaError::DuplicateTable(t.name.clone()));
        }
    }
    if !names.contains(&schema.main_table) {
        return Err(SchemaError::NoMainTable(schema.main_table.clone()));
    }

    for table in &mut schema.tables {
        check_table_spec(table, table.name == schema.main_table)?;
    }

    let mut by_name: HashMap<String, LoadedTable> = HashMap::new();
    for lt in loaded_tables {
        if !names.contains(&lt.spec.name) {
            return Err(SchemaError::UnknownTable(lt.spec.name.clone()));
        }
        by_name.insert(lt.spec.name.clone(), lt);
    }
    let mut tables = Vec::with_capacity(schema.tables.len());
    for spec in &schema.tables {
        let mut lt = by_name.remove(&spec.name).ok_or_else(|| SchemaError::MissingTable(spec.name.clone()))?;
        if lt.spec.columns.len() != spec.columns.len()
            || lt.spec.columns.iter().zip(&spec.columns).any(|(a, b)| a.name != b.name || a.ctype != b.ctype)
        {
            return Err(SchemaError::LoadedMismatch {
                table: spec.name.clone(),
                reason: "column names or types differ".into(),
            });
        }
        if lt.columns.len() != spec.columns.len() || lt.columns.iter().any(|c| c.len() != lt.row_count) {
            return Err(SchemaError::LoadedMismatch {
                table: spec.name.clone(),
                reason: "column lengths differ from row count".into(),
            });
        }
        lt.spec = spec.clone();
        check_primary_key(&lt)?;
        tables.push(lt);
    }

    let main = tables.iter().position(|t| t.spec.name == schema.main_table).expect("checked above");
    if tables[main].spec.primary_key.is_none() {
        return Err(SchemaError::MainTableWithoutKey(schema.main_table.clone()));
    }

    let mut relation_ends = Vec::with_capacity(schema.relations.len());
    let mut key_indexes = HashMap::new();
    for rel in &schema.relations {
        let lt = tables
            .iter()
            .position(|t| t.spec.name == rel.left_table)
            .ok_or_else(|| SchemaError::UnknownTable(rel.left_table.clone()))?;
        let rt = tables
            .iter()
            .position(|t| t.spec.name == rel.right_table)
            .ok_or_else(|| SchemaError::UnknownTable(rel.right_table.clone()))?;
        if lt == rt {
            return Err(SchemaError::SelfRelation(rel.left_table.clone()));
        }
        let lc = tables[lt].spec.column_index(&rel.left_column).ok_or_else(|| SchemaError::UnknownColumn {
            table: rel.left_table.clone(),
            column: rel.left_column.clone(),
        })?;
        let rc = tables[rt].spec.column_index(&rel.right_column).ok_or_else(|| SchemaError::UnknownColumn {
            table: rel.right_table.clone(),
            column: rel.right_column.clone(),
        })?;
        let (ltype, rtype) = (tables[lt].spec.columns[lc].ctype, tables[rt].spec.columns[rc].ctype);
        if ltype != rtype {
            return Err(SchemaError::TypeMismatch {
                left: format!("{}.{}", rel.left_table, rel.left_column),
                right: format!("{}.{}", rel.right_table, rel.right_column),
                left_type: ltype,
                right_type: rtype,
            });
        }
        relation_ends.push((lt, lc, rt, rc));
        for (t, c) in [(lt, lc), (rt, rc)] {
            key_indexes.entry((t, c)).or_insert_with(|| KeyIndex::build(&tables[t], c));
        }
    }

    Ok(ValidatedDatabase { schema, tables, main, relation_ends, key_indexes })
}

fn check_table_spec(table: &mut TableSpec, is_main: bool) -> Result<(), SchemaError> {
    let mut seen = HashSet::new();
    for c in &table.columns {
        if !seen.insert(c.name.as_str()) {
            return Err(SchemaError::DuplicateColumn { table: table.name.clone(), column: c.name.clone() });
        }
    }

    let role_pk: Vec<&str> = table.columns_with_role(ColumnRole::PrimaryKey).map(|c| c.name.as_str()).collect();
    match (&table.primary_key, role_pk.as_slice()) {
        (_, [_, _, ..]) => {
            return Err(SchemaError::RoleViolation(format!("table `{}` has several primary keys", table.name)))
        }
        (Some(pk), [other]) if pk != other => {
            return Err(SchemaError::RoleViolation(format!(
                "table `{}` declares primary key `{pk}` but column `{other}` has the primary_key role",
                table.name
            )))
        }
        (None, [only]) => table.primary_key = Some(only.to_string()),
        _ => {}
    }
    if let Some(pk) = &table.primary_key {
        if table.column_index(pk).is_none() {
            return Err(SchemaError::UnknownColumn { table: table.name.clone(), column: pk.clone() });
        }
    }

    for role in [ColumnRole::Target, ColumnRole::CutoffTime, ColumnRole::Order] {
        let n = table.columns_with_role(role).count();
        if n > 0 && !is_main {
            return Err(SchemaError::RoleViolation(format!(
                "{role:?} role on `{}` which is not the main table",
                table.name
            )));
        }
        if n > 1 {
            return Err(SchemaError::RoleViolation(format!("more than one {role:?} column in `{}`", table.name)));
        }
    }
    if table.columns_with_role(ColumnRole::EventTime).count() > 1 {
        return Err(SchemaError::RoleViolation(format!("more than one event_time column in `{}`", table.name)));
    }
    for c in &table.columns {
        if (c.has_role(ColumnRole::CutoffTime) || c.has_role(ColumnRole::EventTime))
            && c.ctype != ColumnType::Timestamp
        {
            return Err(SchemaError::RoleViolation(format!(
                "time column {}.{} must be a timestamp, found {}",
                table.name, c.name, c.ctype
            )));
        }
    }
    Ok(())
}

fn check_primary_key(table: &LoadedTable) -> Result<(), SchemaError> {
    let Some(pk) = &table.spec.primary_key else { return Ok(()) };
    let col = table.spec.column_index(pk).expect("checked in spec validation");
    let data = &table.columns[col];
    let mut seen = HashSet::with_capacity(table.row_count);
    for r in 0..table.row_count {
        match data.key(r) {
            None => {
                return Err(SchemaError::NullKeyValue { table: table.spec.name.clone(), column: pk.clone(), row: r })
            }
            Some(k) => {
                if !seen.insert(k) {
                    return Err(SchemaError::DuplicateKeyValue {
                        table: table.spec.name.clone(),
                        column: pk.clone(),
                        value: data.get(r).to_string(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Classifies the edge traversed by `relation` in `direction` using only the
/// primary-key status of the join column at each end.
pub fn classify_edge(relation: usize, db: &ValidatedDatabase, direction: Direction) -> EdgeKind {
    let ends = db.hop_ends(Hop { relation, direction });
    let source_pk = is_pk(db, ends.from_table, ends.from_column);
    let dest_pk = is_pk(db, ends.to_table, ends.to_column);
    match (source_pk, dest_pk) {
        (true, true) => EdgeKind::OneToOne,
        (true, false) => EdgeKind::OneToMany,
        (false, true) => EdgeKind::ManyToOne,
        (false, false) => EdgeKind::ManyToMany,
    }
}

fn is_pk(db: &ValidatedDatabase, table: usize, column: usize) -> bool {
    let spec = &db.table(table).spec;
    spec.is_primary_key(&spec.columns[column].name)
}

pub fn classify_path(path: &JoiningPath, db: &ValidatedDatabase) -> PathKind {
    let multiple = path.hops.iter().any(|h| {
        matches!(classify_edge(h.relation, db, h.direction), EdgeKind::OneToMany | EdgeKind::ManyToMany)
    });
    if multiple {
        PathKind::Multiple
    } else {
        PathKind::OneToOne
    }
}

/// Rewrites a path to its shortest known equivalent.
///
/// A hop `X -k-> B` followed by `B -k-> C`, where both hops use the same
/// column `k` of `B` and the join columns of `B` and `C` are their primary
/// keys, is replaced by a declared direct relation between the same columns
/// of `X` and `C` when one exists. `B` must not carry event times, since
/// dropping it would change cutoff filtering. Applied until nothing changes.
///
/// Equivalence holds under referential integrity: every key value that
/// reaches `C` through `X` must also be present in `B`.
pub fn canonicalize_path(path: &JoiningPath, db: &ValidatedDatabase) -> JoiningPath {
    let mut hops = path.hops.clone();
    'rewrite: loop {
        for i in 0..hops.len().saturating_sub(1) {
            let first = db.hop_ends(hops[i]);
            let second = db.hop_ends(hops[i + 1]);
            let same_key = first.to_column == second.from_column;
            let timed = db.table(first.to_table).spec.event_time_column().is_some();
            if !same_key
                || timed
                || !is_pk(db, first.to_table, first.to_column)
                || !is_pk(db, second.to_table, second.to_column)
            {
                continue;
            }
            if let Some(direct) = find_hop(db, first.from_table, first.from_column, second.to_table, second.to_column) {
                hops.splice(i..i + 2, [direct]);
                continue 'rewrite;
            }
        }
        break;
    }
    JoiningPath { hops, collected_column: path.collected_column.clone() }
}

fn find_hop(db: &ValidatedDatabase, from_table: usize, from_column: usize, to_table: usize, to_column: usize) -> Option<Hop> {
    (0..db.relations().len()).find_map(|relation| {
        [Direction::FromLeft, Direction::FromRight].into_iter().find_map(|direction| {
            let hop = Hop { relation, direction };
            let e = db.hop_ends(hop);
            (e.from_table == from_table && e.from_column == from_column && e.to_table == to_table && e.to_column == to_column)
                .then_some(hop)
        })
    })
}
