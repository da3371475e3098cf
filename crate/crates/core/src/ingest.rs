//! CSV ingestion into typed, immutable columns.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    default_key_label, validate_schema, ColumnRole, ColumnSpec, ColumnType, DatabaseSchema, Relation, SchemaError,
    TableSpec, ValidatedDatabase,
};

/// A single cell. Timestamps are UTC epoch seconds.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Null,
    Number(f64),
    Category(Arc<str>),
    Text(Arc<str>),
    Timestamp(i64),
}

impl CellValue {
    pub fn is_null(&self) -> bool {
        matches!(self, CellValue::Null)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) => Some(*x),
            CellValue::Timestamp(t) => Some(*t as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            CellValue::Category(s) | CellValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for CellValue {
    /// Renders the value the way it is written back to CSV; null is empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Null => Ok(()),
            CellValue::Number(x) => write!(f, "{x}"),
            CellValue::Category(s) | CellValue::Text(s) => f.write_str(s),
            CellValue::Timestamp(t) => f.write_str(&format_timestamp(*t)),
        }
    }
}

/// Hashable join key. Numeric keys compare by value with `-0.0 == 0.0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Num(u64),
    Str(Arc<str>),
    Time(i64),
}

impl Key {
    pub fn number(x: f64) -> Key {
        let x = if x == 0.0 { 0.0 } else { x };
        Key::Num(x.to_bits())
    }
}

/// Column storage, one variant per [`ColumnType`].
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<Option<f64>>),
    Categorical(Vec<Option<Arc<str>>>),
    Text(Vec<Option<Arc<str>>>),
    Timestamp(Vec<Option<i64>>),
}

impl ColumnData {
    pub fn empty(ctype: ColumnType) -> Self {
        match ctype {
            ColumnType::Numerical => ColumnData::Numerical(Vec::new()),
            ColumnType::Categorical => ColumnData::Categorical(Vec::new()),
            ColumnType::Text => ColumnData::Text(Vec::new()),
            ColumnType::Timestamp => ColumnData::Timestamp(Vec::new()),
        }
    }

    pub fn ctype(&self) -> ColumnType {
        match self {
            ColumnData::Numerical(_) => ColumnType::Numerical,
            ColumnData::Categorical(_) => ColumnType::Categorical,
            ColumnData::Text(_) => ColumnType::Text,
            ColumnData::Timestamp(_) => ColumnType::Timestamp,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) | ColumnData::Text(v) => v.len(),
            ColumnData::Timestamp(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> CellValue {
        match self {
            ColumnData::Numerical(v) => v[row].map_or(CellValue::Null, CellValue::Number),
            ColumnData::Categorical(v) => v[row].clone().map_or(CellValue::Null, CellValue::Category),
            ColumnData::Text(v) => v[row].clone().map_or(CellValue::Null, CellValue::Text),
            ColumnData::Timestamp(v) => v[row].map_or(CellValue::Null, CellValue::Timestamp),
        }
    }

    pub fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Numerical(v) => v[row].is_none(),
            ColumnData::Categorical(v) | ColumnData::Text(v) => v[row].is_none(),
            ColumnData::Timestamp(v) => v[row].is_none(),
        }
    }

    pub fn key(&self, row: usize) -> Option<Key> {
        match self {
            ColumnData::Numerical(v) => v[row].map(Key::number),
            ColumnData::Categorical(v) | ColumnData::Text(v) => v[row].clone().map(Key::Str),
            ColumnData::Timestamp(v) => v[row].map(Key::Time),
        }
    }

    pub fn timestamp(&self, row: usize) -> Option<i64> {
        match self {
            ColumnData::Timestamp(v) => v[row],
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub spec: TableSpec,
    /// Aligned with `spec.columns`.
    pub columns: Vec<ColumnData>,
    pub row_count: usize,
}

impl LoadedTable {
    /// Wraps pre-built columns. Panics if column count or lengths disagree.
    pub fn new(spec: TableSpec, columns: Vec<ColumnData>) -> Self {
        assert_eq!(spec.columns.len(), columns.len(), "one column per spec entry");
        let row_count = columns.first().map_or(0, ColumnData::len);
        assert!(columns.iter().all(|c| c.len() == row_count), "columns of equal length");
        Self { spec, columns, row_count }
    }

    /// Parses string records against the declared column types.
    pub fn from_records<S: AsRef<str>>(spec: TableSpec, records: &[Vec<S>]) -> Result<Self, IngestError> {
        let mut builders: Vec<ColumnBuilder> = spec.columns.iter().map(|c| ColumnBuilder::new(c.ctype)).collect();
        for (i, rec) in records.iter().enumerate() {
            for (j, b) in builders.iter_mut().enumerate() {
                let raw = rec.get(j).map(AsRef::as_ref).unwrap_or("");
                b.push(raw).map_err(|expected| IngestError::Parse {
                    file: spec.source_file.clone(),
                    line: i + 2,
                    column: spec.columns[j].name.clone(),
                    value: raw.to_string(),
                    expected,
                })?;
            }
        }
        let columns = builders.into_iter().map(ColumnBuilder::finish).collect();
        Ok(Self::new(spec, columns))
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.spec.column_index(name).map(|i| &self.columns[i])
    }

    /// Writes the table as CSV with a header row. Nulls become empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.spec.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.row_count {
            w.write_record(self.columns.iter().map(|c| c.get(r).to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: column `{column}`: cannot parse `{value}` as {expected}")]
    Parse { file: PathBuf, line: usize, column: String, value: String, expected: ColumnType },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema file: {0}")]
    SchemaFile(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("ambiguous cutoff column: {0:?}")]
    AmbiguousCutoff(Vec<String>),
    #[error("column has no non-empty value")]
    EmptyColumn,
}

impl From<std::io::Error> for IngestError {
    fn from(source: std::io::Error) -> Self {
        IngestError::Io { path: PathBuf::new(), source }
    }
}

/// Empty fields and the literal `NA` are nulls.
pub fn is_null_token(raw: &str) -> bool {
    raw.is_empty() || raw == "NA"
}

const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];

/// Parses an ISO-8601 date or date-time as UTC epoch seconds.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
}

pub fn format_timestamp(t: i64) -> String {
    DateTime::from_timestamp(t, 0).map_or_else(|| t.to_string(), |d| d.format("%Y-%m-%d %H:%M:%S").to_string())
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

struct ColumnBuilder {
    data: ColumnData,
    interned: HashSet<Arc<str>>,
}

impl ColumnBuilder {
    fn new(ctype: ColumnType) -> Self {
        Self { data: ColumnData::empty(ctype), interned: HashSet::new() }
    }

    fn intern(&mut self, raw: &str) -> Arc<str> {
        if let Some(s) = self.interned.get(raw) {
            return s.clone();
        }
        let s: Arc<str> = Arc::from(raw);
        self.interned.insert(s.clone());
        s
    }

    /// Appends a raw cell; returns the expected type on a parse failure.
    fn push(&mut self, raw: &str) -> Result<(), ColumnType> {
        let null = is_null_token(raw);
        match self.data.ctype() {
            ColumnType::Numerical => {
                let v = if null { None } else { Some(parse_number(raw).ok_or(ColumnType::Numerical)?) };
                if let ColumnData::Numerical(col) = &mut self.data {
                    col.push(v);
                }
            }
            ColumnType::Timestamp => {
                let v = if null { None } else { Some(parse_timestamp(raw).ok_or(ColumnType::Timestamp)?) };
                if let ColumnData::Timestamp(col) = &mut self.data {
                    col.push(v);
                }
            }
            ColumnType::Categorical | ColumnType::Text => {
                let v = if null { None } else { Some(self.intern(raw)) };
                match &mut self.data {
                    ColumnData::Categorical(col) | ColumnData::Text(col) => col.push(v),
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }

    /// Like `push` but stores null instead of failing.
    fn push_lenient(&mut self, raw: &str) -> bool {
        if self.push(raw).is_ok() {
            return true;
        }
        self.push("").expect("null always parses");
        false
    }

    fn finish(self) -> ColumnData {
        self.data
    }
}

/// Thresholds used by [`infer_column_type_with`].
#[derive(Debug, Clone, Copy)]
pub struct InferenceOptions {
    /// Minimum share of parseable values for timestamp or numerical.
    pub min_parse_ratio: f64,
    /// Maximum distinct/non-empty ratio for categorical; above it the column is text.
    pub categorical_max_distinct_ratio: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { min_parse_ratio: 0.99, categorical_max_distinct_ratio: 0.5 }
    }
}

/// Timestamp, then numerical, when at least `min_parse_ratio` of the present
/// values parse; otherwise categorical when values repeat enough or none
/// contains whitespace, else text.
pub fn infer_column_type<S: AsRef<str>>(values: &[S]) -> Result<ColumnType, IngestError> {
    infer_column_type_with(values, InferenceOptions::default())
}

pub fn infer_column_type_with<S: AsRef<str>>(values: &[S], opts: InferenceOptions) -> Result<ColumnType, IngestError> {
    let present: Vec<&str> = values.iter().map(AsRef::as_ref).filter(|v| !is_null_token(v)).collect();
    if present.is_empty() {
        return Err(IngestError::EmptyColumn);
    }
    let n = present.len() as f64;
    let share = |pred: &dyn Fn(&str) -> bool| present.iter().filter(|v| pred(v)).count() as f64 / n;
    if share(&|v| parse_timestamp(v).is_some()) >= opts.min_parse_ratio {
        return Ok(ColumnType::Timestamp);
    }
    if share(&|v| parse_number(v).is_some()) >= opts.min_parse_ratio {
        return Ok(ColumnType::Numerical);
    }
    let distinct = present.iter().collect::<HashSet<_>>().len() as f64;
    let single_tokens = present.iter().all(|v| !v.contains(char::is_whitespace));
    if distinct / n <= opts.categorical_max_distinct_ratio || single_tokens {
        Ok(ColumnType::Categorical)
    } else {
        Ok(ColumnType::Text)
    }
}

/// The main table's cutoff column: the one with the `cutoff_time` role, else
/// a timestamp column named `cutoff_time`, else none.
pub fn resolve_cutoff_column(main: &TableSpec) -> Result<Option<String>, IngestError> {
    let declared: Vec<String> = main.columns_with_role(ColumnRole::CutoffTime).map(|c| c.name.clone()).collect();
    match declared.len() {
        0 => {}
        1 => return Ok(declared.into_iter().next()),
        _ => return Err(IngestError::AmbiguousCutoff(declared)),
    }
    let named: Vec<String> = main
        .columns
        .iter()
        .filter(|c| c.name == "cutoff_time" && c.ctype == ColumnType::Timestamp)
        .map(|c| c.name.clone())
        .collect();
    match named.len() {
        0 => {
            warn!("main table `{}` has no cutoff column; temporal filtering disabled", main.name);
            Ok(None)
        }
        1 => Ok(named.into_iter().next()),
        _ => Err(IngestError::AmbiguousCutoff(named)),
    }
}

// Schema file layout.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    main_table: String,
    tables: Vec<TableEntry>,
    #[serde(default)]
    relations: Vec<RelationEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    name: String,
    file: PathBuf,
    #[serde(default)]
    primary_key: Option<String>,
    #[serde(default)]
    columns: Vec<ColumnEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnEntry {
    name: String,
    #[serde(rename = "type", default)]
    ctype: Option<ColumnType>,
    #[serde(default)]
    roles: Vec<ColumnRole>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationEntry {
    left_table: String,
    left_column: String,
    right_table: String,
    right_column: String,
    #[serde(default)]
    key_label: Option<String>,
}

/// Loads the schema file and every CSV it references, then validates.
///
/// Declared columns keep their declared type; columns without a declared
/// type, and CSV columns the schema does not mention, are inferred.
pub fn load_database(schema_path: &Path, data_dir: &Path) -> Result<ValidatedDatabase, IngestError> {
    let text = std::fs::read_to_string(schema_path).map_err(|source| IngestError::Io { path: schema_path.into(), source })?;
    let file: SchemaFile = serde_json::from_str(&text).map_err(|e| IngestError::SchemaFile(e.to_string()))?;

    let loaded: Vec<LoadedTable> = file
        .tables
        .par_iter()
        .map(|entry| load_table(entry, data_dir))
        .collect::<Result<_, _>>()?;

    let relations = file
        .relations
        .into_iter()
        .map(|r| Relation {
            key_label: r.key_label.unwrap_or_else(|| default_key_label(&r.left_column, &r.right_column)),
            left_table: r.left_table,
            left_column: r.left_column,
            right_table: r.right_table,
            right_column: r.right_column,
        })
        .collect();
    let schema = DatabaseSchema {
        main_table: file.main_table,
        tables: loaded.iter().map(|t| t.spec.clone()).collect(),
        relations,
    };
    Ok(validate_schema(schema, loaded)?)
}

/// Writes every table as `<name>.csv` plus a `schema.json` into `dir` and
/// returns the schema path. Loading the result reproduces the database.
pub fn write_database(schema: &DatabaseSchema, tables: &[LoadedTable], dir: &Path) -> Result<PathBuf, IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.into(), source })?;
    let mut entries = Vec::with_capacity(tables.len());
    for t in tables {
        let file = PathBuf::from(format!("{}.csv", t.spec.name));
        let path = dir.join(&file);
        let f = File::create(&path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
        t.write_csv(std::io::BufWriter::new(f))?;
        entries.push(TableEntry {
            name: t.spec.name.clone(),
            file,
            primary_key: t.spec.primary_key.clone(),
            columns: t
                .spec
                .columns
                .iter()
                .map(|c| ColumnEntry { name: c.name.clone(), ctype: Some(c.ctype), roles: c.roles.iter().copied().collect() })
                .collect(),
        });
    }
    let file = SchemaFile {
        main_table: schema.main_table.clone(),
        tables: entries,
        relations: schema
            .relations
            .iter()
            .map(|r| RelationEntry {
                left_table: r.left_table.clone(),
                left_column: r.left_column.clone(),
                right_table: r.right_table.clone(),
                right_column: r.right_column.clone(),
                key_label: Some(r.key_label.clone()),
            })
            .collect(),
    };
    let path = dir.join("schema.json");
    let text = serde_json::to_string_pretty(&file).map_err(|e| IngestError::SchemaFile(e.to_string()))?;
    std::fs::write(&path, text).map_err(|source| IngestError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn load_table(entry: &TableEntry, data_dir: &Path) -> Result<LoadedTable, IngestError> {
    let path = data_dir.join(&entry.file);
    let f = File::open(&path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(f));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let declared: HashMap<&str, &ColumnEntry> = entry.columns.iter().map(|c| (c.name.as_str(), c)).collect();
    for c in &entry.columns {
        if !header.iter().any(|h| h == &c.name) {
            return Err(SchemaError::UnknownColumn { table: entry.name.clone(), column: c.name.clone() }.into());
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for rec in reader.records() {
        let rec = rec?;
        for (j, col) in raw.iter_mut().enumerate() {
            col.push(rec.get(j).unwrap_or("").to_string());
        }
    }

    let mut specs = Vec::with_capacity(header.len());
    let mut columns = Vec::with_capacity(header.len());
    for (j, name) in header.iter().enumerate() {
        let decl = declared.get(name.as_str());
        let (ctype, strict) = match decl.and_then(|d| d.ctype) {
            Some(t) => (t, true),
            None => match infer_column_type(&raw[j]) {
                Ok(t) => (t, false),
                Err(_) => {
                    warn!("{}.{} has no values; treating it as categorical", entry.name, name);
                    (ColumnType::Categorical, false)
                }
            },
        };
        let mut builder = ColumnBuilder::new(ctype);
        let mut coerced = 0usize;
        for (i, v) in raw[j].iter().enumerate() {
            if strict {
                builder.push(v).map_err(|expected| IngestError::Parse {
                    file: path.clone(),
                    line: i + 2,
                    column: name.clone(),
                    value: v.clone(),
                    expected,
                })?;
            } else if !builder.push_lenient(v) {
                coerced += 1;
            }
        }
        if coerced > 0 {
            warn!("{}.{}: {coerced} values did not parse as inferred {ctype} and were set to null", entry.name, name);
        }
        let mut spec = ColumnSpec::new(name.clone(), ctype);
        if let Some(d) = decl {
            spec.roles.extend(d.roles.iter().copied());
        }
        specs.push(spec);
        columns.push(builder.finish());
    }

    let spec = TableSpec { name: entry.name.clone(), source_file: entry.file.clone(), columns: specs, primary_key: entry.primary_key.clone() };
    Ok(LoadedTable::new(spec, columns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_examples() {
        assert_eq!(infer_column_type(&["2017-01-01 10:02:00", "2017-01-01 10:05:00"]).unwrap(), ColumnType::Timestamp);
        assert_eq!(infer_column_type(&["240", "240", "180", "60", "60"]).unwrap(), ColumnType::Numerical);
        assert_eq!(infer_column_type(&["roadwork", "strike", "roadwork"]).unwrap(), ColumnType::Categorical);
        assert_eq!(infer_column_type(&["a b", "c d", "e f"]).unwrap(), ColumnType::Text);
        assert!(matches!(infer_column_type(&["", "NA"]), Err(IngestError::EmptyColumn)));
    }

    #[test]
    fn timestamps_parse_as_utc_seconds() {
        assert_eq!(parse_timestamp("1970-01-01 00:00:00"), Some(0));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86_400));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60));
        assert_eq!(parse_timestamp("2017-01-01 10:02:00"), Some(1_483_264_920));
        assert_eq!(parse_timestamp("240"), None);
        assert_eq!(format_timestamp(1_483_264_920), "2017-01-01 10:02:00");
    }

    #[test]
    fn cutoff_resolution() {
        let with_role = TableSpec::new(
            "main",
            vec![
                ColumnSpec::new("id", ColumnType::Numerical),
                ColumnSpec::new("ArrivalTime", ColumnType::Timestamp).with_role(ColumnRole::CutoffTime),
            ],
        );
        assert_eq!(resolve_cutoff_column(&with_role).unwrap().as_deref(), Some("ArrivalTime"));

        let none = TableSpec::new("main", vec![ColumnSpec::new("id", ColumnType::Numerical)]);
        assert_eq!(resolve_cutoff_column(&none).unwrap(), None);

        let named = TableSpec::new("main", vec![ColumnSpec::new("cutoff_time", ColumnType::Timestamp)]);
        assert_eq!(resolve_cutoff_column(&named).unwrap().as_deref(), Some("cutoff_time"));

        let two = TableSpec::new(
            "main",
            vec![
                ColumnSpec::new("a", ColumnType::Timestamp).with_role(ColumnRole::CutoffTime),
                ColumnSpec::new("b", ColumnType::Timestamp).with_role(ColumnRole::CutoffTime),
            ],
        );
        assert!(matches!(resolve_cutoff_column(&two), Err(IngestError::AmbiguousCutoff(_))));
    }

    #[test]
    fn records_reject_bad_numbers() {
        let spec = TableSpec::new("t", vec![ColumnSpec::new("x", ColumnType::Numerical)]);
        let err = LoadedTable::from_records(spec, &[vec!["1"], vec!["abc"]]).unwrap_err();
        match err {
            IngestError::Parse { line, value, column, .. } => {
                assert_eq!((line, value.as_str(), column.as_str()), (3, "abc", "x"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn categories_are_interned() {
        let spec = TableSpec::new("t", vec![ColumnSpec::new("c", ColumnType::Categorical)]);
        let t = LoadedTable::from_records(spec, &[vec!["x"], vec!["x"], vec!["NA"]]).unwrap();
        let ColumnData::Categorical(v) = &t.columns[0] else { panic!() };
        assert!(Arc::ptr_eq(v[0].as_ref().unwrap(), v[1].as_ref().unwrap()));
        assert_eq!(v[2], None);
    }
}
