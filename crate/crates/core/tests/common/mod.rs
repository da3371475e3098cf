#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use onebm::ingest::{write_database, CellValue, LoadedTable};
use onebm::schema::{
    validate_schema, ColumnRole, ColumnSpec, ColumnType, DatabaseSchema, Direction, JoiningPath, Relation, TableSpec,
    ValidatedDatabase,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub schema: DatabaseSchema,
    pub tables: Vec<LoadedTable>,
}

impl Fixture {
    pub fn db(&self) -> ValidatedDatabase {
        validate_schema(self.schema.clone(), self.tables.clone()).expect("valid fixture")
    }

    pub fn write(&self, dir: &Path) -> PathBuf {
        write_database(&self.schema, &self.tables, dir).expect("fixture written")
    }
}

pub fn table(spec: TableSpec, rows: &[&[&str]]) -> LoadedTable {
    let records: Vec<Vec<&str>> = rows.iter().map(|r| r.to_vec()).collect();
    LoadedTable::from_records(spec, &records).expect("fixture rows parse")
}

fn col(name: &str, t: ColumnType) -> ColumnSpec {
    ColumnSpec::new(name, t)
}

/// Four-table train database: messages about trains arriving at stations,
/// their delay history, train info and station events.
///
/// Train IRE01 arriving in Dublin at 10:02 has five pre-cutoff delays
/// {240, 240, 180, 60, 60} and one later delay. Four of those delays were at
/// stations with events, giving the relational tree of the depth-two path
/// through delay to event.
pub fn toy() -> Fixture {
    use ColumnType::*;
    let main = table(
        TableSpec::new(
            "main",
            vec![
                col("message_id", Numerical).with_role(ColumnRole::PrimaryKey),
                col("train_id", Categorical),
                col("station_id", Categorical),
                col("arrival_time", Timestamp).with_role(ColumnRole::CutoffTime),
                col("late", Categorical).with_role(ColumnRole::Target),
            ],
        ),
        &[
            &["1", "IRE01", "Dublin", "2017-01-01 10:02:00", "yes"],
            &["2", "IRE02", "Cork", "2017-01-01 11:00:00", "no"],
            &["3", "IRE03", "Dublin", "2017-01-01 12:00:00", ""],
        ],
    );
    let delay = table(
        TableSpec::new(
            "delay",
            vec![
                col("train_id", Categorical),
                col("station_id", Categorical),
                col("time", Timestamp).with_role(ColumnRole::EventTime),
                col("delay", Numerical),
            ],
        ),
        &[
            &["IRE01", "S1", "2016-12-31 08:00:00", "240"],
            &["IRE01", "S2", "2016-12-31 09:00:00", "240"],
            &["IRE01", "S1", "2016-12-31 10:00:00", "180"],
            &["IRE01", "S2", "2016-12-31 11:00:00", "60"],
            &["IRE01", "S3", "2016-12-31 12:00:00", "60"],
            &["IRE01", "S1", "2017-01-01 11:00:00", "999"],
            &["IRE02", "S2", "2016-12-31 09:30:00", "30"],
            &["IRE02", "S3", "2016-12-31 10:30:00", "0"],
        ],
    );
    let info = table(
        TableSpec::new(
            "info",
            vec![
                col("train_id", Categorical).with_role(ColumnRole::PrimaryKey),
                col("train_type", Categorical),
                col("capacity", Numerical),
            ],
        ),
        &[&["IRE01", "intercity", "300"], &["IRE02", "regional", "120"], &["IRE03", "intercity", "280"]],
    );
    let event = table(
        TableSpec::new("event", vec![col("station_id", Categorical), col("event", Categorical)]),
        &[
            &["S1", "roadwork"],
            &["S1", "roadwork"],
            &["S1", "strike"],
            &["S2", "roadwork"],
            &["S2", "strike"],
            &["Dublin", "strike"],
            &["Cork", "roadwork"],
        ],
    );
    let schema = DatabaseSchema {
        main_table: "main".into(),
        tables: vec![main.spec.clone(), delay.spec.clone(), info.spec.clone(), event.spec.clone()],
        relations: vec![
            Relation::new("main", "train_id", "delay", "train_id"),
            Relation::new("main", "train_id", "info", "train_id"),
            Relation::new("main", "station_id", "event", "station_id"),
            Relation::new("delay", "station_id", "event", "station_id"),
        ],
    };
    Fixture { schema, tables: vec![main, delay, info, event] }
}

/// Options for [`random_fixture`].
#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    pub max_tables: usize,
    pub max_rows: usize,
    pub extra_relations: usize,
    pub with_time: bool,
    /// Adds a copy `C` of the key domain of some keyed table `B`, related
    /// `B.id = C.id`, and mirrors every relation into `B.id` onto `C.id`. Paths
    /// through `B` into `C` are then redundant.
    pub alias: bool,
}

impl Default for RandomShape {
    fn default() -> Self {
        Self { max_tables: 5, max_rows: 200, extra_relations: 1, with_time: true, alias: false }
    }
}

/// A random connected database. Every table has a unique `id` key whose
/// domain is `0..rows`, foreign keys `fk{t}` drawn from table `t`'s domain,
/// a shared many-to-many `grp` key, a numeric and a categorical attribute,
/// and, optionally, event times and main-table cutoffs.
pub fn random_fixture(seed: u64, shape: RandomShape) -> Fixture {
    use ColumnType::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tables = rng.random_range(2..=shape.max_tables);
    let rows: Vec<usize> = (0..n_tables).map(|_| rng.random_range(1..=shape.max_rows)).collect();
    let has_pk: Vec<bool> = (0..n_tables).map(|t| t == 0 || rng.random_bool(0.6)).collect();

    // Edges: each table attaches to an earlier one, plus extras that may close cycles.
    let mut edges: Vec<(usize, usize)> = (1..n_tables).map(|t| (rng.random_range(0..t), t)).collect();
    for _ in 0..shape.extra_relations {
        let a = rng.random_range(0..n_tables);
        let b = rng.random_range(0..n_tables);
        if a != b && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
            edges.push((a, b));
        }
    }

    // For an edge (a, b): if a has a key, b references it through fk{a};
    // else if b has a key, a references b; otherwise both join on grp.
    let mut fks: Vec<Vec<usize>> = vec![Vec::new(); n_tables];
    let mut relations = Vec::new();
    let mut needs_grp = vec![false; n_tables];
    for &(a, b) in &edges {
        let name = |t: usize| format!("t{t}");
        if has_pk[a] {
            if !fks[b].contains(&a) {
                fks[b].push(a);
            }
            relations.push(Relation::new(&name(a), "id", &name(b), &format!("fk{a}")));
        } else if has_pk[b] {
            if !fks[a].contains(&b) {
                fks[a].push(b);
            }
            relations.push(Relation::new(&name(a), &format!("fk{b}"), &name(b), "id"));
        } else {
            needs_grp[a] = true;
            needs_grp[b] = true;
            relations.push(Relation::new(&name(a), "grp", &name(b), "grp"));
        }
    }

    let epoch = 1_000_000i64;
    let mut tables = Vec::new();
    for t in 0..n_tables {
        let mut cols = vec![];
        if has_pk[t] {
            cols.push(col("id", Numerical).with_role(ColumnRole::PrimaryKey));
        }
        for &f in &fks[t] {
            cols.push(col(&format!("fk{f}"), Numerical));
        }
        if needs_grp[t] {
            cols.push(col("grp", Numerical));
        }
        cols.push(col(&format!("v{t}"), Numerical));
        cols.push(col(&format!("c{t}"), Categorical));
        let timed = shape.with_time && (t == 0 || rng.random_bool(0.5));
        if timed {
            let role = if t == 0 { ColumnRole::CutoffTime } else { ColumnRole::EventTime };
            cols.push(col("ts", Timestamp).with_role(role));
        }
        if t == 0 {
            cols.push(col("y", Numerical).with_role(ColumnRole::Target));
        }
        let spec = TableSpec::new(format!("t{t}"), cols);
        let mut records = Vec::with_capacity(rows[t]);
        for r in 0..rows[t] {
            let mut rec = Vec::new();
            if has_pk[t] {
                rec.push(r.to_string());
            }
            for &f in &fks[t] {
                // Occasional dangling or null references.
                let v = match rng.random_range(0..20) {
                    0 => String::new(),
                    _ => rng.random_range(0..rows[f]).to_string(),
                };
                rec.push(v);
            }
            if needs_grp[t] {
                rec.push(rng.random_range(0..6).to_string());
            }
            rec.push(if rng.random_bool(0.1) { String::new() } else { format!("{}", rng.random_range(-50..50)) });
            rec.push(format!("k{}", rng.random_range(0..4)));
            if timed {
                let ts = epoch + rng.random_range(0..1000);
                rec.push(onebm::ingest::format_timestamp(ts));
            }
            if t == 0 {
                rec.push(if rng.random_bool(0.2) { String::new() } else { rng.random_range(0..10).to_string() });
            }
            records.push(rec);
        }
        tables.push(LoadedTable::from_records(spec, &records).expect("generated rows parse"));
    }
    let keyed: Vec<usize> = (1..n_tables).filter(|&t| has_pk[t]).collect();
    if shape.alias && !keyed.is_empty() {
        let b = keyed[rng.random_range(0..keyed.len())];
        let name = format!("t{n_tables}");
        let spec = TableSpec::new(
            name.clone(),
            vec![col("id", Numerical).with_role(ColumnRole::PrimaryKey), col(&format!("w{n_tables}"), Numerical)],
        );
        let records: Vec<Vec<String>> =
            (0..rows[b]).map(|r| vec![r.to_string(), rng.random_range(0..9).to_string()]).collect();
        tables.push(LoadedTable::from_records(spec, &records).expect("generated rows parse"));
        let into_b: Vec<Relation> = relations
            .iter()
            .filter_map(|r| {
                let bt = format!("t{b}");
                if r.right_table == bt && r.right_column == "id" {
                    Some(Relation::new(&r.left_table, &r.left_column, &name, "id"))
                } else if r.left_table == bt && r.left_column == "id" {
                    Some(Relation::new(&r.right_table, &r.right_column, &name, "id"))
                } else {
                    None
                }
            })
            .collect();
        relations.push(Relation::new(&format!("t{b}"), "id", &name, "id"));
        relations.extend(into_b);
    }
    let schema = DatabaseSchema {
        main_table: "t0".into(),
        tables: tables.iter().map(|t| t.spec.clone()).collect(),
        relations,
    };
    Fixture { schema, tables }
}

/// One leaf of an oracle join: entity row, intermediate rows, value, time.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTuple {
    pub entity: u32,
    pub group_ids: Vec<u32>,
    pub value: CellValue,
    pub event_time: Option<i64>,
}

fn column_index(t: &LoadedTable, name: &str) -> usize {
    t.spec.columns.iter().position(|c| c.name == name).unwrap()
}

/// Nested-loop evaluation of a joining path with the cutoff rule applied:
/// scans every row of every table, matching non-null equal key cells.
pub fn nested_loop_join(db: &ValidatedDatabase, path: &JoiningPath) -> Vec<OracleTuple> {
    let schema = db.schema();
    let tables = db.tables();
    let by_name: HashMap<&str, usize> = tables.iter().enumerate().map(|(i, t)| (t.spec.name.as_str(), i)).collect();
    let main = by_name[schema.main_table.as_str()];

    // (from table, from column, to table, to column) per hop
    let steps: Vec<(usize, usize, usize, usize)> = path
        .hops
        .iter()
        .map(|h| {
            let r = &schema.relations[h.relation];
            let (ft, fc, tt, tc) = match h.direction {
                Direction::FromLeft => (&r.left_table, &r.left_column, &r.right_table, &r.right_column),
                Direction::FromRight => (&r.right_table, &r.right_column, &r.left_table, &r.left_column),
            };
            let (f, t) = (by_name[ft.as_str()], by_name[tt.as_str()]);
            (f, column_index(&tables[f], fc), t, column_index(&tables[t], tc))
        })
        .collect();
    let path_tables: Vec<usize> = std::iter::once(main).chain(steps.iter().map(|s| s.2)).collect();
    let terminal = *path_tables.last().unwrap();
    let value_col = column_index(&tables[terminal], &path.collected_column);

    let cutoff_col = tables[main].spec.columns.iter().position(|c| c.roles.contains(&ColumnRole::CutoffTime));
    let time_of = |level: usize, row: usize| -> Option<i64> {
        let t = &tables[path_tables[level]];
        let c = t.spec.columns.iter().position(|c| c.roles.contains(&ColumnRole::EventTime))?;
        match t.columns[c].get(row) {
            CellValue::Timestamp(x) => Some(x),
            _ => None,
        }
    };
    let time_level = (1..path_tables.len()).rev().find(|&l| {
        tables[path_tables[l]].spec.columns.iter().any(|c| c.roles.contains(&ColumnRole::EventTime))
    });

    let mut out = Vec::new();
    for e in 0..tables[main].row_count {
        let cutoff = cutoff_col.and_then(|c| match tables[main].columns[c].get(e) {
            CellValue::Timestamp(x) => Some(x),
            _ => None,
        });
        let mut chains: Vec<Vec<usize>> = vec![vec![e]];
        for &(f, fc, t, tc) in &steps {
            let mut next = Vec::new();
            for chain in &chains {
                let left = tables[f].columns[fc].get(*chain.last().unwrap());
                if left.is_null() {
                    continue;
                }
                for r in 0..tables[t].row_count {
                    if tables[t].columns[tc].get(r) == left {
                        let mut c = chain.clone();
                        c.push(r);
                        next.push(c);
                    }
                }
            }
            chains = next;
        }
        for chain in chains {
            let event_time = time_level.and_then(|l| time_of(l, chain[l]));
            if let (Some(t), Some(c)) = (event_time, cutoff) {
                if t >= c {
                    continue;
                }
            }
            let k = chain.len() - 1;
            out.push(OracleTuple {
                entity: e as u32,
                group_ids: if k > 1 { chain[1..k].iter().map(|&r| r as u32).collect() } else { vec![] },
                value: tables[terminal].columns[value_col].get(chain[k]),
                event_time,
            });
        }
    }
    out
}

/// Order-free comparison key for tuples.
pub fn tuple_key(entity: u32, groups: &[u32], value: &CellValue, time: Option<i64>) -> String {
    format!("{entity}|{groups:?}|{value:?}|{time:?}")
}

/// Pearson correlation over pairs where both sides are present.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> f64 {
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
