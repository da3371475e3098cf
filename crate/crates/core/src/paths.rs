//! Joining-path enumeration over the entity graph.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::schema::{canonicalize_path, ColumnRole, Direction, Hop, JoiningPath, ValidatedDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraversalMode {
    /// Only hops from a shallower to a strictly deeper table.
    ForwardOnly,
    Full,
}

impl fmt::Display for TraversalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraversalMode::ForwardOnly => "forward-only",
            TraversalMode::Full => "full",
        })
    }
}

impl FromStr for TraversalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward-only" | "forward_only" => Ok(TraversalMode::ForwardOnly),
            "full" => Ok(TraversalMode::Full),
            other => Err(format!("unknown traversal mode `{other}`")),
        }
    }
}

/// BFS hop distance of every reachable table from the main table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDepths {
    depths: Vec<Option<usize>>,
    names: Vec<String>,
}

impl NodeDepths {
    pub fn depth(&self, table: usize) -> Option<usize> {
        self.depths[table]
    }

    pub fn depth_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).and_then(|i| self.depths[i])
    }

    /// Reachable tables and their depths, keyed by name.
    pub fn as_map(&self) -> HashMap<String, usize> {
        self.names.iter().zip(&self.depths).filter_map(|(n, d)| d.map(|d| (n.clone(), d))).collect()
    }

    pub fn unreachable(&self) -> Vec<&str> {
        self.names.iter().zip(&self.depths).filter(|(_, d)| d.is_none()).map(|(n, _)| n.as_str()).collect()
    }
}

/// Hops leaving `table`, in relation declaration order. A relation is
/// traversable from either end.
pub(crate) fn outgoing_hops(db: &ValidatedDatabase, table: usize) -> Vec<Hop> {
    let mut out = Vec::new();
    for relation in 0..db.relations().len() {
        for direction in [Direction::FromLeft, Direction::FromRight] {
            let hop = Hop { relation, direction };
            if db.hop_ends(hop).from_table == table {
                out.push(hop);
            }
        }
    }
    out
}

pub fn compute_node_depths(db: &ValidatedDatabase) -> NodeDepths {
    let n = db.tables().len();
    let mut depths = vec![None; n];
    depths[db.main_index()] = Some(0);
    let mut queue = VecDeque::from([db.main_index()]);
    while let Some(t) = queue.pop_front() {
        let d = depths[t].expect("queued tables have a depth");
        for hop in outgoing_hops(db, t) {
            let next = db.hop_ends(hop).to_table;
            if depths[next].is_none() {
                depths[next] = Some(d + 1);
                queue.push_back(next);
            }
        }
    }
    let names: Vec<String> = db.tables().iter().map(|t| t.spec.name.clone()).collect();
    for (name, d) in names.iter().zip(&depths) {
        if d.is_none() {
            warn!("table `{name}` is unreachable from the main table and is excluded");
        }
    }
    NodeDepths { depths, names }
}

pub fn is_forward_hop(from_depth: usize, to_depth: usize) -> bool {
    from_depth < to_depth
}

/// Ordered joining paths produced by [`enumerate_paths`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPlan {
    pub paths: Vec<JoiningPath>,
    pub mode: TraversalMode,
    pub max_depth: usize,
}

impl PathPlan {
    /// Renders the plan one path per line as
    /// `main-[key]->table-[key]->table :: column :: mode`.
    pub fn listing(&self, db: &ValidatedDatabase) -> String {
        let mut out = String::new();
        for p in &self.paths {
            writeln!(out, "{} :: {} :: {}", render_route(p, db), p.collected_column, self.mode).unwrap();
        }
        out
    }
}

/// `main-[key]->table-[key]->table` for a path's hops.
pub fn render_route(path: &JoiningPath, db: &ValidatedDatabase) -> String {
    let mut s = db.main().spec.name.clone();
    for hop in &path.hops {
        let ends = db.hop_ends(*hop);
        let label = &db.relations()[hop.relation].key_label;
        write!(s, "-[{label}]->{}", db.table(ends.to_table).spec.name).unwrap();
    }
    s
}

/// Columns of the terminal table that a path may collect.
pub(crate) fn collectable_columns(db: &ValidatedDatabase, table: usize, via: Option<Hop>) -> Vec<String> {
    let spec = &db.table(table).spec;
    let join_col = via.map(|h| db.hop_ends(h).to_column);
    spec.columns
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            if Some(*i) == join_col {
                return false;
            }
            if table == db.main_index() {
                let excluded = [ColumnRole::Target, ColumnRole::CutoffTime];
                if excluded.iter().any(|r| c.has_role(*r)) || spec.is_primary_key(&c.name) {
                    return false;
                }
            }
            true
        })
        .map(|(_, c)| c.name.clone())
        .collect()
}

/// Enumerates joining paths depth-first from the main table.
///
/// The main table's own columns come first as hop-less paths. Children are
/// visited in relation declaration order and columns in declaration order.
/// Paths that canonicalize to the same route and column are collapsed onto a
/// single representative, preferring one that is already canonical.
pub fn enumerate_paths(db: &ValidatedDatabase, max_depth: usize, mode: TraversalMode) -> PathPlan {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    let raw = enumerate_raw(db, max_depth, mode);

    let canon: Vec<JoiningPath> = raw.iter().map(|p| canonicalize_path(p, db)).collect();
    let mut chosen: HashMap<&JoiningPath, usize> = HashMap::new();
    for (i, (p, c)) in raw.iter().zip(&canon).enumerate() {
        match chosen.get(c) {
            None => {
                chosen.insert(c, i);
            }
            Some(&j) => {
                if p == c && raw[j] != canon[j] {
                    chosen.insert(c, i);
                }
            }
        }
    }
    let keep: HashSet<usize> = chosen.into_values().collect();
    let paths = raw.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, p)| p).collect();
    PathPlan { paths, mode, max_depth }
}

/// Every simple path within the depth bound, before redundancy removal.
pub fn enumerate_raw(db: &ValidatedDatabase, max_depth: usize, mode: TraversalMode) -> Vec<JoiningPath> {
    let depths = compute_node_depths(db);
    let main = db.main_index();
    let mut out: Vec<JoiningPath> =
        collectable_columns(db, main, None).into_iter().map(|c| JoiningPath::new(Vec::new(), c)).collect();
    let mut visited = vec![false; db.tables().len()];
    visited[main] = true;
    let mut hops = Vec::new();
    dfs(db, &depths, mode, max_depth, main, &mut visited, &mut hops, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    db: &ValidatedDatabase,
    depths: &NodeDepths,
    mode: TraversalMode,
    max_depth: usize,
    table: usize,
    visited: &mut [bool],
    hops: &mut Vec<Hop>,
    out: &mut Vec<JoiningPath>,
) {
    if hops.len() >= max_depth {
        return;
    }
    for hop in outgoing_hops(db, table) {
        let next = db.hop_ends(hop).to_table;
        if visited[next] {
            continue;
        }
        if mode == TraversalMode::ForwardOnly {
            let (Some(d1), Some(d2)) = (depths.depth(table), depths.depth(next)) else { continue };
            if !is_forward_hop(d1, d2) {
                continue;
            }
        }
        hops.push(hop);
        visited[next] = true;
        for column in collectable_columns(db, next, Some(hop)) {
            out.push(JoiningPath::new(hops.clone(), column));
        }
        dfs(db, depths, mode, max_depth, next, visited, hops, out);
        visited[next] = false;
        hops.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_hops() {
        assert!(is_forward_hop(0, 1));
        assert!(!is_forward_hop(1, 1));
        assert!(!is_forward_hop(2, 1));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("forward-only".parse::<TraversalMode>().unwrap(), TraversalMode::ForwardOnly);
        assert_eq!("full".parse::<TraversalMode>().unwrap(), TraversalMode::Full);
        assert!("sideways".parse::<TraversalMode>().is_err());
    }
}
