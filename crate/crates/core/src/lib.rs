//! Automated feature engineering over multi-table relational data.
//!
//! The crate walks the entity graph of a relational database starting from a
//! main table, collects per-entity data along every joining path, types the
//! collected data, turns it into fixed-width numeric features and filters the
//! resulting matrix.
//!
//! The stages map onto modules:
//!
//! - [`schema`]: schema declaration, validation and edge/path classification
//! - [`ingest`]: CSV loading, type inference and cutoff resolution
//! - [`paths`]: BFS depths and depth-first joining-path enumeration
//! - [`collect`]: cached depth-first collection, cutoff filtering, sampling
//! - [`transform`]: per-type feature extraction and plugins
//! - [`selection`]: duplicate, drift and independence filtering
//! - [`pipeline`]: orchestration, feature naming and output files

pub mod collect;
pub mod ingest;
pub mod paths;
pub mod pipeline;
pub mod schema;
pub mod selection;
pub mod transform;

pub use collect::{
    apply_cutoff_filter, estimate_join_size, group_by, identify_collected_type, sample_tuples,
    CollectedColumn, CollectedType, Collector, RelationalTuple, SamplingPolicy,
};
pub use ingest::{infer_column_type, load_database, write_database, resolve_cutoff_column, CellValue, ColumnData, LoadedTable};
pub use paths::{compute_node_depths, enumerate_paths, is_forward_hop, NodeDepths, PathPlan, TraversalMode};
pub use pipeline::{
    assemble_matrix, extract_features, name_feature, run_pipeline, run_pipeline_with, FeatureColumn, FeatureMatrix,
    PipelineConfig, PipelineError,
};
pub use schema::{
    canonicalize_path, classify_edge, classify_path, validate_schema, ColumnRole, ColumnSpec, ColumnType,
    DatabaseSchema, Direction, EdgeKind, Hop, JoiningPath, PathKind, Relation, TableSpec, ValidatedDatabase,
};
pub use selection::{select, SelectionConfig, SelectionReport};
pub use transform::{transform, Extractor, FeatureVector, PluginRegistry, TargetColumn, TransformConfig};
