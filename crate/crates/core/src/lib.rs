//! Schema-driven synthetic SQL workload generation.
//!
//! The crate covers the whole path from a DDL file to a labeled query corpus:
//! schema ingestion and metadata inference ([`schema`]), foreign-key join
//! graph enumeration ([`subschema`]), mechanical and LLM-backed query
//! generation ([`mechgen`], [`llm`]), validation and deduplication
//! ([`validate`]), structural coverage analysis ([`coverage`]), execution
//! labeling ([`harness`]) and cost-model evaluation ([`evaluation`]).
//! [`pipeline`] wires the stages together.

pub mod coverage;
pub mod evaluation;
pub mod harness;
pub mod llm;
pub mod mechgen;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod schema;
pub mod sql;
pub mod subschema;
pub mod tpch;
pub mod validate;

pub use schema::{
    ColumnDef, ColumnMetadata, ForeignKey, Provenance, SchemaCatalog, SqlType, TableDef,
};
pub use subschema::{JoinGraph, Subschema};
