use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("Matrix Market parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported Matrix Market format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("column selection is empty")]
    EmptyColumnSet,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("one-sided Jacobi SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("matrix is structurally singular: column {column} cannot be matched (exhausted rows {rows:?})")]
    StructurallySingular { column: usize, rows: Vec<usize> },

    #[error("{kind} {index} is identically zero")]
    ZeroLine { kind: &'static str, index: usize },

    #[error("diagonal block {block} (rows {start}..{end}) is singular")]
    SingularBlock {
        block: usize,
        start: usize,
        end: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot write report: {0}")]
    Report(String),
}
