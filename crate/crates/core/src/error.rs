use thiserror::Error;

/// Errors raised while validating or using an engine configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("weights has {weights} entries but there are {families} families")]
    WeightLength { weights: usize, families: usize },
    #[error("column limits are infeasible: {0}")]
    InfeasibleColumns(String),
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
}

impl ConfigError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Contract violations in the operations on datasets and clusterings.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("a column must have at least one row")]
    EmptyColumn,
    #[error("dataset must have at least one column")]
    NoColumns,
    #[error("column {column} has {found} rows, expected {expected}")]
    Ragged {
        column: usize,
        expected: usize,
        found: usize,
    },
    #[error("metadata has {metadata} entries for {columns} columns")]
    MetadataMismatch { metadata: usize, columns: usize },
    #[error("label {label} at point {point} is outside 0..{k}")]
    LabelOutOfRange {
        point: usize,
        label: usize,
        k: usize,
    },
    #[error("{labels} labels given for {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("silhouette is undefined with fewer than two clusters")]
    SilhouetteUndefined,
    #[error("k must be at least 1")]
    InvalidK,
}
