use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Extract,
    Embed,
    Filter,
    Classify,
    Check,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Extract => "extract",
            Stage::Embed => "embed",
            Stage::Filter => "filter",
            Stage::Classify => "classify",
            Stage::Check => "check",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ragged table `{table_id}`: row {row} has {found} cells, expected {expected}")]
    Grid {
        table_id: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("not a numeric value: {0:?}")]
    NotNumeric(String),
    #[error("mention {0} does not belong to this document")]
    UnknownMention(u32),
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("context and prompt take {needed} tokens, limit is {max_len}")]
    ContextTooLong { needed: usize, max_len: usize },
    #[error("mention {0:?} not found in context tokens")]
    MentionNotLocated(String),
    #[error("layout needs at least one mention")]
    NoMentions,
    #[error("non-isolated set has fewer than two mentions")]
    EmptyNonIsolated,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("relevance score needs non-empty mention lists")]
    EmptyList,
    #[error("exact path search supports at most {max} nodes, got {nodes}")]
    TooLarge { nodes: usize, max: usize },
    #[error("position ({row}, {col}) out of range for table `{table_id}`")]
    PositionOutOfRange {
        table_id: String,
        row: usize,
        col: usize,
    },
    #[error("classifier backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: usize, last: String },
    #[error("gold and prediction document sets differ: {0}")]
    DocMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid matrix file: {0}")]
    MatrixFormat(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
