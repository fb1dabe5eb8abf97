use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("line {line}: duplicate triple ({subject}, {relation}, {object})")]
    DuplicateTriple {
        line: usize,
        subject: String,
        relation: String,
        object: String,
    },

    #[error("line {line}: triple has an empty field")]
    EmptyField { line: usize },

    #[error("unknown entity id {0}")]
    UnknownEntity(u32),

    #[error("unknown entity name {0:?}")]
    UnknownEntityName(String),

    #[error("unknown relation id {0}")]
    UnknownRelation(u32),

    #[error("unknown document id {0}")]
    UnknownDocument(u32),

    #[error("entity {0} is not a node of the question subgraph")]
    NotInGraph(u32),

    #[error("question has no linked entities")]
    NoQuestionEntities,

    #[error("question has no tokens")]
    EmptyQuestion,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("infeasible synthetic dataset: {0}")]
    Infeasible(String),

    #[error("final subgraph has no entity nodes")]
    EmptyGraph,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
