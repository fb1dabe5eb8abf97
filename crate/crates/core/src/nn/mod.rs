//! Neural components: a minimal reverse-mode engine over dense matrices and
//! the PullNet model built on it.

pub mod mat;
pub mod model;
pub mod params;
pub mod tape;

pub use mat::Mat;
pub use model::{
    classify_answer, classify_pullnodes, encode_graph, encode_question, fact_score, rank, relation_scores,
    EncodedGraph, GraphLayout, Head,
};
pub use params::{ModelConfig, ModelParams, CHECKPOINT_VERSION, UNK, UNK_TOKEN};
pub use tape::{Grads, Tape, Var};
