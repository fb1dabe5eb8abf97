//! PullNet: iterative retrieval of question-specific subgraphs over a
//! knowledge base and an entity-linked corpus, with graph-convolutional
//! classifiers deciding which entities to expand and which one answers.
//!
//! The crate is organised bottom-up:
//!
//! * [`kb`] and [`corpus`] are the immutable knowledge sources.
//! * [`graph`] holds the heterogeneous question subgraph.
//! * [`nn`] is a small reverse-mode differentiation engine plus the model.
//! * [`engine`] runs the pull/classify loop, [`supervision`] derives weak
//!   labels from question-answer pairs and [`train`] fits the model.
//! * [`baselines`] implements the one-shot PageRank-Nibble and IDF
//!   retrievers, and [`synth`] generates desk-scale benchmark data.

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod graph;
pub mod ids;
pub mod io;
pub mod pipeline;
pub mod kb;
pub mod nn;
pub mod supervision;
pub mod synth;
pub mod train;

pub use corpus::{tokenize, CorpusIndex, Document, Lexicon, Mention};
pub use engine::{run_inference, AnswerResult, EngineConfig, Mode, Question, Stores};
pub use error::{Error, Result};
pub use graph::{NodeRef, QuestionSubgraph};
pub use ids::{DocId, EntityId, FactId, RelationId};
pub use kb::{Fact, KbIndex, Vocab};
pub use nn::{ModelConfig, ModelParams};
pub use config::RunConfig;
pub use pipeline::Dataset;
pub use train::{evaluate, train, Metrics, TrainConfig};
