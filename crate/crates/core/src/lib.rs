//! SelfNet: subword embeddings, self-matching incongruity attention and a
//! BiLSTM encoder for sarcasm detection in code-mixed text.

pub mod artifact;
pub mod attention;
pub mod autodiff;
pub mod classifier;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod subword;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use artifact::{Checkpoint, CheckpointError, EmbeddingArtifact};
pub use attention::{AttentionPool, RawMatrixRecord};
pub use autodiff::{GradientSet, Graph, Var};
pub use classifier::Mode;
pub use data::{Batch, LabeledExample, Lexicon};
pub use encoder::FinalStateMode;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, SelfNet};
pub use subword::{EmbeddingTable, NgramVocabulary, VocabConfig};
pub use eval::{compute_metrics, MetricsReport};
pub use tensor::Tensor;
pub use train::{train, Init, TrainConfig};
