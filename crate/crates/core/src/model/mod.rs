//! Word-level transformer tagger with relative-position and candidate
//! indicator attention.

pub mod attention;
mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod gradcheck;
pub mod params;
mod train;

pub use attention::{
    bucket_matrix, disentangled_attention, indicator_sequence, modified_attention, relative_bucket, AttentionOutput,
};
pub use config::{AttentionMode, ModelConfig, TrainConfig, Vocab};
pub use data::{build_examples, candidate_flags, Example, Injection};
pub use encoder::{forward, loss, Batch};
pub use gradcheck::{gradient_check, GradCheckReport, TensorCheck};
pub use params::{EncoderParams, LayerParams, Mat};
pub use train::{train, validation_f1, EncoderModel, TrainReport};
