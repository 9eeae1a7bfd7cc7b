//! A small GPT-style decoder trained by backpropagation or by projecting
//! the error at the vocabulary projector straight into each block.

mod backward;
mod corpus;
mod forward;
mod generate;
mod model;
mod ops;
mod tokenizer;
mod train;

pub use backward::{
    backward_transformer, backward_with_signals, feedback_block_backward, projector_error, FeedbackChannel,
};
pub use corpus::synthetic_corpus;
pub use forward::{forward_transformer, BlockCache, ForwardCache};
pub use generate::generate;
pub use model::{parameter_count, DecoderBlock, TransformerConfig, TransformerModel};
pub use tokenizer::{tokenize, CharTokenizer, Tokenizer, TokenizerManifest, VocabTokenizer};
pub use train::{evaluate_lm, training_windows, window_count, LmTrainConfig, LmTrainer};
