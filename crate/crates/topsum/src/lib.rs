//! Topic-aware convolutional sequence-to-sequence summarization.
//!
//! The crate is a desk-scale, from-scratch implementation of the full
//! pipeline: LDA topic discovery over the source corpus, a convolutional
//! encoder/decoder with joint word/topic attention and topic-biased
//! generation, maximum-likelihood training followed by self-critical
//! policy fine-tuning, and ROUGE evaluation.
//!
//! Everything runs on a small hand-rolled `f64` tensor core with
//! reverse-mode automatic differentiation; there is no BLAS and no
//! external ML framework. The pieces compose bottom-up:
//!
//! * [`tensor`]: dense tensors, the autograd tape, gradient checking.
//! * [`rouge`]: ROUGE-1/2/L with multi-reference aggregation.
//! * [`data`]: corpus loading, vocabulary, batching, the planted toy corpus.
//! * [`lda`]: collapsed Gibbs sampling, topic vocabulary, topic embeddings.
//! * [`model`]: the convolutional seq2seq model itself plus checkpoints.
//! * [`decode`]: greedy, sampling, and beam decoders.
//! * [`train`]: ML training, self-critical fine-tuning, the optimizer.

pub mod data;
pub mod decode;
pub mod lda;
pub mod model;
pub mod rouge;
pub mod tensor;
pub mod train;

pub use tensor::Tensor;
