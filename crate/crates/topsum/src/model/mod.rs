//! The topic-aware convolutional sequence-to-sequence model.
//!
//! Two encoder stacks read the source: a word stack over word embeddings and
//! a topic stack over topic embeddings (topic-vocabulary tokens draw their
//! vector from the topic embedding table, everything else falls back to the
//! word table; both add position embeddings). Decoding mirrors this with a
//! word decoder stack and a topic decoder stack.
//!
//! Every stack is a pile of residual blocks: a width-`k` convolution mapping
//! `k*d -> 2d` followed by a gated linear unit back to `d`, plus the block
//! input. Encoder windows are centered; decoder windows are causal, so a
//! prefix position only ever sees itself and earlier positions.
//!
//! Each word decoder layer attends over the word encoder states: its state
//! is projected, the previous-token embedding `q_i` is added, dot products
//! with encoder states are softmaxed, and the context (encoder state plus
//! source embedding) is added to the layer output before the next layer.
//! Topic decoder layers use joint attention: scores are the sum of dot
//! products against word and topic encoder states, the context mixes topic
//! states, and both this context and the word-level context of the same
//! layer feed the next topic layer.
//!
//! Generation is biased: both top states run through one shared output
//! projection, and for words in the topic vocabulary the two exponentiated
//! scores add before normalization.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, LoadedCheckpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocabulary;
use crate::lda::{TopicEmbedding, TopicVocabulary};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {reason}")]
    Config { reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    BadToken { id: u32, vocab: usize },
    #[error("source of {len} tokens exceeds the maximum {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("decoder prefix of {len} tokens exceeds the maximum {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("{what} must not be empty")]
    EmptySequence { what: &'static str },
    #[error("topic embedding is {rows}x{cols}, model wants {want_rows}x{want_cols}")]
    TopicShape {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
}

/// Architecture hyperparameters. `dim`, `kernel`, and the layer counts
/// default to the full-scale setup (256 wide, width-3 kernels, 6 layers per
/// stack); tests shrink them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub kernel: usize,
    pub word_layers: usize,
    pub topic_layers: usize,
    /// Total vocabulary size including the four reserved ids; also the
    /// output distribution width.
    pub vocab_size: usize,
    /// Rows of the topic embedding table (size of the topic vocabulary).
    pub topic_words: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Full-scale defaults around a given vocabulary.
    pub fn with_vocab(vocab_size: usize, topic_words: usize) -> ModelConfig {
        ModelConfig {
            dim: 256,
            kernel: 3,
            word_layers: 6,
            topic_layers: 6,
            vocab_size,
            topic_words,
            max_source_len: 128,
            max_target_len: 64,
            init_seed: 0,
        }
    }

    /// Highest decoder prefix length the position table supports: BOS plus
    /// `max_target_len` tokens plus the closing EOS.
    pub fn decoder_positions(&self) -> usize {
        self.max_target_len + 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::Config { reason });
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return fail(format!("kernel width must be odd, got {}", self.kernel));
        }
        if self.word_layers == 0 || self.topic_layers == 0 {
            return fail("both stacks need at least one layer".into());
        }
        if self.vocab_size < 5 {
            return fail(format!(
                "vocabulary needs the 4 reserved ids plus content, got {}",
                self.vocab_size
            ));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return fail("sequence length limits must be positive".into());
        }
        Ok(())
    }
}

/// Maps vocabulary ids into topic embedding rows. Built once from the
/// vocabulary and topic vocabulary; reserved ids never map.
#[derive(Debug, Clone)]
pub struct TopicLookup {
    rows: Vec<Option<usize>>,
}

impl TopicLookup {
    pub fn build(vocab: &Vocabulary, tv: &TopicVocabulary) -> TopicLookup {
        let mut rows = vec![None; vocab.len()];
        for (row, word) in tv.words.iter().enumerate() {
            if let Some(id) = vocab.id(word) {
                if !Vocabulary::is_special(id) {
                    rows[id as usize] = Some(row);
                }
            }
        }
        TopicLookup { rows }
    }

    /// A lookup that marks nothing; turns the topic machinery into a no-op.
    pub fn empty(vocab_size: usize) -> TopicLookup {
        TopicLookup {
            rows: vec![None; vocab_size],
        }
    }

    /// Direct construction from an id-indexed row table, for synthetic
    /// setups that skip the vocabulary machinery.
    pub fn from_rows(rows: Vec<Option<usize>>) -> TopicLookup {
        TopicLookup { rows }
    }

    pub fn row(&self, id: u32) -> Option<usize> {
        self.rows.get(id as usize).copied().flatten()
    }

    pub fn is_topic(&self, id: u32) -> bool {
        self.row(id).is_some()
    }

    /// Per-id membership mask sized to the vocabulary, for biased generation.
    pub fn vocab_mask(&self) -> Vec<bool> {
        self.rows.iter().map(Option::is_some).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }
}

/// One convolution block: `w` is `[2d, k*d]`, `b` is `[2d]`.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub w: Tensor,
    pub b: Tensor,
}

/// A decoder layer: convolution plus the attention state projection
/// (`wd: [d,d]`, `bd: [d]`).
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub conv: ConvBlock,
    pub wd: Tensor,
    pub bd: Tensor,
}

/// All trainable parameters. Tensors are shared handles; the optimizer
/// mutates them in place between tapes.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub word_embed: Tensor,
    pub topic_embed: Tensor,
    pub enc_pos: Tensor,
    pub dec_pos: Tensor,
    pub word_encoder: Vec<ConvBlock>,
    pub topic_encoder: Vec<ConvBlock>,
    pub word_decoder: Vec<DecoderBlock>,
    pub topic_decoder: Vec<DecoderBlock>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Weight matrices draw from `N(0, (0.1/sqrt(fan_in))^2)` where `fan_in`
    /// is the input width. Embedding and position tables are one-hot lookups
    /// (`fan_in` 1), so their entries draw from `N(0, 0.1^2)`. Biases start
    /// at zero.
    fn weight(&mut self, rows: usize, cols: usize, fan_in: usize) -> Tensor {
        let std = 0.1 / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let values: Vec<f64> = (0..rows * cols)
            .map(|_| normal.sample(&mut self.rng))
            .collect();
        Tensor::param(&[rows, cols], values).expect("sized to match")
    }

    fn table(&mut self, rows: usize, cols: usize) -> Tensor {
        self.weight(rows, cols, 1)
    }

    fn bias(&mut self, n: usize) -> Tensor {
        Tensor::param(&[n], vec![0.0; n]).expect("sized to match")
    }

    fn conv_block(&mut self, d: usize, k: usize) -> ConvBlock {
        ConvBlock {
            w: self.weight(2 * d, k * d, k * d),
            b: self.bias(2 * d),
        }
    }

    fn decoder_block(&mut self, d: usize, k: usize) -> DecoderBlock {
        DecoderBlock {
            conv: self.conv_block(d, k),
            wd: self.weight(d, d, d),
            bd: self.bias(d),
        }
    }
}

impl ModelParams {
    /// Fresh parameters drawn from the config's `init_seed`. The topic
    /// embedding table starts random; load the LDA-derived matrix over it
    /// with [`ModelParams::load_topic_embedding`].
    pub fn init(config: &ModelConfig) -> Result<ModelParams, ModelError> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let d = config.dim;
        let k = config.kernel;
        Ok(ModelParams {
            word_embed: init.table(config.vocab_size, d),
            topic_embed: init.table(config.topic_words.max(1), d),
            enc_pos: init.table(config.max_source_len, d),
            dec_pos: init.table(config.decoder_positions(), d),
            word_encoder: (0..config.word_layers).map(|_| init.conv_block(d, k)).collect(),
            topic_encoder: (0..config.topic_layers).map(|_| init.conv_block(d, k)).collect(),
            word_decoder: (0..config.word_layers).map(|_| init.decoder_block(d, k)).collect(),
            topic_decoder: (0..config.topic_layers).map(|_| init.decoder_block(d, k)).collect(),
            out_w: init.weight(config.vocab_size, d, d),
            out_b: init.bias(config.vocab_size),
            config: config.clone(),
        })
    }

    /// Overwrites the topic embedding table with the LDA-derived matrix.
    /// Shapes must match the config exactly.
    pub fn load_topic_embedding(&mut self, emb: &TopicEmbedding) -> Result<(), ModelError> {
        let want_rows = self.config.topic_words.max(1);
        if emb.rows != self.config.topic_words || emb.cols != self.config.dim {
            return Err(ModelError::TopicShape {
                rows: emb.rows,
                cols: emb.cols,
                want_rows: self.config.topic_words,
                want_cols: self.config.dim,
            });
        }
        if emb.rows == want_rows {
            self.topic_embed.update_values(|v| v.copy_from_slice(&emb.values));
        }
        Ok(())
    }

    /// Stable `(name, tensor)` enumeration for the optimizer, checkpoints,
    /// and gradient checks.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = vec![
            ("word_embed".into(), self.word_embed.clone()),
            ("topic_embed".into(), self.topic_embed.clone()),
            ("enc_pos".into(), self.enc_pos.clone()),
            ("dec_pos".into(), self.dec_pos.clone()),
        ];
        for (stack, blocks) in [("word_encoder", &self.word_encoder), ("topic_encoder", &self.topic_encoder)] {
            for (l, b) in blocks.iter().enumerate() {
                out.push((format!("{stack}.{l}.w"), b.w.clone()));
                out.push((format!("{stack}.{l}.b"), b.b.clone()));
            }
        }
        for (stack, blocks) in [("word_decoder", &self.word_decoder), ("topic_decoder", &self.topic_decoder)] {
            for (l, b) in blocks.iter().enumerate() {
                out.push((format!("{stack}.{l}.conv.w"), b.conv.w.clone()));
                out.push((format!("{stack}.{l}.conv.b"), b.conv.b.clone()));
                out.push((format!("{stack}.{l}.attn.w"), b.wd.clone()));
                out.push((format!("{stack}.{l}.attn.b"), b.bd.clone()));
            }
        }
        out.push(("out_w".into(), self.out_w.clone()));
        out.push(("out_b".into(), self.out_b.clone()));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(ModelError::BadToken {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Word-side and topic-side input embeddings for source tokens:
    /// `e_i = word[x_i] + pos[i]` and `r_i = table(x_i) + pos[i]` where
    /// `table` is the topic embedding for topic-vocabulary tokens and the
    /// word embedding otherwise.
    pub fn embed_source(
        &self,
        src: &[u32],
        topics: &TopicLookup,
    ) -> Result<(Tensor, Tensor), ModelError> {
        if src.is_empty() {
            return Err(ModelError::EmptySequence { what: "source" });
        }
        if src.len() > self.config.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: src.len(),
                max: self.config.max_source_len,
            });
        }
        self.check_ids(src)?;
        let pos: Vec<usize> = (0..src.len()).collect();
        let p = Tensor::gather(&self.enc_pos, &pos)?;
        let e = Tensor::gather(&self.word_embed, &src.iter().map(|&i| i as usize).collect::<Vec<_>>())?
            .add(&p)?;
        let r = self.mixed_embed(src, topics)?.add(&p)?;
        Ok((e, r))
    }

    /// Rows from the topic table where the token is topical, from the word
    /// table otherwise. Assembled row by row so the tape records gathers on
    /// both tables only when used.
    fn mixed_embed(&self, ids: &[u32], topics: &TopicLookup) -> Result<Tensor, ModelError> {
        // gather both views and blend with a 0/1 mask; masked rows carry no
        // gradient because the multiplier is exactly zero
        let word_rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let topic_rows: Vec<usize> = ids
            .iter()
            .map(|&i| topics.row(i).unwrap_or(0))
            .collect();
        let from_word = Tensor::gather(&self.word_embed, &word_rows)?;
        let from_topic = Tensor::gather(&self.topic_embed, &topic_rows)?;
        let d = self.config.dim;
        let mut wmask = vec![0.0; ids.len() * d];
        let mut tmask = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let is_topic = topics.is_topic(id);
            for j in 0..d {
                if is_topic {
                    tmask[i * d + j] = 1.0;
                } else {
                    wmask[i * d + j] = 1.0;
                }
            }
        }
        let wm = Tensor::new(&[ids.len(), d], wmask)?;
        let tm = Tensor::new(&[ids.len(), d], tmask)?;
        Ok(from_word.mul(&wm)?.add(&from_topic.mul(&tm)?)?)
    }

    fn run_encoder_stack(
        &self,
        blocks: &[ConvBlock],
        input: &Tensor,
        valid: usize,
    ) -> Result<Tensor, ModelError> {
        let m = input.shape()[0];
        let mask = row_mask(m, self.config.dim, valid);
        let mut x = masked(input, &mask)?;
        for block in blocks {
            let windows = x.window_concat(self.config.kernel, false)?;
            let conv = windows.matmul_nt(&block.w)?.add_row_bias(&block.b)?;
            let y = conv.glu()?.add(&x)?;
            x = masked(&y, &mask)?;
        }
        Ok(x)
    }
}

/// Zero-one row mask for padded positions, or `None` when nothing is padded.
fn row_mask(rows: usize, cols: usize, valid: usize) -> Option<Tensor> {
    if valid >= rows {
        return None;
    }
    let mut v = vec![0.0; rows * cols];
    v[..valid * cols].fill(1.0);
    Some(Tensor::new(&[rows, cols], v).expect("sized to match"))
}

fn masked(x: &Tensor, mask: &Option<Tensor>) -> Result<Tensor, TensorError> {
    match mask {
        Some(m) => x.mul(m),
        None => Ok(x.clone()),
    }
}

/// Everything the decoder needs to attend over a source.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    /// Word encoder states `z^word`, `[m,d]`.
    pub word_states: Tensor,
    /// Topic encoder states `z^topic`, `[m,d]`.
    pub topic_states: Tensor,
    /// Word-side input embeddings `e`, `[m,d]`.
    pub word_embeds: Tensor,
    /// Topic-side input embeddings `r`, `[m,d]`.
    pub topic_embeds: Tensor,
    /// Number of real (non-padding) source positions.
    pub valid: usize,
}

impl ModelParams {
    /// Runs both encoder stacks. `valid` marks how many leading positions
    /// are real; anything after is padding, forced to zero between layers
    /// and masked out of attention, so a padded forward matches the
    /// unpadded one exactly.
    pub fn encode_padded(
        &self,
        src: &[u32],
        valid: usize,
        topics: &TopicLookup,
    ) -> Result<EncodedSource, ModelError> {
        if valid == 0 {
            return Err(ModelError::EmptySequence { what: "source" });
        }
        let valid = valid.min(src.len());
        let (e, r) = self.embed_source(src, topics)?;
        let word_states = self.run_encoder_stack(&self.word_encoder, &e, valid)?;
        let topic_states = self.run_encoder_stack(&self.topic_encoder, &r, valid)?;
        Ok(EncodedSource {
            word_states,
            topic_states,
            word_embeds: e,
            topic_embeds: r,
            valid,
        })
    }

    /// [`ModelParams::encode_padded`] over a fully valid source.
    pub fn encode(&self, src: &[u32], topics: &TopicLookup) -> Result<EncodedSource, ModelError> {
        self.encode_padded(src, src.len(), topics)
    }
}

/// Top-of-stack decoder states for one prefix, one row per prefix position.
#[derive(Debug, Clone)]
pub struct DecodeStates {
    pub word_top: Tensor,
    pub topic_top: Tensor,
}

impl ModelParams {
    /// Runs both decoder stacks over a teacher-forced prefix (BOS plus any
    /// already-generated tokens). Row `i` of the outputs conditions on
    /// prefix positions `0..=i` only, which the causal windows guarantee.
    pub fn decode_states(
        &self,
        prefix: &[u32],
        enc: &EncodedSource,
        topics: &TopicLookup,
    ) -> Result<DecodeStates, ModelError> {
        if prefix.is_empty() {
            return Err(ModelError::EmptySequence { what: "decoder prefix" });
        }
        let cap = self.config.decoder_positions();
        if prefix.len() > cap {
            return Err(ModelError::PrefixTooLong {
                len: prefix.len(),
                max: cap,
            });
        }
        self.check_ids(prefix)?;
        let n = prefix.len();
        let pos: Vec<usize> = (0..n).collect();
        let p = Tensor::gather(&self.dec_pos, &pos)?;
        let word_rows: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let q = Tensor::gather(&self.word_embed, &word_rows)?.add(&p)?;
        let s = self.mixed_embed(prefix, topics)?.add(&p)?;

        let attend_word = enc.word_states.add(&enc.word_embeds)?;
        let attend_topic = enc.topic_states.add(&enc.topic_embeds)?;

        // word stack, recording each layer's context for the topic stack
        let mut word_contexts: Vec<Tensor> = Vec::with_capacity(self.word_decoder.len());
        let mut x = q.clone();
        for block in &self.word_decoder {
            let t = self.decoder_conv(block, &x)?;
            let dstate = t.matmul_nt(&block.wd)?.add_row_bias(&block.bd)?.add(&q)?;
            let scores = dstate.matmul_nt(&enc.word_states)?;
            let alpha = scores.softmax_rows(Some(enc.valid))?;
            let c = alpha.matmul(&attend_word)?;
            word_contexts.push(c.clone());
            x = t.add(&c)?;
        }
        let word_top = x;

        // topic stack with joint attention; the word context of the same
        // layer joins the residual stream (clamped to the last word layer
        // when the topic stack is deeper)
        let mut y = s.clone();
        for (l, block) in self.topic_decoder.iter().enumerate() {
            let t = self.decoder_conv(block, &y)?;
            let dstate = t.matmul_nt(&block.wd)?.add_row_bias(&block.bd)?.add(&s)?;
            let word_scores = dstate.matmul_nt(&enc.word_states)?;
            let topic_scores = dstate.matmul_nt(&enc.topic_states)?;
            let beta = word_scores.add(&topic_scores)?.softmax_rows(Some(enc.valid))?;
            let c_topic = beta.matmul(&attend_topic)?;
            let c_word = &word_contexts[l.min(word_contexts.len() - 1)];
            y = t.add(&c_topic)?.add(c_word)?;
        }
        Ok(DecodeStates {
            word_top,
            topic_top: y,
        })
    }

    fn decoder_conv(&self, block: &DecoderBlock, x: &Tensor) -> Result<Tensor, ModelError> {
        let windows = x.window_concat(self.config.kernel, true)?;
        let conv = windows.matmul_nt(&block.conv.w)?.add_row_bias(&block.conv.b)?;
        Ok(conv.glu()?.add(x)?)
    }

    /// Shared output projection `psi(h) = W_o h + b_o`.
    pub fn output_scores(&self, state: &Tensor) -> Result<Tensor, ModelError> {
        Ok(Tensor::affine(&self.out_w, state, &self.out_b)?)
    }

    /// The biased generation distribution for one position:
    /// `p = normalize(exp(psi(word)) + mask * exp(psi(topic)))`, computed in
    /// log space. `mask` flags vocabulary ids in the topic vocabulary.
    pub fn output_distribution(
        &self,
        word_state: &Tensor,
        topic_state: &Tensor,
        mask: &[bool],
    ) -> Result<Tensor, ModelError> {
        let a = self.output_scores(word_state)?;
        let b = self.output_scores(topic_state)?;
        Ok(a.masked_logaddexp(&b, mask)?.softmax()?)
    }

    /// Log probabilities for every prefix row at once, `[n, vocab]`.
    pub fn output_log_probs(
        &self,
        states: &DecodeStates,
        mask: &[bool],
    ) -> Result<Tensor, ModelError> {
        let a = states
            .word_top
            .matmul_nt(&self.out_w)?
            .add_row_bias(&self.out_b)?;
        let b = states
            .topic_top
            .matmul_nt(&self.out_w)?
            .add_row_bias(&self.out_b)?;
        Ok(a.masked_logaddexp(&b, mask)?.log_softmax_rows()?)
    }
}
