//! Latent Dirichlet allocation by collapsed Gibbs sampling, plus the topic
//! vocabulary and topic embedding matrix derived from a fitted model.
//!
//! The sampler keeps the usual sufficient statistics: per-document topic
//! counts, per-topic word counts, and per-topic totals. One sweep resamples
//! every token's topic from
//! `p(z = t) ∝ (n_wt + beta) / (n_t + V beta) * (n_dt + alpha)`
//! after removing the token's current assignment from all counts.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("corpus holds no non-empty documents")]
    EmptyCorpus,
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("word {word:?} is not in the topic model vocabulary")]
    UnknownWord { word: String },
    #[error("shape mismatch building topic model: {reason}")]
    BadShape { reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed topic file {path} at line {line}: {reason}")]
    BadFile {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Sampler knobs. Defaults follow the usual desk-scale setup: 16 topics,
/// `alpha = 0.1`, `beta = 0.01`, 500 sweeps.
#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            num_topics: 16,
            alpha: 0.1,
            beta: 0.01,
            iterations: 500,
            seed: 0,
        }
    }
}

impl LdaConfig {
    fn validate(&self) -> Result<(), LdaError> {
        if self.num_topics == 0 {
            return Err(LdaError::InvalidConfig {
                reason: "num_topics must be at least 1".into(),
            });
        }
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(LdaError::InvalidConfig {
                reason: format!("alpha and beta must be positive, got {} / {}", self.alpha, self.beta),
            });
        }
        Ok(())
    }
}

/// Mid-fit sampler state, exposed so tests and callers can sweep stepwise
/// and audit the counts between sweeps.
pub struct GibbsState {
    cfg: LdaConfig,
    vocab: Vec<String>,
    word_index: HashMap<String, usize>,
    /// Documents as dense word ids; empty rows are skipped documents.
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<u32>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<Vec<u32>>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
}

impl GibbsState {
    /// Indexes the corpus and draws the initial uniform topic assignments.
    /// Empty documents are kept as empty rows (with a warning) so document
    /// indices stay aligned with the input.
    pub fn init(corpus: &[Vec<String>], cfg: &LdaConfig) -> Result<GibbsState, LdaError> {
        cfg.validate()?;
        let mut vocab: Vec<String> = Vec::new();
        let mut word_index: HashMap<String, usize> = HashMap::new();
        let mut docs: Vec<Vec<usize>> = Vec::with_capacity(corpus.len());
        let mut empty = 0usize;
        for doc in corpus {
            if doc.is_empty() {
                empty += 1;
                docs.push(Vec::new());
                continue;
            }
            docs.push(
                doc.iter()
                    .map(|w| {
                        *word_index.entry(w.clone()).or_insert_with(|| {
                            vocab.push(w.clone());
                            vocab.len() - 1
                        })
                    })
                    .collect(),
            );
        }
        if empty > 0 {
            log::warn!("skipped {empty} empty document(s) during topic fitting");
        }
        if vocab.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }

        let t = cfg.num_topics;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = GibbsState {
            cfg: cfg.clone(),
            vocab,
            word_index,
            assignments: docs.iter().map(|d| vec![0u32; d.len()]).collect(),
            doc_topic: vec![vec![0u32; t]; docs.len()],
            topic_word: vec![vec![0u32; v]; t],
            topic_total: vec![0u32; t],
            docs,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        for d in 0..state.docs.len() {
            for pos in 0..state.docs[d].len() {
                let topic = rng.gen_range(0..t);
                state.assignments[d][pos] = topic as u32;
                state.doc_topic[d][topic] += 1;
                state.topic_word[topic][state.docs[d][pos]] += 1;
                state.topic_total[topic] += 1;
            }
        }
        state.rng = rng;
        Ok(state)
    }

    /// One full Gibbs sweep over every token in corpus order.
    pub fn sweep(&mut self) {
        let t = self.cfg.num_topics;
        let v = self.vocab.len() as f64;
        let mut weights = vec![0.0f64; t];
        for d in 0..self.docs.len() {
            for pos in 0..self.docs[d].len() {
                let w = self.docs[d][pos];
                let old = self.assignments[d][pos] as usize;
                self.doc_topic[d][old] -= 1;
                self.topic_word[old][w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for (k, slot) in weights.iter_mut().enumerate() {
                    let phi = (self.topic_word[k][w] as f64 + self.cfg.beta)
                        / (self.topic_total[k] as f64 + v * self.cfg.beta);
                    let theta = self.doc_topic[d][k] as f64 + self.cfg.alpha;
                    *slot = phi * theta;
                    total += *slot;
                }
                let mut u = self.rng.gen::<f64>() * total;
                let mut new = t - 1;
                for (k, &wt) in weights.iter().enumerate() {
                    if u < wt {
                        new = k;
                        break;
                    }
                    u -= wt;
                }

                self.assignments[d][pos] = new as u32;
                self.doc_topic[d][new] += 1;
                self.topic_word[new][w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.assignments
    }

    pub fn doc_topic_counts(&self) -> &[Vec<u32>] {
        &self.doc_topic
    }

    pub fn topic_word_counts(&self) -> &[Vec<u32>] {
        &self.topic_word
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_total
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn into_model(self) -> TopicModel {
        TopicModel {
            num_topics: self.cfg.num_topics,
            alpha: self.cfg.alpha,
            beta: self.cfg.beta,
            seed: self.cfg.seed,
            vocab: self.vocab,
            word_index: self.word_index,
            topic_word_counts: self.topic_word,
            doc_topic_counts: self.doc_topic,
            assignments: self.assignments,
        }
    }
}

/// A fitted topic model. `doc_topic_counts` and `assignments` describe the
/// training corpus; persistence keeps only the header and
/// `topic_word_counts`, which is all downstream stages need.
#[derive(Debug, Clone)]
pub struct TopicModel {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Word id order; column `i` of `topic_word_counts` is `vocab[i]`.
    pub vocab: Vec<String>,
    pub topic_word_counts: Vec<Vec<u32>>,
    pub doc_topic_counts: Vec<Vec<u32>>,
    pub assignments: Vec<Vec<u32>>,
    word_index: HashMap<String, usize>,
}

/// Runs the sampler to completion.
pub fn fit_lda(corpus: &[Vec<String>], cfg: &LdaConfig) -> Result<TopicModel, LdaError> {
    let mut state = GibbsState::init(corpus, cfg)?;
    for _ in 0..cfg.iterations {
        state.sweep();
    }
    Ok(state.into_model())
}

impl TopicModel {
    /// Builds a model from explicit counts (used by [`load_topic_model`] and
    /// tests). Document-side fields are left empty.
    pub fn from_counts(
        num_topics: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
        vocab: Vec<String>,
        topic_word_counts: Vec<Vec<u32>>,
    ) -> Result<TopicModel, LdaError> {
        if topic_word_counts.len() != num_topics {
            return Err(LdaError::BadShape {
                reason: format!(
                    "expected {num_topics} count rows, got {}",
                    topic_word_counts.len()
                ),
            });
        }
        if topic_word_counts.iter().any(|r| r.len() != vocab.len()) {
            return Err(LdaError::BadShape {
                reason: format!("count rows must have {} columns", vocab.len()),
            });
        }
        let word_index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(TopicModel {
            num_topics,
            alpha,
            beta,
            seed,
            vocab,
            topic_word_counts,
            doc_topic_counts: Vec::new(),
            assignments: Vec::new(),
            word_index,
        })
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    /// Total count of `word_id` across topics; equals its corpus frequency
    /// for a freshly fitted model.
    pub fn corpus_count(&self, word_id: usize) -> u64 {
        self.topic_word_counts
            .iter()
            .map(|row| row[word_id] as u64)
            .sum()
    }
}

/// Words whose document frequency strictly exceeds `threshold` over the
/// non-empty documents. These are "universal" words that discriminate no
/// topic and get excluded from the topic vocabulary.
pub fn universal_words(corpus: &[Vec<String>], threshold: f64) -> HashSet<String> {
    let mut df: HashMap<&String, usize> = HashMap::new();
    let mut docs = 0usize;
    for doc in corpus {
        if doc.is_empty() {
            continue;
        }
        docs += 1;
        let uniq: HashSet<&String> = doc.iter().collect();
        for w in uniq {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    df.into_iter()
        .filter(|(_, c)| docs > 0 && *c as f64 / docs as f64 > threshold)
        .map(|(w, _)| w.clone())
        .collect()
}

/// The ordered topic word set `K`, plus which topics each word came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicVocabulary {
    /// Union of the per-topic top lists, ordered by (topic, rank) of first
    /// appearance. Row `i` of the topic embedding matrix belongs to
    /// `words[i]`.
    pub words: Vec<String>,
    /// For each word, every topic whose top list contains it, ascending.
    pub origin_topics: Vec<Vec<usize>>,
    pub per_topic_top_words: Vec<Vec<String>>,
}

impl TopicVocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index_of(word).is_some()
    }

    /// Canonical file serialization: `word<TAB>topic ids` per row, in `K`
    /// order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (w, topics) in self.words.iter().zip(&self.origin_topics) {
            let ids: Vec<String> = topics.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{w}\t{}", ids.join(" "));
        }
        out
    }

    pub fn sha256(&self) -> [u8; 32] {
        Sha256::digest(self.serialize().as_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<(), LdaError> {
        std::fs::write(path, self.serialize()).map_err(|source| LdaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reloads a saved topic vocabulary. Per-topic top lists are rebuilt
    /// from the origin annotations (rank order within a topic is preserved
    /// because rows are stored in first-appearance order).
    pub fn load(path: &Path) -> Result<TopicVocabulary, LdaError> {
        let text = std::fs::read_to_string(path).map_err(|source| LdaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut words = Vec::new();
        let mut origin_topics: Vec<Vec<usize>> = Vec::new();
        let mut max_topic = 0usize;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((w, rest)) = line.split_once('\t') else {
                return Err(LdaError::BadFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "expected word<TAB>topic ids".into(),
                });
            };
            let topics: Vec<usize> = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| LdaError::BadFile {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: format!("bad topic id {t:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if topics.is_empty() {
                return Err(LdaError::BadFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "word with no originating topics".into(),
                });
            }
            max_topic = max_topic.max(*topics.iter().max().unwrap());
            words.push(w.to_owned());
            origin_topics.push(topics);
        }
        let mut per_topic: Vec<Vec<String>> = vec![Vec::new(); max_topic + 1];
        for (w, topics) in words.iter().zip(&origin_topics) {
            for &t in topics {
                per_topic[t].push(w.clone());
            }
        }
        Ok(TopicVocabulary {
            words,
            origin_topics,
            per_topic_top_words: per_topic,
        })
    }
}

/// Ranks each topic's words by assignment count (descending), breaking ties
/// by corpus frequency then lexicographically, drops `universal` words and
/// zero-count words, and keeps the top `top_n`. The union over topics is the
/// topic vocabulary `K`, ordered by first appearance.
pub fn topic_vocabulary(
    model: &TopicModel,
    top_n: usize,
    universal: &HashSet<String>,
) -> TopicVocabulary {
    let mut per_topic: Vec<Vec<String>> = Vec::with_capacity(model.num_topics);
    for t in 0..model.num_topics {
        let mut ranked: Vec<usize> = (0..model.vocab.len())
            .filter(|&w| model.topic_word_counts[t][w] > 0 && !universal.contains(&model.vocab[w]))
            .collect();
        ranked.sort_by(|&a, &b| {
            model.topic_word_counts[t][b]
                .cmp(&model.topic_word_counts[t][a])
                .then_with(|| model.corpus_count(b).cmp(&model.corpus_count(a)))
                .then_with(|| model.vocab[a].cmp(&model.vocab[b]))
        });
        if ranked.len() < top_n {
            log::warn!(
                "topic {t} has only {} rankable words, fewer than the requested {top_n}",
                ranked.len()
            );
        }
        ranked.truncate(top_n);
        per_topic.push(ranked.into_iter().map(|w| model.vocab[w].clone()).collect());
    }

    let mut words: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut origin_topics: Vec<Vec<usize>> = Vec::new();
    for (t, list) in per_topic.iter().enumerate() {
        for w in list {
            match index.get(w) {
                Some(&i) => origin_topics[i].push(t),
                None => {
                    words.push(w.clone());
                    origin_topics.push(vec![t]);
                    index.insert(w.clone(), words.len() - 1);
                }
            }
        }
    }
    TopicVocabulary {
        words,
        origin_topics,
        per_topic_top_words: per_topic,
    }
}

/// A dense `rows x cols` matrix of topic embeddings, row `i` for word `i` of
/// the topic vocabulary.
#[derive(Debug, Clone)]
pub struct TopicEmbedding {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

const PROJECTION_SALT: u64 = 0x746f_7069_6373;

/// Shifts and scales `values` in place to mean 0 and population variance
/// `target_var`. Returns `false` (leaving zeros) when the input is constant
/// and thus carries no signal to normalize.
pub fn standardize_to_variance(values: &mut [f64], target_var: f64) -> bool {
    let n = values.len() as f64;
    if values.is_empty() {
        return false;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let scale = (target_var / var).sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
    true
}

/// Builds the trainable topic embedding seed matrix: each word's per-topic
/// assignment counts, bridged to width `d` by a seeded `±1/sqrt(num_topics)`
/// random projection when `num_topics != d`, then standardized to mean 0 and
/// population variance 0.1. A degenerate (constant) matrix becomes all zeros
/// with a warning.
pub fn topic_embedding_matrix(
    model: &TopicModel,
    tv: &TopicVocabulary,
    d: usize,
) -> Result<TopicEmbedding, LdaError> {
    if d == 0 {
        return Err(LdaError::InvalidConfig {
            reason: "embedding width must be at least 1".into(),
        });
    }
    let k = tv.words.len();
    let t = model.num_topics;
    let mut raw = vec![0.0f64; k * t];
    for (i, w) in tv.words.iter().enumerate() {
        let wid = model.word_id(w).ok_or_else(|| LdaError::UnknownWord {
            word: w.clone(),
        })?;
        for topic in 0..t {
            raw[i * t + topic] = model.topic_word_counts[topic][wid] as f64;
        }
    }

    let mut values = if t == d {
        raw
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ PROJECTION_SALT);
        let scale = 1.0 / (t as f64).sqrt();
        let proj: Vec<f64> = (0..t * d)
            .map(|_| if rng.gen::<bool>() { scale } else { -scale })
            .collect();
        let mut out = vec![0.0f64; k * d];
        for i in 0..k {
            for j in 0..d {
                let mut s = 0.0;
                for tt in 0..t {
                    s += raw[i * t + tt] * proj[tt * d + j];
                }
                out[i * d + j] = s;
            }
        }
        out
    };

    if !standardize_to_variance(&mut values, 0.1) {
        log::warn!("topic embedding seed matrix is constant; emitting zeros");
    }
    Ok(TopicEmbedding {
        rows: k,
        cols: d,
        values,
    })
}

// ── persistence ──

/// Writes the model header and the integer count matrix, one row per topic.
pub fn save_topic_model(model: &TopicModel, path: &Path) -> Result<(), LdaError> {
    let mut out = String::new();
    let _ = writeln!(out, "num_topics\t{}", model.num_topics);
    let _ = writeln!(out, "alpha\t{}", model.alpha);
    let _ = writeln!(out, "beta\t{}", model.beta);
    let _ = writeln!(out, "seed\t{}", model.seed);
    let _ = writeln!(out, "vocab_size\t{}", model.vocab.len());
    let _ = writeln!(out, "vocab\t{}", model.vocab.join(" "));
    let _ = writeln!(out, "counts_by_topic");
    for row in &model.topic_word_counts {
        let cells: Vec<String> = row.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    std::fs::write(path, out).map_err(|source| LdaError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a saved topic model. Document-side state is not persisted, so
/// `doc_topic_counts` and `assignments` come back empty.
pub fn load_topic_model(path: &Path) -> Result<TopicModel, LdaError> {
    let text = std::fs::read_to_string(path).map_err(|source| LdaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |line: usize, reason: String| LdaError::BadFile {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let mut header: HashMap<String, String> = HashMap::new();
    let mut vocab: Vec<String> = Vec::new();
    for (i, line) in lines.by_ref() {
        if line == "counts_by_topic" {
            break;
        }
        let Some((key, value)) = line.split_once('\t') else {
            return Err(bad(i + 1, format!("expected key<TAB>value, got {line:?}")));
        };
        if key == "vocab" {
            vocab = value.split_whitespace().map(str::to_owned).collect();
        } else {
            header.insert(key.to_owned(), value.to_owned());
        }
    }
    let field = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| bad(0, format!("missing header field {k}")))
    };
    let num_topics: usize = field("num_topics")?
        .parse()
        .map_err(|_| bad(1, "bad num_topics".into()))?;
    let alpha: f64 = field("alpha")?.parse().map_err(|_| bad(2, "bad alpha".into()))?;
    let beta: f64 = field("beta")?.parse().map_err(|_| bad(3, "bad beta".into()))?;
    let seed: u64 = field("seed")?.parse().map_err(|_| bad(4, "bad seed".into()))?;
    let vocab_size: usize = field("vocab_size")?
        .parse()
        .map_err(|_| bad(5, "bad vocab_size".into()))?;
    if vocab.len() != vocab_size {
        return Err(bad(6, format!("vocab lists {} words, header says {vocab_size}", vocab.len())));
    }

    let mut counts: Vec<Vec<u32>> = Vec::with_capacity(num_topics);
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<u32> = line
            .split_whitespace()
            .map(|c| c.parse::<u32>().map_err(|_| bad(i + 1, format!("bad count {c:?}"))))
            .collect::<Result<_, _>>()?;
        if row.len() != vocab_size {
            return Err(bad(i + 1, format!("count row has {} cells, expected {vocab_size}", row.len())));
        }
        counts.push(row);
    }
    if counts.len() != num_topics {
        return Err(bad(0, format!("found {} count rows, header says {num_topics}", counts.len())));
    }
    TopicModel::from_counts(num_topics, alpha, beta, seed, vocab, counts)
}
