//! Corpus handling: TSV pair loading, vocabulary, batching, and a planted
//! toy corpus for end-to-end checks.
//!
//! File formats are deliberately plain text. A corpus line is
//! `source tokens<TAB>target summary`; tokenization is whitespace splitting.
//! A vocabulary file is one `token<TAB>count` row per id in rank order,
//! starting with the four reserved entries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

/// Printable forms of the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("id {id} out of range for vocabulary of size {size}")]
    BadId { id: u32, size: usize },
    #[error("vocabulary file {path} is malformed at line {line}: {reason}")]
    BadVocabFile {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("corpus {path} holds no usable pairs")]
    EmptyCorpus { path: String },
}

/// One source/target pair, whitespace-tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    MissingTab,
    ExtraTab,
    EmptySide,
}

/// A loaded corpus plus what was dropped on the floor and why.
#[derive(Debug)]
pub struct CorpusLoad {
    pub pairs: Vec<Pair>,
    pub empty_lines: usize,
    /// 1-based line numbers of rejected lines.
    pub rejected: Vec<(usize, RejectReason)>,
}

/// Reads TAB-separated pairs. Empty lines are skipped and counted; lines
/// without exactly one TAB or with a side that tokenizes to nothing are
/// rejected with their line number. A corpus with zero usable pairs is an
/// error.
pub fn load_corpus(path: &Path) -> Result<CorpusLoad, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut load = CorpusLoad {
        pairs: Vec::new(),
        empty_lines: 0,
        rejected: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            load.empty_lines += 1;
            continue;
        }
        let mut parts = line.split('\t');
        let (src, tgt) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(t), None) => (s, t),
            (_, None, _) => {
                load.rejected.push((lineno, RejectReason::MissingTab));
                continue;
            }
            _ => {
                load.rejected.push((lineno, RejectReason::ExtraTab));
                continue;
            }
        };
        let source: Vec<String> = src.split_whitespace().map(str::to_owned).collect();
        let target: Vec<String> = tgt.split_whitespace().map(str::to_owned).collect();
        if source.is_empty() || target.is_empty() {
            load.rejected.push((lineno, RejectReason::EmptySide));
            continue;
        }
        load.pairs.push(Pair { source, target });
    }
    if !load.rejected.is_empty() {
        log::warn!(
            "{}: rejected {} malformed line(s), first at line {}",
            path.display(),
            load.rejected.len(),
            load.rejected[0].0
        );
    }
    if load.pairs.is_empty() {
        return Err(DataError::EmptyCorpus {
            path: path.display().to_string(),
        });
    }
    Ok(load)
}

/// Token table with four reserved ids up front. Ids are dense and stable:
/// corpus tokens are ranked by frequency descending, ties broken
/// lexicographically ascending.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from pairs, counting both sides. `max_size` caps the total
    /// vocabulary including the reserved entries; tokens seen fewer than
    /// `min_count` times are left out. Tokens spelled like a reserved entry
    /// are skipped so reserved ids are never reassigned.
    pub fn build(pairs: &[Pair], max_size: usize, min_count: u64) -> Vocabulary {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for p in pairs {
            for t in p.source.iter().chain(&p.target) {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(RESERVED.len()));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts: Vec<u64> = vec![0; RESERVED.len()];
        for (t, c) in ranked {
            tokens.push(t.to_owned());
            counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str, DataError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(DataError::BadId {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_special(id: u32) -> bool {
        id < RESERVED.len() as u32
    }

    /// Unknown tokens map to [`UNK`]; no framing is added.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`encode`] for in-range ids; out-of-range ids are an error.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, DataError> {
        ids.iter()
            .map(|&id| self.token(id).map(str::to_owned))
            .collect()
    }

    /// Canonical file serialization: `token<TAB>count`, one row per id.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    /// SHA-256 of the canonical serialization; checkpoints embed this so a
    /// model is never silently paired with the wrong vocabulary.
    pub fn sha256(&self) -> [u8; 32] {
        Sha256::digest(self.serialize().as_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.serialize()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Vocabulary, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((tok, cnt)) = line.split_once('\t') else {
                return Err(DataError::BadVocabFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "expected token<TAB>count".into(),
                });
            };
            let c: u64 = cnt.parse().map_err(|_| DataError::BadVocabFile {
                path: path.display().to_string(),
                line: i + 1,
                reason: format!("bad count {cnt:?}"),
            })?;
            tokens.push(tok.to_owned());
            counts.push(c);
        }
        for (i, name) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*name) {
                return Err(DataError::BadVocabFile {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: format!("row {i} must be the reserved token {name}"),
                });
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }
}

/// One padded batch. `source`/`target` rows share a length within the batch
/// (PAD on the right); `target` rows are framed `BOS .. EOS` before padding.
/// `topic_mask` marks source positions whose token is in the topic
/// vocabulary; PAD positions are never marked.
#[derive(Debug, Clone)]
pub struct Batch {
    pub source: Vec<Vec<u32>>,
    pub target: Vec<Vec<u32>>,
    pub source_lens: Vec<usize>,
    /// Framed length including BOS and EOS.
    pub target_lens: Vec<usize>,
    pub topic_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Unpadded views of pair `i`.
    pub fn pair(&self, i: usize) -> (&[u32], &[u32], &[bool]) {
        (
            &self.source[i][..self.source_lens[i]],
            &self.target[i][..self.target_lens[i]],
            &self.topic_mask[i][..self.source_lens[i]],
        )
    }
}

/// Batching knobs. `max_source_len`/`max_target_len` cap raw token counts;
/// over-long sides are truncated (with a warning), not dropped.
#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_size: 32,
            max_source_len: 128,
            max_target_len: 64,
            seed: 0,
        }
    }
}

/// Length-bucketed, seed-shuffled batches. Pairs are shuffled, stably sorted
/// by length so buckets hold like-sized pairs, chunked, and the chunk order
/// is shuffled again. Flattening the result recovers the input multiset.
///
/// `is_topic_word` decides the topic mask per vocabulary id.
pub fn make_batches(
    pairs: &[Pair],
    vocab: &Vocabulary,
    is_topic_word: impl Fn(u32) -> bool,
    cfg: &BatchConfig,
) -> Vec<Batch> {
    assert!(cfg.batch_size > 0, "batch_size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| (pairs[i].source.len(), pairs[i].target.len()));

    let mut truncated = 0usize;
    let encoded: Vec<(Vec<u32>, Vec<u32>)> = order
        .iter()
        .map(|&i| {
            let p = &pairs[i];
            if p.source.len() > cfg.max_source_len || p.target.len() > cfg.max_target_len {
                truncated += 1;
            }
            let src = vocab.encode(&p.source[..p.source.len().min(cfg.max_source_len)]);
            let raw = vocab.encode(&p.target[..p.target.len().min(cfg.max_target_len)]);
            let mut tgt = Vec::with_capacity(raw.len() + 2);
            tgt.push(BOS);
            tgt.extend(raw);
            tgt.push(EOS);
            (src, tgt)
        })
        .collect();
    if truncated > 0 {
        log::warn!("truncated {truncated} over-long pair(s) while batching");
    }

    let mut batches: Vec<Batch> = encoded
        .chunks(cfg.batch_size)
        .map(|chunk| {
            let src_w = chunk.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
            let tgt_w = chunk.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
            let mut b = Batch {
                source: Vec::with_capacity(chunk.len()),
                target: Vec::with_capacity(chunk.len()),
                source_lens: Vec::with_capacity(chunk.len()),
                target_lens: Vec::with_capacity(chunk.len()),
                topic_mask: Vec::with_capacity(chunk.len()),
            };
            for (src, tgt) in chunk {
                b.source_lens.push(src.len());
                b.target_lens.push(tgt.len());
                let mut s = src.clone();
                s.resize(src_w, PAD);
                b.topic_mask.push(
                    s.iter()
                        .enumerate()
                        .map(|(i, &id)| i < src.len() && is_topic_word(id))
                        .collect(),
                );
                b.source.push(s);
                let mut t = tgt.clone();
                t.resize(tgt_w, PAD);
                b.target.push(t);
            }
            b
        })
        .collect();
    batches.shuffle(&mut rng);
    batches
}

// ── planted toy corpus ──

/// Topic-specific keyword inventories, disjoint by construction.
pub const TOY_TOPIC_WORDS: [[&str; 10]; 2] = [
    [
        "storm", "rain", "flood", "wind", "cloud", "thunder", "river", "levee", "coast", "surge",
    ],
    [
        "market", "stock", "trade", "price", "profit", "merger", "share", "index", "bond", "yield",
    ],
];

const TOY_OPENERS: [&str; 2] = ["report", "update"];
const TOY_LINKS: [&str; 2] = ["over", "after"];
const TOY_CLOSERS: [&str; 2] = ["today", "overnight"];

/// A generated corpus with known structure: which planted topic each pair
/// came from, for checking topic recovery.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub pairs: Vec<Pair>,
    pub topic_labels: Vec<usize>,
}

/// Generates source/summary pairs with planted structure. Every source is
/// `opener k1 k2 link k3 k4 closer` where the `k` are four distinct keywords
/// from one of two disjoint topic inventories; the summary is the fixed
/// compression `k4 k1 k3`. Topics alternate, so labels are balanced. The
/// structural slot words appear in every document regardless of topic, which
/// makes them high-document-frequency by design.
///
/// The compression is a function of the source alone, so a model that learns
/// the rule (or memorizes the corpus) can reproduce targets exactly, and the
/// keyword inventories are disjoint, so topic models can recover the labels.
pub fn toy_corpus(seed: u64, num_pairs: usize) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(num_pairs);
    let mut topic_labels = Vec::with_capacity(num_pairs);
    for i in 0..num_pairs {
        let topic = i % 2;
        let mut kw: Vec<&str> = TOY_TOPIC_WORDS[topic].to_vec();
        kw.shuffle(&mut rng);
        let (k1, k2, k3, k4) = (kw[0], kw[1], kw[2], kw[3]);
        let opener = TOY_OPENERS[rng.gen_range(0..2)];
        let link = TOY_LINKS[rng.gen_range(0..2)];
        let closer = TOY_CLOSERS[rng.gen_range(0..2)];
        let source = vec![opener, k1, k2, link, k3, k4, closer];
        let target = vec![k4, k1, k3];
        pairs.push(Pair {
            source: source.into_iter().map(str::to_owned).collect(),
            target: target.into_iter().map(str::to_owned).collect(),
        });
        topic_labels.push(topic);
    }
    ToyCorpus { pairs, topic_labels }
}

/// Writes pairs in the corpus file format (`source<TAB>target`).
pub fn save_corpus(pairs: &[Pair], path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.source.join(" "), p.target.join(" "));
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
