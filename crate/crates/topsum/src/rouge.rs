//! ROUGE-1, ROUGE-2, and ROUGE-L with multi-reference aggregation.
//!
//! Scores work over any hashable token type, so the same code paths serve
//! word-level evaluation (`&[String]`) and character-id evaluation
//! (`&[u32]` after [`IdMapper`]). Token identity is all that matters:
//! relabeling tokens through any bijection leaves every score unchanged.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RougeError {
    #[error("rouge needs at least one reference")]
    NoReferences,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

/// One precision/recall/F1 triple. F1 is the harmonic mean, 0 when both
/// precision and recall vanish.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(matched: usize, hyp_total: usize, ref_total: usize) -> RougeScore {
        let precision = ratio(matched, hyp_total);
        let recall = ratio(matched, ref_total);
        RougeScore {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Picks the best per-reference score: highest F1, ties broken by recall,
/// then precision, then earliest reference. A duplicated reference can
/// therefore never change the outcome.
fn best_of(scores: impl Iterator<Item = RougeScore>) -> RougeScore {
    let mut best = RougeScore::default();
    let mut first = true;
    for s in scores {
        let better = (s.f1, s.recall, s.precision) > (best.f1, best.recall, best.precision);
        if first || better {
            best = s;
            first = false;
        }
    }
    best
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts: HashMap<&[T], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap against each reference, aggregated by [`best_of`].
/// An empty hypothesis scores zero everywhere; an empty reference list is an
/// error.
pub fn rouge_n<T, R>(hyp: &[T], refs: &[R], n: usize) -> Result<RougeScore, RougeError>
where
    T: Eq + Hash + Clone,
    R: AsRef<[T]>,
{
    if n == 0 {
        return Err(RougeError::ZeroOrder);
    }
    if refs.is_empty() {
        return Err(RougeError::NoReferences);
    }
    let hyp_counts = ngram_counts(hyp, n);
    let hyp_total = hyp.len().saturating_sub(n - 1);
    Ok(best_of(refs.iter().map(|r| {
        let r = r.as_ref();
        let ref_counts = ngram_counts(r, n);
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        RougeScore::from_counts(matched, hyp_total, r.len().saturating_sub(n - 1))
    })))
}

/// Longest common subsequence length by dynamic programming over two rows.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sequence-level ROUGE-L: precision `LCS/|hyp|`, recall `LCS/|ref|`,
/// aggregated over references by [`best_of`].
pub fn rouge_l<T, R>(hyp: &[T], refs: &[R]) -> Result<RougeScore, RougeError>
where
    T: Eq,
    R: AsRef<[T]>,
{
    if refs.is_empty() {
        return Err(RougeError::NoReferences);
    }
    Ok(best_of(refs.iter().map(|r| {
        let r = r.as_ref();
        RougeScore::from_counts(lcs_len(hyp, r), hyp.len(), r.len())
    })))
}

/// Assigns dense integer ids to tokens in first-seen order. Sharing one
/// mapper across hypothesis and reference keeps equal tokens equal, which is
/// all ROUGE needs; scores over the ids match scores over the raw tokens
/// exactly.
#[derive(Debug, Default, Clone)]
pub struct IdMapper {
    table: HashMap<String, u32>,
}

impl IdMapper {
    pub fn new() -> IdMapper {
        IdMapper::default()
    }

    pub fn id_of(&mut self, token: &str) -> u32 {
        let next = self.table.len() as u32;
        *self.table.entry(token.to_owned()).or_insert(next)
    }

    pub fn map_tokens<S: AsRef<str>>(&mut self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    /// Unicode-scalar-level mapping for character-based evaluation.
    pub fn map_chars(&mut self, text: &str) -> Vec<u32> {
        text.chars()
            .map(|c| self.id_of(c.encode_utf8(&mut [0u8; 4])))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}
