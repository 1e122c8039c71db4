//! Paraphrase diversity and similarity measures.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::encoder::{encode, tokenize, EncoderParams, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::cosine_distance;

/// Distinct adjacent bigrams over the whole corpus divided by its token
/// count. Bigrams never span two sentences.
pub fn distinct_2<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<f64> {
    let total: usize = sentences.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Empty("corpus"));
    }
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for s in sentences {
        for w in s.windows(2) {
            seen.insert((w[0].as_ref(), w[1].as_ref()));
        }
    }
    Ok(seen.len() as f64 / total as f64)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions, uniform weights and a
/// brevity penalty against the closest reference length.
///
/// Orders longer than the candidate are left out of the geometric mean.
/// With `smoothing`, an order with no matches contributes `1 / (total + 1)`
/// instead of zero.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: bool,
) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Empty("BLEU candidate"));
    }
    if references.is_empty() {
        return Err(Error::Empty("BLEU references"));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    let orders = max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total = candidate.len() + 1 - n;
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else if smoothing {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += precision.ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| ((len as isize - c as isize).abs(), len))
        .unwrap();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok((bp * (log_sum / orders as f64).exp()).min(1.0))
}

/// Mean cosine similarity over all unordered pairs.
pub fn mean_pairwise_similarity(embeddings: &[Vec<f64>]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::Empty("need at least two embeddings"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            total += 1.0 - cosine_distance(&embeddings[i], &embeddings[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub dist2: f64,
    pub bleu_vs_source: f64,
    pub mean_pairwise_similarity: f64,
}

/// Diversity of a source sentence and its paraphrases: dist-2 over the
/// whole set, mean BLEU of each paraphrase against the source, and mean
/// pairwise cosine similarity of the set's embeddings.
pub fn diversity_report<S: AsRef<str>>(
    source: &str,
    paraphrases: &[S],
    params: &EncoderParams,
    vocab: &Vocabulary,
) -> Result<DiversityReport> {
    if paraphrases.is_empty() {
        return Err(Error::Empty("paraphrases"));
    }
    let src = tokenize(source);
    let paras: Vec<Vec<String>> = paraphrases.iter().map(|p| tokenize(p.as_ref())).collect();
    let mut set = vec![src.clone()];
    set.extend(paras.iter().cloned());
    let dist2 = distinct_2(&set)?;
    let refs = [src];
    let mut bleu_total = 0.0;
    for p in &paras {
        bleu_total += bleu(p, &refs, 4, true)?;
    }
    let embeddings: Vec<Vec<f64>> = set.iter().map(|t| encode(params, t, vocab)).collect();
    Ok(DiversityReport {
        dist2,
        bleu_vs_source: bleu_total / paras.len() as f64,
        mean_pairwise_similarity: mean_pairwise_similarity(&embeddings)?,
    })
}
