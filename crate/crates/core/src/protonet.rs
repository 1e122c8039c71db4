//! Prototypical-network episode loss, classification and evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, ClassSplit, Dataset, Episode, EpisodeShape, Part};
use crate::encoder::{tokenize, Encoded, EncoderGrads, EncoderParams, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, softmax_over_neg_distances, Distance, PROB_FLOOR};

/// One prototype per class, in episode class order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub vectors: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn mean_vector(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = members.first().ok_or(Error::Empty("prototype members"))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for m in members {
        if m.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.len(),
            });
        }
        for (acc, x) in mean.iter_mut().zip(m) {
            *acc += x;
        }
    }
    let k = members.len() as f64;
    mean.iter_mut().for_each(|x| *x /= k);
    Ok(mean)
}

/// `p_c = (1/K) Σ f(x_i)` over each class's support embeddings.
pub fn compute_prototypes(groups: &[Vec<Vec<f64>>]) -> Result<Prototypes> {
    let vectors = groups.iter().map(|g| mean_vector(g)).collect::<Result<Vec<_>>>()?;
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                found: bad.len(),
            });
        }
    }
    Ok(Prototypes { vectors })
}

/// Class distribution `softmax(−d(query, p_c))`.
pub fn classify(query: &[f64], prototypes: &Prototypes, distance: Distance) -> Result<Vec<f64>> {
    let dists = prototypes
        .vectors
        .iter()
        .map(|p| distance.eval(query, p))
        .collect::<Result<Vec<_>>>()?;
    softmax_over_neg_distances(&dists)
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Loss and embedding-space gradients of a prototype classification
/// objective.
#[derive(Debug, Clone)]
pub struct PrototypeLoss {
    pub loss: f64,
    pub d_queries: Vec<Vec<f64>>,
    /// Same shape as the `groups` argument.
    pub d_members: Vec<Vec<Vec<f64>>>,
}

/// Mean cross-entropy of assigning every query to its target prototype,
/// where each prototype is the mean of one group of member embeddings.
///
/// This is the shared core of the supervised episode loss (members are
/// support embeddings) and the paraphrase-consistency loss (members are
/// paraphrase embeddings, targets are the identity).
pub fn prototype_loss(
    queries: &[Vec<f64>],
    targets: &[usize],
    groups: &[Vec<Vec<f64>>],
    distance: Distance,
) -> Result<PrototypeLoss> {
    if queries.is_empty() {
        return Err(Error::Empty("queries"));
    }
    if groups.is_empty() {
        return Err(Error::Empty("prototype groups"));
    }
    if queries.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: targets.len(),
        });
    }
    let protos = compute_prototypes(groups)?;
    let dim = protos.vectors[0].len();
    let n = queries.len() as f64;
    let mut loss = 0.0;
    let mut d_queries = Vec::with_capacity(queries.len());
    let mut d_protos = vec![vec![0.0; dim]; protos.len()];

    for (q, &t) in queries.iter().zip(targets) {
        let probs = classify(q, &protos, distance)?;
        loss += cross_entropy(&probs, t)? / n;
        let mut dq = vec![0.0; dim];
        if probs[t] >= PROB_FLOOR {
            // ∂CE/∂d_c = δ_ct − π_c
            for (c, p) in protos.vectors.iter().enumerate() {
                let coef = ((c == t) as u8 as f64 - probs[c]) / n;
                if coef == 0.0 {
                    continue;
                }
                let (ga, gb) = distance.grad(q, p)?;
                for i in 0..dim {
                    dq[i] += coef * ga[i];
                    d_protos[c][i] += coef * gb[i];
                }
            }
        }
        d_queries.push(dq);
    }

    let d_members = groups
        .iter()
        .zip(&d_protos)
        .map(|(g, dp)| {
            let k = g.len() as f64;
            let share: Vec<f64> = dp.iter().map(|x| x / k).collect();
            vec![share; g.len()]
        })
        .collect();
    Ok(PrototypeLoss {
        loss,
        d_queries,
        d_members,
    })
}

pub(crate) fn encode_text(params: &EncoderParams, vocab: &Vocabulary, text: &str) -> Encoded {
    params.forward(&vocab.ids(&tokenize(text)))
}

/// Supervised loss `L̄` of an episode and its gradient. Gradients flow
/// through both the query and the support embeddings.
pub fn supervised_episode_loss(
    episode: &Episode,
    params: &EncoderParams,
    vocab: &Vocabulary,
    distance: Distance,
) -> Result<(f64, EncoderGrads)> {
    let ways = episode.classes.len();
    let mut support_cache: Vec<Vec<Encoded>> = vec![Vec::new(); ways];
    for s in &episode.support {
        let slot = support_cache.get_mut(s.class).ok_or(Error::IndexOutOfRange {
            index: s.class,
            len: ways,
        })?;
        slot.push(encode_text(params, vocab, &s.text));
    }
    let query_cache: Vec<Encoded> = episode
        .query
        .iter()
        .map(|q| encode_text(params, vocab, &q.text))
        .collect();
    let groups: Vec<Vec<Vec<f64>>> = support_cache
        .iter()
        .map(|g| g.iter().map(|e| e.output.clone()).collect())
        .collect();
    let queries: Vec<Vec<f64>> = query_cache.iter().map(|e| e.output.clone()).collect();
    let targets: Vec<usize> = episode.query.iter().map(|q| q.class).collect();

    let out = prototype_loss(&queries, &targets, &groups, distance)?;
    let mut grads = EncoderGrads::zeros_like(params);
    for (cache, g) in query_cache.iter().zip(&out.d_queries) {
        grads.accumulate(params, cache, g)?;
    }
    for (caches, gs) in support_cache.iter().zip(&out.d_members) {
        for (cache, g) in caches.iter().zip(gs) {
            grads.accumulate(params, cache, g)?;
        }
    }
    Ok((out.loss, grads))
}

/// Fraction of query points assigned to their own class.
pub fn episode_accuracy(
    episode: &Episode,
    params: &EncoderParams,
    vocab: &Vocabulary,
    distance: Distance,
) -> Result<f64> {
    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); episode.classes.len()];
    for s in &episode.support {
        groups[s.class].push(encode_text(params, vocab, &s.text).output);
    }
    let protos = compute_prototypes(&groups)?;
    let mut correct = 0usize;
    for q in &episode.query {
        let emb = encode_text(params, vocab, &q.text).output;
        if argmax(&classify(&emb, &protos, distance)?) == q.class {
            correct += 1;
        }
    }
    if episode.query.is_empty() {
        return Err(Error::Empty("query set"));
    }
    Ok(correct as f64 / episode.query.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_accuracy: f64,
    pub per_episode_accuracies: Vec<f64>,
    pub episode_count: usize,
}

/// Mean query accuracy over `n_episodes` freshly sampled episodes.
///
/// Episodes are drawn sequentially from `rng` and scored in parallel; the
/// result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<R: Rng>(
    params: &EncoderParams,
    vocab: &Vocabulary,
    dataset: &Dataset,
    split: &ClassSplit,
    part: Part,
    shape: EpisodeShape,
    n_episodes: usize,
    distance: Distance,
    rng: &mut R,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be positive".into()));
    }
    let shape = EpisodeShape { unlabeled: 0, ..shape };
    let episodes = (0..n_episodes)
        .map(|_| sample_episode(dataset, split, part, shape, rng))
        .collect::<Result<Vec<_>>>()?;
    let per_episode_accuracies = episodes
        .par_iter()
        .map(|ep| episode_accuracy(ep, params, vocab, distance))
        .collect::<Result<Vec<_>>>()?;
    let mean_accuracy = per_episode_accuracies.iter().sum::<f64>() / n_episodes as f64;
    Ok(EvalResult {
        mean_accuracy,
        per_episode_accuracies,
        episode_count: n_episodes,
    })
}
