//! The trainable sentence encoder: mean of token embeddings followed by a
//! single `tanh` projection.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::{AdamConfig, OptimizerState};

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Lowercases, splits on whitespace and detaches every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Dense token index. Index 0 is always [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the sorted set of all tokens seen.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| t != UNK)
            .collect();
        Self::from_tokens(std::iter::once(UNK.to_string()).chain(set).collect())
    }

    /// `tokens[0]` must be [`UNK`].
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        debug_assert_eq!(tokens.first().map(String::as_str), Some(UNK));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Encoder weights. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub out_dim: usize,
    /// `vocab_size × emb_dim`
    pub embeddings: Vec<f64>,
    /// `out_dim × emb_dim`
    pub weights: Vec<f64>,
    /// `out_dim`
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embeddings: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward-pass intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(vocab_size: usize, emb_dim: usize, out_dim: usize) -> Self {
        Self {
            vocab_size,
            emb_dim,
            out_dim,
            embeddings: vec![0.0; vocab_size * emb_dim],
            weights: vec![0.0; out_dim * emb_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Embeddings `U(−0.1, 0.1)`, projection `U(−1/√emb_dim, 1/√emb_dim)`,
    /// zero bias.
    pub fn init<R: Rng>(vocab_size: usize, emb_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(vocab_size, emb_dim, out_dim);
        for x in params.embeddings.iter_mut() {
            *x = rng.gen_range(-0.1..0.1);
        }
        let bound = 1.0 / (emb_dim as f64).sqrt();
        for x in params.weights.iter_mut() {
            *x = rng.gen_range(-bound..bound);
        }
        params
    }

    pub fn num_params(&self) -> usize {
        self.embeddings.len() + self.weights.len() + self.bias.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend_from_slice(&self.embeddings);
        flat.extend_from_slice(&self.weights);
        flat.extend_from_slice(&self.bias);
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let (e, rest) = flat.split_at(self.embeddings.len());
        let (w, b) = rest.split_at(self.weights.len());
        self.embeddings.copy_from_slice(e);
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    fn embedding_row(&self, id: usize) -> &[f64] {
        &self.embeddings[id * self.emb_dim..(id + 1) * self.emb_dim]
    }

    /// Forward pass on token ids; an empty sentence is read as a lone UNK.
    pub fn forward(&self, ids: &[usize]) -> Encoded {
        let ids: Vec<usize> = if ids.is_empty() {
            vec![UNK_ID]
        } else {
            ids.iter()
                .map(|&i| if i < self.vocab_size { i } else { UNK_ID })
                .collect()
        };
        let mut pooled = vec![0.0; self.emb_dim];
        for &id in &ids {
            for (p, e) in pooled.iter_mut().zip(self.embedding_row(id)) {
                *p += e;
            }
        }
        let n = ids.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        let output = (0..self.out_dim)
            .map(|r| {
                let row = &self.weights[r * self.emb_dim..(r + 1) * self.emb_dim];
                let z: f64 = row.iter().zip(&pooled).map(|(w, h)| w * h).sum::<f64>() + self.bias[r];
                z.tanh()
            })
            .collect();
        Encoded {
            ids,
            pooled,
            output,
        }
    }
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            embeddings: vec![0.0; params.embeddings.len()],
            weights: vec![0.0; params.weights.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.embeddings.len() + self.weights.len() + self.bias.len());
        flat.extend_from_slice(&self.embeddings);
        flat.extend_from_slice(&self.weights);
        flat.extend_from_slice(&self.bias);
        flat
    }

    /// `self = a·self + b·other`
    pub fn combine(&mut self, a: f64, other: &EncoderGrads, b: f64) {
        for (x, y) in self
            .embeddings
            .iter_mut()
            .chain(self.weights.iter_mut())
            .chain(self.bias.iter_mut())
            .zip(other.embeddings.iter().chain(&other.weights).chain(&other.bias))
        {
            *x = a * *x + b * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.weights)
            .chain(&self.bias)
            .all(|x| x.is_finite())
    }

    /// Adds the gradient of `upstream · encode(x)` for a cached forward pass.
    pub fn accumulate(&mut self, params: &EncoderParams, cache: &Encoded, upstream: &[f64]) -> Result<()> {
        if upstream.len() != params.out_dim {
            return Err(Error::DimensionMismatch {
                expected: params.out_dim,
                found: upstream.len(),
            });
        }
        let d_emb = params.emb_dim;
        let mut d_pooled = vec![0.0; d_emb];
        for r in 0..params.out_dim {
            let y = cache.output[r];
            let dz = upstream[r] * (1.0 - y * y);
            if dz == 0.0 {
                continue;
            }
            self.bias[r] += dz;
            let w_row = &params.weights[r * d_emb..(r + 1) * d_emb];
            let g_row = &mut self.weights[r * d_emb..(r + 1) * d_emb];
            for c in 0..d_emb {
                g_row[c] += dz * cache.pooled[c];
                d_pooled[c] += dz * w_row[c];
            }
        }
        let scale = 1.0 / cache.ids.len() as f64;
        for &id in &cache.ids {
            let row = &mut self.embeddings[id * d_emb..(id + 1) * d_emb];
            for (g, d) in row.iter_mut().zip(&d_pooled) {
                *g += d * scale;
            }
        }
        Ok(())
    }
}

/// Encodes a tokenized sentence.
pub fn encode<S: AsRef<str>>(params: &EncoderParams, tokens: &[S], vocab: &Vocabulary) -> Vec<f64> {
    params.forward(&vocab.ids(tokens)).output
}

/// Gradient of `upstream · encode(tokens)` with respect to every parameter.
pub fn encode_backward<S: AsRef<str>>(
    params: &EncoderParams,
    tokens: &[S],
    vocab: &Vocabulary,
    upstream: &[f64],
) -> Result<EncoderGrads> {
    let cache = params.forward(&vocab.ids(tokens));
    let mut grads = EncoderGrads::zeros_like(params);
    grads.accumulate(params, &cache, upstream)?;
    Ok(grads)
}
