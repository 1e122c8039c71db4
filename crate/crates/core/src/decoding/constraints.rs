use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Tokens and token pairs that decoding must never produce.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub banned_unigrams: BTreeSet<usize>,
    pub banned_bigrams: BTreeSet<(usize, usize)>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.banned_unigrams.is_empty() && self.banned_bigrams.is_empty()
    }

    /// Whether appending `token` after `prev` breaks a constraint.
    pub fn forbids(&self, prev: Option<usize>, token: usize) -> bool {
        self.banned_unigrams.contains(&token)
            || prev.is_some_and(|p| self.banned_bigrams.contains(&(p, token)))
    }

    /// Whether a finished sequence breaks any constraint.
    pub fn violated_by(&self, tokens: &[usize]) -> bool {
        tokens.iter().any(|t| self.banned_unigrams.contains(t))
            || tokens.windows(2).any(|w| self.banned_bigrams.contains(&(w[0], w[1])))
    }

    pub fn union(mut self, other: ConstraintSet) -> Self {
        self.banned_unigrams.extend(other.banned_unigrams);
        self.banned_bigrams.extend(other.banned_bigrams);
        self
    }
}

/// Shape of the per-position masking probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCurve {
    #[default]
    Flat,
    /// Higher probability on the first tokens.
    Down,
    /// Higher probability on the last tokens.
    Up,
}

/// Masking probability for each of `n` positions. Ramps are linear between
/// `min(1, 2p)` and `2p − min(1, 2p)`, so every curve averages to `p` and
/// stays in `[0, 1]`.
pub fn masking_probabilities(n: usize, p_mask: f64, curve: MaskCurve) -> Vec<f64> {
    let p = p_mask.clamp(0.0, 1.0);
    if n <= 1 || curve == MaskCurve::Flat {
        return vec![p; n];
    }
    let high = (2.0 * p).min(1.0);
    let low = 2.0 * p - high;
    let (start, end) = match curve {
        MaskCurve::Down => (high, low),
        MaskCurve::Up => (low, high),
        MaskCurve::Flat => unreachable!(),
    };
    (0..n)
        .map(|i| {
            let frac = i as f64 / (n - 1) as f64;
            (start + (end - start) * frac).clamp(0.0, 1.0)
        })
        .collect()
}

/// Bans each source token independently with its positional probability.
pub fn build_unigram_constraints<R: Rng>(
    source: &[usize],
    p_mask: f64,
    curve: MaskCurve,
    rng: &mut R,
) -> ConstraintSet {
    let probs = masking_probabilities(source.len(), p_mask, curve);
    let banned_unigrams = source
        .iter()
        .zip(probs)
        .filter_map(|(&tok, p)| (rng.gen::<f64>() < p).then_some(tok))
        .collect();
    ConstraintSet {
        banned_unigrams,
        banned_bigrams: BTreeSet::new(),
    }
}

/// Bans every adjacent token pair of the source.
pub fn build_bigram_constraints(source: &[usize]) -> ConstraintSet {
    ConstraintSet {
        banned_unigrams: BTreeSet::new(),
        banned_bigrams: source.windows(2).map(|w| (w[0], w[1])).collect(),
    }
}
