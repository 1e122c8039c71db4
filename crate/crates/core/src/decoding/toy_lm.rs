use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ConditionalLm;
use crate::encoder::{Vocabulary, UNK_ID as UNK};
use crate::error::{Error, Result};

/// Groups of interchangeable words. A word may belong to several groups.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymTable {
    groups: Vec<Vec<String>>,
}

impl SynonymTable {
    pub fn from_groups<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let groups = groups
            .into_iter()
            .map(|g| g.into_iter().map(Into::into).collect::<Vec<String>>())
            .filter(|g| g.len() > 1)
            .collect();
        Self { groups }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().flatten().map(String::as_str)
    }

    /// Every other member of every group containing `word`, sorted.
    pub fn synonyms_of(&self, word: &str) -> Vec<&str> {
        let mut out = BTreeSet::new();
        for g in &self.groups {
            if g.iter().any(|w| w == word) {
                out.extend(g.iter().map(String::as_str).filter(|w| *w != word));
            }
        }
        out.into_iter().collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<String>> {
        self.words()
            .map(|w| (w.to_string(), self.synonyms_of(w).into_iter().map(str::to_string).collect()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLmConfig {
    /// Mass on reproducing the aligned source token.
    pub copy_weight: f64,
    /// Mass spread over synonyms of the aligned source token.
    pub synonym_weight: f64,
    /// Add-k smoothing for the bigram component.
    pub smoothing: f64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self {
            copy_weight: 0.55,
            synonym_weight: 0.3,
            smoothing: 0.1,
        }
    }
}

/// A small paraphrase model: a mixture of a smoothed corpus bigram model,
/// a positional copy of the source, and a synonym channel that proposes
/// alternatives for the source token at the current position. Once the
/// prefix is as long as the source, the copy and synonym mass goes to EOS.
#[derive(Debug, Clone)]
pub struct ToySynonymLm {
    vocab: Vocabulary,
    config: ToyLmConfig,
    /// Row `prev` (row `V` is the start state), column `next` (column `V` is EOS).
    bigram: Vec<f64>,
    /// `ln(bg_weight · bigram)`, floored.
    log_bigram: Vec<f64>,
    synonyms: Vec<Vec<usize>>,
    table: SynonymTable,
}

const MIN_LOG_PROB: f64 = -700.0;

fn floor_ln(p: f64, offset: f64) -> f64 {
    if p > 0.0 {
        (p.ln() + offset).max(MIN_LOG_PROB)
    } else {
        MIN_LOG_PROB
    }
}

impl ToySynonymLm {
    pub fn new<S: AsRef<str>>(corpus: &[Vec<S>], table: &SynonymTable, config: ToyLmConfig) -> Result<Self> {
        let bg_weight = 1.0 - config.copy_weight - config.synonym_weight;
        if config.copy_weight < 0.0 || config.synonym_weight < 0.0 || bg_weight <= 0.0 || config.smoothing <= 0.0 {
            return Err(Error::Config(format!("invalid toy LM weights {config:?}")));
        }
        let vocab = Vocabulary::build(
            corpus
                .iter()
                .flatten()
                .map(|t| t.as_ref().to_string())
                .chain(table.words().map(str::to_string)),
        );
        let v = vocab.len();
        let width = v + 1;
        let mut counts = vec![0.0; width * width];
        for sentence in corpus {
            let mut prev = v;
            for tok in sentence {
                let id = vocab.id(tok.as_ref());
                counts[prev * width + id] += 1.0;
                prev = id;
            }
            counts[prev * width + v] += 1.0;
        }
        // UNK is never predicted, so V columns share the smoothing mass.
        let mut bigram = vec![0.0; width * width];
        for row in 0..width {
            let cells = &counts[row * width..(row + 1) * width];
            let total: f64 = cells.iter().enumerate().filter(|(c, _)| *c != UNK).map(|(_, x)| x).sum();
            let denom = total + config.smoothing * v as f64;
            for col in 0..width {
                if col != UNK {
                    bigram[row * width + col] = (cells[col] + config.smoothing) / denom;
                }
            }
        }
        let bg_ln = bg_weight.ln();
        let log_bigram = bigram.iter().map(|&p| floor_ln(p, bg_ln)).collect();
        let synonyms = (0..v)
            .map(|id| {
                if id == UNK {
                    return Vec::new();
                }
                table.synonyms_of(vocab.token(id)).iter().map(|w| vocab.id(w)).collect()
            })
            .collect();
        Ok(Self {
            vocab,
            config,
            bigram,
            log_bigram,
            synonyms,
            table: table.clone(),
        })
    }

    pub fn synonym_table(&self) -> &SynonymTable {
        &self.table
    }

    pub fn config(&self) -> ToyLmConfig {
        self.config
    }
}

impl ConditionalLm for ToySynonymLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn log_probs(&self, source: &[usize], prefix: &[usize]) -> Vec<f64> {
        let v = self.vocab.len();
        let width = v + 1;
        let prev = prefix.last().copied().filter(|&p| p < v).unwrap_or(v);
        let row = prev * width..(prev + 1) * width;
        let bg_weight = 1.0 - self.config.copy_weight - self.config.synonym_weight;
        let mut out = self.log_bigram[row.clone()].to_vec();
        let bigram = &self.bigram[row];
        // only the tokens the channel spikes need a fresh logarithm
        let mut spike = |tok: usize, mass: f64| {
            out[tok] = floor_ln(bigram[tok] * bg_weight + mass, 0.0);
        };
        let channel = self.config.copy_weight + self.config.synonym_weight;
        match source.get(prefix.len()).copied() {
            Some(target) if target != UNK && target < v => {
                let syns = &self.synonyms[target];
                if syns.is_empty() {
                    spike(target, channel);
                } else {
                    spike(target, self.config.copy_weight);
                    let share = self.config.synonym_weight / syns.len() as f64;
                    for &s in syns {
                        spike(s, share);
                    }
                }
            }
            // an unknown source word cannot be copied; the bigram model takes over
            Some(_) => {
                for (tok, x) in out.iter_mut().enumerate() {
                    if tok != UNK {
                        *x = floor_ln(bigram[tok], 0.0);
                    }
                }
            }
            None => spike(v, channel),
        }
        out
    }
}
