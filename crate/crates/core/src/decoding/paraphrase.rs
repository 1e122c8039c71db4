use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_bigram_constraints, build_unigram_constraints, diverse_beam_search, select_most_diverse, ConditionalLm,
    ConstraintSet, MaskCurve, SynonymTable,
};
use crate::encoder::tokenize;
use crate::error::{Error, Result};

/// How unlabeled paraphrases are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// No paraphrases; training is supervised only.
    None,
    /// Deterministic single-word synonym rewrites.
    StubBt,
    Dbs,
    #[default]
    DbsUnigram,
    DbsBigram,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "stub_bt" => Ok(Self::StubBt),
            "dbs" => Ok(Self::Dbs),
            "dbs_unigram" => Ok(Self::DbsUnigram),
            "dbs_bigram" => Ok(Self::DbsBigram),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::StubBt => "stub_bt",
            Self::Dbs => "dbs",
            Self::DbsUnigram => "dbs_unigram",
            Self::DbsBigram => "dbs_bigram",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub num_beams: usize,
    pub num_groups: usize,
    pub diversity_penalty: f64,
    pub p_mask: f64,
    pub curve: MaskCurve,
    /// Output length cap; `2 × source length + 5` when unset.
    pub max_len: Option<usize>,
    /// Seeds masking for standalone paraphrasing. Training derives its
    /// masking randomness from the run seed instead.
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::default(),
            num_beams: 15,
            num_groups: 5,
            diversity_penalty: 0.5,
            p_mask: 0.7,
            curve: MaskCurve::Flat,
            max_len: None,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 || self.num_beams % self.num_groups != 0 || self.num_beams == 0 {
            return Err(Error::Config(format!(
                "{} beams cannot be split into {} groups",
                self.num_beams, self.num_groups
            )));
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config(format!("p_mask {} outside [0, 1]", self.p_mask)));
        }
        if !(self.diversity_penalty.is_finite() && self.diversity_penalty >= 0.0) {
            return Err(Error::Config(format!("invalid diversity penalty {}", self.diversity_penalty)));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 5)
    }
}

/// `m` rewrites of `tokens`, each replacing exactly one word that has a
/// synonym. Rewrites cycle over positions first, then over synonyms. A
/// sentence with no replaceable word is returned unchanged.
pub fn stub_back_translate<S: AsRef<str>>(tokens: &[S], synonyms: &SynonymTable, m: usize) -> Vec<String> {
    let options: Vec<(usize, Vec<&str>)> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, synonyms.synonyms_of(t.as_ref())))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let words: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    (0..m)
        .map(|j| {
            let mut out = words.clone();
            if !options.is_empty() {
                let (pos, syns) = &options[j % options.len()];
                out[*pos] = syns[(j / options.len()) % syns.len()];
            }
            out.join(" ")
        })
        .collect()
}

/// `m` paraphrases of `source` using the configured strategy. Beam-search
/// strategies return one output per group, so `m` must equal the group
/// count. `rng` only drives unigram masking.
pub fn generate_paraphrases<R: Rng>(
    lm: &dyn ConditionalLm,
    synonyms: &SynonymTable,
    source: &str,
    m: usize,
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    config.validate()?;
    let tokens = tokenize(source);
    if tokens.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let ids = lm.vocab().ids(&tokens);
    let constraints = match config.strategy {
        Strategy::None => return Err(Error::Config("strategy none produces no paraphrases".into())),
        Strategy::StubBt => return Ok(stub_back_translate(&tokens, synonyms, m)),
        Strategy::Dbs => ConstraintSet::default(),
        Strategy::DbsUnigram => build_unigram_constraints(&ids, config.p_mask, config.curve, rng),
        Strategy::DbsBigram => build_bigram_constraints(&ids),
    };
    if m != config.num_groups {
        return Err(Error::Config(format!(
            "{m} paraphrases requested from {} beam groups",
            config.num_groups
        )));
    }
    let groups = diverse_beam_search(
        lm,
        &ids,
        config.num_beams,
        config.num_groups,
        config.diversity_penalty,
        config.max_len_for(ids.len()),
        &constraints,
    )?;
    groups
        .iter()
        .map(|g| {
            let best = select_most_diverse(&g.beams, &ids)?;
            Ok(best
                .tokens
                .iter()
                .map(|&t| lm.vocab().token(t))
                .collect::<Vec<_>>()
                .join(" "))
        })
        .collect()
}
