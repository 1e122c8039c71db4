use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::{DecodeConfig, Strategy, ToyLmConfig};
use crate::encoder::AdamConfig;
use crate::error::{Error, Result};
use crate::numerics::Distance;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "PROTAUGMENT_DATA_DIR";

pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    /// Training classes keep only a few records each.
    Low,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Low => "low",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "low" => Ok(Profile::Low),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Everything a training run depends on. Read from TOML; the paraphrase
/// strategy and decoder settings live in the `[decode]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Synonym table for the toy paraphraser; defaults to the file written
    /// next to a generated dataset, or an empty table.
    pub synonyms: Option<PathBuf>,
    pub profile: Profile,
    pub low_per_class: usize,
    pub ways: usize,
    pub shots: usize,
    pub query_per_class: usize,
    pub unlabeled: usize,
    pub paraphrases: usize,
    pub alpha: f64,
    pub max_episodes: u64,
    pub eval_every: u64,
    pub patience: u64,
    pub n_eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub split_ratios: [f64; 3],
    pub group_by_domain: bool,
    pub emb_dim: usize,
    pub out_dim: usize,
    pub distance: Distance,
    /// Sentences paraphrased for the run's diversity report; 0 skips it.
    pub diversity_sentences: usize,
    pub optimizer: AdamConfig,
    pub toy_lm: ToyLmConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: default_data_dir().join("synthetic.jsonl"),
            synonyms: None,
            profile: Profile::Full,
            low_per_class: 10,
            ways: 5,
            shots: 1,
            query_per_class: 5,
            unlabeled: 5,
            paraphrases: 5,
            alpha: 1.0,
            max_episodes: 10_000,
            eval_every: 100,
            patience: 20,
            n_eval_episodes: 600,
            seeds: vec![0, 1, 2, 3, 4],
            split_ratios: [0.5, 0.25, 0.25],
            group_by_domain: false,
            emb_dim: 32,
            out_dim: 32,
            distance: Distance::SquaredEuclidean,
            diversity_sentences: 0,
            optimizer: AdamConfig::default(),
            toy_lm: ToyLmConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn strategy(&self) -> Strategy {
        self.decode.strategy
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies a `key=value` override. Keys may be dotted (`decode.p_mask`)
    /// and values are TOML literals; bare words are taken as strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self)?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let last = parts[parts.len() - 1];
        // optional fields are absent from the serialized form when unset
        if !table.contains_key(last) && !matches!(last, "synonyms" | "max_len") {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        table.insert(last.to_string(), value);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override {assignment:?}: {}", e.message())))?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.ways < 2 {
            return fail(format!("ways must be at least 2, got {}", self.ways));
        }
        if self.shots < 1 || self.query_per_class < 1 {
            return fail("shots and query_per_class must be at least 1".into());
        }
        if self.eval_every == 0 || self.max_episodes < self.eval_every {
            return fail(format!(
                "need 1 <= eval_every <= max_episodes, got {} and {}",
                self.eval_every, self.max_episodes
            ));
        }
        if self.patience == 0 || self.n_eval_episodes == 0 {
            return fail("patience and n_eval_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.emb_dim == 0 || self.out_dim == 0 || self.low_per_class == 0 {
            return fail("dimensions and low_per_class must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        self.decode.validate()?;
        match self.strategy() {
            Strategy::None => {}
            Strategy::StubBt => {
                if self.unlabeled == 0 || self.paraphrases == 0 {
                    return fail("unlabeled and paraphrases must be positive".into());
                }
            }
            Strategy::Dbs | Strategy::DbsUnigram | Strategy::DbsBigram => {
                if self.unlabeled == 0 {
                    return fail("unlabeled must be positive".into());
                }
                if self.paraphrases != self.decode.num_groups {
                    return fail(format!(
                        "beam-search paraphrasing yields one output per group: paraphrases={} but num_groups={}",
                        self.paraphrases, self.decode.num_groups
                    ));
                }
            }
        }
        Ok(())
    }
}
