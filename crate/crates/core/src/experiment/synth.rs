//! Synthetic intent corpus.
//!
//! Every class owns an action concept written with one of several invented
//! synonym words. Classes of the same domain share an object concept, and
//! all classes share the carrier templates and their English fillers, so
//! classes are separable by keyword while overlapping lexically.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::decoding::SynonymTable;
use crate::error::{Error, Result};

const TEMPLATES: &[&str] = &[
    "i {want} to {A} my {O}",
    "{can} you {A} my {O} {please}",
    "how do i {A} the {O}",
    "{please} {A} the {O} {now}",
    "i {want} you to {A} this {O}",
    "{can} i {A} a {O} {now}",
    "{help} me {A} my {O}",
    "is it possible to {A} the {O} {quickly}",
    "{A} my {O} {please}",
    "what does it take to {A} a {O}",
];

const FILLERS: &[(&str, &[&str])] = &[
    ("want", &["want", "need", "wish"]),
    ("can", &["can", "could"]),
    ("please", &["please", "kindly"]),
    ("now", &["now", "today", "soon"]),
    ("help", &["help", "assist"]),
    ("quickly", &["quickly", "fast", "promptly"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub n_domains: usize,
    /// Synonymous surface forms of each class keyword.
    pub keyword_variants: usize,
    /// Synonymous surface forms of each domain object.
    pub object_variants: usize,
    /// When positive, classes draw their action from a pool of this many
    /// concepts and are identified by the (action, domain) pair, so every
    /// word of a held-out class also occurs in other classes.
    pub action_pool: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            per_class: 30,
            n_domains: 4,
            keyword_variants: 3,
            object_variants: 3,
            action_pool: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<Record>,
    pub synonyms: SynonymTable,
}

fn pseudo_word<R: Rng>(rng: &mut R, taken: &mut BTreeSet<String>) -> String {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if rng.gen_bool(0.5) {
            w.push_str(["n", "x", "k", "r"].choose(rng).unwrap());
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

pub fn build_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.n_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if config.n_domains == 0 || config.keyword_variants == 0 || config.object_variants == 0 {
        return Err(Error::Config("domains and variant counts must be positive".into()));
    }
    if config.action_pool > 0 && config.n_classes > config.action_pool * config.n_domains {
        return Err(Error::Config(format!(
            "{} classes need more than {} actions x {} domains",
            config.n_classes, config.action_pool, config.n_domains
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken: BTreeSet<String> = FILLERS.iter().flat_map(|(_, v)| v.iter().map(|w| w.to_string())).collect();
    for t in TEMPLATES {
        taken.extend(t.split(' ').map(str::to_string));
    }
    let objects: Vec<Vec<String>> = (0..config.n_domains)
        .map(|_| (0..config.object_variants).map(|_| pseudo_word(&mut rng, &mut taken)).collect())
        .collect();
    let n_actions = if config.action_pool > 0 { config.action_pool } else { config.n_classes };
    let actions: Vec<Vec<String>> = (0..n_actions)
        .map(|_| (0..config.keyword_variants).map(|_| pseudo_word(&mut rng, &mut taken)).collect())
        .collect();

    let mut records = Vec::with_capacity(config.n_classes * config.per_class);
    for c in 0..config.n_classes {
        let domain = c % config.n_domains;
        let action = match config.action_pool {
            0 => &actions[c],
            k => &actions[(c / config.n_domains) % k],
        };
        for _ in 0..config.per_class {
            let template = TEMPLATES.choose(&mut rng).unwrap();
            let words: Vec<String> = template
                .split(' ')
                .map(|slot| match slot {
                    "{A}" => action.choose(&mut rng).unwrap().clone(),
                    "{O}" => objects[domain].choose(&mut rng).unwrap().clone(),
                    s if s.starts_with('{') => {
                        let key = &s[1..s.len() - 1];
                        let (_, forms) = FILLERS.iter().find(|(k, _)| *k == key).expect("template slot");
                        forms.choose(&mut rng).unwrap().to_string()
                    }
                    s => s.to_string(),
                })
                .collect();
            records.push(Record {
                text: words.join(" "),
                label: format!("intent_{c:02}"),
                domain: Some(format!("domain_{domain}")),
            });
        }
    }
    let groups = FILLERS
        .iter()
        .map(|(_, forms)| forms.iter().map(|w| w.to_string()).collect::<Vec<_>>())
        .chain(objects)
        .chain(actions);
    Ok(SyntheticCorpus {
        records,
        synonyms: SynonymTable::from_groups(groups),
    })
}

/// Where the synonym table of a generated dataset is written.
pub fn synonyms_path(dataset_path: &Path) -> PathBuf {
    dataset_path.with_extension("synonyms.json")
}

/// Writes the corpus as JSON lines to `path` and its synonym table next to
/// it (see [`synonyms_path`]).
pub fn generate_synthetic_dataset(config: &SynthConfig, path: &Path) -> Result<SyntheticCorpus> {
    let corpus = build_synthetic(config)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in &corpus.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    corpus.synonyms.save(&synonyms_path(path))?;
    Ok(corpus)
}

impl SyntheticCorpus {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.records.clone())
    }
}
