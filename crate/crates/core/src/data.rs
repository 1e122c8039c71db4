//! Labeled utterance datasets, class splits and episode sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::tokenize;
use crate::error::{Error, Result};

/// One line of the JSON-lines dataset format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    by_class: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_class.entry(r.label.clone()).or_default().push(i);
        }
        Ok(Self { records, by_class })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.by_class.keys().map(String::as_str)
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn class_records(&self, class: &str) -> &[usize] {
        self.by_class.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Domain of a class; classes without a tag form their own domain.
    pub fn domain_of(&self, class: &str) -> String {
        self.class_records(class)
            .iter()
            .find_map(|&i| self.records[i].domain.clone())
            .unwrap_or_else(|| class.to_string())
    }
}

/// Reads a JSON-lines file with `text`, `label` and optional `domain`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if tokenize(&record.text).is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "text has no tokens".into(),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "empty dataset file".into(),
        });
    }
    Dataset::new(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// Pairwise-disjoint class partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl ClassSplit {
    pub fn part(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }
}

fn part_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientClasses {
            needed: 3,
            available: n,
        });
    }
    let mut sizes = [
        (n as f64 * a).round() as usize,
        (n as f64 * b).round() as usize,
        0,
    ];
    sizes[0] = sizes[0].clamp(1, n - 2);
    sizes[1] = sizes[1].clamp(1, n - sizes[0] - 1);
    sizes[2] = n - sizes[0] - sizes[1];
    Ok(sizes)
}

/// Randomly partitions the classes into train/valid/test.
///
/// With `group_by_domain`, whole domains are assigned to a part so that no
/// domain contributes classes to two parts; part sizes then only
/// approximate the ratios.
pub fn split_classes(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
    group_by_domain: bool,
) -> Result<ClassSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<String> = dataset.classes().map(str::to_string).collect();
    let targets = part_sizes(classes.len(), ratios)?;
    let mut parts: [Vec<String>; 3] = Default::default();

    if group_by_domain {
        let mut domains: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for c in &classes {
            domains.entry(dataset.domain_of(c)).or_default().push(c.clone());
        }
        if domains.len() < 3 {
            return Err(Error::InsufficientClasses {
                needed: 3,
                available: domains.len(),
            });
        }
        let mut groups: Vec<Vec<String>> = domains.into_values().collect();
        groups.shuffle(&mut rng);
        // Seed each part with one domain, then fill by largest deficit.
        for (i, g) in groups.drain(..3).enumerate() {
            parts[i].extend(g);
        }
        for g in groups {
            let k = (0..3)
                .max_by_key(|&k| (targets[k] as isize - parts[k].len() as isize, -(k as isize)))
                .unwrap();
            parts[k].extend(g);
        }
    } else {
        let mut shuffled = classes;
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for (k, &size) in targets.iter().enumerate() {
            parts[k].extend(it.by_ref().take(size));
        }
    }
    for p in parts.iter_mut() {
        p.sort();
    }
    let [train, valid, test] = parts;
    Ok(ClassSplit { train, valid, test })
}

/// Caps every training class at `n_per_class` records chosen with a seeded
/// RNG. Validation and test classes keep all their records.
pub fn restrict_low_profile(
    dataset: &Dataset,
    split: &ClassSplit,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; dataset.len()];
    for class in &split.train {
        let idx = dataset.class_records(class);
        if idx.len() > n_per_class {
            let chosen: BTreeSet<usize> = idx
                .iter()
                .copied()
                .choose_multiple(&mut rng, n_per_class)
                .into_iter()
                .collect();
            for &i in idx {
                keep[i] = chosen.contains(&i);
            }
        }
    }
    let records = dataset
        .records()
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then(|| r.clone()))
        .collect();
    Dataset::new(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub text: String,
    /// Index into [`Episode::classes`].
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub classes: Vec<String>,
    pub support: Vec<Labeled>,
    pub query: Vec<Labeled>,
    pub unlabeled: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub ways: usize,
    pub shots: usize,
    pub query_per_class: usize,
    pub unlabeled: usize,
}

/// `count` distinct record texts drawn uniformly from the whole dataset.
pub fn sample_unlabeled<R: Rng>(dataset: &Dataset, count: usize, rng: &mut R) -> Result<Vec<String>> {
    if count > dataset.len() {
        return Err(Error::InsufficientRecords {
            class: "<unlabeled pool>".into(),
            needed: count,
            available: dataset.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, dataset.len(), count)
        .into_iter()
        .map(|i| dataset.records()[i].text.clone())
        .collect())
}

/// Samples a C-way K-shot episode from one part of the split, plus `U`
/// unlabeled texts drawn from every record of the dataset.
pub fn sample_episode<R: Rng>(
    dataset: &Dataset,
    split: &ClassSplit,
    part: Part,
    shape: EpisodeShape,
    rng: &mut R,
) -> Result<Episode> {
    let EpisodeShape {
        ways,
        shots,
        query_per_class,
        unlabeled,
    } = shape;
    if ways == 0 || shots == 0 {
        return Err(Error::Config("episodes need at least one way and one shot".into()));
    }
    let candidates = split.part(part);
    if candidates.len() < ways {
        return Err(Error::InsufficientClasses {
            needed: ways,
            available: candidates.len(),
        });
    }
    let per_class = shots + query_per_class;
    let eligible: Vec<&String> = candidates
        .iter()
        .filter(|c| dataset.class_records(c).len() >= per_class)
        .collect();
    if eligible.len() < ways {
        let short = candidates
            .iter()
            .find(|c| dataset.class_records(c).len() < per_class)
            .expect("some class is short");
        return Err(Error::InsufficientRecords {
            class: short.clone(),
            needed: per_class,
            available: dataset.class_records(short).len(),
        });
    }

    let classes: Vec<String> = eligible
        .choose_multiple(rng, ways)
        .map(|c| (*c).clone())
        .collect();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(ways * query_per_class);
    for (ci, class) in classes.iter().enumerate() {
        let picked: Vec<usize> = dataset
            .class_records(class)
            .choose_multiple(rng, per_class)
            .copied()
            .collect();
        for (j, &ri) in picked.iter().enumerate() {
            let item = Labeled {
                text: dataset.records()[ri].text.clone(),
                class: ci,
            };
            if j < shots {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    let unlabeled = sample_unlabeled(dataset, unlabeled, rng)?;
    Ok(Episode {
        classes,
        support,
        query,
        unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rec(text: &str, label: &str, domain: Option<&str>) -> Record {
        Record {
            text: text.into(),
            label: label.into(),
            domain: domain.map(Into::into),
        }
    }

    fn grid(n_classes: usize, per_class: usize) -> Dataset {
        let mut records = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                records.push(rec(&format!("word{c} item{i}"), &format!("class{c:02}"), None));
            }
        }
        Dataset::new(records).unwrap()
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_two_lines() {
        let f = write_lines(&[
            r#"{"text": "wake me up at 7", "label": "alarm_set"}"#,
            r#"{"text": "play some jazz", "label": "play_music", "domain": "audio"}"#,
        ]);
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records()[1].domain.as_deref(), Some("audio"));
    }

    #[test]
    fn load_reports_line_of_missing_label() {
        let f = write_lines(&[
            r#"{"text": "a", "label": "x"}"#,
            r#"{"text": "b"}"#,
        ]);
        match load_dataset(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = write_lines(&[]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = grid(10, 2);
        let s = split_classes(&ds, (0.5, 0.2, 0.3), 4, false).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (5, 2, 3));
        assert_eq!(s, split_classes(&ds, (0.5, 0.2, 0.3), 4, false).unwrap());
        let all: BTreeSet<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_classes(&grid(2, 1), (0.5, 0.25, 0.25), 0, false),
            Err(Error::InsufficientClasses { .. })
        ));
        assert!(split_classes(&grid(5, 1), (0.5, 0.5, 0.5), 0, false).is_err());
    }

    #[test]
    fn domain_grouping_never_straddles() {
        let mut records = Vec::new();
        for (domain, n) in [("a", 3), ("b", 2), ("c", 2), ("d", 1), ("e", 2)] {
            for c in 0..n {
                records.push(rec("x y", &format!("{domain}_{c}"), Some(domain)));
            }
        }
        let ds = Dataset::new(records).unwrap();
        for seed in 0..50 {
            let s = split_classes(&ds, (0.5, 0.25, 0.25), seed, true).unwrap();
            let mut owner: BTreeMap<String, usize> = BTreeMap::new();
            for (k, part) in [&s.train, &s.valid, &s.test].iter().enumerate() {
                assert!(!part.is_empty());
                for c in part.iter() {
                    let d = ds.domain_of(c);
                    assert_eq!(*owner.entry(d).or_insert(k), k, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn low_profile_caps_only_training_classes() {
        let mut records = Vec::new();
        for i in 0..170 {
            records.push(rec(&format!("big {i}"), "big", None));
        }
        for i in 0..7 {
            records.push(rec(&format!("small {i}"), "small", None));
        }
        for i in 0..40 {
            records.push(rec(&format!("held {i}"), "held", None));
        }
        let ds = Dataset::new(records).unwrap();
        let split = ClassSplit {
            train: vec!["big".into(), "small".into()],
            valid: vec![],
            test: vec!["held".into()],
        };
        let low = restrict_low_profile(&ds, &split, 10, 3).unwrap();
        assert_eq!(low.class_records("big").len(), 10);
        assert_eq!(low.class_records("small").len(), 7);
        assert_eq!(low.class_records("held").len(), 40);
        assert_eq!(low, restrict_low_profile(&ds, &split, 10, 3).unwrap());
        assert_ne!(low, restrict_low_profile(&ds, &split, 10, 4).unwrap());
    }

    #[test]
    fn episode_counts() {
        let ds = grid(12, 10);
        let split = split_classes(&ds, (0.5, 0.25, 0.25), 0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = EpisodeShape { ways: 5, shots: 1, query_per_class: 5, unlabeled: 5 };
        let ep = sample_episode(&ds, &split, Part::Train, shape, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 25);
        assert_eq!(ep.unlabeled.len(), 5);

        let shape = EpisodeShape { ways: 3, shots: 2, query_per_class: 4, unlabeled: 0 };
        let ep = sample_episode(&ds, &split, Part::Train, shape, &mut rng).unwrap();
        for c in 0..3 {
            assert_eq!(ep.support.iter().filter(|s| s.class == c).count(), 2);
            assert_eq!(ep.query.iter().filter(|s| s.class == c).count(), 4);
        }
    }

    #[test]
    fn episode_support_and_query_are_disjoint() {
        let ds = grid(8, 12);
        let split = split_classes(&ds, (0.5, 0.25, 0.25), 2, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = EpisodeShape { ways: 4, shots: 2, query_per_class: 5, unlabeled: 3 };
        for _ in 0..200 {
            let ep = sample_episode(&ds, &split, Part::Train, shape, &mut rng).unwrap();
            let s: BTreeSet<&str> = ep.support.iter().map(|x| x.text.as_str()).collect();
            assert!(ep.query.iter().all(|q| !s.contains(q.text.as_str())));
            let classes: BTreeSet<&String> = ep.classes.iter().collect();
            assert_eq!(classes.len(), 4);
            assert!(ep.classes.iter().all(|c| split.train.contains(c)));
        }
    }

    #[test]
    fn episode_errors_name_the_class() {
        let mut records = Vec::new();
        for c in 0..6 {
            let n = if c == 2 { 3 } else { 10 };
            for i in 0..n {
                records.push(rec(&format!("t{i}"), &format!("c{c}"), None));
            }
        }
        let ds = Dataset::new(records).unwrap();
        let split = ClassSplit {
            train: (0..6).map(|c| format!("c{c}")).collect(),
            valid: vec![],
            test: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = EpisodeShape { ways: 6, shots: 1, query_per_class: 5, unlabeled: 0 };
        match sample_episode(&ds, &split, Part::Train, shape, &mut rng) {
            Err(Error::InsufficientRecords { class, .. }) => assert_eq!(class, "c2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            sample_episode(&ds, &split, Part::Valid, shape, &mut rng),
            Err(Error::InsufficientClasses { .. })
        ));
    }

    #[test]
    fn every_eligible_class_is_eventually_sampled() {
        let ds = grid(20, 8);
        let split = split_classes(&ds, (0.5, 0.25, 0.25), 9, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = EpisodeShape { ways: 5, shots: 1, query_per_class: 5, unlabeled: 5 };
        let mut seen = BTreeSet::new();
        for _ in 0..1000 {
            let ep = sample_episode(&ds, &split, Part::Train, shape, &mut rng).unwrap();
            seen.extend(ep.classes);
        }
        assert_eq!(seen.len(), split.train.len());
    }

    #[test]
    fn unlabeled_pool_spans_all_parts() {
        let ds = grid(12, 10);
        let split = split_classes(&ds, (0.5, 0.25, 0.25), 5, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = EpisodeShape { ways: 2, shots: 1, query_per_class: 1, unlabeled: 5 };
        let mut from_test = false;
        for _ in 0..200 {
            let ep = sample_episode(&ds, &split, Part::Train, shape, &mut rng).unwrap();
            let set: BTreeSet<&String> = ep.unlabeled.iter().collect();
            assert_eq!(set.len(), 5);
            from_test |= ep.unlabeled.iter().any(|t| {
                let r = ds.records().iter().find(|r| &r.text == t).unwrap();
                split.test.contains(&r.label)
            });
        }
        assert!(from_test);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ds = grid(12, 10);
        let split = split_classes(&ds, (0.5, 0.25, 0.25), 5, false).unwrap();
        let shape = EpisodeShape { ways: 5, shots: 2, query_per_class: 3, unlabeled: 5 };
        let a = sample_episode(&ds, &split, Part::Train, shape, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample_episode(&ds, &split, Part::Train, shape, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }
}
