use serde::{Deserialize, Serialize};

use super::{ConditionalLm, ConstraintSet};
use crate::error::{Error, Result};
use crate::metrics::bleu;

/// A partial or finished output sequence. `score` is the summed model
/// log-probability; `adjusted` additionally includes diversity penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub adjusted: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Self {
            tokens: Vec::new(),
            score: 0.0,
            adjusted: 0.0,
            finished: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGroup {
    pub beams: Vec<Hypothesis>,
}

struct Candidate {
    parent: usize,
    token: Option<usize>,
    score: f64,
    adjusted: f64,
}

/// One search step for one group. Finished beams compete unchanged with the
/// extensions of unfinished ones. Returns the kept hypotheses together with
/// the token (or EOS) each one chose at this step, if it was extended.
fn advance(
    lm: &dyn ConditionalLm,
    source: &[usize],
    beams: &[Hypothesis],
    width: usize,
    constraints: &ConstraintSet,
    penalty: Option<(&[usize], f64)>,
    last_step: bool,
) -> Result<Vec<(Hypothesis, Option<usize>)>> {
    let eos = lm.eos();
    let mut cands = Vec::new();
    for (i, beam) in beams.iter().enumerate() {
        if beam.finished {
            cands.push(Candidate {
                parent: i,
                token: None,
                score: beam.score,
                adjusted: beam.adjusted,
            });
            continue;
        }
        let lp = lm.log_probs(source, &beam.tokens);
        if lp.len() != eos + 1 {
            return Err(Error::DimensionMismatch {
                expected: eos + 1,
                found: lp.len(),
            });
        }
        let prev = beam.tokens.last().copied();
        let mut local = Vec::with_capacity(lp.len());
        for (tok, &l) in lp.iter().enumerate() {
            if tok == eos {
                if beam.tokens.is_empty() {
                    continue;
                }
            } else if constraints.forbids(prev, tok) {
                continue;
            }
            if !l.is_finite() {
                return Err(Error::NonFinite("language model log-probability"));
            }
            let hamming = penalty.map_or(0.0, |(counts, lambda)| lambda * counts[tok] as f64);
            local.push(Candidate {
                parent: i,
                token: Some(tok),
                score: beam.score + l,
                adjusted: beam.adjusted + l - hamming,
            });
        }
        // No beam can place more than `width` extensions in the final cut,
        // so only its own best `width` need to compete.
        let rank = |a: &Candidate, b: &Candidate| b.adjusted.total_cmp(&a.adjusted).then(a.token.cmp(&b.token));
        if local.len() > width {
            local.select_nth_unstable_by(width - 1, rank);
            local.truncate(width);
        }
        local.sort_by_key(|c| c.token);
        cands.extend(local);
    }
    if cands.is_empty() {
        return Err(Error::ConstraintsExhaustVocabulary);
    }
    // stable: ties keep parent order, then token order
    cands.sort_by(|a, b| b.adjusted.total_cmp(&a.adjusted));
    cands.truncate(width);
    Ok(cands
        .into_iter()
        .map(|c| {
            let parent = &beams[c.parent];
            let mut h = Hypothesis {
                tokens: parent.tokens.clone(),
                score: c.score,
                adjusted: c.adjusted,
                finished: parent.finished,
            };
            match c.token {
                Some(t) if t == eos => h.finished = true,
                Some(t) => {
                    h.tokens.push(t);
                    h.finished = last_step;
                }
                None => {}
            }
            (h, c.token)
        })
        .collect())
}

fn check_lengths(width: usize, max_len: usize) -> Result<()> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Standard beam search. Each output has at most `max_len` tokens; a
/// sequence that reaches `max_len` without EOS is closed as is. Outputs
/// are sorted by score, best first.
pub fn beam_search(
    lm: &dyn ConditionalLm,
    source: &[usize],
    width: usize,
    max_len: usize,
    constraints: &ConstraintSet,
) -> Result<Vec<Hypothesis>> {
    check_lengths(width, max_len)?;
    let mut beams = vec![Hypothesis::root()];
    for step in 0..max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        beams = advance(lm, source, &beams, width, constraints, None, step + 1 == max_len)?
            .into_iter()
            .map(|(h, _)| h)
            .collect();
    }
    beams.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(beams)
}

/// Diverse beam search: `num_beams` split into `num_groups` groups that
/// advance in turn at every step. A group's candidate scores are lowered by
/// `penalty` times the number of times earlier groups chose the same token
/// at that step. Each group's beams are sorted by adjusted score.
pub fn diverse_beam_search(
    lm: &dyn ConditionalLm,
    source: &[usize],
    num_beams: usize,
    num_groups: usize,
    penalty: f64,
    max_len: usize,
    constraints: &ConstraintSet,
) -> Result<Vec<BeamGroup>> {
    if num_groups == 0 || num_beams % num_groups != 0 {
        return Err(Error::Config(format!(
            "{num_beams} beams cannot be split into {num_groups} groups"
        )));
    }
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(Error::Config(format!("invalid diversity penalty {penalty}")));
    }
    let width = num_beams / num_groups;
    check_lengths(width, max_len)?;
    let mut groups = vec![vec![Hypothesis::root()]; num_groups];
    for step in 0..max_len {
        if groups.iter().flatten().all(|b| b.finished) {
            break;
        }
        let mut counts = vec![0usize; lm.eos() + 1];
        for group in groups.iter_mut() {
            if group.iter().all(|b| b.finished) {
                continue;
            }
            let next = advance(
                lm,
                source,
                group,
                width,
                constraints,
                Some((&counts, penalty)),
                step + 1 == max_len,
            )?;
            for (_, tok) in &next {
                if let Some(t) = tok {
                    counts[*t] += 1;
                }
            }
            *group = next.into_iter().map(|(h, _)| h).collect();
        }
    }
    Ok(groups
        .into_iter()
        .map(|mut beams| {
            beams.sort_by(|a, b| b.adjusted.total_cmp(&a.adjusted));
            BeamGroup { beams }
        })
        .collect())
}

/// The beam with the lowest BLEU against the source. Ties go to the higher
/// model score, then to the earlier beam.
pub fn select_most_diverse<'a>(beams: &'a [Hypothesis], source: &[usize]) -> Result<&'a Hypothesis> {
    let reference = [source.iter().map(usize::to_string).collect::<Vec<_>>()];
    let mut best: Option<(&Hypothesis, f64)> = None;
    for h in beams {
        let cand: Vec<String> = h.tokens.iter().map(usize::to_string).collect();
        let b = bleu(&cand, &reference, 4, true)?;
        let better = match best {
            None => true,
            Some((cur, cb)) => b < cb || (b == cb && h.score > cur.score),
        };
        if better {
            best = Some((h, b));
        }
    }
    best.map(|(h, _)| h).ok_or(Error::Empty("beam group"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Log-softmax of pseudo-random logits keyed on (seed, position, last token).
    struct TableLm {
        vocab: Vocabulary,
        seed: u64,
    }

    impl TableLm {
        fn new(words: &[&str], seed: u64) -> Self {
            Self {
                vocab: Vocabulary::build(words),
                seed,
            }
        }
    }

    impl ConditionalLm for TableLm {
        fn vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn log_probs(&self, source: &[usize], prefix: &[usize]) -> Vec<f64> {
            let last = prefix.last().map_or(0, |&t| t as u64 + 1);
            let key = self.seed ^ (prefix.len() as u64) << 16 ^ last << 32 ^ (source.len() as u64) << 48;
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let logits: Vec<f64> = (0..=self.vocab.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
            logits.iter().map(|l| l - z).collect()
        }
    }

    /// Scores every output sequence the search space admits.
    fn enumerate(lm: &dyn ConditionalLm, source: &[usize], max_len: usize, c: &ConstraintSet) -> Vec<(Vec<usize>, f64)> {
        let eos = lm.eos();
        let mut out = Vec::new();
        let mut frontier = vec![(Vec::new(), 0.0)];
        for step in 0..max_len {
            let mut next = Vec::new();
            for (seq, score) in &frontier {
                let lp = lm.log_probs(source, seq);
                if step > 0 {
                    out.push((seq.clone(), score + lp[eos]));
                }
                for tok in 0..eos {
                    let prev: Option<usize> = seq.last().copied();
                    if c.forbids(prev, tok) {
                        continue;
                    }
                    let mut s: Vec<usize> = seq.clone();
                    s.push(tok);
                    next.push((s, score + lp[tok]));
                }
            }
            frontier = next;
        }
        out.extend(frontier);
        out
    }

    fn greedy(lm: &dyn ConditionalLm, source: &[usize], max_len: usize) -> Vec<usize> {
        let eos = lm.eos();
        let mut seq = Vec::new();
        while seq.len() < max_len {
            let lp = lm.log_probs(source, &seq);
            let allowed = |t: &usize| *t != eos || !seq.is_empty();
            let best = (0..=eos).filter(allowed).max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a))).unwrap();
            if best == eos {
                break;
            }
            seq.push(best);
        }
        seq
    }

    #[test]
    fn wide_beam_matches_exhaustive_enumeration() {
        for seed in 0..20 {
            let lm = TableLm::new(&["a", "b", "c"], seed);
            let src = [1, 2];
            let mut all = enumerate(&lm, &src, 3, &ConstraintSet::default());
            all.sort_by(|a, b| b.1.total_cmp(&a.1));
            let beams = beam_search(&lm, &src, 200, 3, &ConstraintSet::default()).unwrap();
            assert_eq!(beams.len(), all.len());
            assert_eq!(beams[0].tokens, all[0].0);
            assert!((beams[0].score - all[0].1).abs() < 1e-12);
            for (b, (_, s)) in beams.iter().zip(&all) {
                assert!((b.score - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..20 {
            let lm = TableLm::new(&["a", "b", "c", "d"], seed);
            let beams = beam_search(&lm, &[1], 1, 5, &ConstraintSet::default()).unwrap();
            assert_eq!(beams.len(), 1);
            assert_eq!(beams[0].tokens, greedy(&lm, &[1], 5));
        }
    }

    #[test]
    fn single_group_equals_beam_search() {
        for seed in 0..10 {
            let lm = TableLm::new(&["a", "b", "c", "d"], seed);
            let plain = beam_search(&lm, &[1, 2, 3], 4, 5, &ConstraintSet::default()).unwrap();
            let dbs = diverse_beam_search(&lm, &[1, 2, 3], 4, 1, 0.5, 5, &ConstraintSet::default()).unwrap();
            assert_eq!(dbs.len(), 1);
            assert_eq!(dbs[0].beams, plain);
        }
    }

    /// Step 0 prefers `a` (-0.5) over `b` (-0.9); after the first token EOS
    /// is almost certain.
    struct NearTie {
        vocab: Vocabulary,
    }

    impl ConditionalLm for NearTie {
        fn vocab(&self) -> &Vocabulary {
            &self.vocab
        }

        fn log_probs(&self, _source: &[usize], prefix: &[usize]) -> Vec<f64> {
            let (a, b) = (self.vocab.id("a"), self.vocab.id("b"));
            let mut lp = vec![-20.0; self.vocab.len() + 1];
            if prefix.is_empty() {
                lp[a] = -0.5;
                lp[b] = -0.9;
            } else {
                lp[self.vocab.len()] = -1e-6;
            }
            lp
        }
    }

    #[test]
    fn hamming_penalty_hand_trace() {
        let lm = NearTie {
            vocab: Vocabulary::build(["a", "b"]),
        };
        let (a, b) = (lm.vocab.id("a"), lm.vocab.id("b"));
        // group 1 sees a at -0.5 - 0.5 = -1.0 against b at -0.9; at the next
        // step group 0 has already closed with EOS, so group 1 pays for it too
        let groups = diverse_beam_search(&lm, &[a], 2, 2, 0.5, 3, &ConstraintSet::default()).unwrap();
        assert_eq!(groups[0].beams[0].tokens, vec![a]);
        assert_eq!(groups[1].beams[0].tokens, vec![b]);
        assert!((groups[1].beams[0].adjusted - (-0.9 - 1e-6 - 0.5)).abs() < 1e-12);
        // with a weaker penalty a still wins: -0.8 against -0.9
        let groups = diverse_beam_search(&lm, &[a], 2, 2, 0.3, 3, &ConstraintSet::default()).unwrap();
        assert_eq!(groups[1].beams[0].tokens, vec![a]);
        assert!((groups[1].beams[0].adjusted - (-0.8 - 1e-6 - 0.3)).abs() < 1e-12);
        assert!((groups[1].beams[0].score - (-0.5 - 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn banning_the_greedy_first_token_changes_it() {
        for seed in 0..10 {
            let lm = TableLm::new(&["a", "b", "c", "d"], seed);
            let free = beam_search(&lm, &[1, 2], 1, 4, &ConstraintSet::default()).unwrap();
            let first = free[0].tokens[0];
            let ban = ConstraintSet {
                banned_unigrams: [first].into_iter().collect(),
                ..Default::default()
            };
            let banned = beam_search(&lm, &[1, 2], 1, 4, &ban).unwrap();
            assert_ne!(banned[0].tokens[0], first);
        }
    }

    #[test]
    fn zero_penalty_groups_collapse() {
        for seed in 0..10 {
            let lm = TableLm::new(&["a", "b", "c", "d"], seed);
            let plain = beam_search(&lm, &[1, 2, 3], 3, 5, &ConstraintSet::default()).unwrap();
            let groups = diverse_beam_search(&lm, &[1, 2, 3], 9, 3, 0.0, 5, &ConstraintSet::default()).unwrap();
            for g in groups {
                assert_eq!(g.beams, plain);
            }
        }
    }

    #[test]
    fn exhausted_vocabulary_is_an_error() {
        let lm = TableLm::new(&["a", "b"], 3);
        let all = ConstraintSet {
            banned_unigrams: (0..lm.vocab().len()).collect(),
            ..Default::default()
        };
        assert!(matches!(
            beam_search(&lm, &[1], 2, 4, &all),
            Err(Error::ConstraintsExhaustVocabulary)
        ));
        assert!(diverse_beam_search(&lm, &[1], 4, 2, 0.5, 4, &all).is_err());
    }

    #[test]
    fn invalid_group_split() {
        let lm = TableLm::new(&["a"], 0);
        assert!(diverse_beam_search(&lm, &[1], 15, 4, 0.5, 3, &ConstraintSet::default()).is_err());
        assert!(diverse_beam_search(&lm, &[1], 15, 0, 0.5, 3, &ConstraintSet::default()).is_err());
        assert!(diverse_beam_search(&lm, &[1], 4, 2, -1.0, 3, &ConstraintSet::default()).is_err());
        assert!(beam_search(&lm, &[1], 0, 3, &ConstraintSet::default()).is_err());
    }

    #[test]
    fn selection_prefers_low_bleu_then_score() {
        let h = |tokens: Vec<usize>, score: f64| Hypothesis {
            tokens,
            score,
            adjusted: score,
            finished: true,
        };
        let src = [1, 2, 3, 4];
        let beams = vec![h(vec![1, 2, 3, 4], -1.0), h(vec![1, 5, 3, 4], -2.0), h(vec![6, 5, 3, 4], -3.0)];
        assert_eq!(select_most_diverse(&beams, &src).unwrap().tokens, vec![6, 5, 3, 4]);
        let tied = vec![h(vec![7, 8], -3.0), h(vec![8, 7], -2.0)];
        assert_eq!(select_most_diverse(&tied, &src).unwrap().tokens, vec![8, 7]);
        assert!(select_most_diverse(&[], &src).is_err());
        let same = vec![h(vec![1, 2, 9], -1.0); 3];
        assert_eq!(select_most_diverse(&same, &src).unwrap(), &same[0]);
    }

    #[test]
    fn selection_with_hand_computed_bleu() {
        let h = |tokens: Vec<usize>| Hypothesis {
            tokens,
            score: 0.0,
            adjusted: 0.0,
            finished: true,
        };
        let src: Vec<usize> = (1..=8).collect();
        let beams = vec![h((1..=8).collect()), h(vec![1, 2, 3, 4, 9, 10, 11, 12]), h(vec![1, 2, 3, 4, 5, 6, 9, 10])];
        let refs = [src.iter().map(usize::to_string).collect::<Vec<_>>()];
        let scores: Vec<f64> = beams
            .iter()
            .map(|b| bleu(&b.tokens.iter().map(usize::to_string).collect::<Vec<_>>(), &refs, 4, true).unwrap())
            .collect();
        // p_n = (4/8, 3/7, 2/6, 1/5) and (6/8, 5/7, 4/6, 3/5)
        let low = (0.5f64 * 3.0 / 7.0 * 2.0 / 6.0 * 0.2).powf(0.25);
        let mid = (0.75f64 * 5.0 / 7.0 * 4.0 / 6.0 * 0.6).powf(0.25);
        assert!((scores[0] - 1.0).abs() < 1e-12);
        assert!((scores[1] - low).abs() < 1e-12);
        assert!((scores[2] - mid).abs() < 1e-12);
        assert_eq!(select_most_diverse(&beams, &src).unwrap(), &beams[1]);
    }

    proptest! {
        #[test]
        fn outputs_respect_constraints(
            seed in 0u64..500,
            banned in prop::collection::btree_set(1usize..6, 0..3),
            bigrams in prop::collection::btree_set((1usize..6, 1usize..6), 0..4),
        ) {
            let lm = TableLm::new(&["a", "b", "c", "d", "e"], seed);
            let c = ConstraintSet { banned_unigrams: banned, banned_bigrams: bigrams };
            let groups = diverse_beam_search(&lm, &[1, 2, 3], 6, 3, 0.5, 5, &c).unwrap();
            for g in &groups {
                prop_assert_eq!(g.beams.len(), 2);
                for b in &g.beams {
                    prop_assert!(!c.violated_by(&b.tokens));
                    prop_assert!(!b.tokens.is_empty() && b.tokens.len() <= 5);
                    prop_assert!(b.finished);
                    prop_assert!(b.adjusted <= b.score + 1e-12);
                }
            }
        }
    }
}
