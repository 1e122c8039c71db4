//! Paraphrase-consistency loss and its annealed combination with the
//! supervised prototypical loss.
//!
//! Every unlabeled sentence `x_u` gets a prototype built from the mean
//! embedding of its `M` paraphrases. The unsupervised loss is the
//! cross-entropy of assigning `x_u` to its own prototype among the `U`
//! prototypes of the batch. Gradients flow into both sides; nothing is
//! detached.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Episode;
use crate::encoder::{Encoded, EncoderGrads, EncoderParams, OptimizerState, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Distance;
use crate::protonet::{classify, compute_prototypes, encode_text, prototype_loss, supervised_episode_loss, Prototypes};

/// Unlabeled sentences with `M` paraphrases each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledBatch {
    pub sentences: Vec<String>,
    pub paraphrases: Vec<Vec<String>>,
}

impl UnlabeledBatch {
    pub fn new(sentences: Vec<String>, paraphrases: Vec<Vec<String>>) -> Result<Self> {
        let batch = Self {
            sentences,
            paraphrases,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::Empty("unlabeled sentences"));
        }
        if self.paraphrases.len() != self.sentences.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sentences.len(),
                found: self.paraphrases.len(),
            });
        }
        let m = self.paraphrases[0].len();
        if m == 0 {
            return Err(Error::Empty("paraphrases"));
        }
        if let Some(bad) = self.paraphrases.iter().find(|p| p.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        Ok(())
    }
}

/// `p_{x_u} = (1/M) Σ_m f(x̃_u^m)`, one prototype per unlabeled sentence.
pub fn unlabeled_prototypes(paraphrase_embeddings: &[Vec<Vec<f64>>]) -> Result<Prototypes> {
    if let Some(first) = paraphrase_embeddings.first() {
        if let Some(bad) = paraphrase_embeddings.iter().find(|g| g.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                found: bad.len(),
            });
        }
    }
    compute_prototypes(paraphrase_embeddings)
}

/// Assignment distribution of one unlabeled embedding over the batch's
/// unlabeled prototypes.
pub fn consistency_distribution(
    unlabeled_embedding: &[f64],
    prototypes: &Prototypes,
    distance: Distance,
) -> Result<Vec<f64>> {
    classify(unlabeled_embedding, prototypes, distance)
}

/// Unsupervised loss `L̃` and its gradient.
pub fn unsupervised_loss(
    batch: &UnlabeledBatch,
    params: &EncoderParams,
    vocab: &Vocabulary,
    distance: Distance,
) -> Result<(f64, EncoderGrads)> {
    batch.validate()?;
    let sentence_cache: Vec<Encoded> = batch
        .sentences
        .iter()
        .map(|s| encode_text(params, vocab, s))
        .collect();
    let para_cache: Vec<Vec<Encoded>> = batch
        .paraphrases
        .iter()
        .map(|ps| ps.iter().map(|p| encode_text(params, vocab, p)).collect())
        .collect();
    let queries: Vec<Vec<f64>> = sentence_cache.iter().map(|e| e.output.clone()).collect();
    let groups: Vec<Vec<Vec<f64>>> = para_cache
        .iter()
        .map(|g| g.iter().map(|e| e.output.clone()).collect())
        .collect();
    let targets: Vec<usize> = (0..batch.sentences.len()).collect();

    let out = prototype_loss(&queries, &targets, &groups, distance)?;
    let mut grads = EncoderGrads::zeros_like(params);
    for (cache, g) in sentence_cache.iter().zip(&out.d_queries) {
        grads.accumulate(params, cache, g)?;
    }
    for (caches, gs) in para_cache.iter().zip(&out.d_members) {
        for (cache, g) in caches.iter().zip(gs) {
            grads.accumulate(params, cache, g)?;
        }
    }
    Ok((out.loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub alpha: f64,
    pub total_steps: u64,
}

impl AnnealSchedule {
    pub fn new(alpha: f64, total_steps: u64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        Ok(Self { alpha, total_steps })
    }
}

/// `t^α` with `t = step / total_steps`.
pub fn anneal_weight(step: u64, schedule: &AnnealSchedule) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::IndexOutOfRange {
            index: step as usize,
            len: schedule.total_steps as usize + 1,
        });
    }
    let t = step as f64 / schedule.total_steps as f64;
    Ok(t.powf(schedule.alpha))
}

/// Losses of one training step, printed as a `key=value` log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub supervised: f64,
    pub unsupervised: Option<f64>,
    pub weight: f64,
    pub loss: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} sup={:.6}", self.step, self.supervised)?;
        match self.unsupervised {
            Some(u) => write!(f, " unsup={u:.6}")?,
            None => write!(f, " unsup=-")?,
        }
        write!(f, " weight={:.6} loss={:.6}", self.weight, self.loss)
    }
}

/// `L = w·L̃ + (1 − w)·L̄` and its gradient, without updating anything.
pub fn combined_loss(
    episode: &Episode,
    batch: Option<&UnlabeledBatch>,
    params: &EncoderParams,
    vocab: &Vocabulary,
    weight: f64,
    distance: Distance,
) -> Result<(StepLog, EncoderGrads)> {
    let (sup, mut grads) = supervised_episode_loss(episode, params, vocab, distance)?;
    let log = match batch {
        Some(batch) => {
            let (unsup, unsup_grads) = unsupervised_loss(batch, params, vocab, distance)?;
            grads.combine(1.0 - weight, &unsup_grads, weight);
            StepLog {
                step: 0,
                supervised: sup,
                unsupervised: Some(unsup),
                weight,
                loss: weight * unsup + (1.0 - weight) * sup,
            }
        }
        None => StepLog {
            step: 0,
            supervised: sup,
            unsupervised: None,
            weight: 0.0,
            loss: sup,
        },
    };
    Ok((log, grads))
}

/// One optimizer step on the annealed loss. Without a batch this is the
/// plain prototypical-network step.
#[allow(clippy::too_many_arguments)]
pub fn combined_training_step(
    episode: &Episode,
    batch: Option<&UnlabeledBatch>,
    params: &mut EncoderParams,
    vocab: &Vocabulary,
    optimizer: &mut OptimizerState,
    schedule: &AnnealSchedule,
    step: u64,
    distance: Distance,
) -> Result<StepLog> {
    let weight = anneal_weight(step, schedule)?;
    let (mut log, grads) = combined_loss(episode, batch, params, vocab, weight, distance)?;
    optimizer.apply(params, &grads)?;
    log.step = step;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labeled;
    use crate::encoder::AdamConfig;
    use crate::numerics::{compare_gradients, finite_difference_gradient};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const WORDS: [&str; 10] = [
        "wake", "alarm", "set", "play", "song", "music", "tune", "weather", "rain", "today",
    ];

    fn vocab() -> Vocabulary {
        Vocabulary::build(WORDS)
    }

    fn batch() -> UnlabeledBatch {
        UnlabeledBatch::new(
            vec!["wake alarm".into(), "play song".into(), "weather today".into()],
            vec![
                vec!["set alarm".into(), "wake set".into()],
                vec!["play tune".into(), "music song".into()],
                vec!["rain today".into(), "weather rain".into()],
            ],
        )
        .unwrap()
    }

    fn episode() -> Episode {
        let l = |t: &str, c| Labeled { text: t.into(), class: c };
        Episode {
            classes: vec!["a".into(), "b".into()],
            support: vec![l("wake alarm", 0), l("play music", 1)],
            query: vec![l("set alarm", 0), l("play tune", 1), l("alarm today", 0)],
            unlabeled: vec![],
        }
    }

    #[test]
    fn batch_validation() {
        assert!(UnlabeledBatch::new(vec!["a".into()], vec![vec!["b".into()]]).is_ok());
        assert!(UnlabeledBatch::new(vec![], vec![]).is_err());
        assert!(UnlabeledBatch::new(vec!["a".into()], vec![vec![]]).is_err());
        assert!(UnlabeledBatch::new(
            vec!["a".into(), "b".into()],
            vec![vec!["x".into()], vec!["y".into(), "z".into()]]
        )
        .is_err());
    }

    #[test]
    fn unlabeled_prototype_examples() {
        let p = unlabeled_prototypes(&[vec![vec![0.1, 0.2]]]).unwrap();
        assert_eq!(p.vectors[0], vec![0.1, 0.2]);
        let p = unlabeled_prototypes(&[vec![vec![2.0, 0.0], vec![0.0, 2.0]]]).unwrap();
        assert_eq!(p.vectors[0], vec![1.0, 1.0]);
        let a = unlabeled_prototypes(&[vec![vec![0.3, 1.0], vec![-2.0, 0.25], vec![4.0, 4.0]]]).unwrap();
        let b = unlabeled_prototypes(&[vec![vec![4.0, 4.0], vec![0.3, 1.0], vec![-2.0, 0.25]]]).unwrap();
        for (x, y) in a.vectors[0].iter().zip(&b.vectors[0]) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
        }
        assert!(unlabeled_prototypes(&[vec![vec![1.0]], vec![vec![1.0], vec![2.0]]]).is_err());
    }

    #[test]
    fn consistency_distribution_examples() {
        let protos = Prototypes {
            vectors: vec![vec![0.0, 0.0], vec![30.0, 0.0], vec![0.0, 30.0]],
        };
        let p = consistency_distribution(&[0.0, 0.0], &protos, Distance::SquaredEuclidean).unwrap();
        assert!(p[0] > 1.0 - 1e-12);

        // five prototypes on a circle around the query
        let protos = Prototypes {
            vectors: (0..5)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::TAU / 5.0;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
        };
        let p = consistency_distribution(&[0.0, 0.0], &protos, Distance::SquaredEuclidean).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 0.2, epsilon = 1e-12);
        }

        let protos = Prototypes {
            vectors: vec![vec![0.0], vec![2f64.ln().sqrt()]],
        };
        let p = consistency_distribution(&[0.0], &protos, Distance::SquaredEuclidean).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);

        let single = Prototypes { vectors: vec![vec![5.0, -1.0]] };
        assert_eq!(consistency_distribution(&[0.0, 0.0], &single, Distance::SquaredEuclidean).unwrap(), vec![1.0]);
    }

    #[test]
    fn collapsed_encoder_gives_ln_u() {
        let v = Vocabulary::build(["a", "b", "c", "d", "e", "f"]);
        let b = UnlabeledBatch::new(
            ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
            (0..5).map(|_| vec!["f".to_string(), "a b".to_string()]).collect(),
        )
        .unwrap();
        let params = EncoderParams::zeros(v.len(), 3, 3);
        let (loss, _) = unsupervised_loss(&b, &params, &v, Distance::SquaredEuclidean).unwrap();
        assert_abs_diff_eq!(loss, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfect_consistency_gives_near_zero_loss() {
        // Each sentence saturates to +1 on its own block of four dimensions
        // and -1 elsewhere, so distinct sentences sit 32 apart.
        let v = Vocabulary::build(["a", "b", "c"]);
        let d = 12;
        let mut params = EncoderParams::zeros(v.len(), d, d);
        for (i, t) in ["a", "b", "c"].iter().enumerate() {
            let id = v.get(t).unwrap();
            for k in 0..d {
                params.embeddings[id * d + k] = if k / 4 == i { 40.0 } else { -40.0 };
            }
        }
        for k in 0..d {
            params.weights[k * d + k] = 1.0;
        }
        let b = UnlabeledBatch::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec!["a a".into()], vec!["b".into()], vec!["c c c".into()]],
        )
        .unwrap();
        let (loss, _) = unsupervised_loss(&b, &params, &v, Distance::SquaredEuclidean).unwrap();
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn unsupervised_gradient_matches_finite_differences() {
        let v = vocab();
        let b = batch();
        for distance in [Distance::SquaredEuclidean, Distance::Cosine] {
            let base = EncoderParams::init(v.len(), 5, 4, &mut ChaCha8Rng::seed_from_u64(3));
            let (_, grads) = unsupervised_loss(&b, &base, &v, distance).unwrap();
            let mut probe = base.clone();
            let numeric = finite_difference_gradient(
                |flat| {
                    probe.set_flat(flat).unwrap();
                    unsupervised_loss(&b, &probe, &v, distance).unwrap().0
                },
                &base.to_flat(),
                1e-5,
            )
            .unwrap();
            let report = compare_gradients(&grads.to_flat(), &numeric).unwrap();
            assert!(report.passes(1e-4), "{distance:?}: {}", report.max_relative_error);
        }
    }

    #[test]
    fn anneal_examples() {
        let s = AnnealSchedule::new(4.0, 10).unwrap();
        assert_eq!(anneal_weight(0, &s).unwrap(), 0.0);
        assert_eq!(anneal_weight(10, &s).unwrap(), 1.0);
        assert_eq!(anneal_weight(5, &s).unwrap(), 0.0625);
        assert!(anneal_weight(11, &s).is_err());
        assert!(AnnealSchedule::new(0.0, 10).is_err());
        assert!(AnnealSchedule::new(1.0, 0).is_err());
    }

    fn step_with(weight_step: u64, batch: Option<&UnlabeledBatch>) -> (StepLog, EncoderParams) {
        let v = vocab();
        let mut params = EncoderParams::init(v.len(), 5, 4, &mut ChaCha8Rng::seed_from_u64(8));
        let mut opt = OptimizerState::new(AdamConfig::default(), &params);
        let sched = AnnealSchedule::new(1.0, 100).unwrap();
        let log = combined_training_step(
            &episode(),
            batch,
            &mut params,
            &v,
            &mut opt,
            &sched,
            weight_step,
            Distance::SquaredEuclidean,
        )
        .unwrap();
        (log, params)
    }

    #[test]
    fn endpoints_reduce_to_single_losses() {
        let v = vocab();
        let b = batch();
        let (log0, p0) = step_with(0, Some(&b));
        let (_, p_sup) = step_with(0, None);
        assert_eq!(log0.loss, log0.supervised);
        assert_eq!(p0, p_sup);

        let (log1, p1) = step_with(100, Some(&b));
        assert_eq!(Some(log1.loss), log1.unsupervised);
        // pure unsupervised step
        let mut params = EncoderParams::init(v.len(), 5, 4, &mut ChaCha8Rng::seed_from_u64(8));
        let mut opt = OptimizerState::new(AdamConfig::default(), &params);
        let (_, g) = unsupervised_loss(&b, &params, &v, Distance::SquaredEuclidean).unwrap();
        opt.apply(&mut params, &g).unwrap();
        assert_eq!(p1, params);
    }

    #[test]
    fn half_weight_gradient_is_the_average() {
        let v = vocab();
        let b = batch();
        let params = EncoderParams::init(v.len(), 5, 4, &mut ChaCha8Rng::seed_from_u64(12));
        let (_, combined) = combined_loss(&episode(), Some(&b), &params, &v, 0.5, Distance::SquaredEuclidean).unwrap();
        let (_, gs) = supervised_episode_loss(&episode(), &params, &v, Distance::SquaredEuclidean).unwrap();
        let (_, gu) = unsupervised_loss(&b, &params, &v, Distance::SquaredEuclidean).unwrap();
        for ((c, s), u) in combined.to_flat().iter().zip(gs.to_flat()).zip(gu.to_flat()) {
            assert!((c - (s + u) / 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn step_log_line_format() {
        let log = StepLog {
            step: 7,
            supervised: 1.5,
            unsupervised: Some(0.25),
            weight: 0.07,
            loss: 1.4125,
        };
        assert_eq!(
            log.to_string(),
            "step=7 sup=1.500000 unsup=0.250000 weight=0.070000 loss=1.412500"
        );
    }

    proptest! {
        #[test]
        fn anneal_weight_is_monotone(alpha in 0.05f64..8.0, total in 1u64..200) {
            let s = AnnealSchedule::new(alpha, total).unwrap();
            let mut prev = 0.0;
            for step in 0..=total {
                let w = anneal_weight(step, &s).unwrap();
                prop_assert!((0.0..=1.0).contains(&w));
                prop_assert!(w >= prev);
                prev = w;
            }
        }

        #[test]
        fn combined_loss_is_non_negative(seed in 0u64..100, weight in 0.0f64..=1.0) {
            let v = vocab();
            let params = EncoderParams::init(v.len(), 4, 4, &mut ChaCha8Rng::seed_from_u64(seed));
            let (log, _) = combined_loss(&episode(), Some(&batch()), &params, &v, weight, Distance::SquaredEuclidean).unwrap();
            prop_assert!(log.loss >= 0.0);
        }
    }
}
