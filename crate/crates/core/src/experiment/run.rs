use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Profile, RunConfig};
use super::synth::synonyms_path;
use crate::data::{
    load_dataset, restrict_low_profile, sample_episode, sample_unlabeled, split_classes, ClassSplit, Dataset,
    EpisodeShape, Part,
};
use crate::decoding::{generate_paraphrases, DecodeConfig, Strategy, SynonymTable, ToySynonymLm};
use crate::encoder::{tokenize, EncoderParams, OptimizerState, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{diversity_report, DiversityReport};
use crate::protaugment::{combined_training_step, unsupervised_loss, AnnealSchedule, UnlabeledBatch};
use crate::protonet::evaluate;

// Independent random streams of one seed.
const STREAM_INIT: u64 = 1;
const STREAM_EPISODES: u64 = 2;
const STREAM_UNLABELED: u64 = 3;
const STREAM_PARAPHRASE: u64 = 4;
const STREAM_VALID: u64 = 5;
const STREAM_TEST: u64 = 6;
const STREAM_HELDOUT: u64 = 7;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Loss and accuracy summary of one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: u64,
    pub supervised: f64,
    pub unsupervised: Option<f64>,
    pub loss: f64,
    pub valid_accuracy: f64,
    /// Consistency loss on a fixed batch of unlabeled sentences.
    pub heldout_consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test accuracy of the best-validation checkpoint.
    pub test_accuracy: f64,
    pub best_valid_accuracy: f64,
    pub best_episode: u64,
    pub episodes_run: u64,
    pub evaluations: u64,
    pub eval_episodes_per_evaluation: usize,
    pub stopped_early: bool,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Strategy,
    pub profile: Profile,
    pub ways: usize,
    pub shots: usize,
    pub alpha: f64,
    pub p_mask: f64,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub diversity: Option<DiversityReport>,
}

impl RunReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.test_accuracy).collect()
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Dataset, paraphraser and vocabulary shared by every seed of a run.
pub struct Workspace {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub synonyms: SynonymTable,
    pub lm: ToySynonymLm,
    pub vocab: Vocabulary,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(&config.dataset)?;
        let synonyms = match &config.synonyms {
            Some(p) => SynonymTable::load(p)?,
            None => {
                let p: PathBuf = synonyms_path(&config.dataset);
                if p.exists() {
                    SynonymTable::load(&p)?
                } else {
                    SynonymTable::default()
                }
            }
        };
        Self::new(config.clone(), dataset, synonyms)
    }

    pub fn new(config: RunConfig, dataset: Dataset, synonyms: SynonymTable) -> Result<Self> {
        config.validate()?;
        let corpus: Vec<Vec<String>> = dataset.records().iter().map(|r| tokenize(&r.text)).collect();
        let lm = ToySynonymLm::new(&corpus, &synonyms, config.toy_lm)?;
        let vocab = Vocabulary::build(
            corpus
                .iter()
                .flatten()
                .map(String::as_str)
                .chain(synonyms.words()),
        );
        Ok(Self {
            config,
            dataset,
            synonyms,
            lm,
            vocab,
        })
    }

    fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            ways: self.config.ways,
            shots: self.config.shots,
            query_per_class: self.config.query_per_class,
            unlabeled: 0,
        }
    }

    /// Split and profile for one seed, checked by sampling one episode
    /// from every part.
    pub fn prepare(&self, seed: u64) -> Result<(ClassSplit, Dataset)> {
        let c = &self.config;
        let ratios = (c.split_ratios[0], c.split_ratios[1], c.split_ratios[2]);
        let split = split_classes(&self.dataset, ratios, seed, c.group_by_domain)?;
        let train = match c.profile {
            Profile::Full => self.dataset.clone(),
            Profile::Low => restrict_low_profile(&self.dataset, &split, c.low_per_class, seed)?,
        };
        let mut probe = ChaCha8Rng::seed_from_u64(seed);
        sample_episode(&train, &split, Part::Train, self.shape(), &mut probe)?;
        sample_episode(&self.dataset, &split, Part::Valid, self.shape(), &mut probe)?;
        sample_episode(&self.dataset, &split, Part::Test, self.shape(), &mut probe)?;
        Ok((split, train))
    }

    /// Mean accuracy of `params` on the fixed evaluation episodes that
    /// `seed` draws from `part`.
    pub fn evaluate_part(&self, params: &EncoderParams, split: &ClassSplit, seed: u64, part: Part) -> Result<f64> {
        let id = match part {
            Part::Valid => STREAM_VALID,
            Part::Test => STREAM_TEST,
            Part::Train => return Err(Error::Config("evaluation runs on valid or test classes".into())),
        };
        Ok(evaluate(
            params,
            &self.vocab,
            &self.dataset,
            split,
            part,
            self.shape(),
            self.config.n_eval_episodes,
            self.config.distance,
            &mut stream(seed, id),
        )?
        .mean_accuracy)
    }

    /// Paraphrases each sentence with its own RNG drawn from `rng`.
    pub fn paraphrase_batch<R: Rng>(&self, sentences: Vec<String>, decode: &DecodeConfig, rng: &mut R) -> Result<UnlabeledBatch> {
        let seeds: Vec<u64> = sentences.iter().map(|_| rng.gen()).collect();
        let m = self.config.paraphrases;
        let paraphrases = sentences
            .par_iter()
            .zip(seeds)
            .map(|(s, sd)| {
                generate_paraphrases(&self.lm, &self.synonyms, s, m, decode, &mut ChaCha8Rng::seed_from_u64(sd))
            })
            .collect::<Result<Vec<_>>>()?;
        UnlabeledBatch::new(sentences, paraphrases)
    }

    /// Trains one seed and returns its result with the best-validation
    /// encoder.
    pub fn run_seed(&self, seed: u64) -> Result<(SeedResult, EncoderParams)> {
        let c = &self.config;
        let (split, train) = self.prepare(seed)?;
        let shape = self.shape();
        let strategy = c.strategy();
        let augment = strategy != Strategy::None;

        let mut params = EncoderParams::init(self.vocab.len(), c.emb_dim, c.out_dim, &mut stream(seed, STREAM_INIT));
        let mut optimizer = OptimizerState::new(c.optimizer, &params);
        let schedule = AnnealSchedule::new(c.alpha, c.max_episodes)?;
        let mut episodes = stream(seed, STREAM_EPISODES);
        let mut unlabeled_rng = stream(seed, STREAM_UNLABELED);
        let mut paraphrase_rng = stream(seed, STREAM_PARAPHRASE);
        let heldout = if augment {
            let mut rng = stream(seed, STREAM_HELDOUT);
            let sentences = sample_unlabeled(&self.dataset, c.unlabeled, &mut rng)?;
            Some(self.paraphrase_batch(sentences, &c.decode, &mut rng)?)
        } else {
            None
        };

        let mut best_params = params.clone();
        let mut best_valid = f64::NEG_INFINITY;
        let mut test_accuracy = f64::NAN;
        let mut best_episode = 0;
        let mut since_best = 0;
        let mut evaluations = 0;
        let mut episodes_run = 0;
        let mut stopped_early = false;
        let mut curve = Vec::new();
        let (mut sum_sup, mut sum_unsup, mut sum_loss, mut window) = (0.0, 0.0, 0.0, 0u64);

        for episode in 1..=c.max_episodes {
            let ep = sample_episode(&train, &split, Part::Train, shape, &mut episodes)?;
            let batch = if augment {
                let sentences = sample_unlabeled(&self.dataset, c.unlabeled, &mut unlabeled_rng)?;
                Some(self.paraphrase_batch(sentences, &c.decode, &mut paraphrase_rng)?)
            } else {
                None
            };
            let log = combined_training_step(
                &ep,
                batch.as_ref(),
                &mut params,
                &self.vocab,
                &mut optimizer,
                &schedule,
                episode,
                c.distance,
            )?;
            log::trace!("seed={seed} {log}");
            episodes_run = episode;
            sum_sup += log.supervised;
            sum_unsup += log.unsupervised.unwrap_or(0.0);
            sum_loss += log.loss;
            window += 1;

            if episode % c.eval_every != 0 {
                continue;
            }
            evaluations += 1;
            let valid = self.evaluate_part(&params, &split, seed, Part::Valid)?;
            let heldout_consistency = match &heldout {
                Some(b) => Some(unsupervised_loss(b, &params, &self.vocab, c.distance)?.0),
                None => None,
            };
            curve.push(CurvePoint {
                episode,
                supervised: sum_sup / window as f64,
                unsupervised: augment.then(|| sum_unsup / window as f64),
                loss: sum_loss / window as f64,
                valid_accuracy: valid,
                heldout_consistency,
            });
            (sum_sup, sum_unsup, sum_loss, window) = (0.0, 0.0, 0.0, 0);
            if valid > best_valid {
                best_valid = valid;
                best_episode = episode;
                since_best = 0;
                best_params = params.clone();
                test_accuracy = self.evaluate_part(&params, &split, seed, Part::Test)?;
            } else {
                since_best += 1;
            }
            log::info!(
                "seed={seed} episode={episode} valid={valid:.4} best={best_valid:.4} test@best={test_accuracy:.4}"
            );
            if since_best >= c.patience {
                stopped_early = true;
                break;
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("encoder parameters"));
        }
        Ok((
            SeedResult {
                seed,
                test_accuracy,
                best_valid_accuracy: best_valid,
                best_episode,
                episodes_run,
                evaluations,
                eval_episodes_per_evaluation: c.n_eval_episodes,
                stopped_early,
                curve,
            },
            best_params,
        ))
    }

    /// Diversity of `strategy`'s paraphrases for each of `n_sentences`
    /// records. The sentences depend only on `seed`, so different
    /// strategies are compared on the same inputs. Similarity uses a
    /// randomly initialised encoder.
    pub fn diversity_per_sentence(&self, strategy: Strategy, n_sentences: usize, seed: u64) -> Result<Vec<DiversityReport>> {
        if n_sentences == 0 {
            return Err(Error::Empty("diversity sentences"));
        }
        let mut rng = stream(seed, STREAM_HELDOUT);
        let sentences = sample_unlabeled(&self.dataset, n_sentences, &mut rng)?;
        let decode = DecodeConfig {
            strategy,
            ..self.config.decode.clone()
        };
        let batch = self.paraphrase_batch(sentences, &decode, &mut rng)?;
        let encoder = EncoderParams::init(self.vocab.len(), self.config.emb_dim, self.config.out_dim, &mut stream(seed, STREAM_INIT));
        batch
            .sentences
            .par_iter()
            .zip(&batch.paraphrases)
            .map(|(s, p)| diversity_report(s, p, &encoder, &self.vocab))
            .collect()
    }

    /// Mean of [`Workspace::diversity_per_sentence`].
    pub fn diversity_study(&self, strategy: Strategy, n_sentences: usize, seed: u64) -> Result<DiversityReport> {
        let reports = self.diversity_per_sentence(strategy, n_sentences, seed)?;
        let n = reports.len() as f64;
        Ok(DiversityReport {
            dist2: reports.iter().map(|r| r.dist2).sum::<f64>() / n,
            bleu_vs_source: reports.iter().map(|r| r.bleu_vs_source).sum::<f64>() / n,
            mean_pairwise_similarity: reports.iter().map(|r| r.mean_pairwise_similarity).sum::<f64>() / n,
        })
    }

    pub fn run(&self) -> Result<(RunReport, Vec<EncoderParams>)> {
        let c = &self.config;
        let outcomes = c
            .seeds
            .par_iter()
            .map(|&s| self.run_seed(s))
            .collect::<Result<Vec<_>>>()?;
        let (seeds, models): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
        let accs: Vec<f64> = seeds.iter().map(|s: &SeedResult| s.test_accuracy).collect();
        let (mean, std) = mean_std(&accs);
        let diversity = match (c.strategy(), c.diversity_sentences) {
            (Strategy::None, _) | (_, 0) => None,
            (s, n) => Some(self.diversity_study(s, n, c.seeds[0])?),
        };
        Ok((
            RunReport {
                method: c.strategy(),
                profile: c.profile,
                ways: c.ways,
                shots: c.shots,
                alpha: c.alpha,
                p_mask: c.decode.p_mask,
                seeds,
                mean,
                std,
                diversity,
            },
            models,
        ))
    }
}

/// Loads the data named by `config` and runs every seed.
pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    Ok(Workspace::load(config)?.run()?.0)
}

/// Accuracy of `config` at each masking probability, in order.
pub fn p_mask_sweep(workspace: &Workspace, points: &[f64]) -> Result<Vec<SweepPoint>> {
    points
        .iter()
        .map(|&p| {
            let mut config = workspace.config.clone();
            config.decode.p_mask = p;
            config.decode.strategy = Strategy::DbsUnigram;
            config.diversity_sentences = 0;
            let ws = Workspace {
                config,
                dataset: workspace.dataset.clone(),
                synonyms: workspace.synonyms.clone(),
                lm: workspace.lm.clone(),
                vocab: workspace.vocab.clone(),
            };
            ws.config.validate()?;
            let (report, _) = ws.run()?;
            Ok(SweepPoint {
                p_mask: p,
                mean: report.mean,
                std: report.std,
            })
        })
        .collect()
}

/// The eleven masking probabilities 0.0, 0.1, ..., 1.0.
pub fn p_mask_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p_mask: f64,
    pub mean: f64,
    pub std: f64,
}
