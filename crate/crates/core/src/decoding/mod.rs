//! Paraphrase decoding: beam search, diverse beam search, decode-time
//! token constraints and per-group output selection, over any conditional
//! language model.

mod constraints;
mod paraphrase;
mod search;
mod toy_lm;

pub use constraints::{
    build_bigram_constraints, build_unigram_constraints, masking_probabilities, ConstraintSet, MaskCurve,
};
pub use paraphrase::{generate_paraphrases, stub_back_translate, DecodeConfig, Strategy};
pub use search::{beam_search, diverse_beam_search, select_most_diverse, BeamGroup, Hypothesis};
pub use toy_lm::{SynonymTable, ToyLmConfig, ToySynonymLm};

use crate::encoder::Vocabulary;

/// A conditional language model over a fixed vocabulary.
///
/// Token ids are indices into [`ConditionalLm::vocab`]; the end-of-sequence
/// id is `vocab().len()`. [`ConditionalLm::log_probs`] returns one finite
/// log-probability per vocabulary token followed by one for EOS.
pub trait ConditionalLm: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn log_probs(&self, source: &[usize], prefix: &[usize]) -> Vec<f64>;

    fn eos(&self) -> usize {
        self.vocab().len()
    }
}
