use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Messages are surfaced verbatim by the command-line driver, so they are
/// written to be read by whoever is running a job.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocab size below alphabet: requested {requested}, need more than {minimum}")]
    VocabSizeBelowAlphabet { requested: usize, minimum: usize },

    #[error("unknown token id {id} (vocabulary has {size} tokens)")]
    UnknownTokenId { id: u32, size: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid merges file: {0}")]
    InvalidMerges(String),

    #[error("no shared vocabulary — augmentation inapplicable")]
    NoSharedVocabulary,

    #[error("special tokens differ between vocabularies at id {id}: {base:?} vs {new:?}")]
    SpecialTokenMismatch { id: usize, base: String, new: String },

    #[error("params/vocab mismatch: {0}")]
    ParamsVocabMismatch(String),

    #[error("invalid augmentation map: {0}")]
    InvalidAugmentationMap(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("shape mismatch in {dimension}: expected {expected}, got {actual}")]
    Shape {
        dimension: String,
        expected: usize,
        actual: usize,
    },

    #[error("token id {id} at batch {row}, position {position} is out of range for vocab_size {vocab_size}")]
    TokenOutOfRange {
        id: u32,
        row: usize,
        position: usize,
        vocab_size: usize,
    },

    #[error("objective {0} requires pair labels but the batch has none")]
    MissingPairLabels(&'static str),

    #[error("gradient overflow at step {0}")]
    GradientOverflow(u64),

    #[error("invalid training config: {0}")]
    InvalidTrainingConfig(String),

    #[error("need ≥2 documents for next-sentence negatives")]
    NeedTwoDocuments,

    #[error("no sentence pairs can be formed from the corpus")]
    NoSentencePairs,

    #[error("empty evaluation set")]
    EmptyEvaluationSet,

    #[error("no sentence pairs to evaluate")]
    NoEvaluationPairs,

    #[error("shared fraction {0} must lie in [0, 1]")]
    InvalidSharedFraction(f64),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid fraction {0}: must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("invalid transliteration table: {0}")]
    InvalidTransliterationTable(String),

    #[error("transliteration service failed after {attempts} attempts: {message}")]
    TransliterationService { attempts: u32, message: String },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid experiment config: {0}")]
    InvalidExperimentConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
