//! Bilingual language modeling by position-preserving vocabulary augmentation.
//!
//! A low-resource language's subword vocabulary is merged into the
//! vocabulary of a model pretrained on a related high-resource language.
//! Tokens the two languages share keep the ids (and therefore the learned
//! embeddings) they had in the pretrained model; the remaining slots are
//! handed to the new language's tokens. Continued pretraining then adapts
//! the transplanted model to the new language.
//!
//! ```text
//! corpus ─► tokenizer ─► augment ─► model (surgery) ─► training ─► eval
//! ```

pub mod augment;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod manifest;
pub mod model;
pub mod tokenizer;
pub mod training;
pub mod vocab;

pub use augment::{
    augment, check_preconditions, embedding_surgery, AugmentationMap, AugmentationReport,
    InitPolicy, Origin,
};
pub use corpus::{clean, split_corpus, stats, transliterate, Corpus, TransliterationTable};
pub use error::{Error, Result};
pub use evaluation::{compare_regimes, EvalReport};
pub use model::{Checkpoint, MaskedBatch, ModelConfig, ModelParams, Objective};
pub use tokenizer::{casefold, train_bpe, BpeModel, BpeTrainerConfig};
pub use training::{run_pretraining, Regime, TrainingConfig};
pub use vocab::Vocabulary;
