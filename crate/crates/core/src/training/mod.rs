//! Pretraining batches and the three training regimes: from scratch,
//! continued after bilingual vocabulary augmentation, and continued from a
//! multilingual base.

mod batch;
mod synth;

use std::fs;
use std::path::Path;
use std::sync::mpsc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{embedding_surgery, AugmentationMap, InitPolicy};
use crate::corpus::{split_corpus, Corpus};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::model::{
    adam_step, init_params, loss_and_grads_with_dropout, AdamState, Checkpoint, MaskedBatch,
    ModelConfig, ModelParams, Objective,
};
use crate::tokenizer::BpeModel;

pub use batch::{
    build_batch, make_sentence_pairs, prepare_mlm_batch, sentence_pairs, Example, SentencePair,
    FIRST_REGULAR_ID,
};
pub use synth::{synth_bilingual_corpus, Language, Lexicon, SynthSpec, SynthWorld};

/// Batches in flight between the batch builder and the optimizer.
const PIPELINE_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FromScratch,
    #[serde(rename = "bilingual")]
    ContinuedBilingual,
    #[serde(rename = "multilingual")]
    ContinuedMultilingual,
}

impl Regime {
    pub const ALL: [Regime; 3] = [
        Regime::FromScratch,
        Regime::ContinuedMultilingual,
        Regime::ContinuedBilingual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::FromScratch => "from-scratch",
            Regime::ContinuedBilingual => "bilingual",
            Regime::ContinuedMultilingual => "multilingual",
        }
    }

    pub fn is_continued(self) -> bool {
        self != Regime::FromScratch
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "from-scratch" | "scratch" | "monolingual" => Ok(Regime::FromScratch),
            "bilingual" | "continued-bilingual" => Ok(Regime::ContinuedBilingual),
            "multilingual" | "continued-multilingual" => Ok(Regime::ContinuedMultilingual),
            other => Err(format!(
                "unknown regime {other:?} (from-scratch, bilingual, multilingual)"
            )),
        }
    }
}

fn default_mask_rate() -> f64 {
    0.15
}

fn default_valid_fraction() -> f64 {
    0.05
}

fn default_eval_passes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub regime: Regime,
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    pub objective: Objective,
    pub seed: u64,
    pub eval_every: u64,
    /// Share of sentences held out for evaluation.
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    /// Seed of the held-out split; independent of `seed` so that runs with
    /// different seeds are scored on the same sentences.
    #[serde(default)]
    pub split_seed: u64,
    /// Masking passes over the held-out sentences per evaluation.
    #[serde(default = "default_eval_passes")]
    pub eval_passes: usize,
    #[serde(default)]
    pub init_policy: InitPolicy,
}

impl TrainingConfig {
    pub fn new(regime: Regime, steps: u64, lr: f64, seed: u64) -> Self {
        Self {
            regime,
            steps,
            lr,
            batch_size: 16,
            seq_len: 48,
            mask_rate: default_mask_rate(),
            objective: Objective::MlmNsp,
            seed,
            eval_every: 100,
            valid_fraction: default_valid_fraction(),
            split_seed: 0,
            eval_passes: default_eval_passes(),
            init_policy: InitPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidTrainingConfig(why));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie strictly between 0 and 1", self.mask_rate));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.seq_len < 8 {
            return bad(format!("seq_len {} is too short (minimum 8)", self.seq_len));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.valid_fraction));
        }
        if self.eval_passes == 0 {
            return bad("eval_passes must be at least 1".into());
        }
        Ok(())
    }

    /// The base-checkpoint rule: continued regimes need one, training from
    /// scratch must not get one.
    pub fn check_base(&self, has_base: bool) -> Result<()> {
        match (self.regime.is_continued(), has_base) {
            (true, false) => Err(Error::InvalidTrainingConfig(format!(
                "regime {} requires a base checkpoint (--base)",
                self.regime.name()
            ))),
            (false, true) => Err(Error::InvalidTrainingConfig(
                "regime from-scratch does not take a base checkpoint".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl MetricsLog {
    /// One JSON object per line; each evaluation follows the training step
    /// it was taken after.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
            while let Some(e) = evals.next_if(|e| e.step == s.step) {
                out.push_str(&serde_json::to_string(e)?);
                out.push('\n');
            }
        }
        for e in evals {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let value: serde_json::Value = serde_json::from_str(line)?;
            if value.get("eval").is_some() {
                log.evals.push(serde_json::from_value(value)?);
            } else {
                log.steps.push(serde_json::from_value(value)?);
            }
        }
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).at(path)
    }

    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last().map(|e| &e.eval)
    }

    /// Mean loss of the first and of the last `window` steps.
    pub fn smoothed_endpoints(&self, window: usize) -> Option<(f64, f64)> {
        if self.steps.len() < window || window == 0 {
            return None;
        }
        let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        Some((
            mean(&self.steps[..window]),
            mean(&self.steps[self.steps.len() - window..]),
        ))
    }
}

/// Held-out batches, masked once with a fixed seed so that every model is
/// scored on exactly the same positions.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub mlm_batches: Vec<MaskedBatch>,
    pub pair_batches: Vec<MaskedBatch>,
    pub objective: Objective,
}

const EVAL_BATCH: usize = 64;

/// Masking seed of the held-out set built during training.
pub const EVAL_SEED: u64 = 0x00e7_a15e;

impl EvalSet {
    /// `remap` translates tokenizer ids into model ids (after augmentation).
    pub fn build(
        valid: &Corpus,
        tokenizer: &BpeModel,
        remap: Option<&[u32]>,
        seq_len: usize,
        mask_rate: f64,
        objective: Objective,
        passes: usize,
    ) -> Result<Self> {
        Self::build_seeded(valid, tokenizer, remap, seq_len, mask_rate, objective, passes, EVAL_SEED)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build_seeded(
        valid: &Corpus,
        tokenizer: &BpeModel,
        remap: Option<&[u32]>,
        seq_len: usize,
        mask_rate: f64,
        objective: Objective,
        passes: usize,
        seed: u64,
    ) -> Result<Self> {
        let docs = tokenize_documents(valid, tokenizer);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let singles: Vec<Example> = docs
            .iter()
            .flatten()
            .map(|s| Example { first: s.clone(), second: None, label: None })
            .collect();
        if singles.is_empty() {
            return Err(Error::EmptyEvaluationSet);
        }
        let vocab = tokenizer.vocab_size();
        let mut mlm_batches = Vec::new();
        for _ in 0..passes {
            for chunk in singles.chunks(EVAL_BATCH) {
                let batch = build_batch(chunk, seq_len, mask_rate, vocab, &mut rng);
                if batch.masked_count() > 0 {
                    mlm_batches.push(batch);
                }
            }
        }
        let mut pair_batches = Vec::new();
        if objective.has_pair_task() {
            let pairs: Vec<Example> = sentence_pairs(&docs, objective, &mut rng)?
                .into_iter()
                .map(|p| Example {
                    first: p.first,
                    second: Some(p.second),
                    label: Some(p.label),
                })
                .collect();
            for chunk in pairs.chunks(EVAL_BATCH) {
                pair_batches.push(build_batch(chunk, seq_len, 0.0, vocab, &mut rng));
            }
        }
        if let Some(table) = remap {
            for b in mlm_batches.iter_mut().chain(pair_batches.iter_mut()) {
                b.remap(table)?;
            }
        }
        Ok(Self {
            mlm_batches,
            pair_batches,
            objective,
        })
    }

    pub fn evaluate(
        &self,
        params: &ModelParams<f32>,
        config: &ModelConfig,
        step: u64,
    ) -> Result<EvalReport> {
        evaluate(
            params,
            config,
            &self.mlm_batches,
            &self.pair_batches,
            self.objective,
            step,
        )
    }
}

fn tokenize_documents(corpus: &Corpus, tokenizer: &BpeModel) -> Vec<Vec<Vec<u32>>> {
    corpus
        .documents()
        .iter()
        .map(|doc| {
            doc.iter()
                .map(|s| tokenizer.encode(s))
                .filter(|ids| !ids.is_empty())
                .collect::<Vec<_>>()
        })
        .filter(|doc| !doc.is_empty())
        .collect()
}

/// What a continued regime starts from.
pub struct Base<'a> {
    pub checkpoint: &'a Checkpoint,
    /// Augmentation of the checkpoint's vocabulary with the tokenizer's;
    /// required for the bilingual regime.
    pub augmentation: Option<&'a AugmentationMap>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
}

/// Trains a model on `corpus` (tokenized with `tokenizer`) for exactly
/// `config.steps` optimizer steps.
///
/// From scratch, the model is `architecture` with its vocabulary resized to
/// the tokenizer. A continued regime starts from `base`: when an
/// augmentation map is given, the base embeddings go through
/// [`embedding_surgery`] and tokenizer ids are mapped into the augmented
/// vocabulary; otherwise tokenizer and base must share one vocabulary.
/// Everything is checked before the first step runs.
pub fn run_pretraining(
    corpus: &Corpus,
    tokenizer: &BpeModel,
    architecture: &ModelConfig,
    config: &TrainingConfig,
    base: Option<Base<'_>>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    config.check_base(base.is_some())?;

    let (model_config, mut params, remap) = match &base {
        None => {
            let model_config = ModelConfig {
                vocab_size: tokenizer.vocab_size(),
                ..architecture.clone()
            };
            let params = init_params::<f32>(&model_config, config.seed)?;
            (model_config, params, None)
        }
        Some(base) => {
            let ck = base.checkpoint;
            match base.augmentation {
                Some(map) => {
                    map.check_base_size(ck.config.vocab_size)?;
                    let table = map.remap_table(tokenizer.vocab())?;
                    let params =
                        embedding_surgery(&ck.params, map, config.init_policy, config.seed)?;
                    debug_assert_eq!(params.encoder_checksum(), ck.params.encoder_checksum());
                    let model_config = ModelConfig {
                        vocab_size: map.len(),
                        ..ck.config.clone()
                    };
                    (model_config, params, Some(table))
                }
                None if config.regime == Regime::ContinuedBilingual => {
                    return Err(Error::InvalidTrainingConfig(
                        "regime bilingual requires an augmentation map (--map)".into(),
                    ));
                }
                None => {
                    if ck.config.vocab_size != tokenizer.vocab_size() {
                        return Err(Error::ParamsVocabMismatch(format!(
                            "checkpoint has {} embedding rows but the tokenizer {} tokens; \
                             pass an augmentation map",
                            ck.config.vocab_size,
                            tokenizer.vocab_size()
                        )));
                    }
                    (ck.config.clone(), ck.params.clone(), None)
                }
            }
        }
    };
    model_config.validate()?;
    params.check_shapes(&model_config)?;
    if config.seq_len > model_config.max_seq_len {
        return Err(Error::InvalidTrainingConfig(format!(
            "seq_len {} exceeds the model's max_seq_len {}",
            config.seq_len, model_config.max_seq_len
        )));
    }

    let (train, valid) = split_corpus(corpus, config.valid_fraction, config.split_seed)?;
    let train_docs = tokenize_documents(&train, tokenizer);
    if config.objective == Objective::MlmNsp && train_docs.len() < 2 {
        return Err(Error::NeedTwoDocuments);
    }
    let eval_set = EvalSet::build(
        &valid,
        tokenizer,
        remap.as_deref(),
        config.seq_len,
        config.mask_rate,
        config.objective,
        config.eval_passes,
    )?;
    let mut stream = batch::ExampleStream::new(&train_docs, config.objective, config.seed)?;

    log::info!(
        "{}: {} steps, lr {}, {} parameters, vocab {}",
        config.regime.name(),
        config.steps,
        config.lr,
        params.parameter_count(),
        model_config.vocab_size
    );

    let mut adam = AdamState::<f32>::new(&model_config);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut log = MetricsLog::default();
    let vocab = tokenizer.vocab_size();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<MaskedBatch>>(PIPELINE_DEPTH);
        let remap = remap.as_deref();
        scope.spawn(move || {
            for _ in 0..config.steps {
                let batch = stream.take(config.batch_size).and_then(|(examples, rng)| {
                    let mut b = build_batch(&examples, config.seq_len, config.mask_rate, vocab, rng);
                    if let Some(table) = remap {
                        b.remap(table)?;
                    }
                    Ok(b)
                });
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    return;
                }
            }
        });

        for step in 1..=config.steps {
            let batch = rx.recv().map_err(|_| {
                Error::InvalidTrainingConfig("batch pipeline stopped early".into())
            })??;
            let (loss, grads) = loss_and_grads_with_dropout(
                &params,
                &model_config,
                &batch,
                config.objective,
                &mut dropout_rng,
            )?;
            let loss = f64::from(loss);
            if !loss.is_finite() {
                return Err(Error::GradientOverflow(step));
            }
            adam_step(&mut params, &grads, &mut adam, config.lr, step)?;
            log.steps.push(StepRecord { step, loss });
            if step % config.eval_every == 0 || step == config.steps {
                let eval = eval_set.evaluate(&params, &model_config, step)?;
                log::info!(
                    "step {step}: loss {loss:.4}, mlm acc {:.4}, ppl {:.3}",
                    eval.mlm_accuracy,
                    eval.perplexity
                );
                log.evals.push(EvalRecord { step, eval });
            }
        }
        Ok(())
    })?;

    Ok(PretrainOutcome {
        checkpoint: Checkpoint::new(model_config, &params)?,
        log,
    })
}
