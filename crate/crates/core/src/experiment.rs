//! The three-regime comparison, end to end, from one declarative config.
//!
//! A synthetic language family is generated; a monolingual base is trained
//! on the high-resource language and a multilingual base on it plus further
//! languages; then each regime trains on the low-resource corpus with the
//! same budget and seeds, and the final held-out reports are compared.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, check_preconditions, AugmentationReport, InitPolicy};
use crate::corpus::{split_corpus, Corpus};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{compare_regimes, Comparison, EvalReport};
use crate::manifest::RunManifest;
use crate::model::{Checkpoint, ModelConfig, Objective};
use crate::tokenizer::{train_bpe, BpeModel, BpeTrainerConfig};
use crate::training::{run_pretraining, Base, MetricsLog, Regime, SynthWorld, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub shared_fraction: f64,
    /// Sentences per corpus (high-resource, low-resource, multilingual).
    pub sentences: usize,
    /// Languages besides the high-resource one in the multilingual base.
    pub extra_languages: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub ffn_multiplier: usize,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            max_seq_len: self.max_seq_len,
            vocab_size,
            ffn_multiplier: self.ffn_multiplier,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub mask_rate: f64,
    pub objective: Objective,
    pub eval_every: u64,
    pub valid_fraction: f64,
    pub eval_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub base: f64,
    #[serde(rename = "from-scratch")]
    pub from_scratch: f64,
    pub bilingual: f64,
    pub multilingual: f64,
}

impl LearningRates {
    pub fn for_regime(&self, regime: Regime) -> f64 {
        match regime {
            Regime::FromScratch => self.from_scratch,
            Regime::ContinuedBilingual => self.bilingual,
            Regime::ContinuedMultilingual => self.multilingual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub vocab_size: usize,
    pub model: Architecture,
    /// Steps spent on each base model (not part of the matched budget).
    pub base_steps: u64,
    pub training: Budget,
    pub lr: LearningRates,
    #[serde(default)]
    pub init_policy: InitPolicy,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path).at(path)?)?;
        Ok(cfg)
    }

    fn training_config(&self, regime: Regime, steps: u64, lr: f64, seed: u64) -> TrainingConfig {
        let b = &self.training;
        TrainingConfig {
            regime,
            steps,
            lr,
            batch_size: b.batch_size,
            seq_len: b.seq_len,
            mask_rate: b.mask_rate,
            objective: b.objective,
            seed,
            eval_every: b.eval_every,
            valid_fraction: b.valid_fraction,
            split_seed: self.data.seed,
            eval_passes: b.eval_passes,
            init_policy: self.init_policy,
        }
    }

    /// Everything that can be checked before any training starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidExperimentConfig(why));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.data.extra_languages < 2 {
            return bad("the multilingual base needs at least 2 extra languages".into());
        }
        if self.data.sentences < 100 {
            return bad(format!("{} sentences is too few", self.data.sentences));
        }
        if self.base_steps < 1 {
            return bad("base_steps must be at least 1".into());
        }
        self.model.model_config(self.vocab_size).validate()?;
        for regime in Regime::ALL {
            let has_base = regime.is_continued();
            let cfg = self.training_config(regime, self.training.steps, self.lr.for_regime(regime), 0);
            cfg.validate()?;
            cfg.check_base(has_base)?;
        }
        self.training_config(Regime::FromScratch, self.base_steps, self.lr.base, 0)
            .validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub regime: Regime,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    /// Per regime, the median of each metric across seeds.
    pub medians: Vec<(Regime, EvalReport)>,
    pub comparison: Comparison,
    pub augmentation: Vec<(Regime, AugmentationReport)>,
    /// Metrics logs keyed `"{regime}-seed{seed}"`, plus `"base-hi"` and
    /// `"base-multi"`.
    pub logs: Vec<(String, MetricsLog)>,
}

impl ExperimentOutcome {
    pub fn median(&self, regime: Regime) -> Option<&EvalReport> {
        self.medians.iter().find(|(r, _)| *r == regime).map(|(_, m)| m)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn median_report(reports: &[&EvalReport]) -> EvalReport {
    let m = |f: fn(&EvalReport) -> f64| median(reports.iter().map(|r| f(r)).collect());
    let loss = m(|r| r.mlm_loss_nats);
    let pairs: Vec<f64> = reports.iter().filter_map(|r| r.pair_accuracy).collect();
    EvalReport {
        step: reports.iter().map(|r| r.step).max().unwrap_or(0),
        mlm_accuracy: m(|r| r.mlm_accuracy),
        pair_accuracy: (!pairs.is_empty()).then(|| median(pairs)),
        mlm_loss_nats: loss,
        perplexity: loss.exp(),
        mlm_loss_bits: loss / std::f64::consts::LN_2,
        masked_token_count: reports.iter().map(|r| r.masked_token_count).max().unwrap_or(0),
        pair_count: reports.iter().map(|r| r.pair_count).max().unwrap_or(0),
        clamped_count: reports.iter().map(|r| r.clamped_count).max().unwrap_or(0),
    }
}

struct Writer<'a>(Option<&'a Path>);

impl Writer<'_> {
    fn file(&self, rel: &str, contents: &[u8]) -> Result<()> {
        if let Some(root) = self.0 {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).at(parent)?;
            }
            fs::write(&path, contents).at(&path)?;
        }
        Ok(())
    }

    fn corpus(&self, rel: &str, c: &Corpus) -> Result<()> {
        self.file(rel, c.to_file_string().as_bytes())
    }

    fn tokenizer(&self, rel: &str, t: &BpeModel) -> Result<()> {
        match self.0 {
            Some(root) => t.save(root.join(rel)),
            None => Ok(()),
        }
    }

    fn log(&self, name: &str, log: &MetricsLog) -> Result<()> {
        self.file(&format!("runs/{name}.jsonl"), log.to_jsonl()?.as_bytes())
    }

    fn checkpoint(&self, rel: &str, c: &Checkpoint) -> Result<()> {
        self.file(rel, &c.to_bytes()?)
    }
}

/// Runs all three regimes for every seed with matched budgets. With `out`,
/// corpora, tokenizers, maps, checkpoints, metrics logs, the comparison and
/// a manifest are written there; each file is written as soon as it exists,
/// so a failure leaves the finished part behind.
pub fn reproduce_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let w = Writer(out);
    let d = &config.data;
    let world = SynthWorld::new(d.shared_fraction, d.extra_languages, d.seed)?;
    let hi = world.corpus(&[&world.hi], d.sentences, d.seed.wrapping_add(1), "synthetic-hi");
    let lo = world.corpus(&[&world.lo], d.sentences, d.seed.wrapping_add(2), "synthetic-lo");
    let mut multi_lexicons = vec![&world.hi];
    multi_lexicons.extend(&world.extra);
    let multi = world.corpus(&multi_lexicons, d.sentences, d.seed.wrapping_add(3), "synthetic-multi");
    w.corpus("corpora/hi.txt", &hi)?;
    w.corpus("corpora/lo.txt", &lo)?;
    w.corpus("corpora/multi.txt", &multi)?;

    // Tokenizers see training sentences only; the held-out split used
    // inside every run is the same one.
    let tokenizer = |c: &Corpus| -> Result<BpeModel> {
        let (train, _) = split_corpus(c, config.training.valid_fraction, d.seed)?;
        train_bpe(train.sentences(), &BpeTrainerConfig::new(config.vocab_size))
    };
    let hi_tok = tokenizer(&hi)?;
    let lo_tok = tokenizer(&lo)?;
    let multi_tok = tokenizer(&multi)?;
    w.tokenizer("tokenizers/hi", &hi_tok)?;
    w.tokenizer("tokenizers/lo", &lo_tok)?;
    w.tokenizer("tokenizers/multi", &multi_tok)?;

    let arch = config.model.model_config(config.vocab_size);
    let mut logs = Vec::new();
    let mut bases = Vec::new();
    for (name, corpus, tok) in [("hi", &hi, &hi_tok), ("multi", &multi, &multi_tok)] {
        log::info!("training base model {name}");
        let cfg = config.training_config(Regime::FromScratch, config.base_steps, config.lr.base, d.seed);
        let outcome = run_pretraining(corpus, tok, &arch, &cfg, None)?;
        w.checkpoint(&format!("checkpoints/base-{name}.blm"), &outcome.checkpoint)?;
        w.log(&format!("base-{name}"), &outcome.log)?;
        logs.push((format!("base-{name}"), outcome.log));
        bases.push(outcome.checkpoint);
    }
    let (hi_base, multi_base) = (&bases[0], &bases[1]);

    let mut augmentation = Vec::new();
    let mut maps = Vec::new();
    for (regime, base_tok) in [
        (Regime::ContinuedBilingual, &hi_tok),
        (Regime::ContinuedMultilingual, &multi_tok),
    ] {
        let report = check_preconditions(lo_tok.vocab(), base_tok.vocab())?;
        let (_, map) = augment(base_tok.vocab(), lo_tok.vocab())?;
        w.file(&format!("maps/{}.tsv", regime.name()), map.to_tsv()?.as_bytes())?;
        augmentation.push((regime, report));
        maps.push(map);
    }

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        for regime in Regime::ALL {
            let cfg = config.training_config(regime, config.training.steps, config.lr.for_regime(regime), seed);
            let base = match regime {
                Regime::FromScratch => None,
                Regime::ContinuedBilingual => Some(Base {
                    checkpoint: hi_base,
                    augmentation: Some(&maps[0]),
                }),
                Regime::ContinuedMultilingual => Some(Base {
                    checkpoint: multi_base,
                    augmentation: Some(&maps[1]),
                }),
            };
            log::info!("{} seed {seed}", regime.name());
            let outcome = run_pretraining(&lo, &lo_tok, &arch, &cfg, base)?;
            let name = format!("{}-seed{seed}", regime.name());
            w.log(&name, &outcome.log)?;
            let report = outcome
                .log
                .final_eval()
                .cloned()
                .expect("the last step is always evaluated");
            runs.push(RunResult { regime, seed, report });
            logs.push((name, outcome.log));
        }
    }

    let medians: Vec<(Regime, EvalReport)> = Regime::ALL
        .iter()
        .map(|&regime| {
            let reports: Vec<&EvalReport> = runs
                .iter()
                .filter(|r| r.regime == regime)
                .map(|r| &r.report)
                .collect();
            (regime, median_report(&reports))
        })
        .collect();
    let named: Vec<(String, EvalReport)> = medians
        .iter()
        .map(|(r, m)| (r.name().to_string(), m.clone()))
        .collect();
    let comparison = compare_regimes(&named)?;
    w.file("comparison.txt", comparison.render().as_bytes())?;
    w.file("comparison.json", comparison.to_json()?.as_bytes())?;
    w.file("results.json", (serde_json::to_string_pretty(&runs)? + "\n").as_bytes())?;

    if let Some(root) = out {
        let mut manifest = RunManifest::new(
            "reproduce",
            serde_json::to_value(config)?,
            config.seeds.clone(),
        );
        for sub in ["corpora", "tokenizers", "checkpoints", "maps", "runs"] {
            manifest.output(root.join(sub))?;
        }
        for f in ["comparison.txt", "comparison.json", "results.json"] {
            manifest.output(root.join(f))?;
        }
        manifest.save(root.join("manifest.json"))?;
    }

    Ok(ExperimentOutcome {
        runs,
        medians,
        comparison,
        augmentation,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
