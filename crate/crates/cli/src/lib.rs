//! The `bilm` command line: prepare-corpus → train-bpe → augment-vocab →
//! pretrain → evaluate → compare, plus `reproduce` for the whole
//! experiment from one config file.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bilm::augment::{augment, check_preconditions, AugmentationMap, InitPolicy};
use bilm::corpus::{clean, split_corpus, Corpus, HttpTransliterator, TableTransliterator, TransliterationTable, Transliterator};
use bilm::evaluation::{compare_regimes, EvalReport};
use bilm::experiment::{reproduce_experiment, ExperimentConfig};
use bilm::manifest::RunManifest;
use bilm::model::{Checkpoint, ModelConfig, Objective};
use bilm::training::{run_pretraining, Base, EvalSet, MetricsLog, Regime, TrainingConfig, EVAL_SEED};
use bilm::{train_bpe, BpeModel, BpeTrainerConfig};

/// Environment variable holding the log filter (`error` … `trace`).
pub const LOG_ENV: &str = "BILM_LOG";

#[derive(Parser, Debug)]
#[command(name = "bilm", version, about = "Bilingual language models by vocabulary augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean (and optionally transliterate) raw text into a corpus file.
    PrepareCorpus(PrepareArgs),
    /// Train a byte-level BPE tokenizer on a corpus.
    TrainBpe(TrainBpeArgs),
    /// Merge a new vocabulary into a base vocabulary, keeping base ids.
    AugmentVocab(AugmentArgs),
    /// Pretrain from scratch or continue from a base checkpoint.
    Pretrain(PretrainArgs),
    /// Score a checkpoint on a corpus.
    Evaluate(EvaluateArgs),
    /// Lay evaluation reports side by side.
    Compare(CompareArgs),
    /// Run the three-regime experiment described by a config file.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// Raw text file, or a directory of them; blank lines separate documents.
    #[arg(long = "in")]
    input: PathBuf,
    /// Transliteration table (TSV: source<TAB>target).
    #[arg(long, conflicts_with = "transliterate_url")]
    transliterate: Option<PathBuf>,
    /// HTTP transliteration service (text in, text out).
    #[arg(long)]
    transliterate_url: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    timeout_secs: f64,
    /// Also split off a validation corpus (written next to --out).
    #[arg(long)]
    valid_frac: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainBpeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
    #[arg(long)]
    cased: bool,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    common: Common,
    /// Tokenizer directory of the base (high-resource) model.
    #[arg(long)]
    base: PathBuf,
    /// Tokenizer directory of the new (low-resource) language.
    #[arg(long)]
    new: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 4)]
    ffn_multiplier: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// from-scratch, bilingual or multilingual.
    #[arg(long)]
    regime: Regime,
    #[arg(long)]
    corpus: PathBuf,
    /// Tokenizer directory for the corpus.
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Base checkpoint for the continued regimes.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Augmentation map from augment-vocab.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 48)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, default_value = "mlm-nsp")]
    objective: Objective,
    #[arg(long, default_value_t = 100)]
    eval_every: u64,
    #[arg(long, default_value_t = 0.05)]
    valid_frac: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 2)]
    eval_passes: usize,
    #[arg(long, default_value = "gaussian")]
    init_policy: InitPolicy,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Needed when the checkpoint uses an augmented vocabulary.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Score only the held-out part of the corpus, split as pretrain does.
    #[arg(long)]
    held_out: bool,
    #[arg(long, default_value_t = 0.05)]
    valid_frac: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 48)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, default_value = "mlm-nsp")]
    objective: Objective,
    #[arg(long, default_value_t = 2)]
    passes: usize,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// NAME=PATH, where PATH is a report (.json) or a metrics log (.jsonl).
    #[arg(long = "report", required = true)]
    reports: Vec<String>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "experiments/desk_scale.json")]
    config: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareCorpus(a) => prepare_corpus(a),
        Command::TrainBpe(a) => train_tokenizer(a),
        Command::AugmentVocab(a) => augment_vocab(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Reproduce(a) => reproduce(a),
    }
}

/// `out.json` → `out.json.manifest.json`; used for single-file outputs.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn config_value(pairs: &[(&str, serde_json::Value)]) -> serde_json::Value {
    serde_json::Value::Object(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
}

fn raw_documents(input: &Path) -> Result<Vec<(PathBuf, String)>> {
    let mut files = Vec::new();
    if input.is_dir() {
        for entry in fs::read_dir(input).with_context(|| format!("cannot read {}", input.display()))? {
            let path = entry?.path();
            if path.is_file() {
                files.push(path);
            }
        }
        files.sort();
    } else {
        files.push(input.to_path_buf());
    }
    let mut docs = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).with_context(|| format!("cannot read {}", f.display()))?;
        let text = text.replace("\r\n", "\n");
        for block in text.split("\n\n") {
            if !block.trim().is_empty() {
                docs.push((f.clone(), block.to_string()));
            }
        }
    }
    Ok(docs)
}

fn prepare_corpus(a: PrepareArgs) -> Result<()> {
    let raw = raw_documents(&a.input)?;
    let translit: Option<Box<dyn Transliterator>> = match (&a.transliterate, &a.transliterate_url) {
        (Some(table), _) => Some(Box::new(TableTransliterator(TransliterationTable::load(table)?))),
        (None, Some(url)) => Some(Box::new(HttpTransliterator::new(
            url.clone(),
            Duration::from_secs_f64(a.timeout_secs),
        ))),
        (None, None) => None,
    };
    let mut documents = Vec::new();
    for (_, text) in &raw {
        let text = match &translit {
            Some(t) => t.transliterate(text)?,
            None => text.clone(),
        };
        let sentences = clean(&text);
        if !sentences.is_empty() {
            documents.push(sentences);
        }
    }
    if documents.is_empty() {
        bail!("no sentences survived cleaning in {}", a.input.display());
    }
    let tag = a.input.file_name().map_or("corpus".into(), |n| n.to_string_lossy().into_owned());
    let corpus = Corpus::new(documents, tag)?;
    create_parent(&a.common.out)?;
    let mut outputs = vec![a.common.out.clone()];
    let seed = a.common.seed.unwrap_or(0);
    match a.valid_frac {
        Some(frac) => {
            let (train, valid) = split_corpus(&corpus, frac, seed)?;
            let valid_path = a.common.out.with_extension("valid.txt");
            train.save(&a.common.out)?;
            valid.save(&valid_path)?;
            println!("train {:?}, valid {:?}", train.stats(), valid.stats());
            outputs.push(valid_path);
        }
        None => {
            corpus.save(&a.common.out)?;
            println!("{:?}", corpus.stats());
        }
    }
    let mut m = RunManifest::new(
        "prepare-corpus",
        config_value(&[
            ("in", json!(a.input)),
            ("transliterate", json!(a.transliterate)),
            ("transliterate_url", json!(a.transliterate_url)),
            ("valid_frac", json!(a.valid_frac)),
            ("out", json!(a.common.out)),
        ]),
        vec![seed],
    );
    m.input(&a.input)?;
    if let Some(t) = &a.transliterate {
        m.input(t)?;
    }
    for o in &outputs {
        m.output(o)?;
    }
    m.save(sidecar(&a.common.out))?;
    Ok(())
}

fn train_tokenizer(a: TrainBpeArgs) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let model = train_bpe(
        corpus.sentences(),
        &BpeTrainerConfig::new(a.vocab_size).cased(a.cased),
    )?;
    create_dir(&a.common.out)?;
    model.save(&a.common.out)?;
    println!("{} tokens, {} merges", model.vocab_size(), model.merges().len());
    let mut m = RunManifest::new(
        "train-bpe",
        config_value(&[
            ("corpus", json!(a.corpus)),
            ("vocab_size", json!(a.vocab_size)),
            ("cased", json!(a.cased)),
        ]),
        vec![a.common.seed.unwrap_or(0)],
    );
    m.input(&a.corpus)?;
    for f in ["vocab.txt", "merges.txt", "tokenizer.json"] {
        m.output(a.common.out.join(f))?;
    }
    m.save(a.common.out.join("manifest.json"))?;
    Ok(())
}

fn augment_vocab(a: AugmentArgs) -> Result<()> {
    let base = BpeModel::load(&a.base)?;
    let new = BpeModel::load(&a.new)?;
    let report = check_preconditions(new.vocab(), base.vocab())?;
    let (_, map) = augment(base.vocab(), new.vocab())?;
    create_parent(&a.common.out)?;
    map.save(&a.common.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut m = RunManifest::new(
        "augment-vocab",
        config_value(&[("base", json!(a.base)), ("new", json!(a.new))]),
        vec![a.common.seed.unwrap_or(0)],
    );
    m.input(&a.base)?.input(&a.new)?.output(&a.common.out)?;
    m.save(sidecar(&a.common.out))?;
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let config = TrainingConfig {
        regime: a.regime,
        steps: a.steps,
        lr: a.lr,
        batch_size: a.batch_size,
        seq_len: a.seq_len,
        mask_rate: a.mask_rate,
        objective: a.objective,
        seed,
        eval_every: a.eval_every,
        valid_fraction: a.valid_frac,
        split_seed: a.split_seed,
        eval_passes: a.eval_passes,
        init_policy: a.init_policy,
    };
    config.validate()?;
    config.check_base(a.base.is_some())?;
    let architecture = ModelConfig {
        layers: a.model.layers,
        hidden: a.model.hidden,
        heads: a.model.heads,
        max_seq_len: a.model.max_seq_len,
        vocab_size: 0,
        ffn_multiplier: a.model.ffn_multiplier,
        dropout_rate: a.model.dropout,
    };
    let corpus = Corpus::load(&a.corpus)?;
    let tokenizer = BpeModel::load(&a.tokenizer)?;
    let checkpoint = a.base.as_ref().map(Checkpoint::load).transpose()?;
    let map = a.map.as_ref().map(AugmentationMap::load).transpose()?;
    let base = checkpoint.as_ref().map(|checkpoint| Base {
        checkpoint,
        augmentation: map.as_ref(),
    });
    let outcome = run_pretraining(&corpus, &tokenizer, &architecture, &config, base)?;

    let out = &a.common.out;
    create_dir(out)?;
    outcome.checkpoint.save(out.join("model.blm"))?;
    outcome.log.save(out.join("metrics.jsonl"))?;
    let last = outcome.log.final_eval().expect("the last step is always evaluated");
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(last)? + "\n")?;
    println!("{}", serde_json::to_string(last)?);

    let mut resolved = serde_json::to_value(&config)?;
    resolved["architecture"] = serde_json::to_value(&outcome.checkpoint.config)?;
    resolved["corpus"] = json!(a.corpus);
    resolved["tokenizer"] = json!(a.tokenizer);
    resolved["base"] = json!(a.base);
    resolved["map"] = json!(a.map);
    let mut m = RunManifest::new("pretrain", resolved, vec![seed]);
    m.input(&a.corpus)?.input(&a.tokenizer)?;
    for p in a.base.iter().chain(&a.map) {
        m.input(p)?;
    }
    for f in ["model.blm", "metrics.jsonl", "eval.json"] {
        m.output(out.join(f))?;
    }
    m.save(out.join("manifest.json"))?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let tokenizer = BpeModel::load(&a.tokenizer)?;
    let mut corpus = Corpus::load(&a.corpus)?;
    if a.held_out {
        corpus = split_corpus(&corpus, a.valid_frac, a.split_seed)?.1;
    }
    let remap = match &a.map {
        Some(path) => {
            let map = AugmentationMap::load(path)?;
            Some(map.remap_table(tokenizer.vocab())?)
        }
        None => None,
    };
    let seed = a.common.seed.unwrap_or(EVAL_SEED);
    let set = EvalSet::build_seeded(
        &corpus,
        &tokenizer,
        remap.as_deref(),
        a.seq_len,
        a.mask_rate,
        a.objective,
        a.passes,
        seed,
    )?;
    let report = set.evaluate(&checkpoint.params, &checkpoint.config, 0)?;
    create_parent(&a.common.out)?;
    fs::write(&a.common.out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", serde_json::to_string(&report)?);
    let mut m = RunManifest::new(
        "evaluate",
        config_value(&[
            ("checkpoint", json!(a.checkpoint)),
            ("tokenizer", json!(a.tokenizer)),
            ("corpus", json!(a.corpus)),
            ("map", json!(a.map)),
            ("held_out", json!(a.held_out)),
            ("valid_frac", json!(a.valid_frac)),
            ("split_seed", json!(a.split_seed)),
            ("seq_len", json!(a.seq_len)),
            ("mask_rate", json!(a.mask_rate)),
            ("objective", json!(a.objective)),
            ("passes", json!(a.passes)),
        ]),
        vec![seed],
    );
    m.input(&a.checkpoint)?.input(&a.tokenizer)?.input(&a.corpus)?;
    if let Some(p) = &a.map {
        m.input(p)?;
    }
    m.output(&a.common.out)?;
    m.save(sidecar(&a.common.out))?;
    Ok(())
}

fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let log = MetricsLog::parse_jsonl(&text)?;
        return log
            .final_eval()
            .cloned()
            .with_context(|| format!("{} has no evaluation records", path.display()));
    }
    serde_json::from_str(&text).with_context(|| format!("{} is not a report", path.display()))
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut named = Vec::new();
    let mut paths = Vec::new();
    for spec in &a.reports {
        let Some((name, path)) = spec.split_once('=') else {
            bail!("--report expects NAME=PATH, got {spec:?}");
        };
        let path = PathBuf::from(path);
        named.push((name.to_string(), load_report(&path)?));
        paths.push(path);
    }
    let comparison = compare_regimes(&named)?;
    let out = &a.common.out;
    create_dir(out)?;
    let text = comparison.render();
    fs::write(out.join("comparison.txt"), &text)?;
    fs::write(out.join("comparison.json"), comparison.to_json()?)?;
    print!("{text}");
    let mut m = RunManifest::new(
        "compare",
        config_value(&[("reports", json!(a.reports))]),
        vec![a.common.seed.unwrap_or(0)],
    );
    for p in &paths {
        m.input(p)?;
    }
    m.output(out.join("comparison.txt"))?.output(out.join("comparison.json"))?;
    m.save(out.join("manifest.json"))?;
    Ok(())
}

fn reproduce(a: ReproduceArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.common.seed {
        config.seeds = vec![seed];
    }
    create_dir(&a.common.out)?;
    let outcome = reproduce_experiment(&config, Some(&a.common.out))?;
    print!("{}", outcome.comparison.render());
    Ok(())
}
