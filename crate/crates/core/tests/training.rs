use std::collections::HashSet;

use bilm::augment::{augment, check_preconditions, embedding_surgery, InitPolicy};
use bilm::model::{init_params, Checkpoint, ModelConfig, Objective, IGNORE_LABEL};
use bilm::training::{
    make_sentence_pairs, prepare_mlm_batch, run_pretraining, synth_bilingual_corpus, Base,
    Regime, SynthWorld, TrainingConfig, FIRST_REGULAR_ID,
};
use bilm::vocab::MASK_ID;
use bilm::{train_bpe, BpeTrainerConfig, Corpus, Error};

fn tokenizer(corpus: &Corpus, size: usize) -> bilm::BpeModel {
    train_bpe(corpus.sentences(), &BpeTrainerConfig::new(size)).unwrap()
}

fn quick(regime: Regime, steps: u64, seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 8,
        seq_len: 32,
        eval_every: 50,
        ..TrainingConfig::new(regime, steps, 1e-3, seed)
    }
}

fn arch() -> ModelConfig {
    ModelConfig {
        hidden: 32,
        max_seq_len: 32,
        ..ModelConfig::tiny(0)
    }
}

#[test]
fn masking_rate_and_replacement_kinds() {
    let (_, lo) = synth_bilingual_corpus(0.4, 2000, 5).unwrap();
    let bpe = tokenizer(&lo, 400);
    let sentences: Vec<&str> = lo.sentences().collect();
    let batch = prepare_mlm_batch(&sentences, &bpe, 64, 0.15, 11).unwrap();
    let mut eligible = 0usize;
    let (mut masked, mut kept, mut random) = (0usize, 0usize, 0usize);
    for (row, sentence) in sentences.iter().enumerate() {
        let ids = bpe.encode(sentence);
        assert_eq!(batch.input_ids[[row, 0]], bilm::vocab::CLS_ID);
        for (p, &gold) in ids.iter().enumerate().take(62) {
            let p = p + 1;
            assert!(gold >= FIRST_REGULAR_ID);
            eligible += 1;
            let label = batch.mlm_labels[[row, p]];
            let input = batch.input_ids[[row, p]];
            if label == IGNORE_LABEL {
                assert_eq!(input, gold, "unlabeled positions are untouched");
                continue;
            }
            assert_eq!(label, gold as i32);
            if input == MASK_ID {
                masked += 1;
            } else if input == gold {
                kept += 1;
            } else {
                assert!(input >= FIRST_REGULAR_ID && (input as usize) < bpe.vocab_size());
                random += 1;
            }
        }
    }
    assert!(eligible >= 10_000, "{eligible}");
    let labeled = masked + kept + random;
    let rate = labeled as f64 / eligible as f64;
    assert!((0.13..=0.17).contains(&rate), "{rate}");
    let share = |n: usize| n as f64 / labeled as f64;
    assert!((share(masked) - 0.8).abs() < 0.03, "{}", share(masked));
    // A random replacement can coincide with the gold token.
    assert!((share(kept) - 0.1).abs() < 0.03, "{}", share(kept));
    assert!((share(random) - 0.1).abs() < 0.03, "{}", share(random));
}

#[test]
fn nsp_labels_balanced_and_negatives_cross_documents() {
    let (_, lo) = synth_bilingual_corpus(0.4, 1500, 9).unwrap();
    let pairs = make_sentence_pairs(&lo, Objective::MlmNsp, 4).unwrap();
    assert!(pairs.len() >= 1000);
    let pairs = &pairs[..1000];
    let positives = pairs.iter().filter(|p| p.label == 1).count() as f64 / 1000.0;
    assert!((0.45..=0.55).contains(&positives), "{positives}");

    let doc_of = |s: &str| -> HashSet<usize> {
        lo.documents()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.iter().any(|x| x == s))
            .map(|(i, _)| i)
            .collect()
    };
    for p in pairs.iter().filter(|p| p.label == 0).take(100) {
        let (a, b) = (doc_of(&p.first), doc_of(&p.second));
        // Synthetic sentences can repeat; a negative must at least be able
        // to come from a different document.
        assert!(b.iter().any(|d| !a.contains(d)) || a.len() > 1);
    }

    let two = Corpus::new(
        vec![
            vec!["a b".into(), "c d".into(), "e f".into()],
            vec!["g h".into(), "i j".into()],
        ],
        "two",
    )
    .unwrap();
    for seed in 0..50 {
        for p in make_sentence_pairs(&two, Objective::MlmNsp, seed).unwrap() {
            if p.label == 0 {
                let first_doc = two.documents().iter().position(|d| d.contains(&p.first));
                let second_doc = two.documents().iter().position(|d| d.contains(&p.second));
                assert_ne!(first_doc, second_doc);
            }
        }
    }
    for p in make_sentence_pairs(&two, Objective::MlmSop, 1).unwrap() {
        let doc = two.documents().iter().find(|d| d.contains(&p.first)).unwrap();
        let i = doc.iter().position(|s| *s == p.first).unwrap();
        let j = doc.iter().position(|s| *s == p.second).unwrap();
        assert_eq!(p.label == 1, j == i + 1);
        assert_eq!(p.label == 0, i == j + 1);
    }
}

#[test]
fn steps_zero_is_rejected() {
    let err = quick(Regime::FromScratch, 0, 1).validate().unwrap_err();
    assert!(matches!(err, Error::InvalidTrainingConfig(_)), "{err}");
}

#[test]
fn regime_and_base_must_agree() {
    let (_, lo) = synth_bilingual_corpus(0.4, 200, 1).unwrap();
    let bpe = tokenizer(&lo, 300);
    let err = run_pretraining(&lo, &bpe, &arch(), &quick(Regime::ContinuedBilingual, 5, 1), None)
        .unwrap_err();
    assert!(err.to_string().contains("base checkpoint"), "{err}");

    let cfg = ModelConfig { vocab_size: 300, ..arch() };
    let ck = Checkpoint::new(cfg.clone(), &init_params::<f32>(&cfg, 0).unwrap()).unwrap();
    let base = Base { checkpoint: &ck, augmentation: None };
    let err = run_pretraining(&lo, &bpe, &arch(), &quick(Regime::FromScratch, 5, 1), Some(base))
        .unwrap_err();
    assert!(err.to_string().contains("base"), "{err}");
}

#[test]
fn vocabulary_mismatch_fails_before_training() {
    let (hi, lo) = synth_bilingual_corpus(0.4, 300, 2).unwrap();
    let (hi_bpe, lo_bpe) = (tokenizer(&hi, 300), tokenizer(&lo, 300));
    let (_, map) = augment(hi_bpe.vocab(), lo_bpe.vocab()).unwrap();
    let wrong = ModelConfig { vocab_size: 280, ..arch() };
    let ck = Checkpoint::new(wrong.clone(), &init_params::<f32>(&wrong, 0).unwrap()).unwrap();
    let base = Base { checkpoint: &ck, augmentation: Some(&map) };
    let err = run_pretraining(&lo, &lo_bpe, &arch(), &quick(Regime::ContinuedBilingual, 1_000_000, 1), Some(base))
        .unwrap_err();
    assert!(matches!(err, Error::ParamsVocabMismatch(_)), "{err}");
}

#[test]
fn tiny_run_learns_and_is_deterministic() {
    let (_, lo) = synth_bilingual_corpus(0.4, 1500, 3).unwrap();
    let bpe = tokenizer(&lo, 300);
    let cfg = quick(Regime::FromScratch, 200, 8);
    let a = run_pretraining(&lo, &bpe, &arch(), &cfg, None).unwrap();
    assert_eq!(a.log.steps.len(), 200);
    assert_eq!(
        a.log.evals.iter().map(|e| e.step).collect::<Vec<_>>(),
        [50, 100, 150, 200]
    );
    let (first, last) = a.log.smoothed_endpoints(20).unwrap();
    assert!(last < first, "smoothed loss {first} -> {last}");

    let b = run_pretraining(&lo, &bpe, &arch(), &cfg, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
}

#[test]
fn continued_run_keeps_encoder_at_surgery() {
    let (hi, lo) = synth_bilingual_corpus(0.4, 600, 4).unwrap();
    let (hi_bpe, lo_bpe) = (tokenizer(&hi, 300), tokenizer(&lo, 300));
    let base = run_pretraining(&hi, &hi_bpe, &arch(), &quick(Regime::FromScratch, 20, 1), None)
        .unwrap()
        .checkpoint;
    let (_, map) = augment(hi_bpe.vocab(), lo_bpe.vocab()).unwrap();
    let grafted = embedding_surgery(&base.params, &map, InitPolicy::default(), 3).unwrap();
    assert_eq!(grafted.encoder_checksum(), base.params.encoder_checksum());

    let cont = run_pretraining(
        &lo,
        &lo_bpe,
        &arch(),
        &quick(Regime::ContinuedBilingual, 20, 3),
        Some(Base { checkpoint: &base, augmentation: Some(&map) }),
    )
    .unwrap();
    assert_eq!(cont.checkpoint.config.vocab_size, map.len());
    assert_eq!(cont.log.steps.len(), 20);
    assert_ne!(cont.checkpoint.params.encoder_checksum(), base.params.encoder_checksum());
}

#[test]
fn synthetic_overlap_tracks_shared_fraction() {
    let (hi, lo) = synth_bilingual_corpus(0.4, 10_000, 6).unwrap();
    let types = |c: &Corpus| -> HashSet<String> {
        c.sentences()
            .flat_map(|s| s.split_whitespace())
            .map(|w| w.trim_end_matches('.').to_string())
            .collect()
    };
    let (h, l) = (types(&hi), types(&lo));
    let ratio = l.intersection(&h).count() as f64 / l.len() as f64;
    assert!((ratio - 0.4).abs() <= 0.05, "{ratio}");
}

#[test]
fn shared_fraction_extremes() {
    let (hi, lo) = synth_bilingual_corpus(0.0, 1000, 2).unwrap();
    let report = check_preconditions(tokenizer(&lo, 400).vocab(), tokenizer(&hi, 400).vocab()).unwrap();
    assert!(!report.precondition_eq1, "{report:?}");

    let world = SynthWorld::new(1.0, 0, 2).unwrap();
    assert!(world.lo.types().is_subset(&world.hi.types()));
    let (hi, lo) = synth_bilingual_corpus(1.0, 1000, 2).unwrap();
    let words = |c: &Corpus| -> HashSet<String> {
        c.sentences().flat_map(|s| s.split_whitespace()).map(str::to_string).collect()
    };
    assert!(words(&lo).is_subset(&words(&hi)));
}
