use bilm::tokenizer::{byte_to_char, casefold, train_bpe, BpeModel, BpeTrainerConfig};
use bilm::vocab::MASK_ID;
use proptest::prelude::*;

const CORPUS: [&str; 6] = [
    "salam dunya kya haal hai",
    "main school ja raha hoon",
    "Abbas school main parhata hai",
    "the teacher reads a book at school",
    "dunya bohat bari hai aur khoobsurat hai",
    "kya aap ne kitab parhi hai",
];

fn model(size: usize) -> BpeModel {
    train_bpe(CORPUS, &BpeTrainerConfig::new(size)).unwrap()
}

/// Splits into whitespace and non-whitespace runs, then moves a single
/// trailing space of a whitespace run onto the word that follows it.
fn reference_pieces(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut runs: Vec<String> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ws = chars[i].is_whitespace();
        let mut j = i;
        while j < chars.len() && chars[j].is_whitespace() == ws {
            j += 1;
        }
        runs.push(chars[i..j].iter().collect());
        i = j;
    }
    let mut out = Vec::new();
    let mut k = 0;
    while k < runs.len() {
        let run = &runs[k];
        let is_ws = run.chars().next().unwrap().is_whitespace();
        if is_ws && k + 1 < runs.len() && run.ends_with(' ') {
            let head = &run[..run.len() - 1];
            if !head.is_empty() {
                out.push(head.to_string());
            }
            out.push(format!(" {}", runs[k + 1]));
            k += 2;
        } else {
            out.push(run.clone());
            k += 1;
        }
    }
    out
}

/// Applies every merge rule, in training order, to each piece.
fn reference_encode(model: &BpeModel, text: &str) -> Vec<u32> {
    let text = casefold(text);
    let mut ids = Vec::new();
    for piece in reference_pieces(&text) {
        let mut symbols: Vec<String> = piece.bytes().map(|b| byte_to_char(b).to_string()).collect();
        for (l, r) in model.merges() {
            let mut next = Vec::new();
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == l && &symbols[i + 1] == r {
                    next.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    next.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = next;
        }
        ids.extend(symbols.iter().map(|s| model.vocab().id(s).unwrap()));
    }
    ids
}

#[test]
fn examples() {
    let m = model(320);
    assert!(m.encode("").is_empty());
    assert_eq!(m.decode(&[]).unwrap(), "");
    assert_eq!(m.decode(&[MASK_ID]).unwrap(), "[MASK]");
    assert_eq!(m.decode(&m.encode("salam dunya")).unwrap(), "salam dunya");
    assert_eq!(m.decode(&m.encode("Salam DUNYA")).unwrap(), "salam dunya");
    let err = m.decode(&[320]).unwrap_err().to_string();
    assert!(err.starts_with("unknown token id"), "{err}");

    let ab = train_bpe(["ab ab ab", "ab"], &BpeTrainerConfig::new(262)).unwrap();
    assert_eq!(ab.merges()[0], ("a".into(), "b".into()));
    assert_eq!(ab.encode("ab").len(), 1);
}

#[test]
fn vocab_and_merges_files_are_bit_exact_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    model(340).save(a.path()).unwrap();
    model(340).save(b.path()).unwrap();
    for name in ["vocab.txt", "merges.txt", "tokenizer.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let vocab = std::fs::read_to_string(a.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab.lines().count(), 340);
    assert!(!vocab.contains('\r'));
    assert!(vocab.lines().all(|l| l == l.trim_end()));
    let merges = std::fs::read_to_string(a.path().join("merges.txt")).unwrap();
    assert!(merges.starts_with("#version 1\n"));
    assert_eq!(merges.lines().count(), 1 + 340 - 261);

    let loaded = BpeModel::load(a.path()).unwrap();
    let text = "Abbas school main parhata hai";
    assert_eq!(loaded.encode(text), model(340).encode(text));
}

#[test]
fn concurrent_encoding_matches_serial() {
    let m = model(330);
    let expected: Vec<Vec<u32>> = CORPUS.iter().map(|s| m.encode(s)).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| scope.spawn(|| CORPUS.iter().map(|s| m.encode(s)).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_uncased(text in any::<String>()) {
        let m = model(330);
        let ids = m.encode(&text);
        prop_assert!(ids.iter().all(|&id| (id as usize) < m.vocab_size()));
        prop_assert_eq!(m.decode(&ids).unwrap(), casefold(&text));
    }

    #[test]
    fn round_trip_cased(text in any::<String>()) {
        let m = train_bpe(CORPUS, &BpeTrainerConfig::new(330).cased(true)).unwrap();
        prop_assert_eq!(m.decode(&m.encode(&text)).unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merges_apply_in_training_order(
        corpus in prop::collection::vec("[abc ]{1,24}", 1..6),
        extra in 0usize..40,
        probe in "[abcd \n]{0,40}",
    ) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let Ok(m) = train_bpe(refs, &BpeTrainerConfig::new(261 + extra)) else {
            return Ok(());
        };
        prop_assert_eq!(m.encode(&probe), reference_encode(&m, &probe));
        for s in &corpus {
            prop_assert_eq!(m.encode(s), reference_encode(&m, s));
        }
    }
}
