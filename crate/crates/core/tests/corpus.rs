use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use bilm::corpus::{
    clean, is_source_script, split_corpus, transliterate, Corpus, HttpTransliterator,
    TransliterationTable, Transliterator,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fixture_counts_match_documentation() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let corpus = Corpus::load(dir.join("sample_corpus.txt")).unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sample_corpus.counts.json")).unwrap())
            .unwrap();
    let stats = corpus.stats();
    assert_eq!(corpus.documents().len() as u64, doc["documents"].as_u64().unwrap());
    assert_eq!(stats.sentence_count as u64, doc["sentences"].as_u64().unwrap());
    assert_eq!(stats.word_count as u64, doc["words"].as_u64().unwrap());
    let bytes = std::fs::read_to_string(dir.join("sample_corpus.txt")).unwrap();
    assert_eq!(corpus.to_file_string(), bytes);
}

fn synthetic(n: usize) -> Corpus {
    let docs = (0..n)
        .collect::<Vec<_>>()
        .chunks(7)
        .map(|c| c.iter().map(|i| format!("jumla number {i}")).collect())
        .collect();
    Corpus::new(docs, "synthetic").unwrap()
}

#[test]
fn split_share_is_tight_on_large_corpora() {
    let corpus = synthetic(100_000);
    let (train, valid) = split_corpus(&corpus, 0.05, 17).unwrap();
    let v = valid.stats().sentence_count;
    assert!((4_900..=5_100).contains(&v), "{v}");
    assert_eq!(train.stats().sentence_count + v, 100_000);
}

#[test]
fn split_is_an_exact_deterministic_partition() {
    for n in [10, 1000, 10_000] {
        let corpus = synthetic(n);
        let (train, valid) = split_corpus(&corpus, 0.05, 3).unwrap();
        let (train2, valid2) = split_corpus(&corpus, 0.05, 3).unwrap();
        assert_eq!((&train, &valid), (&train2, &valid2));
        let mut all: Vec<&str> = train.sentences().chain(valid.sentences()).collect();
        let mut original: Vec<&str> = corpus.sentences().collect();
        all.sort_unstable();
        original.sort_unstable();
        assert_eq!(all, original);
        if n >= 10_000 {
            let share = valid.stats().sentence_count as f64 / n as f64;
            assert!((share - 0.05).abs() <= 0.01, "{share}");
        }
    }
    let (_, a) = split_corpus(&synthetic(1000), 0.1, 1).unwrap();
    let (_, b) = split_corpus(&synthetic(1000), 0.1, 2).unwrap();
    assert_ne!(a, b);
}

/// For each position, tries every rule and keeps the longest source that
/// matches there.
fn naive_transliterate(text: &str, rules: &[(String, String)]) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        let best = rules
            .iter()
            .filter(|(s, _)| rest.starts_with(s.as_str()))
            .max_by_key(|(s, _)| s.chars().count());
        match best {
            Some((s, t)) => {
                out.push_str(t);
                rest = &rest[s.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

fn mixed_text() -> impl Strategy<Value = String> {
    let pieces = prop::sample::select(vec![
        "سلام", "دنیا", "کیا", "بھ", "ب", "ھ", "ہے", "،", "۔", " ", "salam", "abc", "x", "؟", "ٹھیک",
        "ژ", "\u{0628}\u{0652}", "۳", "ؐ",
    ]);
    prop::collection::vec(pieces, 0..20).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cleaning_is_idempotent(raw in "[a-c #@.!?؟۔\t\nhtp:/w]{0,60}") {
        let once = clean(&raw);
        prop_assert_eq!(clean(&once.join(" ")), once.clone());
        prop_assert_eq!(clean(&once.join("\n")), once.clone());
        for s in &once {
            prop_assert!(s.split(' ').count() >= 2);
            prop_assert!(!s.contains("  "));
        }
    }

    #[test]
    fn transliteration_matches_naive_longest_match(text in mixed_text(), seed in any::<u64>()) {
        let table = TransliterationTable::default_table();
        let got = transliterate(&text, &table);
        prop_assert_eq!(&got.text, &naive_transliterate(&text, table.rules()));
        let mut shuffled = table.rules().to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let reordered = TransliterationTable::from_rules(shuffled).unwrap();
        prop_assert_eq!(transliterate(&text, &reordered), got.clone());
        if got.coverage() == 1.0 {
            prop_assert!(!got.text.chars().any(is_source_script));
        }
    }

    #[test]
    fn latin_runs_pass_through_unchanged(
        latin in prop::collection::vec("[a-z ,.!]{1,8}", 1..6),
        urdu in prop::collection::vec(mixed_text(), 1..6),
    ) {
        let table = TransliterationTable::default_table();
        let mut text = String::new();
        for (i, l) in latin.iter().enumerate() {
            text.push_str(l);
            text.push_str(&urdu[i % urdu.len()]);
        }
        let out = transliterate(&text, &table).text;
        let mut from = 0;
        for l in &latin {
            let at = out[from..].find(l.as_str());
            prop_assert!(at.is_some(), "{:?} missing from {:?}", l, out);
            from += at.unwrap() + l.len();
        }
    }
}

/// Serves `responses` (status, body) to successive POST requests, echoing
/// the request body into `{body}`.
fn mock_server(responses: Vec<(u16, &'static str)>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for (status, template) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let reply = template.replace("{body}", &String::from_utf8(body).unwrap());
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    format!("http://{addr}/transliterate")
}

#[test]
fn http_client_retries_then_succeeds() {
    let url = mock_server(vec![(500, "boom"), (503, "busy"), (200, "roman:{body}")]);
    let client = HttpTransliterator::new(url, Duration::from_secs(5))
        .with_backoff(Duration::from_millis(5));
    assert_eq!(client.transliterate("سلام").unwrap(), "roman:سلام");
}

#[test]
fn http_client_gives_up_after_three_attempts() {
    let url = mock_server(vec![(500, "a"), (500, "b"), (500, "c"), (200, "late")]);
    let client = HttpTransliterator::new(url, Duration::from_secs(5))
        .with_backoff(Duration::from_millis(5));
    let err = client.transliterate("x").unwrap_err().to_string();
    assert!(err.contains("after 3 attempts"), "{err}");
}
