use unicode_normalization::UnicodeNormalization;

const TERMINATORS: [char; 5] = ['.', '!', '?', '\u{61F}', '\u{6D4}'];

fn is_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Cleans raw social-media text and splits it into sentences.
///
/// Control characters are dropped (line breaks and tabs count as spaces),
/// the text is NFC-normalized, and then, token by token: leading `#`
/// markers are stripped, URLs and `@mentions` are removed, and whitespace
/// collapses to single spaces. A sentence ends after any token ending in
/// `.`, `!`, `?`, `؟` or `۔`; sentences of fewer than two words are dropped.
pub fn clean(raw: &str) -> Vec<String> {
    let text: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .nfc()
        .collect();

    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut flush = |current: &mut Vec<&str>| {
        if current.len() >= 2 {
            sentences.push(current.join(" "));
        }
        current.clear();
    };
    for token in text.split_whitespace() {
        let token = token.trim_start_matches('#');
        if token.is_empty() || token.starts_with('@') || is_url(token) {
            continue;
        }
        current.push(token);
        if token.ends_with(TERMINATORS) {
            flush(&mut current);
        }
    }
    flush(&mut current);
    sentences
}

/// Cleans many documents on all available cores. The output keeps the
/// input order; documents that clean to nothing come back empty.
pub fn clean_documents(raws: &[String]) -> Vec<Vec<String>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(raws.len().max(1));
    if workers <= 1 {
        return raws.iter().map(|r| clean(r)).collect();
    }
    let chunk = raws.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = raws
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|r| clean(r)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("cleaning worker panicked"))
            .collect()
    })
}
