use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::thread;
use std::time::Duration;

use crate::error::{Error, IoContext, Result};

/// Perso-Arabic rule table shipped with the crate.
pub const DEFAULT_TABLE: &str = include_str!("../../data/urdu_roman.tsv");

/// Arabic-script code points (the blocks Urdu text is written in).
pub fn is_source_script(c: char) -> bool {
    matches!(c,
        '\u{0600}'..='\u{06FF}'
        | '\u{0750}'..='\u{077F}'
        | '\u{08A0}'..='\u{08FF}'
        | '\u{FB50}'..='\u{FDFF}'
        | '\u{FE70}'..='\u{FEFF}')
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<char, usize>,
    target: Option<usize>,
}

/// Grapheme rewrite rules applied longest match first.
#[derive(Debug, Clone)]
pub struct TransliterationTable {
    rules: Vec<(String, String)>,
    trie: Vec<Node>,
}

impl TransliterationTable {
    pub fn from_rules<I, S, T>(rules: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut table = Self {
            rules: Vec::new(),
            trie: vec![Node::default()],
        };
        for (source, target) in rules {
            let (source, target) = (source.into(), target.into());
            if source.is_empty() {
                return Err(Error::InvalidTransliterationTable(
                    "rule with an empty source".into(),
                ));
            }
            if target.chars().any(is_source_script) {
                return Err(Error::InvalidTransliterationTable(format!(
                    "target {target:?} of rule {source:?} contains source-script characters"
                )));
            }
            let mut node = 0;
            for c in source.chars() {
                node = match table.trie[node].children.get(&c) {
                    Some(&next) => next,
                    None => {
                        table.trie.push(Node::default());
                        let next = table.trie.len() - 1;
                        table.trie[node].children.insert(c, next);
                        next
                    }
                };
            }
            if table.trie[node].target.is_some() {
                return Err(Error::InvalidTransliterationTable(format!(
                    "duplicate source {source:?}"
                )));
            }
            table.trie[node].target = Some(table.rules.len());
            table.rules.push((source, target));
        }
        Ok(table)
    }

    /// Parses `source<TAB>target` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (source, target) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidTransliterationTable(format!("line {}: missing tab", n + 1))
            })?;
            rules.push((source.to_string(), target.to_string()));
        }
        Self::from_rules(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).at(path)?)
    }

    pub fn default_table() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled table is valid")
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    /// Longest rule matching at the start of `chars`: `(chars consumed, rule)`.
    fn longest_match(&self, chars: &[char]) -> Option<(usize, usize)> {
        let mut node = 0;
        let mut best = None;
        for (i, c) in chars.iter().enumerate() {
            match self.trie[node].children.get(c) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(rule) = self.trie[node].target {
                best = Some((i + 1, rule));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transliteration {
    pub text: String,
    /// Source-script characters seen in the input.
    pub source_chars: usize,
    /// Source-script characters no rule covered (passed through as is).
    pub unmapped_chars: usize,
}

impl Transliteration {
    /// Share of source-script characters that a rule rewrote; 1.0 when the
    /// input had none.
    pub fn coverage(&self) -> f64 {
        if self.source_chars == 0 {
            1.0
        } else {
            1.0 - self.unmapped_chars as f64 / self.source_chars as f64
        }
    }
}

/// Greedy left-to-right rewrite with the longest matching rule at each
/// position. Characters no rule starts with are copied unchanged.
pub fn transliterate(text: &str, table: &TransliterationTable) -> Transliteration {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut source_chars = 0;
    let mut unmapped_chars = 0;
    let mut i = 0;
    while i < chars.len() {
        match table.longest_match(&chars[i..]) {
            Some((len, rule)) => {
                source_chars += chars[i..i + len].iter().filter(|&&c| is_source_script(c)).count();
                out.push_str(&table.rules[rule].1);
                i += len;
            }
            None => {
                if is_source_script(chars[i]) {
                    source_chars += 1;
                    unmapped_chars += 1;
                }
                out.push(chars[i]);
                i += 1;
            }
        }
    }
    Transliteration {
        text: out,
        source_chars,
        unmapped_chars,
    }
}

/// Anything that turns Urdu-script text into Roman Urdu.
pub trait Transliterator {
    fn transliterate(&self, text: &str) -> Result<String>;
}

pub struct TableTransliterator(pub TransliterationTable);

impl Transliterator for TableTransliterator {
    fn transliterate(&self, text: &str) -> Result<String> {
        Ok(transliterate(text, &self.0).text)
    }
}

/// Client for an external transliteration service: the request body is
/// the UTF-8 text, the response body is its transliteration. Failed
/// attempts are retried with exponential backoff.
pub struct HttpTransliterator {
    url: String,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

impl HttpTransliterator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }

    /// Delay before the first retry; it doubles after every failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, text: &str) -> std::result::Result<String, String> {
        let response = self
            .agent
            .post(&self.url)
            .header("Content-Type", "text/plain; charset=utf-8")
            .send(text)
            .map_err(|e| e.to_string())?;
        let mut body = Vec::new();
        response
            .into_body()
            .into_reader()
            .read_to_end(&mut body)
            .map_err(|e| e.to_string())?;
        String::from_utf8(body).map_err(|_| "response body is not UTF-8".to_string())
    }
}

impl Transliterator for HttpTransliterator {
    fn transliterate(&self, text: &str) -> Result<String> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(text) {
                Ok(out) => return Ok(out),
                Err(e) => {
                    log::warn!("transliteration attempt {attempt} failed: {e}");
                    last = e;
                }
            }
            if attempt < self.attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::TransliterationService {
            attempts: self.attempts,
            message: last,
        })
    }
}
